use batchaudit::geometry::{
    auroc, distance_profiles, fit_pca, fit_pca_rows, ovo_auroc_oriented, pick_reference, project, reduced_knn_curve,
    separability_profile, DistanceConfig, DistanceGroup,
};
use batchaudit::splitter::patient_split;
use batchaudit::synthgen::{generate, SignaturePlacement, SynthConfig};
use batchaudit::{EmbeddingTable, NormVariant, PatchMeta};
use batchaudit_oracles::{auroc_pairs, covariance, jacobi_eigen, ovo_auroc_pairs};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
    // Uneven column scales keep eigenvalues well separated.
    (0..n * d)
        .map(|i| {
            let g: f64 = StandardNormal.sample(rng);
            g * (1.0 + (i % d) as f64)
        })
        .collect()
}

#[test]
fn pca_matches_jacobi_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..30 {
        let d = rng.random_range(1..=16);
        let n = rng.random_range(d + 2..=120);
        let data = gaussian_matrix(&mut rng, n, d);
        let m = fit_pca_rows(&data, d).unwrap();
        let (vals, vecs) = jacobi_eigen(&covariance(&data, d));
        for j in 0..d {
            assert!((m.eigenvalues[j] - vals[j]).abs() <= 1e-8 * vals[0].max(1.0));
            let dot: f64 = m.component(j).iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-8, "component {j}: |cos| = {}", dot.abs());
        }
        assert!((m.evr.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for row in data.chunks(d).take(10) {
            let back = m.reconstruct_row(&m.project_row(row, d));
            assert!(row.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-8));
        }
        for j in 0..d {
            let c = m.component(j);
            let lead = c.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(lead > 0.0);
        }
    }
}

#[test]
fn isotropic_sample_has_flat_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<f64> = (0..400_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let m = fit_pca_rows(&data, 4).unwrap();
    assert!(m.evr.iter().all(|e| (e - 0.25).abs() < 0.02), "{:?}", m.evr);
}

fn unlabelled_table(features: Vec<f32>, d: usize, sites: &[u32]) -> EmbeddingTable {
    let meta = sites
        .iter()
        .enumerate()
        .map(|(i, &s)| PatchMeta {
            patch_id: i.to_string(),
            slide_id: format!("sl{i}"),
            patient_id: format!("pt{i}"),
            site_label: s,
            class_label: None,
            norm_variant: NormVariant::Raw,
        })
        .collect();
    EmbeddingTable::new(features, d, meta, "").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn projection_contracts_distances(seed in any::<u64>(), ell in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 6;
        let n = 20;
        let f: Vec<f32> = (0..n * d).map(|_| rng.random_range(-5.0f32..5.0)).collect();
        let t = unlabelled_table(f, d, &vec![0; n]);
        let m = fit_pca(&t).unwrap();
        let z = project(&t, &m, ell).unwrap();
        for i in 0..n {
            for j in 0..n {
                let full: f64 = t.row_f64(i).iter().zip(t.row_f64(j)).map(|(a, b)| (a - b).powi(2)).sum();
                let red: f64 = (0..ell).map(|k| (z[i * ell + k] - z[j * ell + k]).powi(2)).sum();
                prop_assert!(red <= full + 1e-9 * (1.0 + full));
            }
        }
    }
}

#[test]
fn auroc_examples() {
    let l = [0, 0, 1, 1];
    assert_eq!(ovo_auroc_oriented(&[1.0, 2.0, 3.0, 4.0], &l).unwrap(), 1.0);
    assert_eq!(ovo_auroc_oriented(&[4.0, 3.0, 2.0, 1.0], &l).unwrap(), 1.0);
    assert_eq!(auroc(&[4.0, 3.0, 2.0, 1.0], &[false, false, true, true]), Some(0.0));
    assert_eq!(ovo_auroc_oriented(&[0.1, 0.4, 0.35, 0.8], &l).unwrap(), 0.75);
    assert!(ovo_auroc_oriented(&[1.0, 2.0], &[0, 0]).is_err());
}

#[test]
fn auroc_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.random_range(2..=200);
        let classes = rng.random_range(2..=4u32);
        let mut labels: Vec<u32> = (0..n).map(|i| (i as u32) % classes).collect();
        labels.shuffle(&mut rng);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..20u8)) / 4.0).collect();
        if (0..classes).any(|c| !labels.contains(&c)) {
            continue;
        }
        let got = ovo_auroc_oriented(&scores, &labels).unwrap();
        assert!((got - ovo_auroc_pairs(&scores, &labels)).abs() < 1e-12);
        assert!(got >= 0.5);
        let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        let two: Vec<usize> = (0..n).filter(|&i| labels[i] < 2).collect();
        let s2: Vec<f64> = two.iter().map(|&i| scores[i]).collect();
        let p2: Vec<bool> = two.iter().map(|&i| pos[i]).collect();
        assert_eq!(auroc(&s2, &p2).map(|v| (v * 1e12).round()), auroc_pairs(&s2, &p2).map(|v| (v * 1e12).round()));
    }
}

fn site_table(placement: SignaturePlacement, anisotropy: f64, dims: usize, kappa: f64, seed: u64) -> EmbeddingTable {
    generate(&SynthConfig {
        dims,
        n_sites: 2,
        patients_per_site: 20,
        patches_per_slide: 200,
        site_strength: kappa,
        noise_anisotropy: anisotropy,
        signature_placement: placement,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn reduced_curve_saturates_for_top_variance_signature() {
    let t = site_table(SignaturePlacement::TopVariance, 1.0, 32, 4.0, 4);
    let split = patient_split(&t, (0.6, 0.1, 0.3), 1).unwrap();
    let curve = reduced_knn_curve(&t, &split, &[1, 32, 50], 5).unwrap();
    assert_eq!(curve.skipped, vec![50]);
    let at = |ell| curve.points.iter().find(|p| p.0 == ell).unwrap().1;
    assert!((at(1) - curve.baseline).abs() <= 0.02);
    assert_eq!(at(32), curve.baseline);
}

#[test]
fn reduced_curve_rises_late_for_low_variance_signature() {
    let t = site_table(SignaturePlacement::LowVariance, 4.0, 16, 3.0, 5);
    let split = patient_split(&t, (0.6, 0.1, 0.3), 2).unwrap();
    let curve = reduced_knn_curve(&t, &split, &[1, 10, 16], 5).unwrap();
    let at = |ell| curve.points.iter().find(|p| p.0 == ell).unwrap().1;
    assert!(at(1) < 0.65, "{curve:?}");
    assert!(at(10) > 0.9, "{curve:?}");
}

#[test]
fn separability_follows_signature() {
    let t = site_table(SignaturePlacement::TopVariance, 1.0, 32, 4.0, 6);
    let m = fit_pca(&t).unwrap();
    let prof = separability_profile(&t, &m, 10).unwrap();
    assert_eq!(prof.records.len(), 10);
    assert!(prof.records[0].ovo_auroc > 0.95);
    assert!(prof.records[5..].iter().all(|r| r.ovo_auroc < 0.6));
    for r in &prof.records {
        assert_eq!(r.evr, m.evr[r.component]);
    }
}

#[test]
fn permuted_sites_give_null_auroc() {
    let t = site_table(SignaturePlacement::TopVariance, 1.0, 8, 4.0, 7);
    let mut sites = t.site_labels();
    sites.shuffle(&mut ChaCha8Rng::seed_from_u64(8));
    let shuffled = unlabelled_table(t.features().to_vec(), t.dim(), &sites);
    let m = fit_pca(&shuffled).unwrap();
    let prof = separability_profile(&shuffled, &m, 8).unwrap();
    assert!(prof.records.iter().all(|r| (0.5..=0.55).contains(&r.ovo_auroc)), "{prof:?}");
}

fn distance_table(seed: u64) -> EmbeddingTable {
    generate(&SynthConfig {
        dims: 32,
        n_sites: 2,
        n_classes: 2,
        patients_per_site: 6,
        slides_per_patient: 2,
        patches_per_slide: 1_000,
        site_strength: 4.0,
        class_strength: 1.0,
        slide_strength: 1.0,
        noise: 0.2,
        lesion_fraction: 0.5,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn distance_profiles_separate_sites() {
    let t = distance_table(9);
    let cfg = DistanceConfig::default();
    let reference = pick_reference(&t, &cfg, 1).unwrap();
    let profiles = distance_profiles(&t, &reference, &cfg, 1).unwrap();
    let groups: Vec<DistanceGroup> = profiles.iter().map(|p| p.group).collect();
    assert_eq!(groups, vec![DistanceGroup::Ss, DistanceGroup::Ossh, DistanceGroup::Osoh]);
    assert_eq!(profiles[0].entries.len(), 1_000);
    assert_eq!(profiles[1].entries.len(), 5_000);
    for p in &profiles {
        let d: Vec<f64> = p.distances().collect();
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
        assert!(d[0] >= 0.0);
        assert_eq!(p.entries.iter().filter(|e| e.class_label == 1).count() * 2, p.entries.len());
    }
    let ref_slide = &t.meta()[t.index_of(&reference).unwrap()].slide_id;
    assert!(profiles[0].entries.iter().all(|e| &e.slide_id == ref_slide));
    assert!(profiles[1].entries.iter().all(|e| &e.slide_id != ref_slide));
    if let Some(e) = profiles[0].entries.iter().find(|e| e.patch_id == reference) {
        assert_eq!(e.distance, 0.0);
        assert_eq!(profiles[0].entries[0].distance, 0.0);
    }
    let max_ss = profiles[0].distances().fold(0.0, f64::max);
    let min_osoh = profiles[2].distances().fold(f64::INFINITY, f64::min);
    assert!(max_ss < min_osoh);
}

#[test]
fn distance_reference_must_be_tumour() {
    let t = distance_table(10);
    let normal = t.meta().iter().find(|m| m.class_label == Some(0)).unwrap();
    assert!(distance_profiles(&t, &normal.patch_id, &DistanceConfig::default(), 0).is_err());
}
