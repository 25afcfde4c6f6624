//! Synthetic embeddings with planted site, class and slide signatures.
//!
//! Every row is
//!
//! ```text
//! x = γ·μ[class] + κ·σ[site] + ρ·η[slide] + τ·noise
//! ```
//!
//! with unit vectors μ, σ and η drawn from the seed. Site and class vectors
//! are mutually orthonormal. The noise is standard Gaussian along the axes of
//! a random orthonormal basis, with standard deviation `a^(1 - j/(D-1))` on
//! axis `j` for anisotropy `a` (isotropic when `a = 1`). Site vectors can be
//! placed inside the highest- or lowest-variance noise axes.
//!
//! Sites hold patients, patients hold slides. With two or more classes the
//! slides of a site cycle through the classes; a slide of class `k > 0` labels
//! the first `lesion_fraction` of its patches `k` and the rest 0.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embstore::{EmbeddingTable, LabelCodebook, NormVariant, PatchMeta};
use crate::error::{Error, Result};
use crate::linalg::orthonormalize_against;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignaturePlacement {
    TopVariance,
    LowVariance,
    #[default]
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dims: usize,
    pub n_sites: usize,
    pub n_classes: usize,
    pub patients_per_site: usize,
    pub slides_per_patient: usize,
    pub patches_per_slide: usize,
    pub site_strength: f64,
    pub class_strength: f64,
    pub slide_strength: f64,
    pub noise: f64,
    pub noise_anisotropy: f64,
    pub lesion_fraction: f64,
    pub signature_placement: SignaturePlacement,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dims: 64,
            n_sites: 2,
            n_classes: 1,
            patients_per_site: 10,
            slides_per_patient: 1,
            patches_per_slide: 100,
            site_strength: 4.0,
            class_strength: 0.0,
            slide_strength: 0.0,
            noise: 1.0,
            noise_anisotropy: 1.0,
            lesion_fraction: 1.0,
            signature_placement: SignaturePlacement::Random,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dims", self.dims),
            ("n_sites", self.n_sites),
            ("n_classes", self.n_classes),
            ("patients_per_site", self.patients_per_site),
            ("slides_per_patient", self.slides_per_patient),
            ("patches_per_slide", self.patches_per_slide),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Parameter(format!("{name} must be at least 1")));
        }
        let strengths = [
            ("site_strength", self.site_strength),
            ("class_strength", self.class_strength),
            ("slide_strength", self.slide_strength),
        ];
        if let Some((name, v)) = strengths.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")));
        }
        if !(self.noise.is_finite() && self.noise > 0.0) {
            return Err(Error::Parameter(format!("noise must be > 0, got {}", self.noise)));
        }
        if !(self.noise_anisotropy.is_finite() && self.noise_anisotropy >= 1.0) {
            return Err(Error::Parameter("noise_anisotropy must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lesion_fraction) {
            return Err(Error::Parameter("lesion_fraction must lie in [0, 1]".into()));
        }
        let planted = self.n_sites + if self.n_classes > 1 { self.n_classes } else { 0 };
        if planted > self.dims {
            return Err(Error::Parameter(format!(
                "{planted} orthogonal signature vectors do not fit in {} dimensions",
                self.dims
            )));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_sites * self.patients_per_site * self.slides_per_patient * self.patches_per_slide
    }

    /// Noise standard deviation (before scaling by `noise`) along basis axis `j`.
    pub fn axis_scale(&self, j: usize) -> f64 {
        if self.dims == 1 {
            return 1.0;
        }
        let t = 1.0 - j as f64 / (self.dims - 1) as f64;
        self.noise_anisotropy.powf(t)
    }
}

/// The planted directions behind a generated table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub site_vectors: Vec<Vec<f64>>,
    /// Empty when `n_classes == 1`.
    pub class_vectors: Vec<Vec<f64>>,
    /// Noise axes, ordered by decreasing noise variance.
    pub noise_basis: Vec<Vec<f64>>,
}

fn gaussian_vec(rng: &mut Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_orthonormal(rng: &mut Rng, d: usize, count: usize, basis: &mut Vec<Vec<f64>>) {
    let target = basis.len() + count;
    while basis.len() < target {
        if let Some(v) = orthonormalize_against(gaussian_vec(rng, d), basis) {
            basis.push(v);
        }
    }
}

fn unit(rng: &mut Rng, d: usize) -> Vec<f64> {
    orthonormalize_against(gaussian_vec(rng, d), &[]).unwrap_or_else(|| {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        e
    })
}

/// Builds the planted vectors for `cfg`.
pub fn planted_truth(cfg: &SynthConfig) -> Result<SynthTruth> {
    cfg.validate()?;
    let d = cfg.dims;
    let mut rng = seed::derived_rng(cfg.seed, "synth/vectors");
    let mut noise_basis = Vec::with_capacity(d);
    random_orthonormal(&mut rng, d, d, &mut noise_basis);

    let s = cfg.n_sites;
    let mut site_vectors: Vec<Vec<f64>> = Vec::with_capacity(s);
    match cfg.signature_placement {
        SignaturePlacement::Random => random_orthonormal(&mut rng, d, s, &mut site_vectors),
        placement => {
            let axes = match placement {
                SignaturePlacement::TopVariance => &noise_basis[..s],
                _ => &noise_basis[d - s..],
            };
            // A random rotation inside the span of the chosen axes.
            let mut coeffs = Vec::with_capacity(s);
            random_orthonormal(&mut rng, s, s, &mut coeffs);
            for c in &coeffs {
                let mut v = vec![0.0; d];
                for (w, axis) in c.iter().zip(axes) {
                    v.iter_mut().zip(axis).for_each(|(x, a)| *x += w * a);
                }
                site_vectors.push(v);
            }
        }
    }

    let mut class_vectors = Vec::new();
    if cfg.n_classes > 1 {
        let mut all = site_vectors.clone();
        random_orthonormal(&mut rng, d, cfg.n_classes, &mut all);
        class_vectors = all.split_off(s);
    }
    Ok(SynthTruth {
        site_vectors,
        class_vectors,
        noise_basis,
    })
}

/// Generates the table described by `cfg`. Identical configs give
/// bit-identical tables.
pub fn generate(cfg: &SynthConfig) -> Result<EmbeddingTable> {
    generate_with_truth(cfg).map(|(t, _)| t)
}

pub fn generate_with_truth(cfg: &SynthConfig) -> Result<(EmbeddingTable, SynthTruth)> {
    let truth = planted_truth(cfg)?;
    let d = cfg.dims;
    let isotropic = cfg.noise_anisotropy == 1.0;
    let scales: Vec<f64> = (0..d).map(|j| cfg.noise * cfg.axis_scale(j)).collect();

    let mut slide_rng = seed::derived_rng(cfg.seed, "synth/slides");
    let mut rng = seed::derived_rng(cfg.seed, "synth/rows");
    let n = cfg.n_rows();
    let mut features = Vec::with_capacity(n * d);
    let mut meta = Vec::with_capacity(n);
    let mut x = vec![0.0f64; d];
    let lesion = (cfg.lesion_fraction * cfg.patches_per_slide as f64).round() as usize;

    for site in 0..cfg.n_sites {
        for patient in 0..cfg.patients_per_site {
            let patient_id = format!("s{site}-p{patient:04}");
            for slide in 0..cfg.slides_per_patient {
                let slide_idx = patient * cfg.slides_per_patient + slide;
                let slide_id = format!("{patient_id}-sl{slide:02}");
                let slide_class = slide_idx % cfg.n_classes;
                let eta = unit(&mut slide_rng, d);
                for patch in 0..cfg.patches_per_slide {
                    let class = if cfg.n_classes == 1 {
                        None
                    } else if slide_class > 0 && patch < lesion {
                        Some(slide_class)
                    } else {
                        Some(0)
                    };
                    x.iter_mut().for_each(|v| *v = 0.0);
                    if isotropic {
                        for v in x.iter_mut() {
                            *v = cfg.noise * rng.sample::<f64, _>(StandardNormal);
                        }
                    } else {
                        for (axis, sc) in truth.noise_basis.iter().zip(&scales) {
                            let e = sc * rng.sample::<f64, _>(StandardNormal);
                            x.iter_mut().zip(axis).for_each(|(v, a)| *v += e * a);
                        }
                    }
                    let sv = &truth.site_vectors[site];
                    x.iter_mut()
                        .zip(sv.iter().zip(&eta))
                        .for_each(|(v, (s, e))| *v += cfg.site_strength * s + cfg.slide_strength * e);
                    if let Some(c) = class {
                        let cv = &truth.class_vectors[c];
                        x.iter_mut()
                            .zip(cv)
                            .for_each(|(v, m)| *v += cfg.class_strength * m);
                    }
                    features.extend(x.iter().map(|&v| v as f32));
                    meta.push(PatchMeta {
                        patch_id: format!("{slide_id}-{patch:05}"),
                        slide_id: slide_id.clone(),
                        patient_id: patient_id.clone(),
                        site_label: site as u32,
                        class_label: class.map(|c| c as u32),
                        norm_variant: NormVariant::Raw,
                    });
                }
            }
        }
    }
    let codebook = LabelCodebook {
        site_names: (0..cfg.n_sites).map(|s| format!("site-{s}")).collect(),
        class_names: match cfg.n_classes {
            1 => Vec::new(),
            2 => vec!["normal".into(), "tumor".into()],
            c => (0..c).map(|k| format!("class-{k}")).collect(),
        },
    };
    let table = EmbeddingTable::with_codebook(features, d, meta, "synthgen", codebook)?;
    Ok((table, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    #[test]
    fn deterministic() {
        let cfg = SynthConfig {
            dims: 8,
            n_classes: 2,
            patients_per_site: 3,
            patches_per_slide: 10,
            seed: 42,
            ..Default::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }

    #[test]
    fn planted_vectors_orthonormal() {
        for placement in [
            SignaturePlacement::TopVariance,
            SignaturePlacement::LowVariance,
            SignaturePlacement::Random,
        ] {
            let cfg = SynthConfig {
                dims: 10,
                n_sites: 3,
                n_classes: 2,
                signature_placement: placement,
                ..Default::default()
            };
            let t = planted_truth(&cfg).unwrap();
            let all: Vec<&Vec<f64>> = t.site_vectors.iter().chain(&t.class_vectors).collect();
            for (i, a) in all.iter().enumerate() {
                for (j, b) in all.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot(a, b) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn top_variance_sites_live_in_top_axes() {
        let cfg = SynthConfig {
            dims: 12,
            n_sites: 2,
            noise_anisotropy: 3.0,
            signature_placement: SignaturePlacement::TopVariance,
            ..Default::default()
        };
        let t = planted_truth(&cfg).unwrap();
        for s in &t.site_vectors {
            let in_span: f64 = t.noise_basis[..2].iter().map(|b| dot(s, b).powi(2)).sum();
            assert!((in_span - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lesion_fraction_labels() {
        let cfg = SynthConfig {
            dims: 4,
            n_classes: 2,
            patients_per_site: 2,
            patches_per_slide: 10,
            lesion_fraction: 0.3,
            ..Default::default()
        };
        let t = generate(&cfg).unwrap();
        let tumor = t.meta().iter().filter(|m| m.class_label == Some(1)).count();
        // One tumour slide per site, 3 lesion patches each.
        assert_eq!(tumor, 6);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SynthConfig {
            noise: 0.0,
            ..Default::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Parameter(_))));
        let cfg = SynthConfig {
            dims: 3,
            n_sites: 2,
            n_classes: 2,
            ..Default::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Parameter(_))));
    }
}
