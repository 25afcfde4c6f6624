use batchaudit::embstore::{load_table, save_table, sidecar_path, codebook_path, HEADER_LEN};
use batchaudit::{EmbeddingTable, Error, LabelCodebook, NormVariant, PatchMeta};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_table(seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(0..40usize);
    let d = rng.random_range(1..20usize);
    let variants = [NormVariant::Raw, NormVariant::Reinhard, NormVariant::Macenko];
    let meta = (0..n)
        .map(|i| {
            let slide = rng.random_range(0..6);
            PatchMeta {
                patch_id: format!("p,{i}\"q"),
                slide_id: format!("slide {slide}"),
                patient_id: format!("pt{}", slide / 2),
                site_label: slide / 3,
                class_label: if rng.random_bool(0.3) { None } else { Some(rng.random_range(0..2)) },
                norm_variant: variants[rng.random_range(0..3)],
            }
        })
        .collect();
    let features = (0..n * d)
        .map(|_| match rng.random_range(0..10) {
            0 => f32::MIN_POSITIVE / 4.0,
            1 => -0.0,
            2 => f32::MAX,
            _ => rng.random::<f32>() * 200.0 - 100.0,
        })
        .collect();
    let codebook = LabelCodebook {
        site_names: vec!["alpha".into(), "beta".into()],
        class_names: vec!["normal".into(), "tumor".into()],
    };
    EmbeddingTable::with_codebook(features, d, meta, format!("model-{seed}"), codebook).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn save_load_is_identity(seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.emb");
        let t = random_table(seed);
        save_table(&t, &path).unwrap();
        let back = load_table(&path).unwrap();
        let bits = |t: &EmbeddingTable| t.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&t), bits(&back));
        prop_assert_eq!(&t, &back);
    }
}

#[test]
fn file_layout_is_bit_exact() {
    let meta = vec![PatchMeta {
        patch_id: "a".into(),
        slide_id: "s".into(),
        patient_id: "p".into(),
        site_label: 3,
        class_label: None,
        norm_variant: NormVariant::Macenko,
    }];
    let t = EmbeddingTable::new(vec![1.5, -2.0], 2, meta, "").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.emb");
    save_table(&t, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let mut expected = b"EMB1".to_vec();
    expected.extend([1, 0, 0, 0]);
    expected.extend([1, 0, 0, 0, 0, 0, 0, 0]);
    expected.extend([2, 0, 0, 0, 0, 0, 0, 0]);
    expected.extend([1, 0, 0, 0, 0, 0, 0, 0]);
    assert_eq!(expected.len(), HEADER_LEN);
    expected.extend([0x00, 0x00, 0xc0, 0x3f]); // 1.5
    expected.extend([0x00, 0x00, 0x00, 0xc0]); // -2.0
    assert_eq!(bytes, expected);
    let sidecar = std::fs::read_to_string(sidecar_path(&path)).unwrap();
    assert_eq!(sidecar, "patch_id,slide_id,patient_id,site,class,norm_variant\na,s,p,3,,macenko\n");
}

fn write_with_sidecar(dir: &std::path::Path, header: &[u8], body: &[u8], meta: &str) -> std::path::PathBuf {
    let path = dir.join("m.emb");
    let mut bytes = header.to_vec();
    bytes.extend_from_slice(body);
    std::fs::write(&path, bytes).unwrap();
    std::fs::write(sidecar_path(&path), meta).unwrap();
    path
}

const META_HEADER: &str = "patch_id,slide_id,patient_id,site,class,norm_variant\n";

#[test]
fn load_errors_are_classified() {
    let dir = tempfile::tempdir().unwrap();
    let header = batchaudit::embstore::encode_header(2, 1);
    let two_rows = format!("{META_HEADER}a,s,p,0,1,raw\nb,s,p,0,0,raw\n");

    let mut bad_magic = header;
    bad_magic[0] = b'X';
    let p = write_with_sidecar(dir.path(), &bad_magic, &[0; 8], &two_rows);
    assert!(matches!(load_table(&p), Err(Error::Format(_))));

    let one_row = format!("{META_HEADER}a,s,p,0,1,raw\n");
    let p = write_with_sidecar(dir.path(), &header, &[0; 8], &one_row);
    assert!(matches!(load_table(&p), Err(Error::Consistency(_))));

    let mut body = 1.0f32.to_le_bytes().to_vec();
    body.extend(f32::INFINITY.to_le_bytes());
    let p = write_with_sidecar(dir.path(), &header, &body, &two_rows);
    assert!(matches!(load_table(&p), Err(Error::Data { row: 1, .. })));

    let no_site = format!("{META_HEADER}a,s,p,,1,raw\nb,s,p,0,0,raw\n");
    let p = write_with_sidecar(dir.path(), &header, &[0; 8], &no_site);
    assert!(matches!(load_table(&p), Err(Error::MissingLabel(_))));

    let p = write_with_sidecar(dir.path(), &header, &[0; 7], &two_rows);
    assert!(matches!(load_table(&p), Err(Error::Format(_))));
}

#[test]
fn codebook_is_optional() {
    let dir = tempfile::tempdir().unwrap();
    let header = batchaudit::embstore::encode_header(1, 1);
    let p = write_with_sidecar(dir.path(), &header, &[0; 4], &format!("{META_HEADER}a,s,p,0,,raw\n"));
    assert!(!codebook_path(&p).exists());
    let t = load_table(&p).unwrap();
    assert_eq!(t.model_tag(), "");
    assert_eq!(t.meta()[0].class_label, None);
    assert!(matches!(t.class_labels(), Err(Error::MissingLabel(_))));
}
