use std::path::{Path, PathBuf};

use batchaudit_stain::pipeline::{patch_path, read_manifest, run_patch_pipeline, PipelineConfig, Variant, MANIFEST_FILE};
use batchaudit_stain::synthetic::{he_patch, reference_stains, StainMix};
use image::{Rgb, RgbImage};

/// 512×512 slide; tissue fills the columns `x >= tissue_from`.
fn write_slide(dir: &Path, name: &str, tissue_from: u32, seed: u64) -> PathBuf {
    let tissue = he_patch(512, &reference_stains(), &StainMix::default(), seed);
    let img = RgbImage::from_fn(512, 512, |x, y| if x >= tissue_from { *tissue.get_pixel(x, y) } else { Rgb([250; 3]) });
    let path = dir.join(format!("{name}.png"));
    img.save(&path).unwrap();
    path
}

fn both_norms() -> PipelineConfig {
    PipelineConfig {
        reinhard: true,
        macenko: true,
        target_pool_size: 3,
        seed: 9,
        ..PipelineConfig::default()
    }
}

#[test]
fn three_files_per_kept_patch() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let slides = vec![write_slide(src.path(), "slideA", 0, 1), write_slide(src.path(), "slideB", 256, 2)];
    let rep = run_patch_pipeline(&slides, &both_norms(), out.path()).unwrap();
    assert_eq!(rep.tiles, 8);
    assert_eq!(rep.kept, 6);
    let rows = read_manifest(&out.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(rows, rep.rows);
    assert_eq!(rows.len(), 2 + 6 * 3);
    for r in rows.iter().filter(|r| r.kept) {
        let p = patch_path(out.path(), &r.slide_id, &r.patch_id, r.variant);
        let img = image::open(&p).unwrap();
        assert_eq!((img.width(), img.height()), (256, 256));
    }
    for v in [Variant::Raw, Variant::Reinhard, Variant::Macenko] {
        assert_eq!(rows.iter().filter(|r| r.kept && r.variant == v).count(), 6);
    }
    let dropped: Vec<_> = rows.iter().filter(|r| !r.kept).map(|r| (r.slide_id.as_str(), r.x, r.y, r.reason.as_str())).collect();
    assert_eq!(dropped, vec![("slideB", 0, 0, "background"), ("slideB", 0, 256, "background")]);
}

#[test]
fn manifest_is_byte_identical_across_runs() {
    let src = tempfile::tempdir().unwrap();
    let slides = vec![write_slide(src.path(), "s2", 256, 4), write_slide(src.path(), "s1", 0, 3)];
    let mut manifests = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().unwrap();
        run_patch_pipeline(&slides, &both_norms(), out.path()).unwrap();
        manifests.push(std::fs::read(out.path().join(MANIFEST_FILE)).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
    let text = String::from_utf8(manifests.pop().unwrap()).unwrap();
    assert!(text.starts_with("patch_id,slide_id,x,y,variant,kept,reason\n"));
    assert!(text.lines().nth(1).unwrap().starts_with("s1_x0_y0,s1,0,0,raw,true,"));
}

#[test]
fn unreadable_slide_is_skipped() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let bad = src.path().join("broken.png");
    std::fs::write(&bad, b"not an image").unwrap();
    let slides = vec![bad, write_slide(src.path(), "good", 0, 5)];
    let rep = run_patch_pipeline(&slides, &PipelineConfig::default(), out.path()).unwrap();
    assert_eq!(rep.slides_processed, 1);
    assert_eq!(rep.slides_failed.len(), 1);
    assert_eq!(rep.kept, 4);
    assert!(rep.rows.iter().all(|r| r.slide_id == "good" && r.variant == Variant::Raw));
}

#[test]
fn duplicate_slide_ids_are_rejected() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let slides = vec![write_slide(a.path(), "x", 0, 1), write_slide(b.path(), "x", 0, 2)];
    assert!(run_patch_pipeline(&slides, &PipelineConfig::default(), out.path()).is_err());
}
