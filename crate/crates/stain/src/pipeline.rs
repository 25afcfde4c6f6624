//! Slide → patch pipeline with manifest output.
//!
//! Output layout under the chosen directory:
//!
//! ```text
//! manifest.csv
//! patches/<slide_id>/<patch_id>_<variant>.png
//! ```

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::macenko::{macenko_apply, macenko_fit, MacenkoTarget};
use crate::reinhard::{reinhard_apply, reinhard_fit, ReinhardTarget};
use crate::tissue::{patch_std, thumbnail, tissue_mask, StdMode};
use crate::PATCH_SIZE;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: [&str; 7] = ["patch_id", "slide_id", "x", "y", "variant", "kept", "reason"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub patch_size: u32,
    pub thumbnail_downsample: u32,
    /// Minimum tissue fraction of a patch's thumbnail footprint.
    pub tissue_fraction: f64,
    pub min_std: f64,
    pub std_mode: StdMode,
    /// See [`tissue_mask`].
    pub glass_min_intensity: u8,
    pub reinhard: bool,
    pub macenko: bool,
    /// Kept patches sampled to fit normalization targets.
    pub target_pool_size: usize,
    /// Slides the target pool is drawn from; empty means every slide.
    pub reference_slides: Vec<String>,
    /// Fixed targets; when set, no fitting happens for that method.
    pub reinhard_target: Option<ReinhardTarget>,
    pub macenko_target: Option<MacenkoTarget>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            patch_size: PATCH_SIZE,
            thumbnail_downsample: 32,
            tissue_fraction: 0.5,
            min_std: 8.0,
            std_mode: StdMode::Grayscale,
            glass_min_intensity: 200,
            reinhard: false,
            macenko: false,
            target_pool_size: 500,
            reference_slides: Vec::new(),
            reinhard_target: None,
            macenko_target: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.patch_size == 0 || self.thumbnail_downsample == 0 {
            return bad("patch size and thumbnail downsample must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.tissue_fraction) {
            return bad(format!("tissue_fraction {} outside [0, 1]", self.tissue_fraction));
        }
        if !(self.min_std >= 0.0) {
            return bad(format!("min_std {} must be non-negative", self.min_std));
        }
        if (self.reinhard || self.macenko) && self.target_pool_size == 0 {
            return bad("target_pool_size must be positive when normalizing".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Raw,
    Reinhard,
    Macenko,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Reinhard => "reinhard",
            Variant::Macenko => "macenko",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub patch_id: String,
    pub slide_id: String,
    pub x: u32,
    pub y: u32,
    pub variant: Variant,
    pub kept: bool,
    pub reason: String,
}

pub fn patch_id(slide_id: &str, x: u32, y: u32) -> String {
    format!("{slide_id}_x{x}_y{y}")
}

/// Location of a patch image relative to the output directory.
pub fn patch_path(out: &Path, slide_id: &str, patch_id: &str, variant: Variant) -> PathBuf {
    out.join("patches")
        .join(slide_id)
        .join(format!("{patch_id}_{}.png", variant.as_str()))
}

/// Keep/drop verdict for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct TileDecision {
    pub x: u32,
    pub y: u32,
    pub tissue_fraction: f64,
    pub std: Option<f64>,
    pub kept: bool,
    pub reason: &'static str,
}

/// Tiles one slide without overlap and decides which tiles are kept.
/// Tiles are ordered by `(x, y)`.
pub fn tile_slide(slide: &RgbImage, cfg: &PipelineConfig) -> Vec<TileDecision> {
    let size = cfg.patch_size;
    let (w, h) = slide.dimensions();
    let mask = tissue_mask(&thumbnail(slide, cfg.thumbnail_downsample), cfg.glass_min_intensity);
    let mut out = Vec::new();
    for x in (0..w / size).map(|i| i * size) {
        for y in (0..h / size).map(|j| j * size) {
            let frac = mask.footprint_fraction(x, y, size, cfg.thumbnail_downsample);
            let mut d = TileDecision {
                x,
                y,
                tissue_fraction: frac,
                std: None,
                kept: false,
                reason: "background",
            };
            if frac >= cfg.tissue_fraction {
                let patch = image::imageops::crop_imm(slide, x, y, size, size).to_image();
                let s = patch_std(&patch, cfg.std_mode);
                d.std = Some(s);
                if s >= cfg.min_std {
                    d.kept = true;
                    d.reason = "";
                } else {
                    d.reason = "low_std";
                }
            }
            out.push(d);
        }
    }
    out
}

/// Summary of a pipeline run.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub slides_processed: usize,
    pub slides_failed: Vec<(String, String)>,
    pub tiles: usize,
    pub kept: usize,
    pub reinhard_target: Option<ReinhardTarget>,
    pub macenko_target: Option<MacenkoTarget>,
    pub manifest: PathBuf,
    pub rows: Vec<ManifestRow>,
}

fn slide_id_of(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::Parameter(format!("cannot derive a slide id from {}", path.display())))
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
}

fn load_png(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
}

/// Runs tiling, filtering and normalization over `slides` and writes the
/// patches and manifest under `out`. Slides are processed in slide-id order;
/// unreadable slides are logged and reported, not fatal.
pub fn run_patch_pipeline(slides: &[PathBuf], cfg: &PipelineConfig, out: &Path) -> Result<PipelineReport> {
    cfg.validate()?;
    let mut named: Vec<(String, &PathBuf)> = slides
        .iter()
        .map(|p| Ok((slide_id_of(p)?, p)))
        .collect::<Result<_>>()?;
    named.sort();
    if let Some(w) = named.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Parameter(format!("duplicate slide id {:?}", w[0].0)));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut rows = Vec::new();
    let mut kept: Vec<(String, String)> = Vec::new();
    let mut failed = Vec::new();
    let mut tiles = 0;
    for (slide_id, path) in &named {
        let slide = match image::open(path) {
            Ok(img) => img.to_rgb8(),
            Err(e) => {
                log::error!("skipping unreadable slide {}: {e}", path.display());
                failed.push((path.display().to_string(), e.to_string()));
                continue;
            }
        };
        for d in tile_slide(&slide, cfg) {
            tiles += 1;
            let pid = patch_id(slide_id, d.x, d.y);
            if d.kept {
                let patch = image::imageops::crop_imm(&slide, d.x, d.y, cfg.patch_size, cfg.patch_size).to_image();
                save_png(&patch, &patch_path(out, slide_id, &pid, Variant::Raw))?;
                kept.push((slide_id.clone(), pid.clone()));
            }
            rows.push(ManifestRow {
                patch_id: pid,
                slide_id: slide_id.clone(),
                x: d.x,
                y: d.y,
                variant: Variant::Raw,
                kept: d.kept,
                reason: d.reason.to_owned(),
            });
        }
    }

    let mut reinhard_target = cfg.reinhard_target.filter(|_| cfg.reinhard);
    let mut macenko_target = cfg.macenko_target.filter(|_| cfg.macenko);
    let need_fit = (cfg.reinhard && reinhard_target.is_none()) || (cfg.macenko && macenko_target.is_none());
    if need_fit {
        let pool = target_pool(out, &kept, cfg)?;
        if cfg.reinhard && reinhard_target.is_none() {
            reinhard_target = Some(reinhard_fit(&pool)?);
        }
        if cfg.macenko && macenko_target.is_none() {
            macenko_target = Some(macenko_fit(&pool)?);
        }
    }

    if reinhard_target.is_some() || macenko_target.is_some() {
        let raw_rows: Vec<ManifestRow> = rows.iter().filter(|r| r.kept).cloned().collect();
        for r in raw_rows {
            let patch = load_png(&patch_path(out, &r.slide_id, &r.patch_id, Variant::Raw))?;
            let mut add = |variant, kept: bool, reason: &str| {
                rows.push(ManifestRow {
                    variant,
                    kept,
                    reason: reason.to_owned(),
                    ..r.clone()
                })
            };
            if let Some(t) = &reinhard_target {
                let o = reinhard_apply(&patch, t);
                save_png(&o.image, &patch_path(out, &r.slide_id, &r.patch_id, Variant::Reinhard))?;
                add(Variant::Reinhard, true, if o.flat_channels.iter().any(|&f| f) { "flat_channel" } else { "" });
            }
            if let Some(t) = &macenko_target {
                match macenko_apply(&patch, t) {
                    Ok(o) => {
                        save_png(&o.image, &patch_path(out, &r.slide_id, &r.patch_id, Variant::Macenko))?;
                        add(Variant::Macenko, true, if o.passed_through { "passthrough" } else { "" });
                    }
                    Err(e) => {
                        log::warn!("Macenko failed on {}: {e}", r.patch_id);
                        add(Variant::Macenko, false, "degenerate_stain");
                    }
                }
            }
        }
    }

    rows.sort_by(|a, b| (&a.slide_id, a.x, a.y, a.variant).cmp(&(&b.slide_id, b.x, b.y, b.variant)));
    let manifest = out.join(MANIFEST_FILE);
    write_manifest(&manifest, &rows)?;
    Ok(PipelineReport {
        slides_processed: named.len() - failed.len(),
        slides_failed: failed,
        tiles,
        kept: kept.len(),
        reinhard_target,
        macenko_target,
        manifest,
        rows,
    })
}

/// Up to `target_pool_size` kept raw patches, drawn with the config seed
/// from the reference slides.
fn target_pool(out: &Path, kept: &[(String, String)], cfg: &PipelineConfig) -> Result<Vec<RgbImage>> {
    let refs: BTreeSet<&str> = cfg.reference_slides.iter().map(String::as_str).collect();
    let candidates: Vec<&(String, String)> = kept
        .iter()
        .filter(|(s, _)| refs.is_empty() || refs.contains(s.as_str()))
        .collect();
    if candidates.is_empty() {
        return Err(Error::InsufficientTissue(
            "no kept patches available to fit a normalization target".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picks = rand::seq::index::sample(&mut rng, candidates.len(), cfg.target_pool_size.min(candidates.len())).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|i| {
            let (s, p) = candidates[i];
            load_png(&patch_path(out, s, p, Variant::Raw))
        })
        .collect()
}

/// Writes the manifest through a temporary file so readers never see a
/// partial one.
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = csv::Writer::from_writer(&mut tmp);
        w.write_record(MANIFEST_HEADER)?;
        for r in rows {
            w.write_record([
                r.patch_id.as_str(),
                r.slide_id.as_str(),
                &r.x.to_string(),
                &r.y.to_string(),
                r.variant.as_str(),
                if r.kept { "true" } else { "false" },
                r.reason.as_str(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.as_file_mut().flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != MANIFEST_HEADER {
        return Err(Error::Parameter(format!(
            "manifest {} has header {header:?}, expected {MANIFEST_HEADER:?}",
            path.display()
        )));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
