//! Ordered distance profiles around a tumour reference patch.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::{index, IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::embstore::{EmbeddingTable, CLASS_NORMAL, CLASS_TUMOR};
use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceGroup {
    /// Same slide as the reference.
    Ss,
    /// Other slides, same site.
    Ossh,
    /// Other slides, other sites.
    Osoh,
}

impl fmt::Display for DistanceGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceGroup::Ss => "ss",
            DistanceGroup::Ossh => "ossh",
            DistanceGroup::Osoh => "osoh",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEntry {
    pub distance: f64,
    pub class_label: u32,
    pub patch_id: String,
    pub slide_id: String,
}

/// Euclidean distances from the reference, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceProfile {
    pub group: DistanceGroup,
    pub reference: String,
    pub entries: Vec<DistanceEntry>,
}

impl DistanceProfile {
    pub fn distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.distance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistanceConfig {
    /// Patches per slide, split evenly between normal and tumour.
    pub n_per_group: usize,
    pub n_other_slides: usize,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            n_per_group: 1_000,
            n_other_slides: 5,
        }
    }
}

struct SlideRows {
    site: u32,
    normal: Vec<usize>,
    tumor: Vec<usize>,
}

fn slides(table: &EmbeddingTable) -> Result<BTreeMap<String, SlideRows>> {
    let classes = table.class_labels()?;
    let mut out: BTreeMap<String, SlideRows> = BTreeMap::new();
    for (i, m) in table.meta().iter().enumerate() {
        let e = out.entry(m.slide_id.clone()).or_insert_with(|| SlideRows {
            site: m.site_label,
            normal: Vec::new(),
            tumor: Vec::new(),
        });
        match classes[i] {
            CLASS_TUMOR => e.tumor.push(i),
            CLASS_NORMAL => e.normal.push(i),
            _ => {}
        }
    }
    Ok(out)
}

fn per_class(n: usize) -> (usize, usize) {
    (n / 2, n - n / 2)
}

fn eligible(s: &SlideRows, cfg: &DistanceConfig) -> bool {
    let (n_normal, n_tumor) = per_class(cfg.n_per_group);
    !s.tumor.is_empty() && s.normal.len() >= n_normal && s.tumor.len() >= n_tumor
}

/// Picks a tumour patch from a randomly chosen eligible cancerous slide.
pub fn pick_reference(table: &EmbeddingTable, cfg: &DistanceConfig, seed: u64) -> Result<String> {
    let slides = slides(table)?;
    let candidates: Vec<&SlideRows> = slides.values().filter(|s| eligible(s, cfg)).collect();
    let mut rng = seed::derived_rng(seed, "distances/reference");
    let slide = candidates
        .choose(&mut rng)
        .ok_or_else(|| Error::Capacity("no cancerous slide with enough patches per class".into()))?;
    let row = *slide.tumor.choose(&mut rng).expect("eligible slides have tumour rows");
    Ok(table.meta()[row].patch_id.clone())
}

/// Distance profiles for the same slide, other slides of the same site and
/// slides of other sites, each sampled balanced over both classes.
pub fn distance_profiles(
    table: &EmbeddingTable,
    reference: &str,
    cfg: &DistanceConfig,
    seed: u64,
) -> Result<Vec<DistanceProfile>> {
    if cfg.n_per_group == 0 {
        return Err(Error::Parameter("n_per_group must be positive".into()));
    }
    let ref_row = table
        .index_of(reference)
        .ok_or_else(|| Error::Parameter(format!("reference patch {reference:?} not in table")))?;
    let ref_meta = &table.meta()[ref_row];
    if ref_meta.class_label != Some(CLASS_TUMOR) {
        return Err(Error::Parameter(format!(
            "reference patch {reference:?} is not a tumour patch"
        )));
    }
    let slides = slides(table)?;
    let ref_slide = &slides[&ref_meta.slide_id];
    if !eligible(ref_slide, cfg) {
        return Err(Error::Capacity(format!(
            "reference slide {:?} lacks {} patches per class",
            ref_meta.slide_id,
            cfg.n_per_group / 2
        )));
    }
    let mut ossh: Vec<&str> = Vec::new();
    let mut osoh: Vec<&str> = Vec::new();
    for (id, s) in &slides {
        if *id == ref_meta.slide_id || !eligible(s, cfg) {
            continue;
        }
        if s.site == ref_slide.site {
            ossh.push(id);
        } else {
            osoh.push(id);
        }
    }
    let mut rng = seed::derived_rng(seed, "distances/sample");
    let mut pick = |pool: &mut Vec<&str>, name: &str| -> Result<Vec<String>> {
        if pool.len() < cfg.n_other_slides {
            return Err(Error::Capacity(format!(
                "{name}: need {} eligible cancerous slides, have {}",
                cfg.n_other_slides,
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        Ok(pool[..cfg.n_other_slides].iter().map(|s| s.to_string()).collect())
    };
    let ossh = pick(&mut ossh, "same site")?;
    let osoh = pick(&mut osoh, "other sites")?;

    let reference_x = table.row_f64(ref_row);
    let (n_normal, n_tumor) = per_class(cfg.n_per_group);
    let mut profile = |group: DistanceGroup, slide_ids: &[String]| -> DistanceProfile {
        let mut entries = Vec::new();
        for id in slide_ids {
            let s = &slides[id];
            for (pool, n) in [(&s.normal, n_normal), (&s.tumor, n_tumor)] {
                for j in index::sample(&mut rng, pool.len(), n) {
                    let r = pool[j];
                    let m = &table.meta()[r];
                    entries.push(DistanceEntry {
                        distance: sq_dist(&reference_x, &table.row_f64(r)).sqrt(),
                        class_label: m.class_label.expect("checked above"),
                        patch_id: m.patch_id.clone(),
                        slide_id: m.slide_id.clone(),
                    });
                }
            }
        }
        entries.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.patch_id.cmp(&b.patch_id)));
        DistanceProfile {
            group,
            reference: reference.to_string(),
            entries,
        }
    };
    Ok(vec![
        profile(DistanceGroup::Ss, std::slice::from_ref(&ref_meta.slide_id)),
        profile(DistanceGroup::Ossh, &ossh),
        profile(DistanceGroup::Osoh, &osoh),
    ])
}
