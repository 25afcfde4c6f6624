//! Sampling and splitting protocols.
//!
//! Three protocols are provided:
//!
//! * [`subsample_per_site`] draws `floor(budget / m_i)` patches from every
//!   slide of a site with `m_i` slides, taking every patch of a slide that has
//!   fewer.
//! * [`patient_split`] assigns whole patients to train/validation/test so that
//!   patch counts approach the requested fractions.
//! * [`build_bias_splits`] assembles the four slide-level training
//!   compositions that correlate tumour labels with the source site, together
//!   with their validation sets and one shared test set.
//!
//! All of them are pure functions of `(table, seed)`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::embstore::{EmbeddingTable, CLASS_NORMAL, CLASS_TUMOR};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupLevel {
    Patient,
    Slide,
}

impl fmt::Display for GroupLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupLevel::Patient => "patient",
            GroupLevel::Slide => "slide",
        })
    }
}

/// Train/validation/test row indices. Each list is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupedSplit {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub group_level: GroupLevel,
    pub seed: u64,
}

impl GroupedSplit {
    pub fn subsets(&self) -> [(&'static str, &[usize]); 3] {
        [
            ("train", &self.train_idx),
            ("val", &self.val_idx),
            ("test", &self.test_idx),
        ]
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train_idx.len(), self.val_idx.len(), self.test_idx.len())
    }

    /// Verifies disjointness, index range and group integrity.
    pub fn check(&self, table: &EmbeddingTable) -> Result<()> {
        let mut seen = vec![false; table.len()];
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for (name, idx) in self.subsets() {
            for &i in idx {
                if i >= table.len() {
                    return Err(Error::Split(format!("{name} index {i} out of range")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Split(format!("row {i} appears in two subsets")));
                }
                let m = &table.meta()[i];
                let group = match self.group_level {
                    GroupLevel::Patient => m.patient_id.as_str(),
                    GroupLevel::Slide => m.slide_id.as_str(),
                };
                let prev = owner.entry(group).or_insert(name);
                if *prev != name {
                    return Err(Error::Split(format!(
                        "{} {group:?} appears in both {prev} and {name}",
                        self.group_level
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes the split as patch ids, one section per subset.
    pub fn write_text(&self, table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        out.push_str(&format!(
            "# group_level={} seed={}\n",
            self.group_level, self.seed
        ));
        for (name, idx) in self.subsets() {
            out.push_str(&format!("[{name}]\n"));
            for &i in idx {
                out.push_str(&table.meta()[i].patch_id);
                out.push('\n');
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a split written by [`GroupedSplit::write_text`], resolving patch
    /// ids against `table`.
    pub fn read_text(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lookup: HashMap<&str, usize> = table
            .meta()
            .iter()
            .enumerate()
            .map(|(i, m)| (m.patch_id.as_str(), i))
            .collect();
        let mut group_level = None;
        let mut seed = None;
        let mut sets: [Vec<usize>; 3] = Default::default();
        let mut current: Option<usize> = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                for kv in rest.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("group_level", "patient")) => group_level = Some(GroupLevel::Patient),
                        Some(("group_level", "slide")) => group_level = Some(GroupLevel::Slide),
                        Some(("seed", v)) => {
                            seed = Some(v.parse().map_err(|_| {
                                Error::Format(format!("bad seed {v:?} in {}", path.display()))
                            })?)
                        }
                        _ => {}
                    }
                }
                continue;
            }
            current = match line {
                "[train]" => Some(0),
                "[val]" => Some(1),
                "[test]" => Some(2),
                id => {
                    let slot = current.ok_or_else(|| {
                        Error::Format(format!("patch id {id:?} before any section"))
                    })?;
                    let row = lookup.get(id).ok_or_else(|| {
                        Error::Consistency(format!("split names unknown patch {id:?}"))
                    })?;
                    sets[slot].push(*row);
                    Some(slot)
                }
            };
        }
        let [train_idx, val_idx, test_idx] = sets;
        let split = GroupedSplit {
            train_idx,
            val_idx,
            test_idx,
            group_level: group_level
                .ok_or_else(|| Error::Format("split file lacks group_level".into()))?,
            seed: seed.ok_or_else(|| Error::Format("split file lacks seed".into()))?,
        };
        split.check(table)?;
        Ok(split)
    }
}

/// Result of [`subsample_per_site`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subsample {
    /// Selected row indices, ascending.
    pub indices: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Draws up to `floor(budget_per_site / m_i)` patches from each slide of site
/// `i`, where `m_i` is the number of slides of that site.
pub fn subsample_per_site(
    table: &EmbeddingTable,
    budget_per_site: usize,
    seed: u64,
) -> Result<Subsample> {
    let mut by_site: BTreeMap<u32, Vec<(String, Vec<usize>)>> = BTreeMap::new();
    for (slide, rows) in table.rows_by_slide() {
        let site = table.meta()[rows[0]].site_label;
        by_site.entry(site).or_default().push((slide, rows));
    }
    let mut warnings = Vec::new();
    for s in 0..table.codebook().site_names.len() as u32 {
        if !by_site.contains_key(&s) {
            warnings.push(format!("site {s} has no slides; contributes no patches"));
        }
    }

    let mut rng = seed::rng(seed);
    let mut indices = Vec::new();
    for (site, slides) in by_site.iter_mut() {
        let m = slides.len();
        if budget_per_site < m {
            return Err(Error::Parameter(format!(
                "budget {budget_per_site} is smaller than the {m} slides of site {site}"
            )));
        }
        let per_slide = budget_per_site / m;
        slides.sort_by(|a, b| a.0.cmp(&b.0));
        for (_, rows) in slides.iter() {
            if rows.len() <= per_slide {
                indices.extend_from_slice(rows);
            } else {
                indices.extend(index::sample(&mut rng, rows.len(), per_slide).iter().map(|j| rows[j]));
            }
        }
    }
    indices.sort_unstable();
    Ok(Subsample { indices, warnings })
}

/// Assigns whole patients to train/validation/test, targeting patch-count
/// fractions.
///
/// Patients are sorted by id, shuffled with `seed` and then handed one at a
/// time to the subset with the largest remaining deficit (ties go to the
/// earlier subset). When the patients left only just cover the subsets that
/// are still empty, the next one goes to an empty subset.
pub fn patient_split(
    table: &EmbeddingTable,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<GroupedSplit> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
        return Err(Error::Parameter(format!("split fractions must be positive, got {fr:?}")));
    }
    if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("split fractions must sum to 1, got {fr:?}")));
    }
    let mut patients = table.rows_by_patient();
    if patients.len() < 3 {
        return Err(Error::Split(format!(
            "patient-level split needs at least 3 patients, found {}",
            patients.len()
        )));
    }
    patients.sort_by(|a, b| a.0.cmp(&b.0));
    patients.shuffle(&mut seed::rng(seed));

    let total = table.len() as f64;
    let tie_eps = 1e-9 * total.max(1.0);
    let mut assigned = [0.0f64; 3];
    let mut sets: [Vec<usize>; 3] = Default::default();
    let mut empty = [true; 3];
    let n_patients = patients.len();
    for (k, (_, rows)) in patients.into_iter().enumerate() {
        let remaining = n_patients - k;
        let n_empty = empty.iter().filter(|&&e| e).count();
        let forced = remaining <= n_empty;
        let mut best: Option<(usize, f64)> = None;
        for s in 0..3 {
            if forced && !empty[s] {
                continue;
            }
            let deficit = fr[s] * total - assigned[s];
            match best {
                Some((_, d)) if deficit <= d + tie_eps => {}
                _ => best = Some((s, deficit)),
            }
        }
        let (s, _) = best.expect("at least one candidate subset");
        assigned[s] += rows.len() as f64;
        empty[s] = false;
        sets[s].extend(rows);
    }
    for set in sets.iter_mut() {
        set.sort_unstable();
    }
    let [train_idx, val_idx, test_idx] = sets;
    let split = GroupedSplit {
        train_idx,
        val_idx,
        test_idx,
        group_level: GroupLevel::Patient,
        seed,
    };
    debug_assert!(split.check(table).is_ok());
    Ok(split)
}

/// [`patient_split`] run separately within each site, so every subset holds
/// each site in about the target proportion. Patients never span sites, so
/// the result is still a patient-level split.
pub fn site_stratified_patient_split(
    table: &EmbeddingTable,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<GroupedSplit> {
    let mut by_site: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, m) in table.meta().iter().enumerate() {
        by_site.entry(m.site_label).or_default().push(i);
    }
    let mut sets: [Vec<usize>; 3] = Default::default();
    for (site, rows) in by_site {
        let sub = table.select(&rows)?;
        let part = patient_split(&sub, fractions, seed::derive(seed, &format!("site/{site}")))
            .map_err(|e| match e {
                Error::Split(msg) => Error::Split(format!("site {site}: {msg}")),
                other => other,
            })?;
        for (set, (_, idx)) in sets.iter_mut().zip(part.subsets()) {
            set.extend(idx.iter().map(|&i| rows[i]));
        }
    }
    for set in sets.iter_mut() {
        set.sort_unstable();
    }
    let [train_idx, val_idx, test_idx] = sets;
    let split = GroupedSplit {
        train_idx,
        val_idx,
        test_idx,
        group_level: GroupLevel::Patient,
        seed,
    };
    debug_assert!(split.check(table).is_ok());
    Ok(split)
}

/// Patches contributed by one selected slide in the biased splits.
pub const PATCHES_PER_BIAS_SLIDE: usize = 2_500;
pub const BIAS_TRAIN_TOTAL: usize = 30_000;
pub const BIAS_VAL_TOTAL: usize = 5_000;

/// Patch counts per (site, class) cell, indexed `[site][class]` with
/// site 0/1 and class normal/tumour.
pub type CellCounts = [[usize; 2]; 2];

/// One of the four biased training compositions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub name: String,
    /// Fraction of cancer patches per site, e.g. `"0.67/0.33"`.
    pub ratio_label: String,
    /// The two site labels playing the roles of site 0 and site 1.
    pub sites: [u32; 2],
    pub train: CellCounts,
    pub val: CellCounts,
    pub test: CellCounts,
}

impl BiasSpec {
    pub fn train_total(&self) -> usize {
        self.train.iter().flatten().sum()
    }
}

const TRAIN_COMPOSITIONS: [(&str, CellCounts); 4] = [
    ("0.5/0.5", [[7_500, 7_500], [7_500, 7_500]]),
    ("0.67/0.33", [[5_000, 10_000], [10_000, 5_000]]),
    ("0.83/0.17", [[2_500, 12_500], [12_500, 2_500]]),
    ("1/0", [[0, 15_000], [15_000, 0]]),
];

/// Normal patches from site 0, cancer patches from site 1.
const TEST_COMPOSITION: CellCounts = [[5_000, 0], [0, 5_000]];

/// Scales a training composition to the validation budget with
/// largest-remainder rounding, preserving the total exactly.
fn validation_counts(train: &CellCounts) -> CellCounts {
    let total: usize = train.iter().flatten().sum();
    let mut out = [[0usize; 2]; 2];
    let mut rema = Vec::with_capacity(4);
    let mut assigned = 0;
    for s in 0..2 {
        for c in 0..2 {
            let exact = train[s][c] * BIAS_VAL_TOTAL;
            out[s][c] = exact / total;
            assigned += out[s][c];
            rema.push((exact % total, s, c));
        }
    }
    // Largest remainder first; earlier cells win ties.
    rema.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    for &(_, s, c) in rema.iter().take(BIAS_VAL_TOTAL - assigned) {
        out[s][c] += 1;
    }
    out
}

/// The four biased compositions for the given pair of sites.
pub fn bias_specs(sites: [u32; 2]) -> Vec<BiasSpec> {
    TRAIN_COMPOSITIONS
        .iter()
        .enumerate()
        .map(|(i, (ratio, train))| BiasSpec {
            name: format!("Split {} -- {ratio}", i + 1),
            ratio_label: ratio.to_string(),
            sites,
            train: *train,
            val: validation_counts(train),
            test: TEST_COMPOSITION,
        })
        .collect()
}

fn slides_for(count: usize) -> usize {
    count.div_ceil(PATCHES_PER_BIAS_SLIDE)
}

/// Builds the four biased splits with slide-level integrity.
///
/// Tumour slides are slides with any tumour patch; they are eligible when
/// they hold at least 2,500 tumour patches. Normal slides hold no tumour
/// patch and at least 2,500 normal patches. Each selected slide contributes
/// the same 2,500 uniformly drawn patches wherever it is used. Training and
/// test use whole slides; validation may use part of its last slide.
pub fn build_bias_splits(table: &EmbeddingTable, seed: u64) -> Result<Vec<(BiasSpec, GroupedSplit)>> {
    let classes = table.class_labels()?;
    let site_set: BTreeSet<u32> = table.meta().iter().map(|m| m.site_label).collect();
    let mut it = site_set.iter().copied();
    let sites = match (it.next(), it.next()) {
        (Some(a), Some(b)) => [a, b],
        _ => {
            return Err(Error::Capacity(format!(
                "biased splits need two sites, table has {}",
                site_set.len()
            )))
        }
    };
    let specs = bias_specs(sites);

    // Eligible slides per cell with their class-matching rows.
    let mut cells: [[Vec<(String, Vec<usize>)>; 2]; 2] = Default::default();
    for (slide, rows) in table.rows_by_slide() {
        let site = table.meta()[rows[0]].site_label;
        let Some(s) = sites.iter().position(|&x| x == site) else {
            continue;
        };
        let tumor: Vec<usize> = rows.iter().copied().filter(|&r| classes[r] == CLASS_TUMOR).collect();
        let (c, pool) = if tumor.is_empty() {
            let normal: Vec<usize> =
                rows.iter().copied().filter(|&r| classes[r] == CLASS_NORMAL).collect();
            (0, normal)
        } else {
            (1, tumor)
        };
        if pool.len() >= PATCHES_PER_BIAS_SLIDE {
            cells[s][c].push((slide, pool));
        }
    }

    let mut deficits = Vec::new();
    for s in 0..2 {
        for c in 0..2 {
            let needed = slides_for(TEST_COMPOSITION[s][c])
                + specs
                    .iter()
                    .map(|sp| slides_for(sp.train[s][c]) + slides_for(sp.val[s][c]))
                    .max()
                    .unwrap_or(0);
            let have = cells[s][c].len();
            if have < needed {
                deficits.push(format!(
                    "site {} {}: need {needed} eligible slides, have {have}",
                    sites[s],
                    if c == 1 { "tumor" } else { "normal" }
                ));
            }
        }
    }
    if !deficits.is_empty() {
        return Err(Error::Capacity(deficits.join("; ")));
    }

    // Fixed slide order and per-slide 2,500-patch pools.
    for s in 0..2 {
        for c in 0..2 {
            let cell = &mut cells[s][c];
            cell.sort_by(|a, b| a.0.cmp(&b.0));
            cell.shuffle(&mut seed::derived_rng(seed, &format!("bias/cell/{s}/{c}")));
            for (slide, pool) in cell.iter_mut() {
                let mut rng = seed::derived_rng(seed, &format!("bias/slide/{slide}"));
                let picked: Vec<usize> = index::sample(&mut rng, pool.len(), PATCHES_PER_BIAS_SLIDE)
                    .iter()
                    .map(|j| pool[j])
                    .collect();
                *pool = picked;
            }
        }
    }

    let mut test = Vec::new();
    let mut offsets = [[0usize; 2]; 2];
    for s in 0..2 {
        for c in 0..2 {
            let n = slides_for(TEST_COMPOSITION[s][c]);
            for (_, pool) in &cells[s][c][..n] {
                test.extend_from_slice(pool);
            }
            offsets[s][c] = n;
        }
    }
    test.sort_unstable();

    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for s in 0..2 {
            for c in 0..2 {
                let pool = &cells[s][c][offsets[s][c]..];
                let n_train = spec.train[s][c] / PATCHES_PER_BIAS_SLIDE;
                for (_, rows) in &pool[..n_train] {
                    train.extend_from_slice(rows);
                }
                let mut need = spec.val[s][c];
                for (_, rows) in &pool[n_train..] {
                    if need == 0 {
                        break;
                    }
                    let take = need.min(rows.len());
                    val.extend_from_slice(&rows[..take]);
                    need -= take;
                }
            }
        }
        train.sort_unstable();
        val.sort_unstable();
        let split = GroupedSplit {
            train_idx: train,
            val_idx: val,
            test_idx: test.clone(),
            group_level: GroupLevel::Slide,
            seed,
        };
        split.check(table)?;
        out.push((spec, split));
    }
    Ok(out)
}

/// Counts rows of a subset per (site role, class) cell.
pub fn cell_counts(table: &EmbeddingTable, sites: [u32; 2], rows: &[usize]) -> Result<CellCounts> {
    let mut counts = [[0usize; 2]; 2];
    for &r in rows {
        let m = &table.meta()[r];
        let s = sites
            .iter()
            .position(|&x| x == m.site_label)
            .ok_or_else(|| Error::Consistency(format!("row {r} has unexpected site {}", m.site_label)))?;
        let c = match m.class_label {
            Some(CLASS_NORMAL) => 0,
            Some(CLASS_TUMOR) => 1,
            other => {
                return Err(Error::Consistency(format!("row {r} has class {other:?}")));
            }
        };
        counts[s][c] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embstore::{NormVariant, PatchMeta};

    fn table(groups: &[(usize, usize)]) -> EmbeddingTable {
        // (patients, patches per patient) blocks, one slide per patient
        let mut meta = Vec::new();
        let mut p = 0;
        for &(patients, per) in groups {
            for _ in 0..patients {
                for j in 0..per {
                    meta.push(PatchMeta {
                        patch_id: format!("pt{p}_{j}"),
                        slide_id: format!("sl{p}"),
                        patient_id: format!("pt{p}"),
                        site_label: (p % 3) as u32,
                        class_label: None,
                        norm_variant: NormVariant::Raw,
                    });
                }
                p += 1;
            }
        }
        let n = meta.len();
        EmbeddingTable::new(vec![0.0; n], 1, meta, "t").unwrap()
    }

    #[test]
    fn uniform_patients_hit_exact_fractions() {
        let t = table(&[(10, 100)]);
        let s = patient_split(&t, (0.6, 0.1, 0.3), 3).unwrap();
        assert_eq!(s.sizes(), (600, 100, 300));
        s.check(&t).unwrap();
    }

    #[test]
    fn three_patients_one_each() {
        let t = table(&[(3, 100)]);
        let s = patient_split(&t, (0.6, 0.1, 0.3), 11).unwrap();
        assert_eq!(s.sizes(), (100, 100, 100));
    }

    #[test]
    fn too_few_patients() {
        let t = table(&[(2, 10)]);
        assert!(matches!(patient_split(&t, (0.6, 0.1, 0.3), 0), Err(Error::Split(_))));
    }

    #[test]
    fn fractions_validated() {
        let t = table(&[(5, 10)]);
        assert!(matches!(patient_split(&t, (0.6, 0.1, 0.2), 0), Err(Error::Parameter(_))));
        assert!(matches!(patient_split(&t, (0.9, 0.0, 0.1), 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn subsample_takes_all_of_short_slide() {
        let t = table(&[(1, 3)]);
        let s = subsample_per_site(&t, 10, 1).unwrap();
        assert_eq!(s.indices, vec![0, 1, 2]);
    }

    #[test]
    fn subsample_is_deterministic() {
        let t = table(&[(6, 40)]);
        let a = subsample_per_site(&t, 20, 5).unwrap();
        let b = subsample_per_site(&t, 20, 5).unwrap();
        assert_eq!(a, b);
        // 3 sites with 2 slides each: 10 per slide.
        assert_eq!(a.indices.len(), 60);
    }

    #[test]
    fn validation_counts_keep_composition() {
        let specs = bias_specs([0, 1]);
        let v: Vec<CellCounts> = specs.iter().map(|s| s.val).collect();
        assert_eq!(v[0], [[1250, 1250], [1250, 1250]]);
        assert_eq!(v[1], [[833, 1667], [1667, 833]]);
        assert_eq!(v[2], [[417, 2083], [2083, 417]]);
        assert_eq!(v[3], [[0, 2500], [2500, 0]]);
        for s in &specs {
            assert_eq!(s.val.iter().flatten().sum::<usize>(), BIAS_VAL_TOTAL);
            assert_eq!(s.train_total(), BIAS_TRAIN_TOTAL);
        }
    }

    #[test]
    fn split_text_round_trip() {
        let t = table(&[(6, 5)]);
        let s = patient_split(&t, (0.6, 0.1, 0.3), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.txt");
        s.write_text(&t, &p).unwrap();
        assert_eq!(GroupedSplit::read_text(&t, &p).unwrap(), s);
    }

    #[test]
    fn check_catches_shared_patient() {
        let t = table(&[(3, 2)]);
        let bad = GroupedSplit {
            train_idx: vec![0],
            val_idx: vec![1],
            test_idx: vec![2, 3, 4, 5],
            group_level: GroupLevel::Patient,
            seed: 0,
        };
        assert!(matches!(bad.check(&t), Err(Error::Split(_))));
    }
}
