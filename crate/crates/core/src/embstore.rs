//! In-memory embedding table and the EMB1 container.
//!
//! An EMB1 file is a fixed 32-byte header followed by row-major little-endian
//! `f32` features:
//!
//! | bytes  | content                               |
//! |--------|---------------------------------------|
//! | 0..4   | magic `EMB1`                          |
//! | 4..8   | format version, `u32` LE, always 1    |
//! | 8..16  | row count N, `u64` LE                 |
//! | 16..24 | feature dimension D, `u64` LE         |
//! | 24     | dtype code, `0x01` = `f32` LE         |
//! | 25..32 | reserved, zero                        |
//!
//! Per-row metadata lives next to the matrix in `<path>.meta.csv`, and the
//! label names plus the extractor tag in `<path>.codebook.json`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0x01;
pub const HEADER_LEN: usize = 32;

pub const META_SUFFIX: &str = ".meta.csv";
pub const CODEBOOK_SUFFIX: &str = ".codebook.json";

/// Class index used for tumour patches.
pub const CLASS_TUMOR: u32 = 1;
/// Class index used for normal patches.
pub const CLASS_NORMAL: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormVariant {
    #[default]
    Raw,
    Reinhard,
    Macenko,
}

impl NormVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            NormVariant::Raw => "raw",
            NormVariant::Reinhard => "reinhard",
            NormVariant::Macenko => "macenko",
        }
    }
}

impl fmt::Display for NormVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(NormVariant::Raw),
            "reinhard" => Ok(NormVariant::Reinhard),
            "macenko" => Ok(NormVariant::Macenko),
            other => Err(Error::Format(format!("unknown norm_variant {other:?}"))),
        }
    }
}

/// Identity and labels of one patch. Column order matches the sidecar CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub patch_id: String,
    pub slide_id: String,
    pub patient_id: String,
    #[serde(rename = "site")]
    pub site_label: u32,
    #[serde(rename = "class")]
    pub class_label: Option<u32>,
    pub norm_variant: NormVariant,
}

/// Display names for site and class indices. Empty lists mean "unnamed".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCodebook {
    #[serde(default)]
    pub site_names: Vec<String>,
    #[serde(default)]
    pub class_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    #[serde(default)]
    model_tag: String,
    #[serde(flatten)]
    codebook: LabelCodebook,
}

/// N×D patch features with aligned metadata. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    features: Vec<f32>,
    meta: Vec<PatchMeta>,
    dim: usize,
    model_tag: String,
    codebook: LabelCodebook,
}

impl EmbeddingTable {
    /// Builds a table from row-major features, validating every invariant.
    pub fn new(
        features: Vec<f32>,
        dim: usize,
        meta: Vec<PatchMeta>,
        model_tag: impl Into<String>,
    ) -> Result<Self> {
        Self::with_codebook(features, dim, meta, model_tag, LabelCodebook::default())
    }

    pub fn with_codebook(
        features: Vec<f32>,
        dim: usize,
        meta: Vec<PatchMeta>,
        model_tag: impl Into<String>,
        codebook: LabelCodebook,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("feature dimension must be at least 1".into()));
        }
        if features.len() % dim != 0 {
            return Err(Error::Consistency(format!(
                "{} feature values do not form rows of width {dim}",
                features.len()
            )));
        }
        let n = features.len() / dim;
        if meta.len() != n {
            return Err(Error::Consistency(format!(
                "matrix has {n} rows but metadata has {}",
                meta.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                row: pos / dim,
                msg: format!("non-finite value in column {}", pos % dim),
            });
        }
        validate_meta(&meta)?;
        validate_codebook(&codebook, &meta)?;
        Ok(Self {
            features,
            meta,
            dim,
            model_tag: model_tag.into(),
            codebook,
        })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn codebook(&self) -> &LabelCodebook {
        &self.codebook
    }

    pub fn meta(&self) -> &[PatchMeta] {
        &self.meta
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Row `i` widened to `f64`.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// Rows at `indices`, widened to `f64` and packed row-major.
    pub fn gather_f64(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            out.extend(self.row(i).iter().map(|&v| f64::from(v)));
        }
        out
    }

    /// All rows widened to `f64`, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.features.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn site_labels(&self) -> Vec<u32> {
        self.meta.iter().map(|m| m.site_label).collect()
    }

    /// Class labels of every row; fails on the first row without one.
    pub fn class_labels(&self) -> Result<Vec<u32>> {
        self.meta
            .iter()
            .enumerate()
            .map(|(i, m)| {
                m.class_label.ok_or_else(|| {
                    Error::MissingLabel(format!(
                        "class label required but absent for row {i} (patch {})",
                        m.patch_id
                    ))
                })
            })
            .collect()
    }

    pub fn index_of(&self, patch_id: &str) -> Option<usize> {
        self.meta.iter().position(|m| m.patch_id == patch_id)
    }

    /// Sub-table with the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut meta = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Parameter(format!(
                    "row index {i} out of range for table of {} rows",
                    self.len()
                )));
            }
            features.extend_from_slice(self.row(i));
            meta.push(self.meta[i].clone());
        }
        Self::with_codebook(
            features,
            self.dim,
            meta,
            self.model_tag.clone(),
            self.codebook.clone(),
        )
    }

    /// Row indices grouped by slide, slides in order of first appearance.
    pub fn rows_by_slide(&self) -> Vec<(String, Vec<usize>)> {
        group_rows(&self.meta, |m| m.slide_id.as_str())
    }

    /// Row indices grouped by patient, patients in order of first appearance.
    pub fn rows_by_patient(&self) -> Vec<(String, Vec<usize>)> {
        group_rows(&self.meta, |m| m.patient_id.as_str())
    }
}

fn group_rows<'a>(
    meta: &'a [PatchMeta],
    key: impl Fn(&'a PatchMeta) -> &'a str,
) -> Vec<(String, Vec<usize>)> {
    let mut order: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, m) in meta.iter().enumerate() {
        let k = key(m);
        let slot = *order.entry(k).or_insert_with(|| {
            groups.push((k.to_string(), Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(i);
    }
    groups
}

fn validate_meta(meta: &[PatchMeta]) -> Result<()> {
    let mut ids: HashSet<&str> = HashSet::with_capacity(meta.len());
    let mut slides: HashMap<&str, (&str, u32)> = HashMap::new();
    for (row, m) in meta.iter().enumerate() {
        if !ids.insert(m.patch_id.as_str()) {
            return Err(Error::Consistency(format!(
                "duplicate patch_id {:?} at row {row}",
                m.patch_id
            )));
        }
        let entry = slides
            .entry(m.slide_id.as_str())
            .or_insert((m.patient_id.as_str(), m.site_label));
        if entry.0 != m.patient_id {
            return Err(Error::Consistency(format!(
                "slide {:?} belongs to patients {:?} and {:?}",
                m.slide_id, entry.0, m.patient_id
            )));
        }
        if entry.1 != m.site_label {
            return Err(Error::Consistency(format!(
                "slide {:?} carries site labels {} and {}",
                m.slide_id, entry.1, m.site_label
            )));
        }
    }
    Ok(())
}

fn validate_codebook(codebook: &LabelCodebook, meta: &[PatchMeta]) -> Result<()> {
    if !codebook.site_names.is_empty() {
        if let Some(m) = meta
            .iter()
            .find(|m| m.site_label as usize >= codebook.site_names.len())
        {
            return Err(Error::Consistency(format!(
                "site label {} has no codebook name ({} names)",
                m.site_label,
                codebook.site_names.len()
            )));
        }
    }
    if !codebook.class_names.is_empty() {
        if let Some(c) = meta
            .iter()
            .filter_map(|m| m.class_label)
            .find(|&c| c as usize >= codebook.class_names.len())
        {
            return Err(Error::Consistency(format!(
                "class label {c} has no codebook name ({} names)",
                codebook.class_names.len()
            )));
        }
    }
    Ok(())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    suffixed(path, META_SUFFIX)
}

pub fn codebook_path(path: &Path) -> PathBuf {
    suffixed(path, CODEBOOK_SUFFIX)
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Encodes the EMB1 header for an N×D `f32` matrix.
pub fn encode_header(n: u64, d: u64) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(MAGIC);
    h[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    h[8..16].copy_from_slice(&n.to_le_bytes());
    h[16..24].copy_from_slice(&d.to_le_bytes());
    h[24] = DTYPE_F32;
    h
}

/// Parses an EMB1 header, returning `(N, D)`.
pub fn decode_header(h: &[u8]) -> Result<(u64, u64)> {
    if h.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "header truncated: {} of {HEADER_LEN} bytes",
            h.len()
        )));
    }
    if &h[0..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &h[0..4])));
    }
    let version = u32::from_le_bytes(h[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(h[8..16].try_into().unwrap());
    let d = u64::from_le_bytes(h[16..24].try_into().unwrap());
    if h[24] != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype code {:#04x}", h[24])));
    }
    if h[25..32].iter().any(|&b| b != 0) {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }
    if d == 0 {
        return Err(Error::Format("feature dimension is zero".into()));
    }
    Ok((n, d))
}

/// Reads an EMB1 file plus its sidecar metadata and optional codebook.
pub fn load_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let (n, d) = decode_header(&bytes)?;
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| Error::Format(format!("N={n}, D={d} overflows")))?;
    if bytes.len() as u64 != expected {
        return Err(Error::Format(format!(
            "file holds {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let (n, d) = (n as usize, d as usize);
    let features: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let meta = read_meta(&sidecar_path(path))?;
    if meta.len() != n {
        return Err(Error::Consistency(format!(
            "matrix has {n} rows but metadata has {}",
            meta.len()
        )));
    }

    let cb_path = codebook_path(path);
    let (model_tag, codebook) = if cb_path.exists() {
        let text = std::fs::read_to_string(&cb_path).map_err(|e| Error::io(&cb_path, e))?;
        let file: CodebookFile = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", cb_path.display())))?;
        (file.model_tag, file.codebook)
    } else {
        (String::new(), LabelCodebook::default())
    };
    EmbeddingTable::with_codebook(features, d, meta, model_tag, codebook)
}

fn read_meta(path: &Path) -> Result<Vec<PatchMeta>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    let expected = ["patch_id", "slide_id", "patient_id", "site", "class", "norm_variant"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Format(format!(
            "{}: header must be {}",
            path.display(),
            expected.join(",")
        )));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.deserialize::<MetaRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{} row {row}: {e}", path.display())))?;
        let site_label = rec.site.ok_or_else(|| {
            Error::MissingLabel(format!(
                "site label is required for every patch; row {row} (patch {}) has none",
                rec.patch_id
            ))
        })?;
        out.push(PatchMeta {
            patch_id: rec.patch_id,
            slide_id: rec.slide_id,
            patient_id: rec.patient_id,
            site_label,
            class_label: rec.class,
            norm_variant: rec.norm_variant,
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct MetaRecord {
    patch_id: String,
    slide_id: String,
    patient_id: String,
    site: Option<u32>,
    class: Option<u32>,
    norm_variant: NormVariant,
}

/// Writes the EMB1 matrix, the metadata sidecar and the codebook.
pub fn save_table(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = encode_header(table.len() as u64, table.dim() as u64);
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    for v in &table.features {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let meta_path = sidecar_path(path);
    let file = File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut cw = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", meta_path.display()));
    cw.write_record(["patch_id", "slide_id", "patient_id", "site", "class", "norm_variant"])
        .map_err(csv_err)?;
    for m in &table.meta {
        cw.serialize(m).map_err(csv_err)?;
    }
    cw.flush().map_err(|e| Error::io(&meta_path, e))?;

    let cb_path = codebook_path(path);
    let file = CodebookFile {
        model_tag: table.model_tag.clone(),
        codebook: table.codebook.clone(),
    };
    let text = serde_json::to_string_pretty(&file).expect("codebook serializes");
    std::fs::write(&cb_path, text).map_err(|e| Error::io(&cb_path, e))?;
    Ok(())
}

/// Concatenates tables row-wise in argument order.
pub fn concat_tables(tables: &[EmbeddingTable]) -> Result<EmbeddingTable> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Incompatible("no tables to concatenate".into()))?;
    for (i, t) in tables.iter().enumerate().skip(1) {
        if t.dim != first.dim {
            return Err(Error::Incompatible(format!(
                "table {i} has dimension {}, expected {}",
                t.dim, first.dim
            )));
        }
        if t.model_tag != first.model_tag {
            return Err(Error::Incompatible(format!(
                "table {i} has model tag {:?}, expected {:?}",
                t.model_tag, first.model_tag
            )));
        }
    }
    let total: usize = tables.iter().map(EmbeddingTable::len).sum();
    let mut features = Vec::with_capacity(total * first.dim);
    let mut meta = Vec::with_capacity(total);
    for t in tables {
        features.extend_from_slice(&t.features);
        meta.extend(t.meta.iter().cloned());
    }
    let codebook = tables
        .iter()
        .map(|t| &t.codebook)
        .find(|c| **c != LabelCodebook::default())
        .cloned()
        .unwrap_or_default();
    EmbeddingTable::with_codebook(features, first.dim, meta, first.model_tag.clone(), codebook)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str, slide: &str, patient: &str, site: u32) -> PatchMeta {
        PatchMeta {
            patch_id: id.into(),
            slide_id: slide.into(),
            patient_id: patient.into(),
            site_label: site,
            class_label: None,
            norm_variant: NormVariant::Raw,
        }
    }

    fn small(prefix: &str, n: usize, d: usize) -> EmbeddingTable {
        let features = (0..n * d).map(|v| v as f32 * 0.5).collect();
        let meta = (0..n)
            .map(|i| meta(&format!("{prefix}{i}"), &format!("sl{i}"), &format!("pt{i}"), 0))
            .collect();
        EmbeddingTable::new(features, d, meta, "m").unwrap()
    }

    #[test]
    fn round_trip_small() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.emb");
        let t = small("p", 3, 4);
        save_table(&t, &path).unwrap();
        let back = load_table(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.dim(), 4);
        assert_eq!(back, t);
    }

    #[test]
    fn empty_table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.emb");
        let t = EmbeddingTable::new(Vec::new(), 8, Vec::new(), "m").unwrap();
        save_table(&t, &path).unwrap();
        let back = load_table(&path).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.dim(), 8);
    }

    #[test]
    fn header_layout() {
        let h = encode_header(3, 1536);
        assert_eq!(&h[0..4], b"EMB1");
        assert_eq!(h[4..8], [1, 0, 0, 0]);
        assert_eq!(h[8], 3);
        assert_eq!(u64::from_le_bytes(h[16..24].try_into().unwrap()), 1536);
        assert_eq!(h[24], 0x01);
        assert!(h[25..].iter().all(|&b| b == 0));
        assert_eq!(decode_header(&h).unwrap(), (3, 1536));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut h = encode_header(1, 1);
        h[0] = b'X';
        assert!(matches!(decode_header(&h), Err(Error::Format(_))));
    }

    #[test]
    fn metadata_row_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.emb");
        save_table(&small("p", 3, 4), &path).unwrap();
        // Rewrite the sidecar with two rows only.
        save_table(&small("p", 2, 4), dir.path().join("two.emb")).unwrap();
        std::fs::copy(
            sidecar_path(&dir.path().join("two.emb")),
            sidecar_path(&path),
        )
        .unwrap();
        assert!(matches!(load_table(&path), Err(Error::Consistency(_))));
    }

    #[test]
    fn nan_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.emb");
        save_table(&small("p", 10, 4), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let off = HEADER_LEN + (7 * 4 + 2) * 4;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        match load_table(&path) {
            Err(Error::Data { row, .. }) => assert_eq!(row, 7),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn slide_must_map_to_one_patient_and_site() {
        let m = vec![meta("a", "s", "p1", 0), meta("b", "s", "p2", 0)];
        assert!(matches!(
            EmbeddingTable::new(vec![0.0; 2], 1, m, ""),
            Err(Error::Consistency(_))
        ));
        let m = vec![meta("a", "s", "p1", 0), meta("b", "s", "p1", 1)];
        assert!(matches!(
            EmbeddingTable::new(vec![0.0; 2], 1, m, ""),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn concat_in_order() {
        let a = small("a", 2, 8);
        let b = small("b", 3, 8);
        let c = concat_tables(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c.row(0), a.row(0));
        assert_eq!(c.row(2), b.row(0));
    }

    #[test]
    fn concat_rejects_dim_mismatch() {
        let r = concat_tables(&[small("a", 2, 8), small("b", 2, 16)]);
        assert!(matches!(r, Err(Error::Incompatible(_))));
    }

    #[test]
    fn concat_rejects_duplicate_ids() {
        let r = concat_tables(&[small("p", 2, 8), small("p", 2, 8)]);
        assert!(matches!(r, Err(Error::Consistency(_))));
    }

    #[test]
    fn missing_class_label_fails_fast() {
        let t = small("p", 2, 2);
        assert!(matches!(t.class_labels(), Err(Error::MissingLabel(_))));
    }
}
