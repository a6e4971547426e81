//! Dataset model, the MVCV view file format and JSON manifests.
//!
//! A view file is a fixed 24-byte header followed by the row-major payload:
//!
//! | bytes  | content                         |
//! |--------|---------------------------------|
//! | 0..4   | magic `MVCV`                    |
//! | 4..6   | version, `u16` LE, always 1     |
//! | 6..8   | reserved, zero                  |
//! | 8..16  | row count `n`, `u64` LE         |
//! | 16..24 | column count `d`, `u64` LE      |
//! | 24..   | `n * d` `f32` LE values         |
//!
//! Values are held as `f64` in memory; saving narrows them to `f32`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MVCV";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;

/// One feature representation of every sample: an `n x d` matrix whose row
/// `k` describes sample `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureView {
    name: String,
    data: Array2<f64>,
}

impl FeatureView {
    pub fn new(name: impl Into<String>, data: Array2<f64>) -> Result<Self> {
        let name = name.into();
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Shape(format!(
                "view {name:?} must have at least one row and one column, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        check_finite(data.view())?;
        Ok(FeatureView { name, data })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

pub(crate) fn check_finite(data: ArrayView2<'_, f64>) -> Result<()> {
    for ((row, col), v) in data.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}

/// A cluster assignment for every sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    assignments: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn new(assignments: Vec<usize>, k: usize) -> Result<Self> {
        let n = assignments.len();
        if k == 0 {
            return Err(Error::InvalidInput("partition needs k >= 1".into()));
        }
        if n == 0 {
            return Err(Error::InvalidInput("partition over zero samples".into()));
        }
        if k > n {
            return Err(Error::InvalidInput(format!(
                "partition has k={k} clusters for only n={n} samples"
            )));
        }
        if let Some((i, &a)) = assignments.iter().enumerate().find(|(_, &a)| a >= k) {
            return Err(Error::InvalidInput(format!(
                "assignment {a} of sample {i} is out of range for k={k}"
            )));
        }
        Ok(Partition { assignments, k })
    }

    /// Builds a partition with `k` set to one more than the largest label.
    pub fn from_assignments(assignments: Vec<usize>) -> Result<Self> {
        let k = assignments.iter().max().map_or(0, |m| m + 1);
        Partition::new(assignments, k)
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Relabels clusters densely in order of first appearance.
    pub fn canonical(&self) -> Partition {
        let mut map = HashMap::new();
        let assignments: Vec<usize> = self
            .assignments
            .iter()
            .map(|a| {
                let next = map.len();
                *map.entry(*a).or_insert(next)
            })
            .collect();
        Partition {
            k: map.len(),
            assignments,
        }
    }

    /// Writes one cluster id per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::with_capacity(self.assignments.len() * 3);
        for a in &self.assignments {
            out.push_str(&a.to_string());
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let assignments = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.trim().parse::<usize>().map_err(|_| {
                    Error::InvalidInput(format!("line {}: {l:?} is not a cluster id", i + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Partition::from_assignments(assignments)
    }
}

/// Aligned views over the same samples, with optional ground truth.
#[derive(Debug, Clone)]
pub struct MultiViewDataset {
    name: String,
    views: Vec<FeatureView>,
    labels: Option<Vec<usize>>,
    label_names: Vec<String>,
    sample_ids: Option<Vec<String>>,
}

impl MultiViewDataset {
    pub fn new(name: impl Into<String>, views: Vec<FeatureView>) -> Result<Self> {
        let first = views
            .first()
            .ok_or_else(|| Error::InvalidInput("a dataset needs at least one view".into()))?;
        let mut names = HashSet::new();
        for v in &views {
            if v.n_samples() != first.n_samples() {
                return Err(Error::SampleCountMismatch {
                    first: first.name().to_string(),
                    first_n: first.n_samples(),
                    second: v.name().to_string(),
                    second_n: v.n_samples(),
                });
            }
            if !names.insert(v.name()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate view name {:?}",
                    v.name()
                )));
            }
        }
        Ok(MultiViewDataset {
            name: name.into(),
            views,
            labels: None,
            label_names: Vec::new(),
            sample_ids: None,
        })
    }

    /// Attaches dense ground-truth labels. Label names default to the
    /// decimal class index.
    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let names = (0..n_classes).map(|c| c.to_string()).collect();
        self.set_labels(labels, names)?;
        Ok(self)
    }

    fn set_labels(&mut self, labels: Vec<usize>, names: Vec<String>) -> Result<()> {
        if labels.len() != self.n_samples() {
            return Err(Error::SampleCountMismatch {
                first: self.views[0].name().to_string(),
                first_n: self.n_samples(),
                second: "labels".into(),
                second_n: labels.len(),
            });
        }
        self.labels = Some(labels);
        self.label_names = names;
        Ok(())
    }

    pub fn with_sample_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_samples() {
            return Err(Error::InvalidInput(format!(
                "{} sample ids for {} samples",
                ids.len(),
                self.n_samples()
            )));
        }
        self.sample_ids = Some(ids);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn views(&self) -> &[FeatureView] {
        &self.views
    }

    pub fn view(&self, name: &str) -> Option<&FeatureView> {
        self.views.iter().find(|v| v.name() == name)
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_samples(&self) -> usize {
        self.views[0].n_samples()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn sample_ids(&self) -> Option<&[String]> {
        self.sample_ids.as_deref()
    }

    /// Ground truth as a partition, if labels are attached.
    pub fn ground_truth(&self) -> Option<Partition> {
        self.labels
            .as_ref()
            .and_then(|l| Partition::from_assignments(l.clone()).ok())
    }

    /// Same samples, views reordered by `order` (a permutation of view indices).
    pub fn reorder_views(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.views.len()];
        if order.len() != self.views.len() || order.iter().any(|&i| i >= seen.len()) {
            return Err(Error::InvalidInput("view order is not a permutation".into()));
        }
        for &i in order {
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidInput("view order is not a permutation".into()));
            }
        }
        let mut out = self.clone();
        out.views = order.iter().map(|&i| self.views[i].clone()).collect();
        Ok(out)
    }
}

/// Encodes a view into MVCV bytes.
pub fn encode_view(view: &FeatureView) -> Result<Vec<u8>> {
    let data = view.data();
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(data.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(data.ncols() as u64).to_le_bytes());
    for ((row, col), &v) in data.indexed_iter() {
        let narrow = v as f32;
        if !v.is_finite() || !narrow.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(out)
}

/// Decodes MVCV bytes; `name` becomes the view name.
pub fn decode_view(name: impl Into<String>, bytes: &[u8]) -> Result<FeatureView> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::UnrecognizedFormat("missing MVCV magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnrecognizedFormat(format!(
            "unsupported version {version}"
        )));
    }
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(Error::UnrecognizedFormat("reserved header bytes not zero".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if n == 0 || d == 0 {
        return Err(Error::Shape(format!("header declares empty shape {n}x{d}")));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::Shape(format!("header shape {n}x{d} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    let found = payload.len() as u64;
    if found < expected {
        return Err(Error::TruncatedPayload { expected, found });
    }
    if found > expected {
        return Err(Error::Shape(format!(
            "payload has {} trailing bytes beyond the declared {n}x{d}",
            found - expected
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let data = Array2::from_shape_vec((n as usize, d as usize), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    FeatureView::new(name, data)
}

pub fn save_view(view: &FeatureView, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_view(view)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a view file; the view is named after the file stem.
pub fn load_view(path: impl AsRef<Path>) -> Result<FeatureView> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "view".into());
    decode_view(name, &bytes)
}

/// Reads a label file: one token per line, mapped to dense integers in
/// order of first appearance. Returns the labels and the token for each id.
pub fn load_labels(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<String>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut names = Vec::new();
    let mut labels = Vec::new();
    for line in text.lines() {
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        let id = *ids.entry(token).or_insert_with(|| {
            names.push(token.to_string());
            names.len() - 1
        });
        labels.push(id);
    }
    Ok((labels, names))
}

pub fn save_labels(labels: &[usize], names: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for &l in labels {
        match names.get(l) {
            Some(name) => out.push_str(name),
            None => out.push_str(&l.to_string()),
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub name: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<u64>,
}

/// JSON dataset description. Relative paths resolve against the directory
/// holding the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub views: Vec<ViewEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_path: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub methods: BTreeMap<String, serde_json::Value>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(name: impl Into<String>, views: Vec<ViewEntry>) -> Self {
        Manifest {
            name: name.into(),
            views,
            labels_path: None,
            seed: 0,
            methods: BTreeMap::new(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Manifest(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Manifest("no views listed".into()));
        }
        let mut names = HashSet::new();
        for v in &self.views {
            if !names.insert(v.name.as_str()) {
                return Err(Error::Manifest(format!("duplicate view name {:?}", v.name)));
            }
        }
        Ok(())
    }
}

/// Loads every view named by the manifest, checks declared shapes and row
/// alignment, and attaches labels when a label file is declared.
pub fn load_dataset(manifest: &Manifest) -> Result<MultiViewDataset> {
    manifest.validate()?;
    let mut views = Vec::with_capacity(manifest.views.len());
    for entry in &manifest.views {
        let view = load_view(manifest.resolve(&entry.path))?.with_name(&entry.name);
        let (n, d) = (view.n_samples() as u64, view.dim() as u64);
        if entry.n.is_some_and(|want| want != n) || entry.d.is_some_and(|want| want != d) {
            return Err(Error::Shape(format!(
                "view {:?} is {n}x{d} but the manifest declares {}x{}",
                entry.name,
                entry.n.map_or("?".into(), |v| v.to_string()),
                entry.d.map_or("?".into(), |v| v.to_string()),
            )));
        }
        views.push(view);
    }
    let mut dataset = MultiViewDataset::new(&manifest.name, views)?;
    if let Some(labels_path) = &manifest.labels_path {
        let (labels, names) = load_labels(manifest.resolve(labels_path))?;
        dataset.set_labels(labels, names)?;
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_by_three_round_trip() {
        let view = FeatureView::new("v", array![[1., 2., 3.], [4., 5., 6.]]).unwrap();
        let bytes = encode_view(&view).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 24);
        assert_eq!(&bytes[..4], b"MVCV");
        assert_eq!(decode_view("v", &bytes).unwrap(), view);
    }

    #[test]
    fn minimal_view_round_trips() {
        let view = FeatureView::new("v", array![[0.0]]).unwrap();
        let back = decode_view("v", &encode_view(&view).unwrap()).unwrap();
        assert_eq!(back, view);
    }

    #[test]
    fn nan_is_rejected_with_position() {
        let err = FeatureView::new("v", array![[1., 2.], [3., f64::NAN]]).unwrap_err();
        assert_eq!(err.to_string(), "non-finite value at (1,1)");
    }

    #[test]
    fn values_overflowing_f32_are_rejected_on_save() {
        let view = FeatureView::new("v", array![[1e300]]).unwrap();
        assert!(matches!(
            encode_view(&view),
            Err(Error::NonFinite { row: 0, col: 0 })
        ));
    }

    #[test]
    fn altered_magic_is_unrecognized() {
        let view = FeatureView::new("v", array![[1.0]]).unwrap();
        let mut bytes = encode_view(&view).unwrap();
        bytes[0] = b'X';
        let err = decode_view("v", &bytes).unwrap_err();
        assert!(err.to_string().starts_with("unrecognized format"));
    }

    #[test]
    fn missing_row_is_truncated_payload() {
        let view = FeatureView::new("v", Array2::zeros((10, 3))).unwrap();
        let bytes = encode_view(&view).unwrap();
        let err = decode_view("v", &bytes[..bytes.len() - 12]).unwrap_err();
        assert!(err.to_string().starts_with("truncated payload"), "{err}");
    }

    #[test]
    fn bad_version_and_reserved_bytes() {
        let view = FeatureView::new("v", array![[1.0]]).unwrap();
        let mut bytes = encode_view(&view).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_view("v", &bytes),
            Err(Error::UnrecognizedFormat(_))
        ));
        let mut bytes = encode_view(&view).unwrap();
        bytes[7] = 1;
        assert!(matches!(
            decode_view("v", &bytes),
            Err(Error::UnrecognizedFormat(_))
        ));
    }

    #[test]
    fn nan_in_payload_rejected_on_load() {
        let view = FeatureView::new("v", array![[1.0, 2.0]]).unwrap();
        let mut bytes = encode_view(&view).unwrap();
        bytes[28..32].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_view("v", &bytes),
            Err(Error::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn partition_invariants() {
        assert!(Partition::new(vec![0, 1, 2], 2).is_err());
        assert!(Partition::new(vec![0, 0], 3).is_err());
        assert!(Partition::new(vec![0, 1], 0).is_err());
        let p = Partition::from_assignments(vec![2, 2, 0, 1]).unwrap();
        assert_eq!(p.k(), 3);
        assert_eq!(p.canonical().assignments(), &[0, 0, 1, 2]);
    }

    #[test]
    fn mismatched_views_name_both() {
        let a = FeatureView::new("viewA", Array2::zeros((100, 2))).unwrap();
        let b = FeatureView::new("viewB", Array2::zeros((99, 2))).unwrap();
        let err = MultiViewDataset::new("d", vec![a, b]).unwrap_err();
        assert_eq!(err.to_string(), "sample count mismatch: viewA=100 viewB=99");
    }

    #[test]
    fn duplicate_view_names_rejected() {
        let a = FeatureView::new("a", Array2::zeros((3, 2))).unwrap();
        assert!(MultiViewDataset::new("d", vec![a.clone(), a]).is_err());
    }
}
