//! Synthetic multi-view datasets with controllable complementarity.
//!
//! Each view resolves a subset of the classes: resolved class `c` at
//! position `r` of the view's resolved set is centered at
//! `separation * e_r`, every other class sits at the origin and is
//! indistinguishable in that view. Samples add isotropic Gaussian noise.
//! Sample `i` has class `i mod n_classes`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{save_labels, save_view, ViewEntry};
use crate::{seed, Error, FeatureView, Manifest, MultiViewDataset, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthView {
    pub name: String,
    /// Classes this view separates. Empty makes a pure-noise view.
    pub resolved: Vec<usize>,
    pub dim: usize,
    pub separation: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub views: Vec<SynthView>,
    #[serde(default)]
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.samples_per_class == 0 || self.views.is_empty() {
            return Err(Error::Config(
                "need at least one class, one sample per class and one view".into(),
            ));
        }
        let mut covered = BTreeSet::new();
        let mut names = BTreeSet::new();
        for v in &self.views {
            if !names.insert(v.name.as_str()) {
                return Err(Error::Config(format!("duplicate view name {:?}", v.name)));
            }
            let set: BTreeSet<usize> = v.resolved.iter().copied().collect();
            if set.len() != v.resolved.len() {
                return Err(Error::Config(format!("view {:?} repeats a class", v.name)));
            }
            if let Some(c) = set.iter().find(|&&c| c >= self.n_classes) {
                return Err(Error::Config(format!(
                    "view {:?} resolves class {c} but there are only {} classes",
                    v.name, self.n_classes
                )));
            }
            let needed = if set.is_empty() { 1 } else { set.len() + 1 };
            if v.dim < needed {
                return Err(Error::Config(format!(
                    "view {:?} needs dim >= {needed} to place {} class means, got {}",
                    v.name,
                    set.len(),
                    v.dim
                )));
            }
            if !(v.separation > 0.0 && v.separation.is_finite()) || !(v.noise_std >= 0.0 && v.noise_std.is_finite()) {
                return Err(Error::Config(format!(
                    "view {:?} needs separation > 0 and noise_std >= 0",
                    v.name
                )));
            }
            covered.extend(set);
        }
        let missing: Vec<usize> = (0..self.n_classes).filter(|c| !covered.contains(c)).collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "resolved sets do not cover classes {missing:?}; no view can tell them apart"
            )));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.n_classes * self.samples_per_class
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// A named benchmark configuration: `easy`, `complementary` or `hard`.
    pub fn preset(name: &str) -> Result<Self> {
        let view = |name: &str, resolved: &[usize], dim, separation, noise_std| SynthView {
            name: name.into(),
            resolved: resolved.to_vec(),
            dim,
            separation,
            noise_std,
        };
        let views = match name {
            // every view resolves every class
            "easy" => vec![
                view("a", &[0, 1, 2, 3], 5, 10.0, 1.0),
                view("b", &[0, 1, 2, 3], 5, 10.0, 1.0),
            ],
            // disjoint halves of the classes
            "complementary" => vec![
                view("a", &[0, 1], 4, 10.0, 1.0),
                view("b", &[2, 3], 4, 10.0, 1.0),
            ],
            // overlapping halves, lower separation, plus a pure-noise view
            "hard" => vec![
                view("a", &[0, 1, 2], 4, 6.0, 1.5),
                view("b", &[1, 2, 3], 4, 6.0, 1.5),
                view("noise", &[], 4, 1.0, 1.5),
            ],
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; expected easy, complementary or hard"
                )))
            }
        };
        Ok(SynthConfig {
            name: name.into(),
            n_classes: 4,
            samples_per_class: 50,
            views,
            seed: 0,
        })
    }
}

pub const PRESETS: [&str; 3] = ["easy", "complementary", "hard"];

/// Class mean of `class` in `view`.
pub fn class_mean(view: &SynthView, class: usize) -> Vec<f64> {
    let mut mean = vec![0.0; view.dim];
    if let Some(r) = view.resolved.iter().position(|&c| c == class) {
        mean[r] = view.separation;
    }
    mean
}

/// Generates the dataset with labels attached. Deterministic in `config`.
pub fn generate(config: &SynthConfig) -> Result<MultiViewDataset> {
    config.validate()?;
    let n = config.n_samples();
    let labels: Vec<usize> = (0..n).map(|i| i % config.n_classes).collect();
    let mut views = Vec::with_capacity(config.views.len());
    for (v, spec) in config.views.iter().enumerate() {
        let mut rng = seed::rng(seed::derive(config.seed, &format!("view:{v}:{}", spec.name)));
        let means: Vec<Vec<f64>> = (0..config.n_classes).map(|c| class_mean(spec, c)).collect();
        let mut data = Array2::zeros((n, spec.dim));
        for (i, mut row) in data.rows_mut().into_iter().enumerate() {
            for (x, m) in row.iter_mut().zip(&means[labels[i]]) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = m + spec.noise_std * z;
            }
        }
        views.push(FeatureView::new(&spec.name, data)?);
    }
    let ids = (0..n).map(|i| format!("s{i:05}")).collect();
    MultiViewDataset::new(&config.name, views)?
        .with_labels(labels)?
        .with_sample_ids(ids)
}

/// Writes one MVCV file per view, `labels.txt` and `manifest.json` into
/// `dir`, returning the manifest path.
pub fn write_dataset(
    dataset: &MultiViewDataset,
    dir: impl AsRef<Path>,
    seed: u64,
    methods: std::collections::BTreeMap<String, serde_json::Value>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for view in dataset.views() {
        let file = format!("{}.mvcv", view.name());
        save_view(view, dir.join(&file))?;
        entries.push(ViewEntry {
            name: view.name().to_string(),
            path: PathBuf::from(file),
            n: Some(view.n_samples() as u64),
            d: Some(view.dim() as u64),
        });
    }
    let mut manifest = Manifest::new(dataset.name(), entries);
    if let Some(labels) = dataset.labels() {
        save_labels(labels, dataset.label_names(), dir.join("labels.txt"))?;
        manifest.labels_path = Some(PathBuf::from("labels.txt"));
    }
    manifest.seed = seed;
    manifest.methods = methods;
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
