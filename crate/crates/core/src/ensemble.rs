//! Multi-view baselines built from a single-view clusterer.
//!
//! * **CC** concatenates all views column-wise and clusters once.
//! * **MVEC** clusters every view separately, accumulates the partitions in
//!   a co-association matrix (the fraction of partitions placing each pair
//!   together), and extracts a consensus with average linkage on
//!   `1 - CAM`.

use std::str::FromStr;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::deepclust::{idec_train, IdecConfig};
use crate::flatclust::{agglomerative_distance, agglomerative_features, kmeans, KMeansConfig, LinkageConfig};
use crate::nnet::MlpSpec;
use crate::{seed, Error, FeatureView, MultiViewDataset, Partition, Result};

/// A single-view clustering algorithm plus its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "kebab-case")]
pub enum ClustererSpec {
    #[serde(rename = "kmeans")]
    KMeans {
        n_init: usize,
        max_iter: usize,
        tol: f64,
    },
    AgglomerativeWard,
    Idec {
        /// Hidden widths; the encoder is `d - hidden - k`.
        hidden: Vec<usize>,
        #[serde(default)]
        config: IdecConfig,
    },
}

impl ClustererSpec {
    pub fn kmeans() -> Self {
        let d = KMeansConfig::new(1);
        ClustererSpec::KMeans {
            n_init: d.n_init,
            max_iter: d.max_iter,
            tol: d.tol,
        }
    }

    pub fn idec(hidden: Vec<usize>, config: IdecConfig) -> Self {
        ClustererSpec::Idec { hidden, config }
    }

    pub fn token(&self) -> &'static str {
        match self {
            ClustererSpec::KMeans { .. } => "km",
            ClustererSpec::AgglomerativeWard => "ac",
            ClustererSpec::Idec { .. } => "idec",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        !matches!(self, ClustererSpec::AgglomerativeWard)
    }

    pub fn cluster(&self, data: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<Partition> {
        match self {
            ClustererSpec::KMeans { n_init, max_iter, tol } => {
                let cfg = KMeansConfig {
                    k,
                    n_init: *n_init,
                    max_iter: *max_iter,
                    tol: *tol,
                    seed,
                };
                Ok(kmeans(data, &cfg)?.partition)
            }
            ClustererSpec::AgglomerativeWard => agglomerative_features(data, &LinkageConfig::ward(k)),
            ClustererSpec::Idec { hidden, config } => {
                let spec = MlpSpec::with_hidden(data.ncols(), hidden, k)?;
                Ok(idec_train(data, k, &spec, config, seed)?.partition)
            }
        }
    }
}

/// Parses `km`, `ac` or `idec` (the latter with the default
/// `d-500-500-2000-k` encoder).
impl FromStr for ClustererSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "km" | "kmeans" => Ok(ClustererSpec::kmeans()),
            "ac" | "agglomerative" => Ok(ClustererSpec::AgglomerativeWard),
            "idec" => Ok(ClustererSpec::idec(vec![500, 500, 2000], IdecConfig::default())),
            other => Err(Error::Config(format!(
                "unknown clusterer {other:?}; expected one of km, ac, idec"
            ))),
        }
    }
}

/// All views side by side, column blocks in view order.
pub fn concat_views(dataset: &MultiViewDataset) -> Result<FeatureView> {
    let views: Vec<_> = dataset.views().iter().map(FeatureView::data).collect();
    let data = concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
    FeatureView::new("concat", data)
}

/// Concatenate-and-cluster.
pub fn cc(dataset: &MultiViewDataset, clusterer: &ClustererSpec, k: usize, seed: u64) -> Result<Partition> {
    let merged = concat_views(dataset)?;
    clusterer.cluster(merged.data(), k, seed::derive(seed, "cc"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoassociationMatrix {
    values: Array2<f64>,
    counts: Array2<u32>,
    m_partitions: usize,
}

impl CoassociationMatrix {
    /// `values[i][j]`: fraction of partitions that put `i` and `j` together.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Raw co-clustering counts, `values * m`.
    pub fn counts(&self) -> &Array2<u32> {
        &self.counts
    }

    pub fn m_partitions(&self) -> usize {
        self.m_partitions
    }

    pub fn to_distance(&self, transform: CamDistance) -> Array2<f64> {
        match transform {
            CamDistance::OneMinus => self.values.mapv(|v| 1.0 - v),
            CamDistance::SqrtOneMinus => self.values.mapv(|v| (1.0 - v).sqrt()),
        }
    }
}

/// How co-association frequencies become linkage distances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CamDistance {
    /// `1 - CAM`.
    #[default]
    OneMinus,
    /// `sqrt(1 - CAM)`.
    SqrtOneMinus,
}

pub fn coassociation(partitions: &[Partition]) -> Result<CoassociationMatrix> {
    let first = partitions
        .first()
        .ok_or_else(|| Error::InvalidInput("co-association of zero partitions".into()))?;
    let n = first.len();
    if let Some(p) = partitions.iter().find(|p| p.len() != n) {
        return Err(Error::InvalidInput(format!(
            "partitions cover different sample counts: {n} vs {}",
            p.len()
        )));
    }
    let mut counts = Array2::<u32>::zeros((n, n));
    for p in partitions {
        let labels = p.assignments();
        for i in 0..n {
            counts[[i, i]] += 1;
            for j in (i + 1)..n {
                if labels[i] == labels[j] {
                    counts[[i, j]] += 1;
                    counts[[j, i]] += 1;
                }
            }
        }
    }
    let m = partitions.len();
    let values = counts.mapv(|c| f64::from(c) / m as f64);
    Ok(CoassociationMatrix {
        values,
        counts,
        m_partitions: m,
    })
}

#[derive(Debug, Clone)]
pub struct MvecOutcome {
    pub partition: Partition,
    /// Per-view partitions, in view order, tagged with the view name.
    pub per_view: Vec<(String, Partition)>,
    pub cam: CoassociationMatrix,
}

/// Multi-view ensemble clustering with the default `1 - CAM` distance.
pub fn mvec(dataset: &MultiViewDataset, clusterer: &ClustererSpec, k: usize, seed: u64) -> Result<Partition> {
    Ok(mvec_detailed(dataset, clusterer, k, seed, CamDistance::OneMinus)?.partition)
}

/// MVEC returning the intermediate partitions and CAM. Each view's seed is
/// derived from its name, so the result does not depend on view order.
pub fn mvec_detailed(
    dataset: &MultiViewDataset,
    clusterer: &ClustererSpec,
    k: usize,
    seed: u64,
    transform: CamDistance,
) -> Result<MvecOutcome> {
    let per_view = dataset
        .views()
        .iter()
        .map(|v| {
            let s = seed::derive(seed, &format!("mvec:{}", v.name()));
            clusterer
                .cluster(v.data(), k, s)
                .map(|p| (v.name().to_string(), p))
        })
        .collect::<Result<Vec<_>>>()?;
    let partitions: Vec<Partition> = per_view.iter().map(|(_, p)| p.clone()).collect();
    let cam = coassociation(&partitions)?;
    let dist = cam.to_distance(transform);
    let partition = agglomerative_distance(dist.view(), &LinkageConfig::average(k))?;
    Ok(MvecOutcome {
        partition,
        per_view,
        cam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn p(v: &[usize]) -> Partition {
        Partition::from_assignments(v.to_vec()).unwrap()
    }

    fn dataset(views: Vec<(&str, Array2<f64>)>) -> MultiViewDataset {
        MultiViewDataset::new(
            "t",
            views
                .into_iter()
                .map(|(n, d)| FeatureView::new(n, d).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn concat_preserves_block_order() {
        let a = Array2::from_shape_fn((4, 2), |(i, j)| (i * 10 + j) as f64);
        let b = Array2::from_shape_fn((4, 3), |(i, j)| (100 + i * 10 + j) as f64);
        let ds = dataset(vec![("a", a.clone()), ("b", b.clone())]);
        let c = concat_views(&ds).unwrap();
        assert_eq!(c.data().dim(), (4, 5));
        assert_eq!(c.data().slice(ndarray::s![.., ..2]), a);
        assert_eq!(c.data().slice(ndarray::s![.., 2..]), b);
        let single = dataset(vec![("a", a.clone())]);
        assert_eq!(concat_views(&single).unwrap().data(), a);
        let three = dataset(vec![
            ("x", array![[1.0], [2.0]]),
            ("y", array![[3.0], [4.0]]),
            ("z", array![[5.0], [6.0]]),
        ]);
        assert_eq!(
            concat_views(&three).unwrap().into_data(),
            array![[1.0, 3.0, 5.0], [2.0, 4.0, 6.0]]
        );
    }

    #[test]
    fn cam_examples() {
        let cam = coassociation(&[p(&[0, 0, 1])]).unwrap();
        assert_eq!(cam.values(), &array![[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let cam = coassociation(&[p(&[0, 0, 1]), p(&[0, 1, 1])]).unwrap();
        assert_eq!(cam.values()[[0, 1]], 0.5);
        assert_eq!(cam.values()[[1, 2]], 0.5);
        assert_eq!(cam.values()[[0, 2]], 0.0);
        let one = coassociation(&[p(&[0, 1, 0, 2])]).unwrap();
        let many = coassociation(&vec![p(&[0, 1, 0, 2]); 4]).unwrap();
        assert_eq!(one.values(), many.values());
    }

    #[test]
    fn cam_errors() {
        assert!(coassociation(&[]).is_err());
        assert!(coassociation(&[p(&[0, 1]), p(&[0, 1, 1])]).is_err());
    }

    #[test]
    fn clusterer_tokens() {
        assert_eq!("km".parse::<ClustererSpec>().unwrap().token(), "km");
        assert_eq!("ac".parse::<ClustererSpec>().unwrap().token(), "ac");
        assert_eq!("idec".parse::<ClustererSpec>().unwrap().token(), "idec");
        assert!("spectral".parse::<ClustererSpec>().is_err());
    }

    #[test]
    fn mvec_on_identical_separable_views() {
        let blobs = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [9.0, 9.0], [9.1, 9.0], [9.0, 9.1]];
        let ds = dataset(vec![("a", blobs.clone()), ("b", blobs.clone()), ("c", blobs)]);
        let out = mvec_detailed(&ds, &ClustererSpec::kmeans(), 2, 1, CamDistance::OneMinus).unwrap();
        assert_eq!(out.partition.assignments(), &[0, 0, 0, 1, 1, 1]);
        assert_eq!(out.per_view.len(), 3);
        assert_eq!(out.cam.m_partitions(), 3);
    }

    #[test]
    fn clusterer_spec_serde() {
        let spec: ClustererSpec = serde_json::from_str(r#"{"algorithm":"kmeans","n_init":3,"max_iter":50,"tol":0.0}"#).unwrap();
        assert_eq!(
            spec,
            ClustererSpec::KMeans {
                n_init: 3,
                max_iter: 50,
                tol: 0.0
            }
        );
        let spec: ClustererSpec = serde_json::from_str(r#"{"algorithm":"agglomerative-ward"}"#).unwrap();
        assert_eq!(spec, ClustererSpec::AgglomerativeWard);
    }
}
