//! Multi-view clustering over precomputed feature views.
//!
//! An image collection passed through several feature extractors yields one
//! feature matrix per extractor. Each matrix is a *view* of the same samples,
//! and clustering the images becomes a multi-view clustering problem. This
//! crate provides:
//!
//! * [`dataio`]: the view file format, dataset manifests and validation,
//! * [`metrics`]: contingency tables, NMI and inertia,
//! * [`flatclust`]: k-means (k-means++ seeding, Lloyd refinement) and
//!   agglomerative clustering (Ward on features, average linkage on distances),
//! * [`ensemble`]: the concatenate-and-cluster (CC) and multi-view ensemble
//!   clustering (MVEC) baselines,
//! * [`nnet`]: a small dense network substrate with analytic gradients and Adam,
//! * [`deepclust`]: DEC/IDEC style clustering with Student-t soft assignments,
//! * [`mvnet`]: the multi-branch MVnet and the staged DMVC-fix / DMVC procedures,
//! * [`synthgen`]: synthetic multi-view datasets with controllable complementarity,
//! * [`pipeline`]: method dispatch and run reports shared by the CLI and benches.

pub mod dataio;
pub mod deepclust;
pub mod ensemble;
mod error;
pub mod flatclust;
pub mod metrics;
pub mod mvnet;
pub mod nnet;
pub mod pipeline;
pub mod seed;
pub mod synthgen;

pub use dataio::{FeatureView, Manifest, MultiViewDataset, Partition};
pub use error::{Error, Result};
pub use metrics::nmi;
