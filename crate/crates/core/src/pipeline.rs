//! Method dispatch and run reports.
//!
//! Method tokens: `km`, `ac`, `idec` (per view), `cc[:clusterer]`,
//! `mvec[:clusterer]` (clusterer `km` by default), `dmvc-fix` and `dmvc`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::deepclust::{idec_train, LogRow};
use crate::ensemble::{self, CamDistance, ClustererSpec};
use crate::flatclust::KMeansConfig;
use crate::mvnet::{self, DmvcConfig};
use crate::nnet::MlpSpec;
use crate::{metrics, seed, Error, FeatureView, MultiViewDataset, Partition, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Single {
    Km,
    Ac,
    Idec,
}

impl Single {
    fn token(self) -> &'static str {
        match self {
            Single::Km => "km",
            Single::Ac => "ac",
            Single::Idec => "idec",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "km" => Some(Single::Km),
            "ac" => Some(Single::Ac),
            "idec" => Some(Single::Idec),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// A single-view algorithm run on each view separately.
    PerView(Single),
    Cc(Single),
    Mvec(Single),
    DmvcFix,
    Dmvc,
}

impl Method {
    pub fn is_deep(self) -> bool {
        matches!(
            self,
            Method::PerView(Single::Idec) | Method::DmvcFix | Method::Dmvc
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::PerView(s) => f.write_str(s.token()),
            Method::Cc(Single::Km) => f.write_str("cc"),
            Method::Cc(s) => write!(f, "cc:{}", s.token()),
            Method::Mvec(Single::Km) => f.write_str("mvec"),
            Method::Mvec(s) => write!(f, "mvec:{}", s.token()),
            Method::DmvcFix => f.write_str("dmvc-fix"),
            Method::Dmvc => f.write_str("dmvc"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, clusterer) = match s.split_once(':') {
            Some((h, c)) => (h, Some(c)),
            None => (s, None),
        };
        let inner = |c: Option<&str>| match c {
            None => Ok(Single::Km),
            Some(tok) => Single::parse(tok).ok_or_else(|| {
                Error::Config(format!("unknown clusterer {tok:?}; expected km, ac or idec"))
            }),
        };
        let method = match head {
            "km" | "km-best-view" => Method::PerView(Single::Km),
            "ac" | "ac-best-view" => Method::PerView(Single::Ac),
            "idec" | "idec-best-view" => Method::PerView(Single::Idec),
            "cc" => Method::Cc(inner(clusterer)?),
            "mvec" => Method::Mvec(inner(clusterer)?),
            "dmvc-fix" => Method::DmvcFix,
            "dmvc" => Method::Dmvc,
            _ => {
                return Err(Error::Config(format!(
                    "unknown method {s:?}; expected km, ac, idec, cc, mvec, dmvc-fix or dmvc"
                )))
            }
        };
        if clusterer.is_some() && !matches!(method, Method::Cc(_) | Method::Mvec(_)) {
            return Err(Error::Config(format!("method {head:?} takes no clusterer")));
        }
        Ok(method)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// `d-500-500-2000-N` networks.
    #[default]
    Paper,
    /// Narrow networks for small synthetic datasets.
    Small,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansSettings {
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansSettings {
    fn default() -> Self {
        let d = KMeansConfig::new(1);
        KMeansSettings {
            n_init: d.n_init,
            max_iter: d.max_iter,
            tol: d.tol,
        }
    }
}

/// Method settings, read from the manifest's `methods` object.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodSettings {
    pub profile: Profile,
    pub kmeans: KMeansSettings,
    /// Replaces the profile's network and training settings entirely.
    pub dmvc: Option<DmvcConfig>,
    pub cam_distance: CamDistance,
}

impl MethodSettings {
    pub fn from_manifest_methods(methods: &BTreeMap<String, serde_json::Value>) -> Result<Self> {
        let value = serde_json::to_value(methods).map_err(|e| Error::Manifest(e.to_string()))?;
        serde_json::from_value(value).map_err(|e| Error::Manifest(format!("methods: {e}")))
    }

    pub fn small() -> Self {
        MethodSettings {
            profile: Profile::Small,
            ..MethodSettings::default()
        }
    }

    pub fn deep(&self) -> DmvcConfig {
        match (&self.dmvc, self.profile) {
            (Some(cfg), _) => cfg.clone(),
            (None, Profile::Paper) => DmvcConfig::paper(),
            (None, Profile::Small) => DmvcConfig::small(),
        }
    }

    pub fn clusterer(&self, single: Single) -> ClustererSpec {
        match single {
            Single::Km => ClustererSpec::KMeans {
                n_init: self.kmeans.n_init,
                max_iter: self.kmeans.max_iter,
                tol: self.kmeans.tol,
            },
            Single::Ac => ClustererSpec::AgglomerativeWard,
            Single::Idec => {
                let deep = self.deep();
                ClustererSpec::idec(deep.hidden, deep.idec)
            }
        }
    }
}

/// One evaluated partition within a run: a view, a stage, or the final result.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scope: String,
    pub nmi: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub dataset: String,
    pub method: String,
    pub k: usize,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub final_nmi: Option<f64>,
    pub wall_seconds: f64,
}

pub const REPORT_HEADER: &str = "dataset\tmethod\tscope\tk\tseed\tnmi\tseconds";

fn fmt_nmi(nmi: Option<f64>) -> String {
    nmi.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

impl RunReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        let mut line = |scope: &str, nmi: Option<f64>, secs: f64| {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.3}",
                self.dataset,
                self.method,
                scope,
                self.k,
                self.seed,
                fmt_nmi(nmi),
                secs
            );
        };
        for r in &self.rows {
            line(&r.scope, r.nmi, r.seconds);
        }
        line("final", self.final_nmi, self.wall_seconds);
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    /// The final partition.
    pub partition: Partition,
    /// Per-view partitions for per-view methods, keyed by view name.
    pub per_view: Vec<(String, Partition)>,
    /// Final embeddings of deep methods, one per view for per-view IDEC.
    pub embeddings: Vec<FeatureView>,
    pub log: Vec<LogRow>,
}

fn nmi_vs(truth: Option<&Partition>, p: &Partition) -> Result<Option<f64>> {
    truth.map(|t| metrics::nmi(p, t)).transpose()
}

/// Runs `method` on `dataset` with `k` clusters.
///
/// Per-view methods run on every view, or only on `view` when given; the
/// final partition is then the view with the best NMI (the first view when
/// no labels are attached).
pub fn run(
    dataset: &MultiViewDataset,
    method: Method,
    k: usize,
    seed: u64,
    view: Option<&str>,
    settings: &MethodSettings,
) -> Result<RunOutcome> {
    if k == 0 || k > dataset.n_samples() {
        return Err(Error::InvalidInput(format!(
            "cannot form k={k} clusters from {} samples",
            dataset.n_samples()
        )));
    }
    let started = Instant::now();
    let truth = dataset.ground_truth();
    let truth = truth.as_ref();
    let restrict = |ds: &MultiViewDataset| -> Result<MultiViewDataset> {
        match view {
            None => Ok(ds.clone()),
            Some(name) => {
                let v = ds.view(name).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "no view named {name:?}; available: {}",
                        ds.views().iter().map(|v| v.name()).collect::<Vec<_>>().join(", ")
                    ))
                })?;
                let mut out = MultiViewDataset::new(ds.name(), vec![v.clone()])?;
                if let Some(l) = ds.labels() {
                    out = out.with_labels(l.to_vec())?;
                }
                Ok(out)
            }
        }
    };
    let data = restrict(dataset)?;
    let mut rows = Vec::new();
    let mut per_view = Vec::new();
    let mut embeddings = Vec::new();
    let mut log = Vec::new();
    let partition = match method {
        Method::PerView(single) => {
            let mut best: Option<(Option<f64>, Partition)> = None;
            for v in data.views() {
                let t = Instant::now();
                let s = seed::derive(seed, &format!("{single:?}:{}", v.name()));
                let p = match single {
                    Single::Idec => {
                        let deep = settings.deep();
                        let spec = MlpSpec::with_hidden(v.dim(), &deep.hidden, deep.embed_dim.unwrap_or(k))?;
                        let out = idec_train(v.data(), k, &spec, &deep.idec, s)?;
                        embeddings.push(FeatureView::new(v.name(), out.encoder.forward(v.data())?)?);
                        log.extend(out.log.into_iter().map(|r| LogRow {
                            stage: format!("idec:{}", v.name()),
                            ..r
                        }));
                        out.partition
                    }
                    other => settings.clusterer(other).cluster(v.data(), k, s)?,
                };
                let nmi = nmi_vs(truth, &p)?;
                rows.push(ReportRow {
                    scope: v.name().to_string(),
                    nmi,
                    seconds: t.elapsed().as_secs_f64(),
                });
                if best.as_ref().is_none_or(|(b, _)| nmi > *b) {
                    best = Some((nmi, p.clone()));
                }
                per_view.push((v.name().to_string(), p));
            }
            best.unwrap().1
        }
        Method::Cc(single) => ensemble::cc(&data, &settings.clusterer(single), k, seed)?,
        Method::Mvec(single) => {
            let out = ensemble::mvec_detailed(&data, &settings.clusterer(single), k, seed, settings.cam_distance)?;
            for (name, p) in &out.per_view {
                rows.push(ReportRow {
                    scope: format!("view:{name}"),
                    nmi: nmi_vs(truth, p)?,
                    seconds: 0.0,
                });
            }
            out.partition
        }
        Method::DmvcFix | Method::Dmvc => {
            let cfg = settings.deep();
            let out = if method == Method::Dmvc {
                mvnet::dmvc(&data, k, &cfg, seed)?
            } else {
                mvnet::dmvc_fix(&data, k, &cfg, seed)?
            };
            rows.extend(out.report.stages.iter().map(|s| ReportRow {
                scope: s.stage.clone(),
                nmi: s.nmi,
                seconds: s.seconds,
            }));
            log = out.report.log.clone();
            embeddings.push(mvnet::embed(&out.model, &data)?);
            out.partition
        }
    };
    let report = RunReport {
        dataset: dataset.name().to_string(),
        method: method.to_string(),
        k,
        seed,
        final_nmi: nmi_vs(truth, &partition)?,
        rows,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome {
        report,
        partition,
        per_view,
        embeddings,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_tokens_round_trip() {
        for tok in ["km", "ac", "idec", "cc", "cc:ac", "mvec", "mvec:idec", "dmvc-fix", "dmvc"] {
            let m: Method = tok.parse().unwrap();
            assert_eq!(m.to_string(), tok);
        }
        assert_eq!("km-best-view".parse::<Method>().unwrap(), Method::PerView(Single::Km));
        assert!("mvec:spectral".parse::<Method>().is_err());
        assert!("dmvc:km".parse::<Method>().is_err());
        assert!("jule".parse::<Method>().is_err());
    }

    #[test]
    fn settings_from_manifest_block() {
        let mut methods = BTreeMap::new();
        methods.insert("profile".to_string(), serde_json::json!("small"));
        let s = MethodSettings::from_manifest_methods(&methods).unwrap();
        assert_eq!(s.profile, Profile::Small);
        assert_eq!(s.deep(), DmvcConfig::small());
        methods.insert("profile".to_string(), serde_json::json!("huge"));
        assert!(MethodSettings::from_manifest_methods(&methods).is_err());
    }
}
