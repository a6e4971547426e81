//! MVnet: one independent MLP branch per view, a concatenation layer, and
//! an output MLP head. Trained in stages:
//!
//! 1. each branch is trained with IDEC on its own view,
//! 2. the head is trained with IDEC on the concatenated branch embeddings,
//! 3. (DMVC only) the assembled network and its centroids are fine-tuned
//!    end-to-end under the clustering loss.
//!
//! Stopping after stage 2 gives DMVC-fix.

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::deepclust::{self, ClusterNet, DecConfig, IdecConfig, LogRow};
use crate::nnet::{MlpModel, MlpSpec, Parameters, TrainConfig};
use crate::{metrics, seed, Error, FeatureView, MultiViewDataset, Partition, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MvNetSpec {
    branches: Vec<MlpSpec>,
    head: MlpSpec,
}

impl MvNetSpec {
    pub fn new(branches: Vec<MlpSpec>, head: MlpSpec) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::Config("MVnet needs at least one branch".into()));
        }
        let concat: usize = branches.iter().map(MlpSpec::output_dim).sum();
        if head.input_dim() != concat {
            return Err(Error::Config(format!(
                "head takes {} inputs but the branches emit {concat}",
                head.input_dim()
            )));
        }
        Ok(MvNetSpec { branches, head })
    }

    /// Branches `d_i - hidden - embed_dim`, head `(m * embed_dim) - head_hidden - embed_dim`.
    pub fn from_profile(view_dims: &[usize], hidden: &[usize], head_hidden: &[usize], embed_dim: usize) -> Result<Self> {
        let branches = view_dims
            .iter()
            .map(|&d| MlpSpec::with_hidden(d, hidden, embed_dim))
            .collect::<Result<Vec<_>>>()?;
        let head = MlpSpec::with_hidden(view_dims.len() * embed_dim, head_hidden, embed_dim)?;
        MvNetSpec::new(branches, head)
    }

    pub fn branches(&self) -> &[MlpSpec] {
        &self.branches
    }

    pub fn head(&self) -> &MlpSpec {
        &self.head
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvNetModel {
    branches: Vec<MlpModel>,
    head: MlpModel,
}

impl MvNetModel {
    pub fn new(branches: Vec<MlpModel>, head: MlpModel) -> Result<Self> {
        MvNetSpec::new(
            branches.iter().map(|b| b.spec().clone()).collect(),
            head.spec().clone(),
        )?;
        Ok(MvNetModel { branches, head })
    }

    /// Fresh Glorot-initialized network; every branch and the head get
    /// their own derived seed.
    pub fn init(spec: &MvNetSpec, seed: u64) -> Self {
        MvNetModel {
            branches: spec
                .branches
                .iter()
                .enumerate()
                .map(|(i, b)| MlpModel::init(b, seed::derive_index(seed, i as u64)))
                .collect(),
            head: MlpModel::init(&spec.head, seed::derive(seed, "head")),
        }
    }

    pub fn branches(&self) -> &[MlpModel] {
        &self.branches
    }

    pub fn branches_mut(&mut self) -> &mut [MlpModel] {
        &mut self.branches
    }

    pub fn head(&self) -> &MlpModel {
        &self.head
    }

    pub fn n_views(&self) -> usize {
        self.branches.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.head.spec().output_dim()
    }

    fn check_inputs(&self, views: &[ArrayView2<'_, f64>]) -> Result<()> {
        if views.len() != self.branches.len() {
            return Err(Error::Shape(format!(
                "MVnet has {} branches but got {} views",
                self.branches.len(),
                views.len()
            )));
        }
        if let Some(v) = views.iter().find(|v| v.nrows() != views[0].nrows()) {
            return Err(Error::Shape(format!(
                "views are not row-aligned: {} vs {} rows",
                views[0].nrows(),
                v.nrows()
            )));
        }
        Ok(())
    }

    /// Concatenated branch embeddings (the head's input).
    pub fn branch_embeddings(&self, views: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
        self.check_inputs(views)?;
        let parts = self
            .branches
            .iter()
            .zip(views)
            .map(|(b, v)| b.forward(v.view()))
            .collect::<Result<Vec<_>>>()?;
        let part_views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(1), &part_views).map_err(|e| Error::Shape(e.to_string()))
    }

    pub fn forward(&self, views: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
        self.head.forward(self.branch_embeddings(views)?.view())
    }

    /// Parameter gradients, ordered as [`Parameters::param_slices`].
    /// `grad_fn` maps the network output to the gradient of the loss with
    /// respect to it.
    pub fn backward(
        &self,
        views: &[ArrayView2<'_, f64>],
        grad_fn: &mut dyn FnMut(ArrayView2<'_, f64>) -> Result<Array2<f64>>,
    ) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(views)?;
        let traces = self
            .branches
            .iter()
            .zip(views)
            .map(|(b, v)| b.forward_trace(v.view()))
            .collect::<Result<Vec<_>>>()?;
        let outs: Vec<_> = traces.iter().map(|t| t.output().view()).collect();
        let concat = concatenate(Axis(1), &outs).map_err(|e| Error::Shape(e.to_string()))?;
        let head_trace = self.head.forward_trace(concat.view())?;
        let grad_out = grad_fn(head_trace.output().view())?;
        let (head_grads, grad_concat) = self.head.backward(&head_trace, grad_out.view())?;
        let mut flat = Vec::new();
        let mut col = 0;
        for (branch, trace) in self.branches.iter().zip(&traces) {
            let width = branch.spec().output_dim();
            let g = grad_concat.slice(s![.., col..col + width]);
            col += width;
            let (grads, _) = branch.backward(trace, g)?;
            flat.extend(grads.into_flat());
        }
        flat.extend(head_grads.into_flat());
        Ok(flat)
    }

    /// Layout: magic `MVNT`, `u64` branch count, then each branch and the
    /// head as an MLP checkpoint block.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        out.extend_from_slice(b"MVNT");
        out.extend_from_slice(&(self.branches.len() as u64).to_le_bytes());
        for b in &self.branches {
            b.encode_into(&mut out);
        }
        self.head.encode_into(&mut out);
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 12 || &bytes[..4] != b"MVNT" {
            return Err(Error::UnrecognizedFormat("missing MVNT magic".into()));
        }
        let m = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        let mut cursor = &bytes[12..];
        let branches = (0..m)
            .map(|_| MlpModel::decode_from(&mut cursor))
            .collect::<Result<Vec<_>>>()?;
        let head = MlpModel::decode_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Shape("trailing bytes after MVnet checkpoint".into()));
        }
        MvNetModel::new(branches, head)
    }
}

impl Parameters for MvNetModel {
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.branches {
            out.extend(b.param_slices_mut());
        }
        out.extend(self.head.param_slices_mut());
        out
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for b in &self.branches {
            out.extend(b.param_slices());
        }
        out.extend(self.head.param_slices());
        out
    }
}

impl ClusterNet for MvNetModel {
    fn embed(&self, inputs: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
        self.forward(inputs)
    }

    fn backprop(
        &self,
        inputs: &[ArrayView2<'_, f64>],
        embedding_grad: &mut dyn FnMut(ArrayView2<'_, f64>) -> Result<Array2<f64>>,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        Ok((0.0, self.backward(inputs, embedding_grad)?))
    }
}

/// Network shapes and training settings for DMVC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DmvcConfig {
    /// Hidden widths of every branch.
    pub hidden: Vec<usize>,
    /// Hidden widths of the head.
    pub head_hidden: Vec<usize>,
    /// Embedding width of branches and head; the cluster count when unset.
    pub embed_dim: Option<usize>,
    /// IDEC settings for the branch and head pretraining stages.
    pub idec: IdecConfig,
    /// End-to-end refinement; zero epochs skips it.
    pub refine: TrainConfig,
    pub refine_dec: DecConfig,
}

impl Default for DmvcConfig {
    fn default() -> Self {
        DmvcConfig::paper()
    }
}

impl DmvcConfig {
    /// `d-500-500-2000-N` blocks with the IDEC defaults.
    pub fn paper() -> Self {
        DmvcConfig {
            hidden: vec![500, 500, 2000],
            head_hidden: vec![500, 500, 2000],
            embed_dim: None,
            idec: IdecConfig::default(),
            refine: TrainConfig {
                learning_rate: 1e-4,
                epochs: 100,
                ..TrainConfig::default()
            },
            refine_dec: DecConfig::default(),
        }
    }

    /// Narrow networks and short schedules for small synthetic datasets.
    pub fn small() -> Self {
        let pretrain = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 60,
            ..TrainConfig::default()
        };
        let finetune = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 30,
            ..TrainConfig::default()
        };
        DmvcConfig {
            hidden: vec![32, 16],
            head_hidden: vec![32, 16],
            embed_dim: None,
            idec: IdecConfig {
                pretrain,
                finetune: finetune.clone(),
                dec: DecConfig::default(),
            },
            refine: TrainConfig {
                learning_rate: 1e-4,
                ..finetune
            },
            refine_dec: DecConfig::default(),
        }
    }

    pub fn spec_for(&self, dataset: &MultiViewDataset, k: usize) -> Result<MvNetSpec> {
        let dims: Vec<usize> = dataset.views().iter().map(FeatureView::dim).collect();
        MvNetSpec::from_profile(&dims, &self.hidden, &self.head_hidden, self.embed_dim.unwrap_or(k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRow {
    pub stage: String,
    pub nmi: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageReport {
    pub stages: Vec<StageRow>,
    pub log: Vec<LogRow>,
}

impl StageReport {
    fn push(&mut self, stage: impl Into<String>, partition: &Partition, truth: Option<&Partition>, started: Instant) -> Result<()> {
        let nmi = truth.map(|t| metrics::nmi(partition, t)).transpose()?;
        self.stages.push(StageRow {
            stage: stage.into(),
            nmi,
            seconds: started.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    pub fn nmi_of(&self, stage: &str) -> Option<f64> {
        self.stages.iter().find(|r| r.stage == stage).and_then(|r| r.nmi)
    }
}

#[derive(Debug, Clone)]
pub struct DmvcOutcome {
    pub partition: Partition,
    pub model: MvNetModel,
    pub centroids: Array2<f64>,
    pub report: StageReport,
}

fn view_inputs(dataset: &MultiViewDataset) -> Vec<ArrayView2<'_, f64>> {
    dataset.views().iter().map(FeatureView::data).collect()
}

/// Staged MVnet training without end-to-end refinement.
pub fn dmvc_fix(dataset: &MultiViewDataset, k: usize, config: &DmvcConfig, seed: u64) -> Result<DmvcOutcome> {
    let spec = config.spec_for(dataset, k)?;
    let truth = dataset.ground_truth();
    let mut report = StageReport::default();
    let mut branches = Vec::with_capacity(dataset.n_views());
    for (view, branch_spec) in dataset.views().iter().zip(spec.branches()) {
        let started = Instant::now();
        let stage = format!("branch:{}", view.name());
        let out = deepclust::idec_train(
            view.data(),
            k,
            branch_spec,
            &config.idec,
            seed::derive(seed, &stage),
        )?;
        report.push(&stage, &out.partition, truth.as_ref(), started)?;
        report.log.extend(out.log.into_iter().map(|r| LogRow { stage: stage.clone(), ..r }));
        branches.push(out.encoder);
    }
    let started = Instant::now();
    let inputs = view_inputs(dataset);
    let parts = branches
        .iter()
        .zip(&inputs)
        .map(|(b, v)| b.forward(v.view()))
        .collect::<Result<Vec<_>>>()?;
    let part_views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let concat = concatenate(Axis(1), &part_views).map_err(|e| Error::Shape(e.to_string()))?;
    let head = deepclust::idec_train(concat.view(), k, spec.head(), &config.idec, seed::derive(seed, "head"))?;
    report.push("head", &head.partition, truth.as_ref(), started)?;
    report.log.extend(head.log.into_iter().map(|r| LogRow {
        stage: "head".into(),
        ..r
    }));
    Ok(DmvcOutcome {
        partition: head.partition,
        model: MvNetModel::new(branches, head.encoder)?,
        centroids: head.centroids,
        report,
    })
}

/// DMVC-fix followed by end-to-end fine-tuning of the whole MVnet and its
/// centroids. Gradients reach the branches through the concatenation layer.
pub fn dmvc(dataset: &MultiViewDataset, k: usize, config: &DmvcConfig, seed: u64) -> Result<DmvcOutcome> {
    let fixed = dmvc_fix(dataset, k, config, seed)?;
    refine_end_to_end(dataset, k, fixed, config, seed)
}

/// The refinement stage of [`dmvc`], applied to a DMVC-fix outcome.
pub fn refine_end_to_end(
    dataset: &MultiViewDataset,
    k: usize,
    fixed: DmvcOutcome,
    config: &DmvcConfig,
    seed: u64,
) -> Result<DmvcOutcome> {
    if config.refine.epochs == 0 {
        return Ok(fixed);
    }
    let started = Instant::now();
    let train = TrainConfig {
        seed: seed::derive(seed, "refine"),
        ..config.refine.clone()
    };
    let inputs = view_inputs(dataset);
    let refined = deepclust::dec_finetune(
        fixed.model,
        &inputs,
        k,
        &train,
        &config.refine_dec,
        Some(fixed.centroids),
        "refine",
    )?;
    let mut report = fixed.report;
    report.push("refine", &refined.partition, dataset.ground_truth().as_ref(), started)?;
    report.log.extend(refined.log);
    Ok(DmvcOutcome {
        partition: refined.partition,
        model: refined.net,
        centroids: refined.centroids,
        report,
    })
}

/// Trains a freshly initialized MVnet end-to-end with no staged
/// pretraining. Kept as a diagnostic; it is expected to do worse than
/// [`dmvc`].
pub fn dmvc_from_scratch(dataset: &MultiViewDataset, k: usize, config: &DmvcConfig, seed: u64) -> Result<DmvcOutcome> {
    let spec = config.spec_for(dataset, k)?;
    let model = MvNetModel::init(&spec, seed::derive(seed, "scratch-init"));
    let started = Instant::now();
    let train = TrainConfig {
        seed: seed::derive(seed, "scratch"),
        ..config.refine.clone()
    };
    let inputs = view_inputs(dataset);
    let refined = deepclust::dec_finetune(model, &inputs, k, &train, &config.refine_dec, None, "scratch")?;
    let mut report = StageReport::default();
    report.push("scratch", &refined.partition, dataset.ground_truth().as_ref(), started)?;
    report.log = refined.log;
    Ok(DmvcOutcome {
        partition: refined.partition,
        model: refined.net,
        centroids: refined.centroids,
        report,
    })
}

/// Final-layer embeddings of every sample, as a view.
pub fn embed(model: &MvNetModel, dataset: &MultiViewDataset) -> Result<FeatureView> {
    let z = model.forward(&view_inputs(dataset))?;
    FeatureView::new("embedding", z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn tiny_model(seed: u64) -> MvNetModel {
        let spec = MvNetSpec::from_profile(&[3, 4], &[5], &[6], 2).unwrap();
        MvNetModel::init(&spec, seed)
    }

    #[test]
    fn head_input_is_sum_of_branch_outputs() {
        let spec = MvNetSpec::new(
            vec![MlpSpec::new(vec![4, 3]).unwrap(), MlpSpec::new(vec![2, 5]).unwrap()],
            MlpSpec::new(vec![8, 2]).unwrap(),
        )
        .unwrap();
        let model = MvNetModel::init(&spec, 0);
        let a = Array2::ones((7, 4));
        let b = Array2::ones((7, 2));
        assert_eq!(model.branch_embeddings(&[a.view(), b.view()]).unwrap().ncols(), 8);
        assert!(MvNetSpec::new(
            vec![MlpSpec::new(vec![4, 3]).unwrap()],
            MlpSpec::new(vec![4, 2]).unwrap()
        )
        .is_err());
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut model = tiny_model(1);
        for p in model.param_slices_mut() {
            p.fill(0.0);
        }
        let out = model
            .forward(&[Array2::ones((3, 3)).view(), Array2::ones((3, 4)).view()])
            .unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_view_is_head_after_branch() {
        let spec = MvNetSpec::from_profile(&[3], &[4], &[5], 2).unwrap();
        let model = MvNetModel::init(&spec, 3);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| i as f64 - j as f64 * 0.5);
        let direct = model
            .head()
            .forward(model.branches()[0].forward(x.view()).unwrap().view())
            .unwrap();
        assert_eq!(model.forward(&[x.view()]).unwrap(), direct);
    }

    #[test]
    fn rejects_wrong_view_count_and_misaligned_rows() {
        let model = tiny_model(2);
        let a = Array2::ones((3, 3));
        assert!(model.forward(&[a.view()]).is_err());
        let b = Array2::ones((2, 4));
        assert!(model.forward(&[a.view(), b.view()]).is_err());
    }

    #[test]
    fn branches_do_not_share_parameters() {
        let model = tiny_model(5);
        let mut perturbed = model.clone();
        perturbed.branches_mut()[0].param_slices_mut()[0][0] += 1.0;
        let x1 = Array2::from_elem((2, 4), 0.7);
        assert_eq!(
            model.branches()[1].forward(x1.view()).unwrap(),
            perturbed.branches()[1].forward(x1.view()).unwrap()
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mvnt");
        let model = tiny_model(8);
        model.save(&path).unwrap();
        assert_eq!(MvNetModel::load(&path).unwrap(), model);
    }

    #[test]
    fn from_parameters_layer_shapes_chain() {
        let w = vec![Array2::zeros((2, 3))];
        let b = vec![Array1::zeros(2)];
        assert!(MlpModel::from_parameters(w, b).is_err());
    }
}
