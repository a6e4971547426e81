//! DEC/IDEC style clustering: Student-t soft assignments against trainable
//! centroids, a sharpened target distribution, and a KL divergence loss
//! optimized jointly with the embedding network.
//!
//! The soft assignment of embedding `z_i` to centroid `mu_j` is
//!
//! ```text
//! q_ij ∝ (1 + |z_i - mu_j|^2 / alpha)^(-(alpha + 1) / 2)
//! ```
//!
//! and the target is `p_ij ∝ q_ij^2 / f_j` with `f_j = Σ_i q_ij`. During
//! training `p` is refreshed from the full dataset every `update_interval`
//! batches and held constant in between.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::flatclust::{kmeans, KMeansConfig};
use crate::nnet::{self, Adam, Autoencoder, MlpModel, MlpSpec, Parameters, TrainConfig};
use crate::{seed, Error, Partition, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecConfig {
    /// Student-t degrees of freedom.
    pub alpha: f64,
    /// Weight of the clustering loss next to the reconstruction loss.
    pub gamma: f64,
    /// Batches between target refreshes; one epoch when unset.
    pub update_interval: Option<usize>,
    /// Stop once fewer than this fraction of hard labels change between
    /// consecutive target refreshes.
    pub stop_delta: f64,
    /// Restarts of the k-means centroid initialization.
    pub init_n_init: usize,
}

impl Default for DecConfig {
    fn default() -> Self {
        DecConfig {
            alpha: 1.0,
            gamma: 0.1,
            update_interval: None,
            stop_delta: 0.001,
            init_n_init: 20,
        }
    }
}

impl DecConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.gamma >= 0.0) || !(self.stop_delta >= 0.0)
            || self.update_interval == Some(0) || self.init_n_init == 0
        {
            return Err(Error::Config(format!("invalid clustering settings {self:?}")));
        }
        Ok(())
    }
}

/// Centroids plus the clustering hyperparameters they are used with.
#[derive(Debug, Clone, PartialEq)]
pub struct DecState {
    pub centroids: Array2<f64>,
    pub config: DecConfig,
}

fn check_dims(z: ArrayView2<'_, f64>, centroids: ArrayView2<'_, f64>) -> Result<()> {
    if z.ncols() != centroids.ncols() || centroids.nrows() == 0 {
        return Err(Error::Shape(format!(
            "embeddings have {} columns, centroids are {}x{}",
            z.ncols(),
            centroids.nrows(),
            centroids.ncols()
        )));
    }
    Ok(())
}

fn sq_dists(z: ArrayView2<'_, f64>, centroids: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut d = Array2::zeros((z.nrows(), centroids.nrows()));
    for (i, zi) in z.rows().into_iter().enumerate() {
        for (j, mu) in centroids.rows().into_iter().enumerate() {
            d[[i, j]] = zi.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    d
}

/// Row-stochastic Student-t soft assignments. Kernel values are normalized
/// in log space so distant embeddings do not underflow to an all-zero row.
pub fn soft_assign(z: ArrayView2<'_, f64>, centroids: ArrayView2<'_, f64>, alpha: f64) -> Result<Array2<f64>> {
    check_dims(z, centroids)?;
    let power = -(alpha + 1.0) / 2.0;
    let mut q = sq_dists(z, centroids).mapv(|d| power * (d / alpha).ln_1p());
    for mut row in q.rows_mut() {
        let top = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - top).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    Ok(q)
}

/// Sharpened targets `p_ij ∝ q_ij^2 / Σ_i q_ij`.
pub fn target_distribution(q: ArrayView2<'_, f64>) -> Array2<f64> {
    let freq = q.sum_axis(Axis(0));
    let mut p = Array2::zeros(q.raw_dim());
    for (i, row) in q.rows().into_iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if freq[j] > 0.0 {
                p[[i, j]] = v * (v / freq[j]);
            }
        }
        let total: f64 = p.row(i).sum();
        p.row_mut(i).mapv_inplace(|v| v / total);
    }
    p
}

/// `Σ_i Σ_j p_ij ln(p_ij / q_ij)` with `0 ln 0 = 0`.
pub fn kl_cluster_loss(p: ArrayView2<'_, f64>, q: ArrayView2<'_, f64>) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Shape(format!(
            "target is {:?} but assignments are {:?}",
            p.dim(),
            q.dim()
        )));
    }
    let mut total = 0.0;
    for ((idx, &pv), &qv) in p.indexed_iter().zip(q.iter()) {
        if pv > 0.0 {
            if qv <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "soft assignment is zero at {idx:?} where the target is positive"
                )));
            }
            total += pv * (pv / qv).ln();
        }
    }
    Ok(total)
}

/// Index of the largest entry per row, lowest index on ties.
pub fn hard_labels(q: ArrayView2<'_, f64>) -> Vec<usize> {
    q.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Batch-mean KL loss for fixed targets `p`, with gradients with respect
/// to the embeddings and the centroids.
pub fn cluster_loss_grad(
    z: ArrayView2<'_, f64>,
    centroids: ArrayView2<'_, f64>,
    p: ArrayView2<'_, f64>,
    alpha: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let q = soft_assign(z, centroids, alpha)?;
    let b = z.nrows() as f64;
    let loss = kl_cluster_loss(p, q.view())? / b;
    let dists = sq_dists(z, centroids);
    let scale = (alpha + 1.0) / alpha / b;
    let mut grad_z = Array2::zeros(z.raw_dim());
    let mut grad_mu = Array2::zeros(centroids.raw_dim());
    for i in 0..z.nrows() {
        for j in 0..centroids.nrows() {
            let coef = scale * (p[[i, j]] - q[[i, j]]) / (1.0 + dists[[i, j]] / alpha);
            for t in 0..z.ncols() {
                let diff = coef * (z[[i, t]] - centroids[[j, t]]);
                grad_z[[i, t]] += diff;
                grad_mu[[j, t]] -= diff;
            }
        }
    }
    Ok((loss, grad_z, grad_mu))
}

/// An embedding network that can be trained under the clustering loss.
///
/// `inputs` holds one row-aligned matrix per network input (a single view
/// for plain MLPs, one per branch for MVnet).
pub trait ClusterNet: Parameters {
    fn embed(&self, inputs: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>>;

    /// Forward pass on a batch. `embedding_grad` receives the batch
    /// embedding and returns the gradient of the clustering objective with
    /// respect to it. Any loss the network adds on its own (reconstruction)
    /// is folded in; its value is returned with the flat parameter
    /// gradients, ordered as [`Parameters::param_slices`].
    fn backprop(
        &self,
        inputs: &[ArrayView2<'_, f64>],
        embedding_grad: &mut dyn FnMut(ArrayView2<'_, f64>) -> Result<Array2<f64>>,
    ) -> Result<(f64, Vec<Vec<f64>>)>;
}

fn single_input<'b>(inputs: &[ArrayView2<'b, f64>]) -> Result<ArrayView2<'b, f64>> {
    match inputs {
        [x] => Ok(x.clone()),
        _ => Err(Error::Shape(format!(
            "single-branch network got {} inputs",
            inputs.len()
        ))),
    }
}

impl ClusterNet for MlpModel {
    fn embed(&self, inputs: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
        self.forward(single_input(inputs)?)
    }

    fn backprop(
        &self,
        inputs: &[ArrayView2<'_, f64>],
        embedding_grad: &mut dyn FnMut(ArrayView2<'_, f64>) -> Result<Array2<f64>>,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let trace = self.forward_trace(single_input(inputs)?)?;
        let grad_z = embedding_grad(trace.output().view())?;
        let (grads, _) = self.backward(&trace, grad_z.view())?;
        Ok((0.0, grads.into_flat()))
    }
}

/// The IDEC network: the encoder embeds, the decoder adds a reconstruction
/// loss so the embedding keeps local structure.
impl ClusterNet for Autoencoder {
    fn embed(&self, inputs: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
        self.encoder.forward(single_input(inputs)?)
    }

    fn backprop(
        &self,
        inputs: &[ArrayView2<'_, f64>],
        embedding_grad: &mut dyn FnMut(ArrayView2<'_, f64>) -> Result<Array2<f64>>,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let x = single_input(inputs)?;
        let enc = self.encoder.forward_trace(x)?;
        let dec = self.decoder.forward_trace(enc.output().view())?;
        let (recon, grad_out) = nnet::mse_with_grad(dec.output().view(), x);
        let (dec_grads, grad_z_recon) = self.decoder.backward(&dec, grad_out.view())?;
        let grad_z = embedding_grad(enc.output().view())? + grad_z_recon;
        let (enc_grads, _) = self.encoder.backward(&enc, grad_z.view())?;
        let mut flat = enc_grads.into_flat();
        flat.extend(dec_grads.into_flat());
        Ok((recon, flat))
    }
}

impl Parameters for Autoencoder {
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        nnet::concat_slices(self.encoder.param_slices_mut(), self.decoder.param_slices_mut())
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        let mut s = self.encoder.param_slices();
        s.extend(self.decoder.param_slices());
        s
    }
}

/// Loss and gradients of `L_net + gamma * L_cluster` on one batch with
/// fixed targets `p`. Returns the total loss, the network's own loss term,
/// the clustering loss, flat parameter gradients and the centroid gradient.
pub struct BatchObjective {
    pub total: f64,
    pub net_loss: f64,
    pub cluster_loss: f64,
    pub param_grads: Vec<Vec<f64>>,
    pub centroid_grad: Array2<f64>,
}

pub fn batch_objective<N: ClusterNet + ?Sized>(
    net: &N,
    inputs: &[ArrayView2<'_, f64>],
    centroids: ArrayView2<'_, f64>,
    p: ArrayView2<'_, f64>,
    alpha: f64,
    gamma: f64,
) -> Result<BatchObjective> {
    let mut cluster_loss = 0.0;
    let mut centroid_grad = Array2::zeros(centroids.raw_dim());
    let (net_loss, param_grads) = net.backprop(inputs, &mut |z| {
        let (loss, gz, gmu) = cluster_loss_grad(z, centroids, p, alpha)?;
        cluster_loss = loss;
        centroid_grad = gmu * gamma;
        Ok(gz * gamma)
    })?;
    Ok(BatchObjective {
        total: net_loss + gamma * cluster_loss,
        net_loss,
        cluster_loss,
        param_grads,
        centroid_grad,
    })
}

/// One line of the training log, written at every target refresh.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub stage: String,
    pub iteration: usize,
    /// Mean network (reconstruction) loss over the batches since the last refresh.
    pub net_loss: f64,
    /// Mean clustering loss over the same batches.
    pub cluster_loss: f64,
    /// Fraction of hard labels changed since the previous refresh.
    pub label_change: f64,
}

pub const LOG_HEADER: &str = "stage\titeration\tloss_recon\tloss_cluster\tlabel_change";

pub fn log_tsv(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6e}\t{:.6e}\t{:.6}",
            r.stage, r.iteration, r.net_loss, r.cluster_loss, r.label_change
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct Refined<N> {
    pub partition: Partition,
    pub net: N,
    pub centroids: Array2<f64>,
    pub log: Vec<LogRow>,
}

fn changed_fraction(a: &[usize], b: &[usize]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

fn init_centroids(z: ArrayView2<'_, f64>, k: usize, n_init: usize, seed: u64) -> Result<Array2<f64>> {
    let cfg = KMeansConfig {
        n_init,
        ..KMeansConfig::new(k).with_seed(seed)
    };
    Ok(kmeans(z, &cfg)?.centroids)
}

/// The alternating optimization shared by IDEC and end-to-end fine-tuning.
/// Runs `train.epochs` epochs of batches at most.
fn refine<N: ClusterNet>(
    mut net: N,
    inputs: &[ArrayView2<'_, f64>],
    mut centroids: Array2<f64>,
    train: &TrainConfig,
    dec: &DecConfig,
    gamma: f64,
    stage: &str,
) -> Result<Refined<N>> {
    let n = inputs[0].nrows();
    let per_epoch = n.div_ceil(train.batch_size);
    let update_interval = dec.update_interval.unwrap_or(per_epoch);
    let max_iter = train.epochs * per_epoch;
    let mut adam = Adam::new(train.adam);
    let mut rng = seed::rng(train.seed);
    let mut queue: Vec<Vec<usize>> = Vec::new();
    let mut log = Vec::new();
    let mut p = Array2::zeros((n, centroids.nrows()));
    let mut previous: Option<Vec<usize>> = None;
    let (mut net_acc, mut cluster_acc, mut acc_count) = (0.0, 0.0, 0usize);
    let mut iteration = 0;
    loop {
        if iteration % update_interval == 0 {
            let z = net.embed(inputs)?;
            let q = soft_assign(z.view(), centroids.view(), dec.alpha)?;
            p = target_distribution(q.view());
            let labels = hard_labels(q.view());
            let change = previous.as_ref().map_or(1.0, |prev| changed_fraction(prev, &labels));
            let denom = acc_count.max(1) as f64;
            log.push(LogRow {
                stage: stage.to_string(),
                iteration,
                net_loss: net_acc / denom,
                cluster_loss: cluster_acc / denom,
                label_change: change,
            });
            (net_acc, cluster_acc, acc_count) = (0.0, 0.0, 0);
            if previous.is_some() && change < dec.stop_delta {
                break;
            }
            previous = Some(labels);
        }
        if iteration >= max_iter {
            break;
        }
        if queue.is_empty() {
            queue = nnet::epoch_batches(n, train.batch_size, &mut rng);
            queue.reverse();
        }
        let idx = queue.pop().unwrap();
        let batch: Vec<Array2<f64>> = inputs.iter().map(|x| x.select(Axis(0), &idx)).collect();
        let batch_views: Vec<ArrayView2<'_, f64>> = batch.iter().map(|b| b.view()).collect();
        let p_batch = p.select(Axis(0), &idx);
        let obj = batch_objective(&net, &batch_views, centroids.view(), p_batch.view(), dec.alpha, gamma)?;
        if !obj.total.is_finite() {
            return Err(Error::Divergence {
                stage: stage.to_string(),
                iteration,
            });
        }
        net_acc += obj.net_loss;
        cluster_acc += obj.cluster_loss;
        acc_count += 1;
        let mut grads: Vec<&[f64]> = obj.param_grads.iter().map(Vec::as_slice).collect();
        grads.push(obj.centroid_grad.as_slice().unwrap());
        let mut params = net.param_slices_mut();
        params.push(centroids.as_slice_mut().unwrap());
        adam.step(params, &grads, train.learning_rate)?;
        iteration += 1;
    }
    let z = net.embed(inputs)?;
    let q = soft_assign(z.view(), centroids.view(), dec.alpha)?;
    let partition = Partition::new(hard_labels(q.view()), centroids.nrows())?;
    Ok(Refined {
        partition,
        net,
        centroids,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdecConfig {
    pub pretrain: TrainConfig,
    /// Fine-tuning settings; `epochs` caps the number of passes over the data.
    pub finetune: TrainConfig,
    pub dec: DecConfig,
}

impl Default for IdecConfig {
    fn default() -> Self {
        IdecConfig {
            pretrain: TrainConfig::default(),
            finetune: TrainConfig {
                learning_rate: 1e-4,
                epochs: 100,
                ..TrainConfig::default()
            },
            dec: DecConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IdecOutcome {
    pub partition: Partition,
    pub encoder: MlpModel,
    pub decoder: MlpModel,
    pub centroids: Array2<f64>,
    pub pretrain_mse: f64,
    pub log: Vec<LogRow>,
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "cannot form k={k} clusters from {n} samples"
        )));
    }
    Ok(())
}

/// IDEC on one view: autoencoder pretraining, k-means centroid
/// initialization on the embeddings, then joint minimization of
/// `L_recon + gamma * L_cluster` over encoder, decoder and centroids.
///
/// With `gamma = 0` the clustering stage is skipped and the partition is
/// k-means on the pretrained embeddings.
pub fn idec_train(view: ArrayView2<'_, f64>, k: usize, encoder_spec: &MlpSpec, config: &IdecConfig, seed: u64) -> Result<IdecOutcome> {
    check_k(k, view.nrows())?;
    config.dec.validate()?;
    config.finetune.validate()?;
    if encoder_spec.output_dim() == 0 {
        return Err(Error::Config("empty embedding".into()));
    }
    let pretrain = TrainConfig {
        seed: seed::derive(seed, "pretrain"),
        ..config.pretrain.clone()
    };
    let ae = nnet::train_autoencoder(view, encoder_spec, &pretrain)?;
    let pretrain_mse = ae.final_mse;
    let z = ae.encoder.forward(view)?;
    let init_seed = seed::derive(seed, "centroids");
    if config.dec.gamma == 0.0 {
        let km = kmeans(
            z.view(),
            &KMeansConfig {
                n_init: config.dec.init_n_init,
                ..KMeansConfig::new(k).with_seed(init_seed)
            },
        )?;
        return Ok(IdecOutcome {
            partition: km.partition,
            encoder: ae.encoder,
            decoder: ae.decoder,
            centroids: km.centroids,
            pretrain_mse,
            log: Vec::new(),
        });
    }
    let centroids = init_centroids(z.view(), k, config.dec.init_n_init, init_seed)?;
    let finetune = TrainConfig {
        seed: seed::derive(seed, "finetune"),
        ..config.finetune.clone()
    };
    let refined = refine(ae, &[view], centroids, &finetune, &config.dec, config.dec.gamma, "idec")?;
    Ok(IdecOutcome {
        partition: refined.partition,
        encoder: refined.net.encoder,
        decoder: refined.net.decoder,
        centroids: refined.centroids,
        pretrain_mse,
        log: refined.log,
    })
}

/// Clustering-loss-only fine-tuning of an embedding network together with
/// its centroids. Centroids start from `init_centroids` when given,
/// otherwise from k-means on the current embeddings.
pub fn dec_finetune<N: ClusterNet>(
    net: N,
    inputs: &[ArrayView2<'_, f64>],
    k: usize,
    train: &TrainConfig,
    dec: &DecConfig,
    init_centroids_from: Option<Array2<f64>>,
    stage: &str,
) -> Result<Refined<N>> {
    let n = inputs.first().map_or(0, |x| x.nrows());
    check_k(k, n)?;
    dec.validate()?;
    train.validate()?;
    let centroids = match init_centroids_from {
        Some(c) => {
            if c.nrows() != k {
                return Err(Error::Shape(format!("{} initial centroids for k={k}", c.nrows())));
            }
            c
        }
        None => {
            let z = net.embed(inputs)?;
            init_centroids(z.view(), k, dec.init_n_init, seed::derive(train.seed, "centroids"))?
        }
    };
    refine(net, inputs, centroids, train, dec, 1.0, stage)
}
