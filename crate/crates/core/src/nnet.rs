//! Dense feed-forward networks with analytic gradients.
//!
//! Hidden layers use ReLU (subgradient 0 at 0), the output layer is linear.
//! Weight matrices are stored `fan_in x fan_out` so a batch propagates as
//! `x.dot(w) + b`. All arithmetic is `f64`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_dims: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "an MLP needs at least two positive layer sizes, got {layer_dims:?}"
            )));
        }
        Ok(MlpSpec { layer_dims })
    }

    /// `input - hidden... - output`.
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        MlpSpec::new(dims)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// The decoder shape for an autoencoder built on this encoder.
    pub fn mirrored(&self) -> MlpSpec {
        let mut dims = self.layer_dims.clone();
        dims.reverse();
        MlpSpec { layer_dims: dims }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    spec: MlpSpec,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Layer outputs kept from a forward pass for backpropagation.
/// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct Trace {
    activations: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(model: &MlpModel) -> Self {
        MlpGrads {
            weights: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    /// Flat views in the same order as [`Parameters::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice().unwrap(), b.as_slice().unwrap()])
            .collect()
    }

    pub fn into_flat(self) -> Vec<Vec<f64>> {
        self.weights
            .into_iter()
            .zip(self.biases)
            .flat_map(|(w, b)| [w.into_raw_vec_and_offset().0, b.into_raw_vec_and_offset().0])
            .collect()
    }
}

/// Anything owning trainable `f64` parameters in a fixed order.
pub trait Parameters {
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_slices(&self) -> Vec<&[f64]>;
}

impl Parameters for MlpModel {
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_slice_mut().unwrap(), b.as_slice_mut().unwrap()])
            .collect()
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice().unwrap(), b.as_slice().unwrap()])
            .collect()
    }
}

/// A scalar loss over a network output batch.
pub trait Loss {
    /// Loss value and its gradient with respect to `output`.
    fn evaluate(&self, output: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)>;
}

/// Mean squared error against a fixed target, averaged over every element.
pub struct MseLoss<'a> {
    pub target: ArrayView2<'a, f64>,
}

impl Loss for MseLoss<'_> {
    fn evaluate(&self, output: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
        Ok(mse_with_grad(output, self.target))
    }
}

pub fn mse_with_grad(output: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let diff = &output - &target;
    let count = diff.len() as f64;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / count;
    (value, diff * (2.0 / count))
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> MlpModel {
        let mut rng = seed::rng(seed);
        let mut weights = Vec::with_capacity(spec.n_layers());
        let mut biases = Vec::with_capacity(spec.n_layers());
        for pair in spec.layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Array2::from_shape_simple_fn((fan_in, fan_out), || {
                rng.random_range(-limit..=limit)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        MlpModel {
            spec: spec.clone(),
            weights,
            biases,
        }
    }

    /// Builds a model from explicit parameters (`fan_in x fan_out` weights).
    pub fn from_parameters(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Shape("need one bias vector per weight matrix".into()));
        }
        let mut dims = vec![weights[0].nrows()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.nrows() != *dims.last().unwrap() || b.len() != w.ncols() {
                return Err(Error::Shape(format!("layer {l} shapes do not chain")));
            }
            dims.push(w.ncols());
        }
        if weights.iter().flatten().chain(biases.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        Ok(MlpModel {
            spec: MlpSpec::new(dims)?,
            weights: weights
                .into_iter()
                .map(|w| w.as_standard_layout().into_owned())
                .collect(),
            biases,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.spec.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} input columns, got {}",
                self.spec.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let last = self.weights.len() - 1;
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = a.dot(w) + b;
            if l < last {
                a.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(a)
    }

    pub fn forward_trace(&self, x: ArrayView2<'_, f64>) -> Result<Trace> {
        self.check_input(x)?;
        let last = self.weights.len() - 1;
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(x.to_owned());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut a = activations[l].dot(w) + b;
            if l < last {
                a.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(a);
        }
        Ok(Trace { activations })
    }

    /// Backpropagates `grad_out` (gradient of the loss with respect to the
    /// output batch) through a recorded forward pass. Returns parameter
    /// gradients and the gradient with respect to the input batch.
    pub fn backward(&self, trace: &Trace, grad_out: ArrayView2<'_, f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if grad_out.dim() != trace.output().dim() {
            return Err(Error::Shape(format!(
                "output gradient is {:?}, output is {:?}",
                grad_out.dim(),
                trace.output().dim()
            )));
        }
        let layers = self.weights.len();
        let mut gw = Vec::with_capacity(layers);
        let mut gb = Vec::with_capacity(layers);
        let mut delta = grad_out.to_owned();
        for l in (0..layers).rev() {
            let input = &trace.activations[l];
            gw.push(input.t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            let mut upstream = delta.dot(&self.weights[l].t());
            if l > 0 {
                ndarray::Zip::from(&mut upstream)
                    .and(input)
                    .for_each(|g, &a| {
                        if a <= 0.0 {
                            *g = 0.0;
                        }
                    });
            }
            delta = upstream;
        }
        gw.reverse();
        gb.reverse();
        Ok((
            MlpGrads {
                weights: gw,
                biases: gb,
            },
            delta,
        ))
    }

    /// Loss, parameter gradients and input gradients for one batch.
    pub fn grad(&self, batch: ArrayView2<'_, f64>, loss: &dyn Loss) -> Result<(f64, MlpGrads, Array2<f64>)> {
        let trace = self.forward_trace(batch)?;
        let (value, grad_out) = loss.evaluate(trace.output().view())?;
        let (grads, grad_in) = self.backward(&trace, grad_out.view())?;
        Ok((value, grads, grad_in))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        self.encode_into(&mut out);
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cursor = &bytes[..];
        let model = MlpModel::decode_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Shape("trailing bytes after model checkpoint".into()));
        }
        Ok(model)
    }

    /// Checkpoint layout: magic `MLPW`, `u16` version 1, two reserved zero
    /// bytes, `u64` dim count, the dims as `u64`, then per layer the weight
    /// matrix (row-major, `fan_in x fan_out`) and bias vector as `f64`, all
    /// little-endian.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(self.spec.layer_dims.len() as u64).to_le_bytes());
        for &d in &self.spec.layer_dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for p in self.param_slices() {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    pub fn decode_from(cursor: &mut &[u8]) -> Result<Self> {
        fn take<'a>(cursor: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
            if cursor.len() < n {
                return Err(Error::TruncatedPayload {
                    expected: n as u64,
                    found: cursor.len() as u64,
                });
            }
            let (head, tail) = cursor.split_at(n);
            *cursor = tail;
            Ok(head)
        }
        fn u64_at(cursor: &mut &[u8]) -> Result<u64> {
            Ok(u64::from_le_bytes(take(cursor, 8)?.try_into().unwrap()))
        }
        if take(cursor, 4)? != CHECKPOINT_MAGIC {
            return Err(Error::UnrecognizedFormat("missing MLPW magic".into()));
        }
        let header = take(cursor, 4)?;
        if header != [1, 0, 0, 0] {
            return Err(Error::UnrecognizedFormat("unsupported checkpoint version".into()));
        }
        let count = u64_at(cursor)?;
        if count > 1 << 16 {
            return Err(Error::UnrecognizedFormat(format!("implausible layer count {count}")));
        }
        let dims = (0..count)
            .map(|_| u64_at(cursor).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let spec = MlpSpec::new(dims)?;
        let mut model = MlpModel::init(&spec, 0);
        for p in model.param_slices_mut() {
            let raw = take(cursor, p.len() * 8)?;
            for (v, c) in p.iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(c.try_into().unwrap());
            }
        }
        if model.param_slices().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("checkpoint holds non-finite parameters".into()));
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"MLPW";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state. Moment buffers are allocated on the first step to
/// match the parameter slices they are applied to.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, mut params: Vec<&mut [f64]>, grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != grads.len()
            || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::Shape("gradient blocks do not match parameter blocks".into()));
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != grads.len()
            || self.first.iter().zip(grads).any(|(m, g)| m.len() != g.len())
        {
            return Err(Error::Shape("optimizer state belongs to a different model".into()));
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 200,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || self.batch_size == 0 {
            return Err(Error::Config(format!("invalid training settings {self:?}")));
        }
        Ok(())
    }
}

/// Shuffled mini-batch index lists for one epoch; the last batch may be short.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut seed::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub encoder: MlpModel,
    pub decoder: MlpModel,
    pub final_mse: f64,
}

impl Autoencoder {
    pub fn reconstruct(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.decoder.forward(self.encoder.forward(x)?.view())
    }

    pub fn mse(&self, x: ArrayView2<'_, f64>) -> Result<f64> {
        Ok(mse_with_grad(self.reconstruct(x)?.view(), x).0)
    }
}

pub(crate) fn concat_slices<'a>(a: Vec<&'a mut [f64]>, b: Vec<&'a mut [f64]>) -> Vec<&'a mut [f64]> {
    a.into_iter().chain(b).collect()
}

/// Trains an encoder and its mirrored decoder jointly to minimize the mean
/// squared reconstruction error over shuffled mini-batches.
pub fn train_autoencoder(data: ArrayView2<'_, f64>, encoder_spec: &MlpSpec, config: &TrainConfig) -> Result<Autoencoder> {
    config.validate()?;
    if encoder_spec.input_dim() != data.ncols() {
        return Err(Error::Shape(format!(
            "encoder expects {} inputs but the view has {} columns",
            encoder_spec.input_dim(),
            data.ncols()
        )));
    }
    let mut encoder = MlpModel::init(encoder_spec, seed::derive(config.seed, "encoder"));
    let mut decoder = MlpModel::init(&encoder_spec.mirrored(), seed::derive(config.seed, "decoder"));
    let mut adam = Adam::new(config.adam);
    let mut rng = seed::rng(seed::derive(config.seed, "batches"));
    let mut iteration = 0;
    for _ in 0..config.epochs {
        for idx in epoch_batches(data.nrows(), config.batch_size, &mut rng) {
            let batch = data.select(Axis(0), &idx);
            let enc = encoder.forward_trace(batch.view())?;
            let dec = decoder.forward_trace(enc.output().view())?;
            let (loss, grad_out) = mse_with_grad(dec.output().view(), batch.view());
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    stage: "autoencoder pretraining".into(),
                    iteration,
                });
            }
            let (dec_grads, grad_z) = decoder.backward(&dec, grad_out.view())?;
            let (enc_grads, _) = encoder.backward(&enc, grad_z.view())?;
            let grads: Vec<&[f64]> = enc_grads.slices().into_iter().chain(dec_grads.slices()).collect();
            adam.step(
                concat_slices(encoder.param_slices_mut(), decoder.param_slices_mut()),
                &grads,
                config.learning_rate,
            )?;
            iteration += 1;
        }
    }
    let mut ae = Autoencoder {
        encoder,
        decoder,
        final_mse: 0.0,
    };
    ae.final_mse = ae.mse(data)?;
    if !ae.final_mse.is_finite() {
        return Err(Error::Divergence {
            stage: "autoencoder pretraining".into(),
            iteration,
        });
    }
    Ok(ae)
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn numeric_gradient<F>(x: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error between two gradient vectors, with the usual
/// `|a - b| / max(|a| + |b|, floor)` normalization.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / (a.abs() + b.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3]).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2]).is_err());
        let s = MlpSpec::with_hidden(5, &[4, 3], 2).unwrap();
        assert_eq!(s.layer_dims(), &[5, 4, 3, 2]);
        assert_eq!(s.mirrored().layer_dims(), &[2, 3, 4, 5]);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = MlpSpec::new(vec![4, 3]).unwrap();
        let a = MlpModel::init(&spec, 9);
        assert_eq!(a, MlpModel::init(&spec, 9));
        assert_ne!(a, MlpModel::init(&spec, 10));
        assert!(a.biases()[0].iter().all(|&b| b == 0.0));
        let limit = (6.0f64 / 7.0).sqrt();
        assert!(a.weights()[0].iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn zero_model_outputs_zero() {
        let model = MlpModel::from_parameters(
            vec![Array2::zeros((3, 4)), Array2::zeros((4, 2))],
            vec![Array1::zeros(4), Array1::zeros(2)],
        )
        .unwrap();
        let out = model.forward(array![[1.0, -2.0, 3.0]].view()).unwrap();
        assert_eq!(out, Array2::<f64>::zeros((1, 2)));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let model = MlpModel::from_parameters(vec![Array2::eye(3)], vec![Array1::zeros(3)]).unwrap();
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        assert_eq!(model.forward(x.view()).unwrap(), x);
    }

    #[test]
    fn hand_traced_two_two_one() {
        // h = relu([1, 2] W1 + b1) with W1 = [[1, -1], [0.5, 2]], b1 = [0, -6]
        //   = relu([2, -3]) = [2, 0]
        // y = h W2 + b2 with W2 = [[3], [5]], b2 = [1] -> 7
        let model = MlpModel::from_parameters(
            vec![array![[1.0, -1.0], [0.5, 2.0]], array![[3.0], [5.0]]],
            vec![array![0.0, -6.0], array![1.0]],
        )
        .unwrap();
        assert_eq!(model.forward(array![[1.0, 2.0]].view()).unwrap(), array![[7.0]]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let model = MlpModel::init(&MlpSpec::new(vec![3, 2]).unwrap(), 0);
        assert!(model.forward(array![[1.0, 2.0]].view()).is_err());
    }

    struct ConstLoss;
    impl Loss for ConstLoss {
        fn evaluate(&self, output: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
            Ok((3.0, Array2::zeros(output.raw_dim())))
        }
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let model = MlpModel::init(&MlpSpec::new(vec![3, 4, 2]).unwrap(), 1);
        let x = array![[1.0, 2.0, 3.0]];
        let (_, g, gi) = model.grad(x.view(), &ConstLoss).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(gi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_squared_error_closed_form() {
        // Sum-of-squares loss |Wx + b - y|^2 on a single sample has
        // dL/dW = x (2 r)^T in our fan_in x fan_out layout and dL/db = 2 r.
        struct SumSq(Array2<f64>);
        impl Loss for SumSq {
            fn evaluate(&self, out: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
                let r = &out - &self.0;
                Ok((r.iter().map(|v| v * v).sum(), r * 2.0))
            }
        }
        let w = array![[0.5, -1.0], [2.0, 0.25], [1.0, 1.0]];
        let b = array![0.1, -0.2];
        let model = MlpModel::from_parameters(vec![w.clone()], vec![b.clone()]).unwrap();
        let x = array![[1.0, -2.0, 0.5]];
        let y = array![[0.0, 1.0]];
        let (_, g, _) = model.grad(x.view(), &SumSq(y.clone())).unwrap();
        let r = x.dot(&w) + &b - &y;
        let expected_w = x.t().dot(&(&r * 2.0));
        assert!((&g.weights[0] - &expected_w).iter().all(|d| d.abs() < 1e-12));
        assert!((&g.biases[0] - &(r.row(0).to_owned() * 2.0)).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0];
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(vec![&mut p[..]], &[&[0.0, 0.0]], 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_sign() {
        // m_hat = g, v_hat = g^2 after bias correction -> delta = -lr g/(|g| + eps)
        let mut p = vec![1.0, 1.0];
        let g = [4.0, -0.5];
        let lr = 0.01;
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(vec![&mut p[..]], &[&g], lr).unwrap();
        let expect0 = 1.0 - lr * 4.0 / (4.0 + 1e-8);
        let expect1 = 1.0 + lr * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - expect0).abs() < 1e-15);
        assert!((p[1] - expect1).abs() < 1e-15);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let loss = |x: f64| (x - 3.0) * (x - 3.0);
        let mut p = vec![0.0];
        let mut adam = Adam::new(AdamConfig::default());
        let start = loss(p[0]);
        for _ in 0..2 {
            let g = [2.0 * (p[0] - 3.0)];
            adam.step(vec![&mut p[..]], &[&g], 0.1).unwrap();
        }
        assert!(loss(p[0]) < start);
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let mut p = vec![0.0; 2];
        let mut adam = Adam::new(AdamConfig::default());
        assert!(adam.step(vec![&mut p[..]], &[&[1.0]], 0.1).is_err());
    }

    #[test]
    fn autoencoder_on_single_sample() {
        let x = array![[1.0, -2.0, 0.5]];
        let spec = MlpSpec::new(vec![3, 8, 2]).unwrap();
        let cfg = TrainConfig {
            epochs: 1500,
            batch_size: 1,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let ae = train_autoencoder(x.view(), &spec, &cfg).unwrap();
        assert!(ae.final_mse < 1e-4, "mse {}", ae.final_mse);
    }

    #[test]
    fn autoencoder_rejects_wrong_input_dim() {
        let x = array![[1.0, 2.0]];
        let spec = MlpSpec::new(vec![3, 2]).unwrap();
        assert!(train_autoencoder(x.view(), &spec, &TrainConfig::default()).is_err());
    }

    #[test]
    fn checkpoint_bytes_round_trip() {
        let model = MlpModel::init(&MlpSpec::new(vec![3, 5, 2]).unwrap(), 4);
        let mut bytes = Vec::new();
        model.encode_into(&mut bytes);
        let back = MlpModel::decode_from(&mut &bytes[..]).unwrap();
        assert_eq!(back, model);
        let mut cut = &bytes[..bytes.len() - 1];
        assert!(MlpModel::decode_from(&mut cut).is_err());
    }
}
