//! Small feedforward port classifier.
//!
//! Parameters live in one flat buffer, layer by layer: the `out x in` weight
//! matrix (row-major) followed by the `out` biases. Gradients use the same
//! layout, so an SGD step is a single axpy over the buffer.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Dataset;
use crate::error::{AedError, Result};
use crate::seed;

const CHECKPOINT_MAGIC: &[u8; 7] = b"AEDCKPT";
const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub init_scale: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 30,
            init_scale: 0.2,
            seed: 0,
            hidden: vec![64, 32],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(AedError::config(
                "train.learning_rate",
                "must be finite and nonnegative",
            ));
        }
        if self.batch_size == 0 {
            return Err(AedError::config("train.batch_size", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(AedError::config("train.epochs", "must be positive"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(AedError::config("train.init_scale", "must be finite and nonnegative"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(AedError::config(
                "train.hidden",
                "needs at least one nonzero hidden layer",
            ));
        }
        Ok(())
    }

    pub fn dims(&self, n_features: usize, n_ports: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(n_features);
        dims.extend_from_slice(&self.hidden);
        dims.push(n_ports);
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Gradient buffer with the same layout as [`PredictorModel`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 3 {
        return Err(AedError::config(
            "model.dims",
            "need input, at least one hidden layer and output",
        ));
    }
    if dims.contains(&0) {
        return Err(AedError::config("model.dims", "layer widths must be positive"));
    }
    Ok(())
}

impl PredictorModel {
    /// Uniform weights in `[-init_scale, init_scale]`, zero biases.
    pub fn init(dims: &[usize], init_scale: f64, seed: u64) -> Result<Self> {
        check_dims(dims)?;
        let mut rng = seed::rng(seed);
        let mut params = Vec::with_capacity(param_count(dims));
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            for _ in 0..fan_in * fan_out {
                let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
                params.push(u * init_scale);
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    /// Builds a model from explicit parameters; shallow networks are allowed here
    /// so that closed-form cases can be checked.
    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(AedError::config("model.dims", "need at least input and output widths"));
        }
        if params.len() != param_count(dims) {
            return Err(AedError::argument(format!(
                "expected {} parameters, got {}",
                param_count(dims),
                params.len()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.dims[..=layer])
    }

    /// Weight matrix of `layer`, `out x in` row-major.
    pub fn weights(&self, layer: usize) -> &[f64] {
        let off = self.layer_offset(layer);
        &self.params[off..off + self.dims[layer] * self.dims[layer + 1]]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        let off = self.layer_offset(layer) + self.dims[layer] * self.dims[layer + 1];
        &self.params[off..off + self.dims[layer + 1]]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(AedError::argument(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.output_dim() {
            return Err(AedError::argument(format!(
                "label {label} out of range for {} ports",
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Fills `acts[l]` with the activation entering layer `l`; the last entry
    /// holds the logits.
    fn forward_into(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) {
        let layers = self.n_layers();
        acts.resize_with(layers + 1, Vec::new);
        acts[0].clear();
        acts[0].extend_from_slice(x);
        let mut off = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let (prev, next) = acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            out.clear();
            for (row, &bias) in w.chunks_exact(fan_in).zip(b) {
                let z = bias + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                out.push(if l + 1 < layers { z.tanh() } else { z });
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut acts = Vec::new();
        self.forward_into(x, &mut acts);
        Ok(acts.pop().unwrap())
    }

    /// Argmax of the logits, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Backpropagates one sample. Accumulates `scale * dL/dparams` into
    /// `grads` when given and returns the per-sample loss; writes `dL/dx` into
    /// `input_grad` when given.
    fn backprop_sample(
        &self,
        x: &[f64],
        label: usize,
        scale: f64,
        ws: &mut Workspace,
        mut grads: Option<&mut [f64]>,
        input_grad: Option<&mut Vec<f64>>,
    ) -> f64 {
        let layers = self.n_layers();
        self.forward_into(x, &mut ws.acts);
        let logits = &ws.acts[layers];
        let probs = softmax(logits);
        let loss = log_sum_exp(logits) - logits[label];

        ws.delta.clear();
        ws.delta.extend_from_slice(&probs);
        ws.delta[label] -= 1.0;

        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            if let Some(g) = grads.as_deref_mut() {
                let gw = &mut g[off..off + fan_in * fan_out + fan_out];
                let (gw, gb) = gw.split_at_mut(fan_in * fan_out);
                for (o, &d) in ws.delta.iter().enumerate() {
                    let sd = scale * d;
                    for (gv, &a) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(&ws.acts[l]) {
                        *gv += sd * a;
                    }
                    gb[o] += sd;
                }
            }
            if l == 0 && input_grad.is_none() {
                break;
            }
            let w = &self.params[off..off + fan_in * fan_out];
            ws.back.clear();
            ws.back.resize(fan_in, 0.0);
            for (o, &d) in ws.delta.iter().enumerate() {
                for (bv, &wv) in ws.back.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *bv += wv * d;
                }
            }
            if l > 0 {
                for (bv, &a) in ws.back.iter_mut().zip(&ws.acts[l]) {
                    *bv *= 1.0 - a * a;
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.back);
        }
        if let Some(ig) = input_grad {
            ig.clear();
            ig.extend_from_slice(&ws.delta);
        }
        loss
    }

    /// Mean softmax cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad(&self, xs: &[&[f64]], labels: &[usize]) -> Result<(f64, Gradients)> {
        if xs.is_empty() || xs.len() != labels.len() {
            return Err(AedError::argument("batch must be nonempty with one label per sample"));
        }
        for (x, &l) in xs.iter().zip(labels) {
            self.check_input(x)?;
            self.check_label(l)?;
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut ws = Workspace::default();
        let scale = 1.0 / xs.len() as f64;
        let mut loss = 0.0;
        for (x, &l) in xs.iter().zip(labels) {
            loss += self.backprop_sample(x, l, scale, &mut ws, Some(&mut grads), None);
        }
        Ok((loss * scale, Gradients(grads)))
    }

    /// Mean loss only.
    pub fn loss(&self, xs: &[&[f64]], labels: &[usize]) -> Result<f64> {
        if xs.is_empty() || xs.len() != labels.len() {
            return Err(AedError::argument("batch must be nonempty with one label per sample"));
        }
        let mut total = 0.0;
        for (x, &l) in xs.iter().zip(labels) {
            self.check_label(l)?;
            let logits = self.forward(x)?;
            total += log_sum_exp(&logits) - logits[l];
        }
        Ok(total / xs.len() as f64)
    }

    /// Gradient of the single-sample loss with respect to the input features.
    pub fn input_grad(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_label(label)?;
        let mut ws = Workspace::default();
        let mut g = Vec::new();
        self.backprop_sample(x, label, 1.0, &mut ws, None, Some(&mut g));
        Ok(g)
    }

    pub(crate) fn input_grad_with(&self, x: &[f64], label: usize, ws: &mut Workspace, out: &mut Vec<f64>) {
        self.backprop_sample(x, label, 1.0, ws, None, Some(out));
    }

    pub(crate) fn predict_with(&self, x: &[f64], ws: &mut Workspace) -> usize {
        self.forward_into(x, &mut ws.acts);
        argmax(&ws.acts[self.n_layers()])
    }

    pub fn apply_gradient(&mut self, grads: &Gradients, learning_rate: f64) {
        for (p, g) in self.params.iter_mut().zip(&grads.0) {
            *p -= learning_rate * g;
        }
    }

    /// Writes the versioned binary checkpoint: magic, version byte, layer count,
    /// widths, parameter count, then little-endian `f64` parameters.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[CHECKPOINT_VERSION])?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let bad = |e: std::io::Error| AedError::argument(format!("truncated checkpoint: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic[..7] != CHECKPOINT_MAGIC {
            return Err(AedError::argument("not a model checkpoint"));
        }
        if magic[7] != CHECKPOINT_VERSION {
            return Err(AedError::argument(format!(
                "unsupported checkpoint version {}",
                magic[7]
            )));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(bad)?;
        let n_dims = u32::from_le_bytes(b4) as usize;
        if n_dims > 64 {
            return Err(AedError::argument("implausible layer count in checkpoint"));
        }
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            r.read_exact(&mut b4).map_err(bad)?;
            dims.push(u32::from_le_bytes(b4) as usize);
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(bad)?;
        let n_params = u64::from_le_bytes(b8) as usize;
        if dims.len() < 2 || n_params != param_count(&dims) {
            return Err(AedError::argument(
                "checkpoint parameter count does not match its widths",
            ));
        }
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            r.read_exact(&mut b8).map_err(bad)?;
            params.push(f64::from_le_bytes(b8));
        }
        Self::from_params(&dims, params)
    }
}

/// Reusable scratch buffers for forward/backward passes.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    back: Vec<f64>,
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Visits the dataset once in a shuffled order, yielding minibatches of indices.
pub(crate) fn shuffled_batches<R: Rng>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// One pass of plain minibatch SGD. Returns the mean minibatch loss, each
/// measured before that batch's update.
pub fn sgd_epoch<R: Rng>(model: &mut PredictorModel, data: &Dataset, cfg: &TrainConfig, rng: &mut R) -> Result<f64> {
    if data.is_empty() {
        return Err(AedError::argument("cannot train on an empty dataset"));
    }
    let batches = shuffled_batches(data.len(), cfg.batch_size, rng);
    let mut total = 0.0;
    for batch in &batches {
        let xs: Vec<&[f64]> = batch.iter().map(|&i| data.row(i)).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
        let (loss, grads) = model.loss_and_grad(&xs, &labels)?;
        model.apply_gradient(&grads, cfg.learning_rate);
        total += loss;
    }
    Ok(total / batches.len() as f64)
}

/// Maps a sample index and its features to the input shown to the model.
pub type InputTransform<'a> = &'a dyn Fn(usize, &[f64]) -> Vec<f64>;

/// Fraction of samples whose prediction matches the label. The optional
/// transform receives the sample index and its features and returns the input
/// actually shown to the model.
pub fn evaluate_accuracy(model: &PredictorModel, data: &Dataset, transform: Option<InputTransform<'_>>) -> Result<f64> {
    if data.is_empty() {
        return Err(AedError::argument("cannot evaluate on an empty dataset"));
    }
    let mut ws = Workspace::default();
    let mut hits = 0usize;
    for i in 0..data.len() {
        let pred = match transform {
            Some(f) => {
                let x = f(i, data.row(i));
                model.check_input(&x)?;
                model.predict_with(&x, &mut ws)
            }
            None => model.predict_with(data.row(i), &mut ws),
        };
        if pred == data.labels[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let xs = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let ys = (0..n).map(|_| rng.random_range(0..classes)).collect();
        (xs, ys)
    }

    // Plain nested-loop forward pass, independent of the flat-buffer kernels.
    fn naive_forward(model: &PredictorModel, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let layers = model.dims().len() - 1;
        for l in 0..layers {
            let w = model.weights(l);
            let b = model.biases(l);
            let (fan_in, fan_out) = (model.dims()[l], model.dims()[l + 1]);
            let mut z = vec![0.0; fan_out];
            for o in 0..fan_out {
                let mut s = b[o];
                for i in 0..fan_in {
                    s += w[o * fan_in + i] * a[i];
                }
                z[o] = if l + 1 < layers { s.tanh() } else { s };
            }
            a = z;
        }
        a
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn init_contract() {
        let m = PredictorModel::init(&[4, 3, 2], 0.0, 1).unwrap();
        assert!(m.params().iter().all(|&p| p == 0.0));
        assert_eq!(
            PredictorModel::init(&[4, 3, 2], 0.5, 7).unwrap(),
            PredictorModel::init(&[4, 3, 2], 0.5, 7).unwrap()
        );
        let m = PredictorModel::init(&[4, 3, 2], 0.5, 7).unwrap();
        assert_eq!(m.weights(0).len(), 3 * 4);
        assert_eq!(m.weights(1).len(), 2 * 3);
        assert!(m.biases(0).iter().chain(m.biases(1)).all(|&b| b == 0.0));
        assert!(m.params().iter().all(|p| p.abs() <= 0.5));
        assert!(PredictorModel::init(&[4, 2], 0.5, 7).is_err());
        assert!(PredictorModel::init(&[4, 0, 2], 0.5, 7).is_err());
    }

    #[test]
    fn forward_examples() {
        let zero = PredictorModel::init(&[6, 5, 4], 0.0, 0).unwrap();
        let logits = zero.forward(&[1.0; 6]).unwrap();
        assert_eq!(logits, vec![0.0; 4]);
        assert!(softmax(&logits).iter().all(|&p| p == 0.25));

        let lin = PredictorModel::from_params(&[1, 1], vec![2.0, 1.0]).unwrap();
        assert_eq!(lin.forward(&[3.0]).unwrap(), vec![7.0]);
        assert!(lin.forward(&[1.0, 2.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = PredictorModel::init(&[4, 3, 2], 1.0, 3).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = m.forward(&x).unwrap();
            let want = naive_forward(&m, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_model_loss_is_log_ports() {
        let m = PredictorModel::init(&[3, 4, 8], 0.0, 0).unwrap();
        let xs = [vec![1.0, 2.0, 3.0], vec![0.0, -1.0, 0.5]];
        let rows: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let (loss, grads) = m.loss_and_grad(&rows, &[2, 7]).unwrap();
        assert!((loss - 8f64.ln()).abs() < 1e-15);
        assert_eq!(grads.0.len(), m.params().len());
        assert!(m.loss_and_grad(&rows, &[2, 8]).is_err());
        assert!(m.loss_and_grad(&[], &[]).is_err());
    }

    #[test]
    fn duplicated_batch_has_same_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = PredictorModel::init(&[5, 6, 3], 0.8, 4).unwrap();
        let (xs, ys) = random_batch(&mut rng, 7, 5, 3);
        let rows: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let (l1, g1) = m.loss_and_grad(&rows, &ys).unwrap();
        let rows2: Vec<&[f64]> = rows.iter().chain(rows.iter()).cloned().collect();
        let ys2: Vec<usize> = ys.iter().chain(ys.iter()).cloned().collect();
        let (l2, g2) = m.loss_and_grad(&rows2, &ys2).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.0.iter().zip(&g2.0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut m = PredictorModel::init(&[6, 5, 4, 3], 0.7, 9).unwrap();
        let (xs, ys) = random_batch(&mut rng, 5, 6, 3);
        let rows: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let (_, grads) = m.loss_and_grad(&rows, &ys).unwrap();
        let h = 1e-5;
        for k in 0..m.params().len() {
            let orig = m.params()[k];
            m.params_mut()[k] = orig + h;
            let up = m.loss(&rows, &ys).unwrap();
            m.params_mut()[k] = orig - h;
            let down = m.loss(&rows, &ys).unwrap();
            m.params_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(rel_err(grads.0[k], fd) < 1e-4, "param {k}: {} vs {fd}", grads.0[k]);
        }
    }

    #[test]
    fn input_gradient_examples() {
        let zero = PredictorModel::init(&[3, 4, 2], 0.0, 0).unwrap();
        assert_eq!(zero.input_grad(&[1.0, -1.0, 2.0], 1).unwrap(), vec![0.0; 3]);

        // Single affine layer, 2 ports: dL/dx = W^T (softmax - onehot).
        let w = [0.5, -1.0, 2.0, 0.25];
        let b = [0.1, -0.3];
        let mut p = w.to_vec();
        p.extend_from_slice(&b);
        let lin = PredictorModel::from_params(&[2, 2], p).unwrap();
        let x = [0.4, -0.7];
        let z0: f64 = 0.5 * 0.4 + -1.0 * -0.7 + 0.1;
        let z1: f64 = 2.0 * 0.4 + 0.25 * -0.7 - 0.3;
        let p0 = 1.0 / (1.0 + (z1 - z0).exp());
        let p1 = 1.0 - p0;
        // label 1: residual = [p0, p1 - 1]
        let want = [0.5 * p0 + 2.0 * (p1 - 1.0), -p0 + 0.25 * (p1 - 1.0)];
        let got = lin.input_grad(&x, 1).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = PredictorModel::init(&[6, 7, 4], 0.9, 13).unwrap();
        for _ in 0..10 {
            let (xs, ys) = random_batch(&mut rng, 1, 6, 4);
            let g = m.input_grad(&xs[0], ys[0]).unwrap();
            for k in 0..6 {
                let mut up = xs[0].clone();
                up[k] += 1e-5;
                let mut down = xs[0].clone();
                down[k] -= 1e-5;
                let fd = (m.loss(&[&up], &ys).unwrap() - m.loss(&[&down], &ys).unwrap()) / 2e-5;
                assert!(rel_err(g[k], fd) < 1e-4);
            }
        }
    }

    fn toy_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let label = rng.random_range(0..2usize);
            let c = if label == 0 { -1.0 } else { 1.0 };
            features.push(c + rng.random_range(-0.5..0.5));
            features.push(rng.random_range(-1.0..1.0));
            labels.push(label);
        }
        Dataset::new(2, 2, features, labels).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let data = toy_dataset(64, 1);
        let mut m = PredictorModel::init(&[2, 4, 2], 0.5, 3).unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let loss = sgd_epoch(&mut m, &data, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m, before);
        let rows: Vec<&[f64]> = (0..data.len()).map(|i| data.row(i)).collect();
        let eval_loss = m.loss(&rows, &data.labels).unwrap();
        assert!((loss - eval_loss).abs() < 1e-12);
    }

    #[test]
    fn full_batch_epoch_is_one_gradient_step() {
        let data = toy_dataset(40, 2);
        let mut m = PredictorModel::init(&[2, 4, 2], 0.5, 3).unwrap();
        let mut expect = m.clone();
        let rows: Vec<&[f64]> = (0..data.len()).map(|i| data.row(i)).collect();
        let (_, g) = expect.loss_and_grad(&rows, &data.labels).unwrap();
        expect.apply_gradient(&g, 0.1);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            batch_size: 40,
            ..TrainConfig::default()
        };
        sgd_epoch(&mut m, &data, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for (a, b) in m.params().iter().zip(expect.params()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn epochs_are_reproducible() {
        let data = toy_dataset(100, 3);
        let cfg = TrainConfig {
            batch_size: 10,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = PredictorModel::init(&[2, 4, 2], 0.5, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            for _ in 0..2 {
                sgd_epoch(&mut m, &data, &cfg, &mut rng).unwrap();
            }
            m
        };
        assert_eq!(run().params(), run().params());
    }

    #[test]
    fn loss_mostly_decreases_on_separable_data() {
        let data = toy_dataset(200, 4);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let mut m = PredictorModel::init(&[2, 8, 2], 0.3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let losses: Vec<f64> = (0..51)
            .map(|_| sgd_epoch(&mut m, &data, &cfg, &mut rng).unwrap())
            .collect();
        let non_increasing = losses.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(non_increasing >= 45, "{non_increasing} of 50");
    }

    #[test]
    fn accuracy_examples() {
        let data = toy_dataset(1, 5);
        let mut m = PredictorModel::init(&[2, 4, 2], 0.5, 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.5,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            sgd_epoch(&mut m, &data, &cfg, &mut rng).unwrap();
        }
        assert_eq!(evaluate_accuracy(&m, &data, None).unwrap(), 1.0);

        let wrong = Dataset::new(2, 2, data.features.clone(), vec![1 - data.labels[0]]).unwrap();
        assert_eq!(evaluate_accuracy(&m, &wrong, None).unwrap(), 0.0);

        // Zero model always answers port 0: accuracy is the port-0 label share.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let labels: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..8)).collect();
        let port0 = labels.iter().filter(|&&l| l == 0).count() as f64 / labels.len() as f64;
        let big = Dataset::new(1, 8, vec![0.5; 10_000], labels).unwrap();
        let zero = PredictorModel::init(&[1, 3, 8], 0.0, 0).unwrap();
        let acc = evaluate_accuracy(&zero, &big, None).unwrap();
        assert_eq!(acc, port0);
        assert!((acc - 0.125).abs() <= 0.02);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let m = PredictorModel::init(&[32, 64, 32, 8], 0.3, 77).unwrap();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        let back = PredictorModel::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.dims(), m.dims());
        assert!(back
            .params()
            .iter()
            .zip(m.params())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(PredictorModel::read_checkpoint(&buf[..20]).is_err());
        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(PredictorModel::read_checkpoint(corrupt.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in prop::collection::vec(-50.0f64..50.0, 1..16)) {
            let s: f64 = softmax(&logits).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
