//! Fully connected ReLU network for scalar regression, trained with Adam.
//!
//! The network output is `offset + scale * net(x)`. Training sets `offset`
//! and `scale` to the target mean and standard deviation so the weights see a
//! standardized target; a freshly initialized model has offset 0 and scale 1.
//!
//! Per-sample loss is `(f(x) - y)^2 / 2` and a batch gradient is the mean of
//! the per-sample gradients. With step `t` counted from 1, every parameter
//! `p` with gradient `g` is updated as
//!
//! ```text
//! m = b1 * m + (1 - b1) * g
//! v = b2 * v + (1 - b2) * g * g
//! p -= step * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```
//!
//! layer by layer, weights before biases, in storage order.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::EncodedMatrix;
use crate::scalar::{self, Scalar};
use crate::seeding;

const INIT_STREAM: u64 = 0x1a1;
const SHUFFLE_STREAM: u64 = 0x5b1;

#[derive(Debug, Error, PartialEq)]
pub enum MlpError {
    #[error("expected {expected} inputs, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("inputs are not standardized")]
    NotStandardized,
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("matrix has no rows")]
    Empty,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T, E = MlpError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden_layers: vec![64, 32],
            activation: Activation::Relu,
            epochs: 200,
            batch_size: 64,
            step_size: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl MlpParams {
    fn validate(&self) -> Result<()> {
        let ok = self.hidden_layers.iter().all(|&w| w > 0)
            && self.epochs > 0
            && self.batch_size > 0
            && self.step_size > 0.0
            && self.step_size.is_finite()
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(MlpError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Affine map; `weights` is `n_out x n_in`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Layer<T> {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn apply(&self, input: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.n_in).zip(&self.bias).map(|(w, &b)| {
            let mut z = b;
            for (&wi, &xi) in w.iter().zip(input) {
                z += wi * xi;
            }
            z
        }));
    }

    fn cast<U: Scalar>(&self) -> Layer<U> {
        Layer {
            n_in: self.n_in,
            n_out: self.n_out,
            weights: self.weights.iter().map(|w| U::of(w.as_f64())).collect(),
            bias: self.bias.iter().map(|b| U::of(b.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MlpModel<T> {
    pub layers: Vec<Layer<T>>,
    pub output_offset: T,
    pub output_scale: T,
    pub params: MlpParams,
    /// Mean squared training error after each epoch.
    pub train_loss: Vec<T>,
}

/// Uniform weights in `±sqrt(6 / fan_in)` and zero biases.
pub fn init_mlp<T: Scalar>(input_width: usize, p: &MlpParams) -> MlpModel<T> {
    assert!(input_width >= 1, "input width must be positive");
    let mut rng = seeding::rng(p.seed, INIT_STREAM);
    let widths: Vec<usize> = std::iter::once(input_width)
        .chain(p.hidden_layers.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    let layers = widths
        .windows(2)
        .map(|w| {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = (6.0 / n_in as f64).sqrt();
            Layer {
                n_in,
                n_out,
                weights: (0..n_in * n_out).map(|_| T::of(rng.random_range(-bound..bound))).collect(),
                bias: vec![T::zero(); n_out],
            }
        })
        .collect();
    MlpModel {
        layers,
        output_offset: T::zero(),
        output_scale: T::one(),
        params: p.clone(),
        train_loss: Vec::new(),
    }
}

impl<T: Scalar> MlpModel<T> {
    pub fn input_width(&self) -> usize {
        self.layers[0].n_in
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(|l| l.n_out))
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_width() {
            return Err(MlpError::DimensionMismatch {
                expected: self.input_width(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-activations of every layer, the last one being the raw output.
    fn trace(&self, x: &[T]) -> Vec<Vec<T>> {
        let mut zs: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.n_out);
            layer.apply(&act, &mut z);
            if k + 1 < self.layers.len() {
                act.clear();
                act.extend(z.iter().map(|&v| v.max(T::zero())));
            }
            zs.push(z);
        }
        zs
    }

    /// Hidden-layer pre-activations, useful for avoiding ReLU kinks in checks.
    pub fn hidden_pre_activations(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x)?;
        let mut zs = self.trace(x);
        zs.pop();
        Ok(zs.concat())
    }

    fn cast<U: Scalar>(&self) -> MlpModel<U> {
        MlpModel {
            layers: self.layers.iter().map(Layer::cast).collect(),
            output_offset: U::of(self.output_offset.as_f64()),
            output_scale: U::of(self.output_scale.as_f64()),
            params: self.params.clone(),
            train_loss: self.train_loss.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Flattened parameters in update order.
    pub fn flat_params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    fn set_flat_params(&mut self, flat: &[T]) {
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("parameter count");
            }
        }
    }

    /// Adds the gradient of `scale_out^-2 * (f(x) - y)^2 / 2`, i.e. the loss
    /// on the standardized target, into `grad` (flat order) and returns the
    /// residual `f(x) - y`.
    fn accumulate_grad(&self, x: &[T], y: T, grad: &mut [T], standardized: bool) -> T {
        let zs = self.trace(x);
        let out = zs.last().expect("output layer")[0];
        let pred = self.output_offset + self.output_scale * out;
        let resid = pred - y;
        // d loss / d out
        let mut delta = vec![if standardized {
            resid / self.output_scale
        } else {
            resid * self.output_scale
        }];
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.weights.len() + l.bias.len();
        }
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let base = offsets[k];
            let input: Vec<T> = if k == 0 {
                x.to_vec()
            } else {
                zs[k - 1].iter().map(|&v| v.max(T::zero())).collect()
            };
            let (gw, gb) = grad[base..base + layer.weights.len() + layer.n_out].split_at_mut(layer.weights.len());
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                for (g, &xi) in gw[o * layer.n_in..(o + 1) * layer.n_in].iter_mut().zip(&input) {
                    *g += d * xi;
                }
                gb[o] += d;
            }
            if k > 0 {
                let mut prev = vec![T::zero(); layer.n_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    for (p, &w) in prev.iter_mut().zip(&layer.weights[o * layer.n_in..(o + 1) * layer.n_in]) {
                        *p += d * w;
                    }
                }
                for (p, &z) in prev.iter_mut().zip(&zs[k - 1]) {
                    if !(z > T::zero()) {
                        *p = T::zero();
                    }
                }
                delta = prev;
            }
        }
        resid
    }

    /// Gradient of `(f(x) - y)^2 / 2` with respect to the flat parameters.
    pub fn gradient(&self, x: &[T], y: T) -> Result<Vec<T>> {
        self.check(x)?;
        let mut g = vec![T::zero(); self.n_params()];
        self.accumulate_grad(x, y, &mut g, false);
        Ok(g)
    }
}

pub fn forward<T: Scalar>(model: &MlpModel<T>, x: &[T]) -> Result<T> {
    model.check(x)?;
    let zs = model.trace(x);
    Ok(model.output_offset + model.output_scale * zs.last().expect("output layer")[0])
}

pub fn predict_mlp<T: Scalar>(model: &MlpModel<T>, m: &EncodedMatrix<T>) -> Result<Vec<T>> {
    if m.n_cols() != model.input_width() {
        return Err(MlpError::DimensionMismatch {
            expected: model.input_width(),
            got: m.n_cols(),
        });
    }
    m.rows().map(|r| forward(model, r)).collect()
}

fn mse<T: Scalar>(model: &MlpModel<T>, m: &EncodedMatrix<T>) -> T {
    let n = T::from_usize_lossy(m.n_rows());
    m.rows()
        .zip(m.y())
        .map(|(r, &y)| {
            let e = model.output_offset + model.output_scale * model.trace(r).last().expect("output")[0] - y;
            e * e
        })
        .sum::<T>()
        / n
}

/// Mini-batch Adam on squared error. Batches come from a fresh seeded
/// shuffle each epoch; a trailing short batch is kept.
pub fn train_mlp<T: Scalar>(m: &EncodedMatrix<T>, p: &MlpParams) -> Result<MlpModel<T>> {
    p.validate()?;
    if m.n_rows() == 0 {
        return Err(MlpError::Empty);
    }
    if !m.is_standardized() {
        return Err(MlpError::NotStandardized);
    }
    let mut model = init_mlp::<T>(m.n_cols(), p);
    let y = m.y();
    model.output_offset = scalar::mean(y);
    let sd = scalar::population_sd(y);
    model.output_scale = if sd > T::zero() { sd } else { T::one() };

    let n_params = model.n_params();
    let mut theta = model.flat_params();
    let mut m1 = vec![T::zero(); n_params];
    let mut m2 = vec![T::zero(); n_params];
    let mut grad = vec![T::zero(); n_params];
    let (b1, b2) = (T::of(p.adam_beta1), T::of(p.adam_beta2));
    let (lr, eps) = (T::of(p.step_size), T::of(p.adam_eps));
    let mut b1t = T::one();
    let mut b2t = T::one();
    let mut rng = seeding::rng(p.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..m.n_rows()).collect();
    for epoch in 0..p.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(p.batch_size) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            for &i in batch {
                model.accumulate_grad(m.row(i), y[i], &mut grad, true);
            }
            let inv = T::one() / T::from_usize_lossy(batch.len());
            b1t *= b1;
            b2t *= b2;
            let (c1, c2) = (T::one() - b1t, T::one() - b2t);
            for k in 0..n_params {
                let g = grad[k] * inv;
                m1[k] = b1 * m1[k] + (T::one() - b1) * g;
                m2[k] = b2 * m2[k] + (T::one() - b2) * g * g;
                theta[k] -= lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
            }
            model.set_flat_params(&theta);
        }
        let loss = mse(&model, m);
        if !loss.is_finite() {
            return Err(MlpError::DivergenceDetected { epoch });
        }
        model.train_loss.push(loss);
    }
    Ok(model)
}

/// Largest relative gap between the backprop gradient and central finite
/// differences (step 1e-5) of `(f(x) - y)^2 / 2`, over all parameters.
/// Evaluated in double precision whatever the model's scalar type.
pub fn grad_check<T: Scalar>(model: &MlpModel<T>, x: &[T], y: T) -> Result<f64> {
    let model: MlpModel<f64> = model.cast();
    let x: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
    let y = y.as_f64();
    let analytic = model.gradient(&x, y)?;
    let theta = model.flat_params();
    let loss = |probe: &MlpModel<f64>| {
        let e = forward(probe, &x).expect("checked width") - y;
        0.5 * e * e
    };
    let h = 1e-5;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let mut t = theta.clone();
        t[k] = theta[k] + h;
        probe.set_flat_params(&t);
        let up = loss(&probe);
        t[k] = theta[k] - h;
        probe.set_flat_params(&t);
        let down = loss(&probe);
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(hidden: Vec<usize>) -> MlpParams {
        MlpParams {
            hidden_layers: hidden,
            ..Default::default()
        }
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let a = init_mlp::<f64>(5, &params(vec![64, 32]));
        let b = init_mlp::<f64>(5, &params(vec![64, 32]));
        assert_eq!(a, b);
        assert_eq!(a.widths(), vec![5, 64, 32, 1]);
        let bound = (6.0f64 / 5.0).sqrt();
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= bound));
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let lin = init_mlp::<f64>(3, &params(vec![]));
        assert_eq!(lin.widths(), vec![3, 1]);
        let other = init_mlp::<f64>(5, &MlpParams { seed: 1, ..params(vec![64, 32]) });
        assert_ne!(a, other);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut m = init_mlp::<f64>(3, &params(vec![4]));
        let zeros = vec![0.0; m.n_params()];
        m.set_flat_params(&zeros);
        assert_eq!(forward(&m, &[1.0, -2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(
            forward(&m, &[1.0]),
            Err(MlpError::DimensionMismatch { expected: 3, got: 1 })
        );
    }

    #[test]
    fn linear_reduction() {
        let mut m = init_mlp::<f64>(2, &params(vec![]));
        m.layers[0].weights = vec![2.0, -3.0];
        m.layers[0].bias = vec![0.5];
        assert_eq!(forward(&m, &[1.5, 2.0]).unwrap(), 2.0 * 1.5 - 3.0 * 2.0 + 0.5);
    }

    #[test]
    fn hand_traced_two_two_one() {
        let mut m = init_mlp::<f64>(2, &params(vec![2]));
        m.layers[0].weights = vec![0.5, -1.0, 2.0, 0.25];
        m.layers[0].bias = vec![0.1, -0.2];
        m.layers[1].weights = vec![1.5, -0.7];
        m.layers[1].bias = vec![0.3];
        let x = [2.0, 1.0];
        // h1 = relu(1.0 - 1.0 + 0.1) = 0.1; h2 = relu(4.0 + 0.25 - 0.2) = 4.05
        let expected = 1.5 * 0.1 - 0.7 * 4.05 + 0.3;
        assert!((forward(&m, &x).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn fresh_network_passes_grad_check() {
        let m = init_mlp::<f64>(4, &MlpParams { seed: 7, ..params(vec![3]) });
        let x = [0.3, -1.2, 0.8, 2.0];
        let kinks = m.hidden_pre_activations(&x).unwrap();
        assert!(kinks.iter().all(|z| z.abs() > 1e-6));
        assert!(grad_check(&m, &x, 1.7).unwrap() < 1e-4);
    }

    #[test]
    fn zero_input_gives_zero_first_layer_weight_gradient() {
        let mut m = init_mlp::<f64>(3, &params(vec![2]));
        let zeros = vec![0.0; m.n_params()];
        m.set_flat_params(&zeros);
        let g = m.gradient(&[0.0; 3], 0.0).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_gradient_is_closed_form() {
        let mut m = init_mlp::<f64>(3, &params(vec![]));
        m.layers[0].weights = vec![0.2, -0.4, 1.1];
        m.layers[0].bias = vec![0.05];
        let x = [1.0, 2.0, -0.5];
        let y = 0.7;
        let r = 0.2 - 0.8 - 0.55 + 0.05 - y;
        let g = m.gradient(&x, y).unwrap();
        let expected = [r * x[0], r * x[1], r * x[2], r];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    fn standardized_linear(n: usize) -> EncodedMatrix<f64> {
        let mut rng = seeding::rng(11, 0);
        let raw: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let mut cols: Vec<Vec<f64>> = (0..3).map(|j| raw.iter().map(|r| r[j]).collect()).collect();
        for c in &mut cols {
            let (mu, sd) = (scalar::mean(c), scalar::population_sd(c));
            c.iter_mut().for_each(|v| *v = (*v - mu) / sd);
        }
        let rows: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        let y = rows.iter().map(|r| 3.0 * r[0] - 2.0 * r[1] + 0.5 * r[2] + 10.0).collect();
        EncodedMatrix::from_rows(&rows, y, vec!["a".into(), "b".into(), "c".into()]).unwrap()
    }

    #[test]
    fn convex_case_fits() {
        let m = standardized_linear(256);
        let p = MlpParams {
            hidden_layers: vec![],
            epochs: 400,
            step_size: 1e-2,
            ..Default::default()
        };
        let model = train_mlp(&m, &p).unwrap();
        let pred = predict_mlp(&model, &m).unwrap();
        let ybar = scalar::mean(m.y());
        let ss_res: f64 = pred.iter().zip(m.y()).map(|(a, b)| (a - b).powi(2)).sum();
        let ss_tot: f64 = m.y().iter().map(|b| (b - ybar).powi(2)).sum();
        assert!(1.0 - ss_res / ss_tot >= 0.999);
    }

    #[test]
    fn training_is_deterministic() {
        let m = standardized_linear(100);
        let p = MlpParams { epochs: 5, hidden_layers: vec![8], ..Default::default() };
        assert_eq!(train_mlp(&m, &p).unwrap(), train_mlp(&m, &p).unwrap());
    }

    #[test]
    fn rejects_raw_inputs() {
        let m = EncodedMatrix::from_rows(&[vec![5.0], vec![7.0]], vec![1.0, 2.0], vec!["x".into()]).unwrap();
        assert_eq!(train_mlp(&m, &MlpParams::default()), Err(MlpError::NotStandardized));
    }

    #[test]
    fn huge_step_diverges() {
        let m = standardized_linear(64);
        let p = MlpParams { step_size: 1e300, epochs: 3, hidden_layers: vec![4], ..Default::default() };
        assert!(matches!(train_mlp(&m, &p), Err(MlpError::DivergenceDetected { .. })));
    }
}
