//! Bias-free (optionally biased) MLP with exact forward and backward passes.
//!
//! Layer `l` computes `h^(l) = a_l * W^(l) x^(l-1) (+ b^(l))`; hidden layers
//! apply the activation, the output layer is linear. With the mean readout
//! the final pre-readout is additionally divided by `n_{L-1}` so that the
//! last weight matrix enters the output as `n^{-1} W x`.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            // subgradient at 0 is fixed to 0 so base and widened runs agree
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Sum,
    Mean,
}

/// Architecture description. `widths` has length `depth + 1` (n_0 .. n_L).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub readout: Readout,
    /// Per-layer trainable flags; frozen layers receive no updates.
    pub trainable: Vec<bool>,
    #[serde(default)]
    pub bias: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, readout: Readout) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "depth must be >= 2, got {}",
                widths.len().saturating_sub(1)
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidParameter("zero width".into()));
        }
        let depth = widths.len() - 1;
        Ok(MlpSpec { widths, activation, readout, trainable: vec![true; depth], bias: false })
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn d_in(&self) -> usize {
        self.widths[0]
    }

    pub fn d_out(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Scale applied to the final layer's pre-readout.
    pub fn readout_scale(&self) -> f64 {
        match self.readout {
            Readout::Sum => 1.0,
            Readout::Mean => 1.0 / self.widths[self.widths.len() - 2] as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub spec: MlpSpec,
    /// Layer `l` is `widths[l+1] x widths[l]`.
    pub weights: Vec<Mat>,
    /// Hidden biases plus output bias; all-zero length-0 vecs when disabled.
    pub biases: Vec<Vec<f64>>,
    /// Per-layer weight multiplier `a_l` (the trained parameter is `W`, the
    /// effective weight is `a_l * W`). All ones unless a rescaled
    /// parametrization is being exercised.
    pub multipliers: Vec<f64>,
}

impl MlpModel {
    pub fn zeros(spec: MlpSpec) -> Self {
        let depth = spec.depth();
        let weights =
            (0..depth).map(|l| Mat::zeros(spec.widths[l + 1], spec.widths[l])).collect();
        let biases = if spec.bias {
            (0..depth).map(|l| vec![0.0; spec.widths[l + 1]]).collect()
        } else {
            (0..depth).map(|_| Vec::new()).collect()
        };
        let multipliers = vec![1.0; depth];
        MlpModel { spec, weights, biases, multipliers }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let d = self.spec.depth();
        if self.weights.len() != d || self.biases.len() != d || self.multipliers.len() != d {
            return Err(Error::ShapeMismatch("layer count".into()));
        }
        for l in 0..d {
            let w = &self.weights[l];
            if w.rows != self.spec.widths[l + 1]
                || w.cols != self.spec.widths[l]
                || w.data.len() != w.rows * w.cols
            {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l}: {}x{} ({} values) vs spec {}x{}",
                    w.rows,
                    w.cols,
                    w.data.len(),
                    self.spec.widths[l + 1],
                    self.spec.widths[l]
                )));
            }
            if self.spec.bias && self.biases[l].len() != self.spec.widths[l + 1] {
                return Err(Error::ShapeMismatch(format!("bias {l}")));
            }
        }
        Ok(())
    }

    /// Forward pass; returns the output and the cached pre/post activations
    /// needed by [`MlpModel::backward`].
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.spec.d_in() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} vs d_in {}",
                input.len(),
                self.spec.d_in()
            )));
        }
        let depth = self.spec.depth();
        let mut pre = Vec::with_capacity(depth);
        let mut post = Vec::with_capacity(depth + 1);
        post.push(input.to_vec());
        for l in 0..depth {
            let scale = if l + 1 == depth {
                self.multipliers[l] * self.spec.readout_scale()
            } else {
                self.multipliers[l]
            };
            let mut h = self.weights[l].matvec_scaled(&post[l], scale);
            if self.spec.bias {
                for (hi, bi) in h.iter_mut().zip(&self.biases[l]) {
                    *hi += bi;
                }
            }
            let x = if l + 1 == depth {
                h.clone()
            } else {
                h.iter().map(|&v| self.spec.activation.apply(v)).collect()
            };
            pre.push(h);
            post.push(x);
        }
        let out = post.last().unwrap().clone();
        Ok((out, ForwardCache { pre, post }))
    }

    /// Backward pass given `loss_grad = dL/d output`.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &[f64]) -> Result<BackpropResult> {
        let depth = self.spec.depth();
        if loss_grad.len() != self.spec.d_out() {
            return Err(Error::ShapeMismatch("loss_grad length".into()));
        }
        if cache.pre.len() != depth {
            return Err(Error::ShapeMismatch("cache depth".into()));
        }
        let mut d_weights = Vec::with_capacity(depth);
        let mut d_biases = Vec::with_capacity(depth);
        let mut d_pre = vec![Vec::new(); depth];
        let mut d_post = vec![Vec::new(); depth];

        let mut dh: Vec<f64> = loss_grad.to_vec();
        for l in (0..depth).rev() {
            let scale = if l + 1 == depth {
                self.multipliers[l] * self.spec.readout_scale()
            } else {
                self.multipliers[l]
            };
            // dW = scale * dh (x^(l-1))^T, db = dh
            let mut dw = Mat::zeros(self.weights[l].rows, self.weights[l].cols);
            dw.add_outer_scaled(&dh, &cache.post[l], scale);
            d_biases.push(if self.spec.bias { dh.clone() } else { Vec::new() });
            d_pre[l] = dh.clone();
            if l > 0 {
                let dx = self.weights[l].matvec_t_scaled(&dh, scale);
                d_post[l - 1] = dx.clone();
                dh = dx
                    .iter()
                    .zip(&cache.pre[l - 1])
                    .map(|(dxi, hi)| dxi * self.spec.activation.derivative(*hi))
                    .collect();
            }
            d_weights.push(dw);
        }
        d_weights.reverse();
        d_biases.reverse();
        Ok(BackpropResult { d_weights, d_biases, d_pre, d_post })
    }
}

/// Cached activations from a forward pass: `pre[l] = h^(l+1)`,
/// `post[0] = input`, `post[l+1] = x^(l+1)`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct BackpropResult {
    pub d_weights: Vec<Mat>,
    pub d_biases: Vec<Vec<f64>>,
    /// dh^(l+1) per layer.
    pub d_pre: Vec<Vec<f64>>,
    /// dx^(l+1) per hidden layer.
    pub d_post: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Half sum of squared errors, so dL/dy = y - target. This is the loss
    /// derivative convention the infinite-width recursions assume.
    Mse,
    /// Softmax cross entropy against a one-hot (or probability) target.
    CrossEntropy,
}

impl Loss {
    pub fn value(self, output: &[f64], target: &[f64]) -> f64 {
        match self {
            Loss::Mse => {
                0.5 * output.iter().zip(target).map(|(y, t)| (y - t) * (y - t)).sum::<f64>()
            }
            Loss::CrossEntropy => {
                let lse = log_sum_exp(output);
                output
                    .iter()
                    .zip(target)
                    .map(|(y, t)| -t * (y - lse))
                    .sum::<f64>()
            }
        }
    }

    pub fn gradient(self, output: &[f64], target: &[f64]) -> Vec<f64> {
        match self {
            Loss::Mse => output.iter().zip(target).map(|(y, t)| y - t).collect(),
            Loss::CrossEntropy => {
                let lse = log_sum_exp(output);
                let tsum: f64 = target.iter().sum();
                output
                    .iter()
                    .zip(target)
                    .map(|(y, t)| tsum * (y - lse).exp() - t)
                    .collect()
            }
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// A batch is a set of (input, target) pairs referenced by index into a
/// feature/target table.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub targets: Vec<&'a [f64]>,
}

/// Mean loss and mean gradient over a batch. Deterministic for a fixed batch
/// order (plain left-to-right accumulation).
pub fn loss_and_grad(model: &MlpModel, batch: &Batch, loss: Loss) -> Result<(f64, BackpropResult)> {
    if batch.inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.inputs.len() != batch.targets.len() {
        return Err(Error::ShapeMismatch("inputs vs targets".into()));
    }
    let depth = model.spec.depth();
    let mut total_loss = 0.0;
    let mut acc: Option<BackpropResult> = None;
    for (input, target) in batch.inputs.iter().zip(&batch.targets) {
        let (out, cache) = model.forward(input)?;
        total_loss += loss.value(&out, target);
        let grad = loss.gradient(&out, target);
        let bp = model.backward(&cache, &grad)?;
        match &mut acc {
            None => acc = Some(bp),
            Some(a) => {
                for l in 0..depth {
                    for (x, y) in a.d_weights[l].data.iter_mut().zip(&bp.d_weights[l].data) {
                        *x += y;
                    }
                    for (x, y) in a.d_biases[l].iter_mut().zip(&bp.d_biases[l]) {
                        *x += y;
                    }
                }
            }
        }
    }
    let n = batch.inputs.len() as f64;
    let mut acc = acc.unwrap();
    for l in 0..depth {
        for x in acc.d_weights[l].data.iter_mut() {
            *x /= n;
        }
        for x in acc.d_biases[l].iter_mut() {
            *x /= n;
        }
    }
    Ok((total_loss / n, acc))
}
