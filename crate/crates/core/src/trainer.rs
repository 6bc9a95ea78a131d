//! Single-model training loop shared by the equivalence checks, the upscale
//! driver, and the sweep harness.

use crate::error::Result;
use crate::linalg::rms;
use crate::model::{loss_and_grad, Batch, Loss, MlpModel};
use crate::optim::{step, HParams, OptState, UpdateRule};
use serde::{Deserialize, Serialize};

/// Resolved per-parameter hyperparameters for one model: one entry per layer
/// weight, plus one per bias when biases are enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedHParams {
    pub weights: Vec<HParams>,
    pub biases: Vec<HParams>,
}

impl ResolvedHParams {
    pub fn uniform(depth: usize, bias: bool, hp: HParams) -> Self {
        ResolvedHParams {
            weights: vec![hp; depth],
            biases: if bias { vec![hp; depth] } else { Vec::new() },
        }
    }
}

/// Parameter tensor order used everywhere a model's tensors are flattened
/// into a list (optimizer slots, checkpoints, state transfer): all layer
/// weights, then all biases when enabled.
pub fn param_sizes(model: &MlpModel) -> Vec<(usize, bool)> {
    let mut out: Vec<(usize, bool)> = model
        .weights
        .iter()
        .enumerate()
        .map(|(l, w)| (w.data.len(), model.spec.trainable[l]))
        .collect();
    if model.spec.bias {
        out.extend(
            model
                .biases
                .iter()
                .enumerate()
                .map(|(l, b)| (b.len(), model.spec.trainable[l])),
        );
    }
    out
}

pub struct Trainer {
    pub model: MlpModel,
    pub rule: UpdateRule,
    pub hp: ResolvedHParams,
    pub state: OptState,
    pub loss: Loss,
    /// Optional global-norm gradient clip. Clipping is not an entrywise
    /// update function, so it voids the widening-equivalence guarantees;
    /// it is never enabled in the equivalence checks.
    pub grad_clip: Option<f64>,
}

impl Trainer {
    pub fn new(model: MlpModel, rule: UpdateRule, hp: ResolvedHParams, loss: Loss) -> Self {
        let state = OptState::fresh(&rule, &param_sizes(&model));
        Trainer { model, rule, hp, state, loss, grad_clip: None }
    }

    /// Resume from an existing optimizer state (checkpoint continuation or
    /// transferred state after widening).
    pub fn with_state(
        model: MlpModel,
        rule: UpdateRule,
        hp: ResolvedHParams,
        state: OptState,
        loss: Loss,
    ) -> Self {
        Trainer { model, rule, hp, state, loss, grad_clip: None }
    }

    /// One optimizer step on a batch; returns the (pre-update) mean loss.
    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        let (loss, mut grads) = loss_and_grad(&self.model, batch, self.loss)?;
        if let Some(max_norm) = self.grad_clip {
            let mut sq = 0.0;
            for l in 0..self.model.spec.depth() {
                if !self.model.spec.trainable[l] {
                    continue;
                }
                sq += grads.d_weights[l].data.iter().map(|g| g * g).sum::<f64>();
                sq += grads.d_biases[l].iter().map(|g| g * g).sum::<f64>();
            }
            let norm = sq.sqrt();
            if norm > max_norm {
                let scale = max_norm / norm;
                for l in 0..self.model.spec.depth() {
                    for g in grads.d_weights[l].data.iter_mut() {
                        *g *= scale;
                    }
                    for g in grads.d_biases[l].iter_mut() {
                        *g *= scale;
                    }
                }
            }
        }
        let depth = self.model.spec.depth();
        let bias = self.model.spec.bias;

        let mut hp: Vec<HParams> = self.hp.weights.clone();
        if bias {
            hp.extend_from_slice(&self.hp.biases);
        }

        let empty: &[f64] = &[];
        let mut grad_refs: Vec<&[f64]> = Vec::with_capacity(hp.len());
        for l in 0..depth {
            grad_refs.push(if self.model.spec.trainable[l] {
                &grads.d_weights[l].data
            } else {
                empty
            });
        }
        if bias {
            for l in 0..depth {
                grad_refs.push(if self.model.spec.trainable[l] {
                    &grads.d_biases[l]
                } else {
                    empty
                });
            }
        }

        let (weights, biases) = (&mut self.model.weights, &mut self.model.biases);
        let mut param_refs: Vec<&mut [f64]> = Vec::with_capacity(hp.len());
        for w in weights.iter_mut() {
            param_refs.push(&mut w.data);
        }
        if bias {
            for b in biases.iter_mut() {
                param_refs.push(b);
            }
        }

        step(&mut param_refs, &grad_refs, &mut self.state, &hp, &self.rule)?;
        Ok(loss)
    }

    pub fn outputs(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        inputs.iter().map(|x| Ok(self.model.forward(x)?.0)).collect()
    }

    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        let mut total = 0.0;
        for (x, t) in batch.inputs.iter().zip(&batch.targets) {
            let (out, _) = self.model.forward(x)?;
            total += self.loss.value(&out, t);
        }
        Ok(total / batch.inputs.len() as f64)
    }

    /// RMS of each hidden pre-activation vector for one input.
    pub fn hidden_rms(&self, input: &[f64]) -> Result<Vec<f64>> {
        let (_, cache) = self.model.forward(input)?;
        let depth = self.model.spec.depth();
        Ok(cache.pre[..depth - 1].iter().map(|h| rms(h)).collect())
    }
}
