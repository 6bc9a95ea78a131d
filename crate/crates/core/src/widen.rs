//! Construction of dynamically-equivalent widened models: weight
//! duplication/rescaling, hyperparameter rescaling matched to the optimizer's
//! homogeneity degree, and optimizer-state transfer.
//!
//! Per-layer rules for an MLP with multipliers `k_0..k_L` (`k_0 = k_L = 1`).
//! Every layer duplicates rows by `k_out = k_{l}` and columns by
//! `k_in = k_{l-1}`; the scalar factors depend on the readout convention:
//!
//! * all layers except the last, and the last layer under the sum readout:
//!   `W' = k_in^{-1} W (x) 1 1^T`, gradients pick up `k_out^{-1}`,
//!   `lr' = k_out^m k_in^{-1} lr`, `eps' = k_out^{-1} eps`,
//!   `wd' = k_in k_out^{-1} wd` (vanilla) or `k_in k_out^{-m} wd` (decoupled);
//! * last layer under the mean readout (the width-normalized output treats
//!   the readout weight as vector-like with `k = k_{L-1}`): `W' = W (x) 1^T`
//!   unscaled, gradients pick up `k^{-1}`, `lr' = k^m lr`,
//!   `eps' = k^{-1} eps`, `wd' = k^{-1} wd` (vanilla) or `k^{-m} wd`
//!   (decoupled).
//!
//! Biases duplicate along their width axis without rescaling under both
//! conventions. Non-trained buffers (e.g. normalization running statistics)
//! would duplicate without rescaling as well; the MLP has none.

use crate::error::{Error, Result};
use crate::linalg::{dup_mat, dup_vec, max_abs_diff, Mat, Rng};
use crate::model::{Batch, Loss, MlpModel, MlpSpec, Readout};
use crate::optim::{DecayMode, HParams, OptState, ParamState, UpdateRule};
use crate::trainer::{ResolvedHParams, Trainer};
use serde::{Deserialize, Serialize};

/// Per-dimension width multipliers `k_0..k_L` with fixed endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidenPlan {
    pub k: Vec<usize>,
}

impl WidenPlan {
    pub fn new(k: Vec<usize>) -> Result<Self> {
        if k.len() < 3 {
            return Err(Error::InvalidParameter("plan needs k_0..k_L".into()));
        }
        if k.contains(&0) {
            return Err(Error::InvalidMultiplier);
        }
        if k[0] != 1 || *k.last().unwrap() != 1 {
            return Err(Error::InvalidParameter(
                "endpoint multipliers k_0, k_L must be 1".into(),
            ));
        }
        Ok(WidenPlan { k })
    }

    /// Uniform hidden multiplier, as the upscaling meta-algorithm assumes.
    pub fn uniform(depth: usize, k: usize) -> Result<Self> {
        let mut ks = vec![k; depth + 1];
        ks[0] = 1;
        ks[depth] = 1;
        WidenPlan::new(ks)
    }

    pub fn check(&self, spec: &MlpSpec) -> Result<()> {
        if self.k.len() != spec.widths.len() {
            return Err(Error::ShapeMismatch(format!(
                "plan length {} vs widths {}",
                self.k.len(),
                spec.widths.len()
            )));
        }
        Ok(())
    }

    pub fn widened_widths(&self, spec: &MlpSpec) -> Vec<usize> {
        spec.widths.iter().zip(&self.k).map(|(n, k)| n * k).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.k.iter().all(|&v| v == 1)
    }
}

/// Resolved duplication geometry and rescale factors for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerRule {
    pub k_out: usize,
    pub k_in: usize,
    pub weight_scale: f64,
    /// Gradients (and gradient-like optimizer buffers) of the widened layer
    /// equal `grad_scale * dup(gradient)`.
    pub grad_scale: f64,
    pub lr_factor: f64,
    pub eps_factor: f64,
    pub wd_factor_vanilla: f64,
    pub wd_factor_decoupled: f64,
}

/// Readout-aware per-layer widening rules for an MLP.
pub fn layer_rules(spec: &MlpSpec, plan: &WidenPlan, m: u32) -> Result<Vec<LayerRule>> {
    plan.check(spec)?;
    if m > 1 {
        return Err(Error::InvalidParameter(format!("homogeneity degree {m}")));
    }
    let depth = spec.depth();
    let mut out = Vec::with_capacity(depth);
    for l in 0..depth {
        let k_out = plan.k[l + 1];
        let k_in = plan.k[l];
        let rule = if l == depth - 1 && spec.readout == Readout::Mean {
            let k = k_in as f64;
            LayerRule {
                k_out,
                k_in,
                weight_scale: 1.0,
                grad_scale: 1.0 / k,
                lr_factor: k.powi(m as i32),
                eps_factor: 1.0 / k,
                wd_factor_vanilla: 1.0 / k,
                wd_factor_decoupled: k.powi(-(m as i32)),
            }
        } else {
            let (ko, ki) = (k_out as f64, k_in as f64);
            LayerRule {
                k_out,
                k_in,
                weight_scale: 1.0 / ki,
                grad_scale: 1.0 / ko,
                lr_factor: ko.powi(m as i32) / ki,
                eps_factor: 1.0 / ko,
                wd_factor_vanilla: ki / ko,
                wd_factor_decoupled: ki / ko.powi(m as i32),
            }
        };
        out.push(rule);
    }
    Ok(out)
}

/// Bias factors: vector-like along the layer's output axis (`k = k_out`);
/// degenerates to scalar-like (all ones) at the output layer where
/// `k_L = 1`.
fn bias_rule(k_out: usize, m: u32) -> LayerRule {
    let k = k_out as f64;
    LayerRule {
        k_out,
        k_in: 1,
        weight_scale: 1.0,
        grad_scale: 1.0 / k,
        lr_factor: k.powi(m as i32),
        eps_factor: 1.0 / k,
        wd_factor_vanilla: 1.0 / k,
        wd_factor_decoupled: k.powi(-(m as i32)),
    }
}

/// Duplicate and rescale a model so that it parametrizes the same function.
pub fn widen_static(model: &MlpModel, plan: &WidenPlan) -> Result<MlpModel> {
    // the static construction does not depend on m; use m = 0 rules
    let rules = layer_rules(&model.spec, plan, 0)?;
    let mut spec = model.spec.clone();
    spec.widths = plan.widened_widths(&model.spec);
    let depth = spec.depth();
    let mut weights = Vec::with_capacity(depth);
    let mut biases = Vec::with_capacity(depth);
    for l in 0..depth {
        let r = &rules[l];
        weights.push(dup_mat(&model.weights[l], r.k_out, r.k_in, r.weight_scale)?);
        if spec.bias {
            biases.push(dup_vec(&model.biases[l], r.k_out)?);
        } else {
            biases.push(Vec::new());
        }
    }
    Ok(MlpModel { spec, weights, biases, multipliers: model.multipliers.clone() })
}

/// Rescale resolved hyperparameters in tandem with [`widen_static`].
pub fn rescale_hparams(
    base_hp: &ResolvedHParams,
    spec: &MlpSpec,
    plan: &WidenPlan,
    m: u32,
    decay: DecayMode,
) -> Result<ResolvedHParams> {
    let rules = layer_rules(spec, plan, m)?;
    let apply = |h: &HParams, r: &LayerRule| HParams {
        lr: h.lr * r.lr_factor,
        wd: match decay {
            DecayMode::None => 0.0,
            DecayMode::Vanilla => h.wd * r.wd_factor_vanilla,
            DecayMode::Decoupled => h.wd * r.wd_factor_decoupled,
        },
        eps: h.eps * r.eps_factor,
    };
    let weights =
        base_hp.weights.iter().zip(&rules).map(|(h, r)| apply(h, r)).collect();
    let biases = base_hp
        .biases
        .iter()
        .enumerate()
        .map(|(l, h)| apply(h, &bias_rule(plan.k[l + 1], m)))
        .collect();
    Ok(ResolvedHParams { weights, biases })
}

/// Transfer optimizer state onto the widened model: first moments move like
/// gradients (duplicate with `grad_scale`), second moments with the squared
/// scale; the AMSGrad max buffer is treated as a second moment. The step
/// counter carries over.
pub fn transfer_opt_state(
    base_state: &OptState,
    model: &MlpModel,
    plan: &WidenPlan,
) -> Result<OptState> {
    // m only affects the hyperparameter factors, not the duplication
    // geometry or gradient scale, so any value works here
    let rules = layer_rules(&model.spec, plan, 0)?;
    let depth = model.spec.depth();
    let expected = if model.spec.bias { 2 * depth } else { depth };
    if base_state.slots.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "state has {} slots, model expects {expected}",
            base_state.slots.len()
        )));
    }
    let mut slots = Vec::with_capacity(base_state.slots.len());
    for (i, slot) in base_state.slots.iter().enumerate() {
        let is_bias = i >= depth;
        let l = if is_bias { i - depth } else { i };
        let r = if is_bias { bias_rule(plan.k[l + 1], 0) } else { rules[l] };
        let dup_like_grad = |buf: &[f64], scale: f64| -> Result<Vec<f64>> {
            if is_bias {
                Ok(dup_vec(buf, r.k_out)?.iter().map(|v| v * scale).collect())
            } else {
                let w = &model.weights[l];
                let m = Mat { rows: w.rows, cols: w.cols, data: buf.to_vec() };
                Ok(dup_mat(&m, r.k_out, r.k_in, scale)?.data)
            }
        };
        slots.push(match slot {
            ParamState::Stateless => ParamState::Stateless,
            ParamState::Momentum { buf } => {
                ParamState::Momentum { buf: dup_like_grad(buf, r.grad_scale)? }
            }
            ParamState::Moments { m, v, vmax } => ParamState::Moments {
                m: dup_like_grad(m, r.grad_scale)?,
                v: dup_like_grad(v, r.grad_scale * r.grad_scale)?,
                vmax: match vmax {
                    Some(vm) => Some(dup_like_grad(vm, r.grad_scale * r.grad_scale)?),
                    None => None,
                },
            },
        });
    }
    Ok(OptState { t: base_state.t, slots })
}

/// Per-weight record of everything the widening did.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WidenReport {
    pub plan: Vec<usize>,
    pub layers: Vec<LayerReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub old_shape: (usize, usize),
    pub new_shape: (usize, usize),
    pub weight_scale: f64,
    pub lr_factor: f64,
    pub wd_factor: f64,
    pub eps_factor: f64,
    pub state_scale_first_moment: f64,
    pub state_scale_second_moment: f64,
}

pub fn widen_report(
    spec: &MlpSpec,
    plan: &WidenPlan,
    m: u32,
    decay: DecayMode,
) -> Result<WidenReport> {
    let rules = layer_rules(spec, plan, m)?;
    let layers = rules
        .iter()
        .enumerate()
        .map(|(l, r)| LayerReport {
            name: format!("w{}", l + 1),
            old_shape: (spec.widths[l + 1], spec.widths[l]),
            new_shape: (spec.widths[l + 1] * r.k_out, spec.widths[l] * r.k_in),
            weight_scale: r.weight_scale,
            lr_factor: r.lr_factor,
            wd_factor: match decay {
                DecayMode::None => 1.0,
                DecayMode::Vanilla => r.wd_factor_vanilla,
                DecayMode::Decoupled => r.wd_factor_decoupled,
            },
            eps_factor: r.eps_factor,
            state_scale_first_moment: r.grad_scale,
            state_scale_second_moment: r.grad_scale * r.grad_scale,
        })
        .collect();
    Ok(WidenReport { plan: plan.k.clone(), layers })
}

/// Outcome of a lockstep base-vs-widened training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub steps: usize,
    /// Max over steps of the max-abs probe output difference.
    pub max_output_dev: f64,
    /// Max over steps and layers of the widening-relation violation
    /// `max_abs(W_widened - scale * dup(W_base))`.
    pub max_relation_violation: f64,
}

pub struct EquivalenceConfig {
    pub rule: UpdateRule,
    pub steps: usize,
    pub batch_size: usize,
    pub probe_size: usize,
    pub seed: u64,
}

/// Train base and widened models in lockstep on an identical synthetic data
/// stream and report the worst deviation. The 1e-8 acceptance tolerance (not
/// 1e-12) leaves room for non-associative float64 accumulation drift over
/// tens of steps.
pub fn verify_dynamic_equivalence(
    base_model: &MlpModel,
    base_hp: &ResolvedHParams,
    plan: &WidenPlan,
    cfg: &EquivalenceConfig,
) -> Result<EquivalenceReport> {
    let m = cfg.rule.kind.homogeneity_degree();
    let spec = base_model.spec.clone();
    let rules = layer_rules(&spec, plan, m)?;

    let widened = widen_static(base_model, plan)?;
    let hp_up = rescale_hparams(base_hp, &spec, plan, m, cfg.rule.decay)?;

    let mut base_tr = Trainer::new(base_model.clone(), cfg.rule, base_hp.clone(), Loss::Mse);
    let mut wide_tr = Trainer::new(widened, cfg.rule, hp_up, Loss::Mse);

    let root = Rng::from_seed(cfg.seed);
    let mut data_rng = root.child(1);
    let d_in = spec.d_in();
    let d_out = spec.d_out();
    let probe: Vec<Vec<f64>> = (0..cfg.probe_size)
        .map(|_| (0..d_in).map(|_| data_rng.next_gaussian()).collect())
        .collect();

    let mut max_output_dev = 0.0f64;
    let mut max_relation_violation = 0.0f64;

    for t in 0..=cfg.steps {
        let ob = base_tr.outputs(&probe)?;
        let ow = wide_tr.outputs(&probe)?;
        for (yb, yw) in ob.iter().zip(&ow) {
            max_output_dev = max_output_dev.max(max_abs_diff(yb, yw));
        }
        for l in 0..spec.depth() {
            let r = &rules[l];
            let expect =
                dup_mat(&base_tr.model.weights[l], r.k_out, r.k_in, r.weight_scale)?;
            max_relation_violation =
                max_relation_violation.max(expect.max_abs_diff(&wide_tr.model.weights[l]));
        }
        if t == cfg.steps {
            break;
        }
        let xs: Vec<Vec<f64>> = (0..cfg.batch_size)
            .map(|_| (0..d_in).map(|_| data_rng.next_gaussian()).collect())
            .collect();
        let ts: Vec<Vec<f64>> = (0..cfg.batch_size)
            .map(|_| (0..d_out).map(|_| data_rng.next_gaussian()).collect())
            .collect();
        let batch = Batch {
            inputs: xs.iter().map(|v| v.as_slice()).collect(),
            targets: ts.iter().map(|v| v.as_slice()).collect(),
        };
        base_tr.train_step(&batch)?;
        wide_tr.train_step(&batch)?;
    }
    Ok(EquivalenceReport {
        steps: cfg.steps,
        max_output_dev,
        max_relation_violation,
    })
}
