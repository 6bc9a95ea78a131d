//! Entrywise optimizers: each weight entry is updated by a function `Q_t` of
//! that entry's gradient history, optionally with vanilla or decoupled weight
//! decay.
//!
//! Vanilla decay feeds `dW_t + lambda W_t` into the accumulators; decoupled
//! decay feeds the raw gradient and applies a multiplicative `(1 - lambda
//! gamma)` shrink to the weight:
//!
//! ```text
//! vanilla:   W_{t+1} = W_t - gamma Q_t(dW_0 + l W_0, ..., dW_t + l W_t; eps)
//! decoupled: W_{t+1} = (1 - l gamma) W_t - gamma Q_t(dW_0, ..., dW_t; eps)
//! ```
//!
//! The step counter starts at 0: the first update consumes history `x_0` and
//! uses bias correction `1 - beta^1`. Momentum buffers store the plain
//! gradient-history sums (first moments), second-moment buffers the squared
//! sums, so optimizer-state transfer during widening can rescale them like
//! gradients (squared scale for second moments).

use crate::bytes::{put_f64s, put_u32, put_u64, Cursor};
use crate::error::{Error, Result};
use crate::linalg::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum RuleKind {
    Sgd,
    SgdMomentum { beta: f64, dampening: f64 },
    Nesterov { beta: f64, dampening: f64 },
    Adam { beta1: f64, beta2: f64 },
    Amsgrad { beta1: f64, beta2: f64 },
}

impl RuleKind {
    pub fn name(&self) -> &'static str {
        match self {
            RuleKind::Sgd => "sgd",
            RuleKind::SgdMomentum { .. } => "sgd_momentum",
            RuleKind::Nesterov { .. } => "nesterov",
            RuleKind::Adam { .. } => "adam",
            RuleKind::Amsgrad { .. } => "amsgrad",
        }
    }

    /// Homogeneity degree of `Q_t`: 1 for the SGD family, 0 for the Adam
    /// family.
    pub fn homogeneity_degree(&self) -> u32 {
        match self {
            RuleKind::Sgd | RuleKind::SgdMomentum { .. } | RuleKind::Nesterov { .. } => 1,
            RuleKind::Adam { .. } | RuleKind::Amsgrad { .. } => 0,
        }
    }

    /// Betas must lie in [0, 1) (the bias corrections divide by
    /// `1 - beta^t`) and dampening in [0, 1].
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be in [0, 1)")));
            }
            Ok(())
        };
        match *self {
            RuleKind::Sgd => Ok(()),
            RuleKind::SgdMomentum { beta, dampening } | RuleKind::Nesterov { beta, dampening } => {
                unit("momentum", beta)?;
                if !(0.0..=1.0).contains(&dampening) {
                    return Err(Error::InvalidParameter(format!(
                        "dampening = {dampening} must be in [0, 1]"
                    )));
                }
                Ok(())
            }
            RuleKind::Adam { beta1, beta2 } | RuleKind::Amsgrad { beta1, beta2 } => {
                unit("beta1", beta1)?;
                unit("beta2", beta2)
            }
        }
    }

    pub fn uses_eps(&self) -> bool {
        self.homogeneity_degree() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    None,
    Vanilla,
    Decoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRule {
    pub kind: RuleKind,
    pub decay: DecayMode,
}

impl UpdateRule {
    pub fn new(kind: RuleKind, decay: DecayMode) -> Self {
        UpdateRule { kind, decay }
    }

    /// AdamW is Adam with decoupled decay.
    pub fn adamw(beta1: f64, beta2: f64) -> Self {
        UpdateRule { kind: RuleKind::Adam { beta1, beta2 }, decay: DecayMode::Decoupled }
    }
}

/// Resolved per-parameter hyperparameters (post width scaling).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HParams {
    pub lr: f64,
    pub wd: f64,
    pub eps: f64,
}

/// Reference evaluation of `Q_t` over the full history `x_0..x_t`.
///
/// This is the O(t) formula the streaming `step` is tested against; `eps`
/// only matters for the Adam family. Bias corrections use `1 - beta^len`
/// where `len = t + 1` is the number of accumulated gradients.
pub fn q_eval(kind: RuleKind, history: &[f64], eps: f64) -> f64 {
    assert!(!history.is_empty(), "empty history");
    let t = history.len() - 1;
    match kind {
        RuleKind::Sgd => history[t],
        RuleKind::SgdMomentum { beta, dampening } => {
            (1.0 - dampening)
                * history
                    .iter()
                    .enumerate()
                    .map(|(s, x)| beta.powi((t - s) as i32) * x)
                    .sum::<f64>()
        }
        RuleKind::Nesterov { beta, dampening } => {
            let tail: f64 = history[..t]
                .iter()
                .enumerate()
                .map(|(s, x)| beta.powi((t - s + 1) as i32) * x)
                .sum();
            (1.0 + beta - beta * dampening) * history[t] + (1.0 - dampening) * tail
        }
        RuleKind::Adam { beta1, beta2 } => {
            let len = history.len() as i32;
            let num: f64 = history
                .iter()
                .enumerate()
                .map(|(s, x)| beta1.powi((t - s) as i32) * x)
                .sum::<f64>()
                * (1.0 - beta1)
                / (1.0 - beta1.powi(len));
            let den: f64 = history
                .iter()
                .enumerate()
                .map(|(s, x)| beta2.powi((t - s) as i32) * x * x)
                .sum::<f64>()
                * (1.0 - beta2)
                / (1.0 - beta2.powi(len));
            num / (den.sqrt() + eps)
        }
        RuleKind::Amsgrad { beta1, beta2 } => {
            let len = history.len() as i32;
            let num: f64 = history
                .iter()
                .enumerate()
                .map(|(s, x)| beta1.powi((t - s) as i32) * x)
                .sum::<f64>()
                * (1.0 - beta1)
                / (1.0 - beta1.powi(len));
            // max over the bias-corrected second moments v_0 .. v_t
            let vmax = (0..=t)
                .map(|s| {
                    history[..=s]
                        .iter()
                        .enumerate()
                        .map(|(u, x)| beta2.powi((s - u) as i32) * x * x)
                        .sum::<f64>()
                        * (1.0 - beta2)
                        / (1.0 - beta2.powi(s as i32 + 1))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            num / (vmax.sqrt() + eps)
        }
    }
}

/// Per-parameter streaming accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamState {
    /// Frozen or stateless (plain SGD) parameter.
    Stateless,
    /// SGD momentum buffer: `(1 - tau) sum_s beta^{t-s} g_s`.
    Momentum { buf: Vec<f64> },
    /// Adam-family first/second moments (uncorrected) and, for AMSGrad, the
    /// running max of the bias-corrected second moment.
    Moments { m: Vec<f64>, v: Vec<f64>, vmax: Option<Vec<f64>> },
}

impl ParamState {
    pub fn fresh(kind: RuleKind, len: usize, trainable: bool) -> ParamState {
        if !trainable {
            return ParamState::Stateless;
        }
        match kind {
            RuleKind::Sgd => ParamState::Stateless,
            RuleKind::SgdMomentum { .. } | RuleKind::Nesterov { .. } => {
                ParamState::Momentum { buf: vec![0.0; len] }
            }
            RuleKind::Adam { .. } => {
                ParamState::Moments { m: vec![0.0; len], v: vec![0.0; len], vmax: None }
            }
            RuleKind::Amsgrad { .. } => ParamState::Moments {
                m: vec![0.0; len],
                v: vec![0.0; len],
                vmax: Some(vec![0.0; len]),
            },
        }
    }
}

/// Optimizer state: one slot per parameter tensor plus the global step
/// counter `t` (number of completed steps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub t: u64,
    pub slots: Vec<ParamState>,
}

impl OptState {
    pub fn fresh(rule: &UpdateRule, lens: &[(usize, bool)]) -> OptState {
        OptState {
            t: 0,
            slots: lens.iter().map(|&(len, tr)| ParamState::fresh(rule.kind, len, tr)).collect(),
        }
    }
}

/// One streaming optimizer step over a set of parameter tensors.
///
/// `params[i]`, `grads[i]`, `state.slots[i]`, and `hp[i]` describe the same
/// tensor. Slots that are `Stateless` under a stateful rule were frozen at
/// construction and are skipped when their gradient slot is empty.
pub fn step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut OptState,
    hp: &[HParams],
    rule: &UpdateRule,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.slots.len() || params.len() != hp.len()
    {
        return Err(Error::ShapeMismatch("step: param/grad/state/hp counts".into()));
    }
    let t = state.t;
    for (i, param) in params.iter_mut().enumerate() {
        let g = grads[i];
        if g.is_empty() {
            continue; // frozen parameter
        }
        if g.len() != param.len() {
            return Err(Error::ShapeMismatch(format!("step: param {i}")));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NanGradient { layer: i, step: t });
        }
        let h = hp[i];
        let decay_vanilla = matches!(rule.decay, DecayMode::Vanilla);
        let decay_decoupled = matches!(rule.decay, DecayMode::Decoupled);
        let slot = &mut state.slots[i];
        for (j, w) in param.iter_mut().enumerate() {
            let fed = if decay_vanilla { g[j] + h.wd * *w } else { g[j] };
            let q = match (rule.kind, &mut *slot) {
                (RuleKind::Sgd, ParamState::Stateless) => fed,
                (RuleKind::SgdMomentum { beta, dampening }, ParamState::Momentum { buf }) => {
                    buf[j] = beta * buf[j] + (1.0 - dampening) * fed;
                    buf[j]
                }
                (RuleKind::Nesterov { beta, dampening }, ParamState::Momentum { buf }) => {
                    buf[j] = beta * buf[j] + (1.0 - dampening) * fed;
                    fed + beta * buf[j]
                }
                (
                    RuleKind::Adam { beta1, beta2 } | RuleKind::Amsgrad { beta1, beta2 },
                    ParamState::Moments { m, v, vmax },
                ) => {
                    m[j] = beta1 * m[j] + (1.0 - beta1) * fed;
                    v[j] = beta2 * v[j] + (1.0 - beta2) * fed * fed;
                    let mhat = m[j] / (1.0 - beta1.powi(t as i32 + 1));
                    let vhat = v[j] / (1.0 - beta2.powi(t as i32 + 1));
                    let denom = match vmax {
                        Some(vm) => {
                            vm[j] = vm[j].max(vhat);
                            vm[j]
                        }
                        None => vhat,
                    };
                    mhat / (denom.sqrt() + h.eps)
                }
                _ => return Err(Error::ShapeMismatch(format!("state kind mismatch, slot {i}"))),
            };
            if decay_decoupled {
                *w = (1.0 - h.wd * h.lr) * *w - h.lr * q;
            } else {
                *w -= h.lr * q;
            }
        }
    }
    state.t += 1;
    Ok(())
}

/// Max over random histories of `|Q_t(a x; a eps) - a^m Q_t(x; eps)|`.
pub fn homogeneity_test(kind: RuleKind, a: f64, trials: usize, seed: u64) -> f64 {
    assert!(a > 0.0);
    let m = kind.homogeneity_degree();
    let mut rng = Rng::from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let len = 1 + (rng.next_u64() % 20) as usize;
        let hist: Vec<f64> = (0..len).map(|_| rng.next_gaussian()).collect();
        let eps = if kind.uses_eps() { 1e-8 + rng.next_f64() * 1e-2 } else { 0.0 };
        let scaled: Vec<f64> = hist.iter().map(|x| a * x).collect();
        let lhs = q_eval(kind, &scaled, a * eps);
        let rhs = a.powi(m as i32) * q_eval(kind, &hist, eps);
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}

const STATE_MAGIC: &[u8; 4] = b"WOS\x01";
const STATE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StateMeta {
    t: u64,
    slots: Vec<SlotMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SlotMeta {
    Stateless,
    Momentum { len: usize },
    Moments { len: usize, has_vmax: bool },
}

/// Bit-exact snapshot of the optimizer state (JSON meta + raw LE f64 arrays).
pub fn serialize_state(state: &OptState) -> Vec<u8> {
    let meta = StateMeta {
        t: state.t,
        slots: state
            .slots
            .iter()
            .map(|s| match s {
                ParamState::Stateless => SlotMeta::Stateless,
                ParamState::Momentum { buf } => SlotMeta::Momentum { len: buf.len() },
                ParamState::Moments { m, v: _, vmax } => {
                    SlotMeta::Moments { len: m.len(), has_vmax: vmax.is_some() }
                }
            })
            .collect(),
    };
    let json = serde_json::to_vec(&meta).expect("state meta serializes");
    let mut out = Vec::new();
    out.extend_from_slice(STATE_MAGIC);
    put_u32(&mut out, STATE_VERSION);
    put_u64(&mut out, json.len() as u64);
    out.extend_from_slice(&json);
    for slot in &state.slots {
        match slot {
            ParamState::Stateless => {}
            ParamState::Momentum { buf } => put_f64s(&mut out, buf),
            ParamState::Moments { m, v, vmax } => {
                put_f64s(&mut out, m);
                put_f64s(&mut out, v);
                if let Some(vm) = vmax {
                    put_f64s(&mut out, vm);
                }
            }
        }
    }
    out
}

pub fn deserialize_state(bytes: &[u8]) -> Result<OptState> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.get_bytes(4)?;
    if magic != STATE_MAGIC {
        return Err(Error::CorruptCheckpoint("bad optimizer state magic".into()));
    }
    let version = cur.get_u32()?;
    if version != STATE_VERSION {
        return Err(Error::CheckpointVersion { expected: STATE_VERSION, found: version });
    }
    let json_len = cur.get_u64()? as usize;
    let meta: StateMeta = serde_json::from_slice(cur.get_bytes(json_len)?)?;
    let mut slots = Vec::with_capacity(meta.slots.len());
    for sm in &meta.slots {
        slots.push(match sm {
            SlotMeta::Stateless => ParamState::Stateless,
            SlotMeta::Momentum { len } => ParamState::Momentum { buf: cur.get_f64s(*len)? },
            SlotMeta::Moments { len, has_vmax } => ParamState::Moments {
                m: cur.get_f64s(*len)?,
                v: cur.get_f64s(*len)?,
                vmax: if *has_vmax { Some(cur.get_f64s(*len)?) } else { None },
            },
        });
    }
    if cur.remaining() != 0 {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok(OptState { t: meta.t, slots })
}
