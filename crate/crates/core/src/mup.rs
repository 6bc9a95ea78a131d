//! Weight classification and width-dependent hyperparameter scaling.
//!
//! Every hyperparameter is a width-independent base constant times a
//! width-dependent multiplier that depends only on how many of the weight's
//! dimensions scale with width:
//!
//! | factor                | matrix-like          | vector-like | scalar-like |
//! |-----------------------|----------------------|-------------|-------------|
//! | A  (weight mult)      | 1                    | 1           | 1           |
//! | B  (init variance)    | 1/n_in               | 1           | 1           |
//! | C  (learning rate)    | n_out^m / n_in       | n^m         | 1           |
//! | D  (vanilla decay)    | n_in / n_out         | 1/n         | 1           |
//! | D~ (decoupled decay)  | n_in / n_out^m       | n^{-m}      | 1           |
//! | E  (epsilon)          | 1/n_out              | 1/n         | 1           |
//!
//! with `m` the optimizer's homogeneity degree. The output readout factor
//! `n^{-1}` is realized by the model's mean readout, not as a weight
//! multiplier.

use crate::error::{Error, Result};
use crate::linalg::{gauss_mat, gauss_vec, Rng};
use crate::model::{Batch, Loss, MlpModel, MlpSpec, Readout};
use crate::optim::{DecayMode, HParams, UpdateRule};
use crate::trainer::{ResolvedHParams, Trainer};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightKind {
    ScalarLike,
    VectorLike { n: usize },
    MatrixLike { n_out: usize, n_in: usize },
}

/// Width-independent base constants (the barred symbols).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseConstants {
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub sigma_delta: f64,
}

impl BaseConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("epsilon", self.epsilon),
            ("sigma", self.sigma),
            ("sigma_delta", self.sigma_delta),
        ] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MupMultipliers {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub d_tilde: f64,
    pub e: f64,
}

/// Classify the weight matrices of an MLP: layer 1 and layer L have one
/// width-scaled dimension (vector-like), hidden layers have two
/// (matrix-like).
pub fn classify(spec: &MlpSpec) -> Vec<WeightKind> {
    let depth = spec.depth();
    (0..depth)
        .map(|l| {
            if l == 0 {
                WeightKind::VectorLike { n: spec.widths[1] }
            } else if l == depth - 1 {
                WeightKind::VectorLike { n: spec.widths[depth - 1] }
            } else {
                WeightKind::MatrixLike { n_out: spec.widths[l + 1], n_in: spec.widths[l] }
            }
        })
        .collect()
}

/// Bias classification: hidden biases are vector-like, the output bias is
/// scalar-like (its dimension is d_out, which does not scale).
pub fn classify_biases(spec: &MlpSpec) -> Vec<WeightKind> {
    let depth = spec.depth();
    (0..depth)
        .map(|l| {
            if l == depth - 1 {
                WeightKind::ScalarLike
            } else {
                WeightKind::VectorLike { n: spec.widths[l + 1] }
            }
        })
        .collect()
}

/// Optional base-width anchoring: divide each factor by its value at an
/// anchor width so the anchor model sees all-ones multipliers (i.e. behaves
/// like the standard parametrization there) while ratios across widths are
/// unchanged. The raw Table values are what the equivalence machinery
/// consumes; this wrapper exists for comparing against standard-param runs.
pub fn anchored_multipliers(
    kind: WeightKind,
    anchor: WeightKind,
    m: u32,
) -> Result<MupMultipliers> {
    let raw = multipliers(kind, m)?;
    let at = multipliers(anchor, m)?;
    Ok(MupMultipliers {
        a: raw.a / at.a,
        b: raw.b / at.b,
        c: raw.c / at.c,
        d: raw.d / at.d,
        d_tilde: raw.d_tilde / at.d_tilde,
        e: raw.e / at.e,
    })
}

pub fn multipliers(kind: WeightKind, m: u32) -> Result<MupMultipliers> {
    if m > 1 {
        return Err(Error::InvalidParameter(format!("homogeneity degree {m} unsupported")));
    }
    Ok(match kind {
        WeightKind::ScalarLike => {
            MupMultipliers { a: 1.0, b: 1.0, c: 1.0, d: 1.0, d_tilde: 1.0, e: 1.0 }
        }
        WeightKind::VectorLike { n } => {
            let n = n as f64;
            MupMultipliers {
                a: 1.0,
                b: 1.0,
                c: n.powi(m as i32),
                d: 1.0 / n,
                d_tilde: n.powi(-(m as i32)),
                e: 1.0 / n,
            }
        }
        WeightKind::MatrixLike { n_out, n_in } => {
            let (no, ni) = (n_out as f64, n_in as f64);
            MupMultipliers {
                a: 1.0,
                b: 1.0 / ni,
                c: no.powi(m as i32) / ni,
                d: ni / no,
                d_tilde: ni / no.powi(m as i32),
                e: 1.0 / no,
            }
        }
    })
}

/// Resolved values for one weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledHParams {
    pub init_std: f64,
    pub lr: f64,
    pub wd: f64,
    pub eps: f64,
}

impl ScaledHParams {
    pub fn optimizer_hparams(&self) -> HParams {
        HParams { lr: self.lr, wd: self.wd, eps: self.eps }
    }
}

pub fn scaled_hparams(
    kind: WeightKind,
    m: u32,
    base: &BaseConstants,
    decay_mode: DecayMode,
) -> Result<ScaledHParams> {
    let mult = multipliers(kind, m)?;
    let wd = match decay_mode {
        DecayMode::None => 0.0,
        DecayMode::Vanilla => mult.d * base.lambda,
        DecayMode::Decoupled => mult.d_tilde * base.lambda,
    };
    Ok(ScaledHParams {
        init_std: base.sigma * mult.b.sqrt(),
        lr: mult.c * base.gamma,
        wd,
        eps: mult.e * base.epsilon,
    })
}

/// Resolve the full per-parameter hyperparameter set for a model.
pub fn resolve(spec: &MlpSpec, m: u32, base: &BaseConstants, decay: DecayMode) -> Result<ResolvedHParams> {
    let weights = classify(spec)
        .into_iter()
        .map(|k| Ok(scaled_hparams(k, m, base, decay)?.optimizer_hparams()))
        .collect::<Result<Vec<_>>>()?;
    let biases = if spec.bias {
        classify_biases(spec)
            .into_iter()
            .map(|k| Ok(scaled_hparams(k, m, base, decay)?.optimizer_hparams()))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(ResolvedHParams { weights, biases })
}

/// Sample fresh weights in place: matrix-like entries `N(0, sigma^2/n_in)`,
/// vector-like `N(0, sigma^2)`. Biases follow their own classification.
///
/// Note the input layer uses the vector-like rule (variance factor 1), not
/// the `1/n_in` some implementations apply to it; since its `n_in = d_in`
/// is width-independent the two differ only by a constant.
pub fn init_weights(model: &mut MlpModel, base: &BaseConstants, rng: &mut Rng) -> Result<()> {
    base.validate()?;
    let kinds = classify(&model.spec);
    for (l, kind) in kinds.iter().enumerate() {
        let mult = multipliers(*kind, 0)?;
        let std = base.sigma * mult.b.sqrt();
        let (rows, cols) = (model.weights[l].rows, model.weights[l].cols);
        model.weights[l] = gauss_mat(rng, rows, cols, std)?;
    }
    if model.spec.bias {
        let bkinds = classify_biases(&model.spec);
        for (l, kind) in bkinds.iter().enumerate() {
            let mult = multipliers(*kind, 0)?;
            let std = base.sigma * mult.b.sqrt();
            let len = model.biases[l].len();
            model.biases[l] = gauss_vec(rng, len, std)?;
        }
    }
    Ok(())
}

/// Per-weight hyperparameter dump consumed by the CLI `report` path and by
/// humans debugging transfer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HparamReport {
    pub m: u32,
    pub decay_mode: DecayMode,
    pub base: BaseConstants,
    pub weights: Vec<WeightReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightReport {
    pub name: String,
    #[serde(flatten)]
    pub kind: WeightKind,
    pub multipliers: MupMultipliers,
    pub resolved: ScaledHParams,
}

pub fn report(spec: &MlpSpec, m: u32, base: &BaseConstants, decay: DecayMode) -> Result<HparamReport> {
    let mut weights = Vec::new();
    for (l, kind) in classify(spec).into_iter().enumerate() {
        weights.push(WeightReport {
            name: format!("w{}", l + 1),
            kind,
            multipliers: multipliers(kind, m)?,
            resolved: scaled_hparams(kind, m, base, decay)?,
        });
    }
    if spec.bias {
        for (l, kind) in classify_biases(spec).into_iter().enumerate() {
            weights.push(WeightReport {
                name: format!("b{}", l + 1),
                kind,
                multipliers: multipliers(kind, m)?,
                resolved: scaled_hparams(kind, m, base, decay)?,
            });
        }
    }
    Ok(HparamReport { m, decay_mode: decay, base: *base, weights })
}

/// Verify the one-parameter scaling symmetry: rescaling
/// `A <- A theta, B <- B/theta^2, C <- C/theta^{1+m}, D <- D theta^2,
/// D~ <- D~ theta^{1+m}, E <- E theta` leaves the output trajectory
/// unchanged. Runs `steps` lockstep steps on a seeded synthetic task and
/// returns true iff outputs agree to `1e-8` throughout.
pub fn theta_rescale_check(
    spec: &MlpSpec,
    rule: &UpdateRule,
    base: &BaseConstants,
    theta: f64,
    steps: usize,
    seed: u64,
) -> Result<bool> {
    if theta.is_nan() || theta <= 0.0 {
        return Err(Error::InvalidParameter(format!("theta = {theta}")));
    }
    let m = rule.kind.homogeneity_degree();
    let root = Rng::from_seed(seed);

    let mut model = MlpModel::zeros(spec.clone());
    init_weights(&mut model, base, &mut root.child(0))?;
    let hp = resolve(spec, m, base, rule.decay)?;

    // rescaled run: trained parameter is W/theta with weight multiplier theta
    let mut model_r = model.clone();
    for w in model_r.weights.iter_mut() {
        for v in w.data.iter_mut() {
            *v /= theta;
        }
    }
    for a in model_r.multipliers.iter_mut() {
        *a *= theta;
    }
    let pow = theta.powi(1 + m as i32);
    let hp_r = ResolvedHParams {
        weights: hp
            .weights
            .iter()
            .map(|h| HParams {
                lr: h.lr / pow,
                wd: match rule.decay {
                    DecayMode::Vanilla => h.wd * theta * theta,
                    DecayMode::Decoupled => h.wd * pow,
                    DecayMode::None => 0.0,
                },
                eps: h.eps * theta,
            })
            .collect(),
        biases: Vec::new(),
    };

    let mut data_rng = root.child(1);
    let d_in = spec.d_in();
    let d_out = spec.d_out();
    let probe: Vec<Vec<f64>> =
        (0..8).map(|_| (0..d_in).map(|_| data_rng.next_gaussian()).collect()).collect();

    let mut a_tr = Trainer::new(model, *rule, hp, Loss::Mse);
    let mut b_tr = Trainer::new(model_r, *rule, hp_r, Loss::Mse);

    for t in 0..=steps {
        let oa = a_tr.outputs(&probe)?;
        let ob = b_tr.outputs(&probe)?;
        for (ya, yb) in oa.iter().zip(&ob) {
            for (va, vb) in ya.iter().zip(yb) {
                // a diverged pair is a failed check, not a vacuous pass
                if !va.is_finite() || !vb.is_finite() || (va - vb).abs() > 1e-8 {
                    return Ok(false);
                }
            }
        }
        if t == steps {
            break;
        }
        let xs: Vec<Vec<f64>> =
            (0..4).map(|_| (0..d_in).map(|_| data_rng.next_gaussian()).collect()).collect();
        let ts: Vec<Vec<f64>> =
            (0..4).map(|_| (0..d_out).map(|_| data_rng.next_gaussian()).collect()).collect();
        let batch = Batch {
            inputs: xs.iter().map(|v| v.as_slice()).collect(),
            targets: ts.iter().map(|v| v.as_slice()).collect(),
        };
        a_tr.train_step(&batch)?;
        b_tr.train_step(&batch)?;
    }
    Ok(true)
}

/// Default spec used by the mup self-checks: mean readout per the Table-2
/// output convention.
pub fn mean_readout_spec(widths: Vec<usize>) -> Result<MlpSpec> {
    MlpSpec::new(widths, crate::model::Activation::Relu, Readout::Mean)
}
