//! Mid-training upscaling: widen a pretrained checkpoint, inject
//! width-scaled gaussian noise to break the duplication symmetry, transfer
//! the optimizer state, and resume training at the new widths.

use crate::checkpoint::{Checkpoint, SeedLineage};
use crate::error::{Error, Result};
use crate::linalg::{gauss_mat, gauss_vec, Rng};
use crate::model::{Batch, Loss, MlpModel};
use crate::mup;
use crate::optim::OptState;
use crate::trainer::Trainer;
use crate::widen::{transfer_opt_state, widen_report, widen_static, WidenPlan, WidenReport};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpscaleConfig {
    /// Uniform hidden-width multiplier.
    pub k: usize,
    /// Noise std base constant; 0 keeps the model exactly equivalent.
    pub sigma_delta: f64,
    /// Learning-rate base constant for the post-upscale run.
    pub gamma_up: f64,
    /// Seed for the noise stream (independent of the data-order stream so
    /// noise seeds can be swept without perturbing batches).
    pub noise_seed: u64,
    /// Per-layer noise switches; `None` means noise on every layer.
    pub noise_layers: Option<Vec<bool>>,
}

impl UpscaleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidMultiplier);
        }
        if self.sigma_delta < 0.0 || self.gamma_up < 0.0 {
            return Err(Error::InvalidParameter("negative upscale constant".into()));
        }
        Ok(())
    }
}

/// Noise std for layer `l` (1-based), given the widths *after* widening:
/// vector-like layers 1 and L get `sigma_delta`, hidden matrix-like layers
/// `sigma_delta / sqrt(N_{l-1})` — the same width scaling a fresh
/// initialization would use.
pub fn noise_std_for_layer(layer: usize, widened_widths: &[usize], sigma_delta: f64) -> f64 {
    let depth = widened_widths.len() - 1;
    assert!(layer >= 1 && layer <= depth, "layer {layer} out of 1..={depth}");
    if layer == 1 || layer == depth {
        sigma_delta
    } else {
        sigma_delta / (widened_widths[layer - 1] as f64).sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpscaleReport {
    pub widen: WidenReport,
    pub noise_std: Vec<f64>,
    pub probe_loss_before: f64,
    pub probe_loss_after: f64,
}

/// Steps 1-3 of the upscaling procedure: equivalent widening, noise
/// injection, optimizer-state transfer. Returns the upscaled checkpoint
/// (hyperparameters re-resolved at the new widths with `gamma_up`) and a
/// report with the applied scales and the probe loss before/after.
pub fn upscale(
    ckpt: &Checkpoint,
    cfg: &UpscaleConfig,
    probe: &Batch,
    loss: Loss,
) -> Result<(Checkpoint, UpscaleReport)> {
    cfg.validate()?;
    if !ckpt.mup_parametrized {
        return Err(Error::InvalidParameter(
            "upscale requires a muP-parametrized checkpoint".into(),
        ));
    }
    // the width-scaled parametrization realizes the output factor via the
    // mean readout; re-resolving at the new widths is only the equivalent
    // rescaling under that convention
    if ckpt.model.spec.readout != crate::model::Readout::Mean {
        return Err(Error::InvalidParameter(
            "upscale requires the mean-readout parametrization".into(),
        ));
    }
    let spec = &ckpt.model.spec;
    let depth = spec.depth();
    let plan = WidenPlan::uniform(depth, cfg.k)?;
    let m = ckpt.rule.kind.homogeneity_degree();

    let mut model = widen_static(&ckpt.model, &plan)?;
    let widened_widths = model.spec.widths.clone();

    // per-layer noise, freshly seeded and independent of the data stream
    let mut noise_rng = Rng::from_seed(cfg.noise_seed);
    let mut noise_std = Vec::with_capacity(depth);
    for l in 0..depth {
        let on = cfg.noise_layers.as_ref().is_none_or(|switches| switches[l]);
        let std = if on {
            noise_std_for_layer(l + 1, &widened_widths, cfg.sigma_delta)
        } else {
            0.0
        };
        noise_std.push(std);
        if std > 0.0 {
            let w = &mut model.weights[l];
            let delta = gauss_mat(&mut noise_rng, w.rows, w.cols, std)?;
            for (wv, dv) in w.data.iter_mut().zip(&delta.data) {
                *wv += dv;
            }
        }
        if spec.bias && std > 0.0 {
            // biases are vector-like; they take the unscaled base constant
            let delta = gauss_vec(&mut noise_rng, model.biases[l].len(), cfg.sigma_delta)?;
            for (bv, dv) in model.biases[l].iter_mut().zip(&delta) {
                *bv += dv;
            }
        }
    }

    let opt: OptState = transfer_opt_state(&ckpt.opt, &ckpt.model, &plan)?;

    // hyperparameters re-resolve under muP at the new widths with gamma_up
    let mut base = ckpt.base;
    base.gamma = cfg.gamma_up;
    base.sigma_delta = cfg.sigma_delta;
    let hp = mup::resolve(&model.spec, m, &base, ckpt.rule.decay)?;

    let before = probe_loss(&ckpt.model, probe, loss)?;
    let after = probe_loss(&model, probe, loss)?;

    let report = UpscaleReport {
        widen: widen_report(spec, &plan, m, ckpt.rule.decay)?,
        noise_std,
        probe_loss_before: before,
        probe_loss_after: after,
    };
    let upscaled = Checkpoint {
        model,
        opt,
        rule: ckpt.rule,
        base,
        hp,
        mup_parametrized: true,
        lineage: SeedLineage { noise_stream: cfg.noise_seed, ..ckpt.lineage },
    };
    Ok((upscaled, report))
}

fn probe_loss(model: &MlpModel, probe: &Batch, loss: Loss) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in probe.inputs.iter().zip(&probe.targets) {
        let (out, _) = model.forward(x)?;
        total += loss.value(&out, t);
    }
    Ok(total / probe.inputs.len() as f64)
}

/// One row of the training trajectory log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: u64,
    pub train_loss: f64,
    pub probe_outputs: Vec<f64>,
    pub hidden_rms: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub rows: Vec<TrajectoryRow>,
    /// Set if training aborted on a non-finite loss; the log is partial.
    pub diverged_at: Option<u64>,
}

/// Step-4 driver: train for `steps`, logging loss, probe outputs, and
/// per-layer activation RMS. Row 0 is the initial state (no batch consumed,
/// loss NaN); row `s+1` carries the pre-update loss of batch `s`. A
/// non-finite loss or gradient aborts with the partial log flagged.
pub fn train_logged<F>(
    trainer: &mut Trainer,
    mut next_batch: F,
    probe_inputs: &[Vec<f64>],
    steps: u64,
) -> Result<TrajectoryLog>
where
    F: FnMut(u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>),
{
    let mut rows = Vec::new();
    let mut diverged_at = None;
    let log_row = |tr: &Trainer, step: u64, loss: f64| -> Result<TrajectoryRow> {
        let probe_outputs: Vec<f64> =
            tr.outputs(probe_inputs)?.into_iter().flatten().collect();
        let hidden_rms = if probe_inputs.is_empty() {
            Vec::new()
        } else {
            tr.hidden_rms(&probe_inputs[0])?
        };
        Ok(TrajectoryRow { step, train_loss: loss, probe_outputs, hidden_rms })
    };
    rows.push(log_row(trainer, 0, f64::NAN)?);
    for s in 0..steps {
        let (xs, ts) = next_batch(s);
        let batch = Batch {
            inputs: xs.iter().map(|v| v.as_slice()).collect(),
            targets: ts.iter().map(|v| v.as_slice()).collect(),
        };
        match trainer.train_step(&batch) {
            Ok(loss) if loss.is_finite() => rows.push(log_row(trainer, s + 1, loss)?),
            Ok(_) | Err(Error::NanGradient { .. }) => {
                diverged_at = Some(s);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrajectoryLog { rows, diverged_at })
}
