//! Hyperparameter-transfer sweeps: train a base model per width, upscale it
//! with each grid cell's (learning rate, noise) pair, train the upscaled
//! system, and tabulate per-cell losses and per-width argmins.

use crate::checkpoint::{Checkpoint, SeedLineage};
use crate::error::Result;
use crate::harness::data::{BatchSchedule, Dataset};
use crate::linalg::Rng;
use crate::model::{Activation, Loss, MlpModel, MlpSpec, Readout};
use crate::mup::{self, BaseConstants};
use crate::optim::UpdateRule;
use crate::trainer::Trainer;
use crate::upscale::{upscale, UpscaleConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Hidden layer count; model widths are `[d_in, n, .., n, d_out]`.
    pub hidden_layers: usize,
    pub activation: Activation,
    pub rule: UpdateRule,
    pub base: BaseConstants,
    pub loss: Loss,
    pub base_steps: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    /// Base widths `n`; each sweeps an upscaled system `n -> k n`.
    pub widths: Vec<usize>,
    pub k: usize,
    pub lr_grid: Vec<f64>,
    pub noise_grid: Vec<f64>,
    /// Noise held fixed during the lr sweep and vice versa.
    pub fixed_noise: f64,
    pub fixed_lr: f64,
    pub workers: usize,
    /// Metric the argmins tune on: final train loss by default; the
    /// validation metric is always logged either way.
    #[serde(default)]
    pub tune_on_val: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lr,
    Noise,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub width: usize,
    pub axis: SweepAxis,
    pub grid_index: usize,
    pub value: f64,
    pub seed: u64,
    pub final_loss: f64,
    pub val_metric: f64,
    pub diverged: bool,
    pub wall_ms: u64,
    pub step_losses: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArgminEntry {
    pub width: usize,
    pub axis: SweepAxis,
    /// Majority (median) argmin grid index across seeds.
    pub grid_index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub argmins: Vec<ArgminEntry>,
}

fn model_spec(cfg: &ExperimentConfig, n: usize, data: &Dataset) -> Result<MlpSpec> {
    let mut widths = vec![data.d_in()];
    widths.extend(std::iter::repeat_n(n, cfg.hidden_layers));
    widths.push(data.d_out());
    MlpSpec::new(widths, cfg.activation, Readout::Mean)
}

/// Train a fresh width-`n` base model under the width-scaled
/// hyperparameters.
pub fn train_base(
    cfg: &ExperimentConfig,
    data: &Dataset,
    n: usize,
    seed: u64,
) -> Result<Checkpoint> {
    let spec = model_spec(cfg, n, data)?;
    let m = cfg.rule.kind.homogeneity_degree();
    let root = Rng::from_seed(seed);
    let mut model = MlpModel::zeros(spec.clone());
    mup::init_weights(&mut model, &cfg.base, &mut root.child(0))?;
    let hp = mup::resolve(&spec, m, &cfg.base, cfg.rule.decay)?;
    let mut tr = Trainer::new(model, cfg.rule, hp.clone(), cfg.loss);
    let mut sched = BatchSchedule::new(&data.train_idx, cfg.batch_size, root.child(1));
    for _ in 0..cfg.base_steps {
        let idx = sched.next_indices();
        tr.train_step(&data.batch(&idx))?;
    }
    Ok(Checkpoint {
        model: tr.model,
        opt: tr.state,
        rule: cfg.rule,
        base: cfg.base,
        hp,
        mup_parametrized: true,
        lineage: SeedLineage { root: seed, init_stream: 0, data_stream: 1, noise_stream: 2 },
    })
}

/// Mean loss on the validation split (logged, never tuned on).
fn val_metric(tr: &Trainer, data: &Dataset) -> Result<f64> {
    tr.batch_loss(&data.val_batch())
}

fn run_cell(
    cfg: &ExperimentConfig,
    data: &Dataset,
    base_ckpt: &Checkpoint,
    axis: SweepAxis,
    grid_index: usize,
    value: f64,
    seed: u64,
) -> Result<SweepCell> {
    let t0 = std::time::Instant::now();
    let (lr, noise) = match axis {
        SweepAxis::Lr => (value, cfg.fixed_noise),
        SweepAxis::Noise => (cfg.fixed_lr, value),
    };
    let root = Rng::from_seed(seed);
    let up_cfg = UpscaleConfig {
        k: cfg.k,
        sigma_delta: noise,
        gamma_up: lr,
        noise_seed: root.child(2).seed(),
        noise_layers: None,
    };
    let probe =
        if data.val_idx.is_empty() { data.train_batch_all() } else { data.val_batch() };
    let (ckpt, _) = upscale(base_ckpt, &up_cfg, &probe, cfg.loss)?;
    let mut tr = Trainer::with_state(ckpt.model, ckpt.rule, ckpt.hp, ckpt.opt, cfg.loss);
    // data stream distinct from the base phase but shared across cells
    let mut sched = BatchSchedule::new(&data.train_idx, cfg.batch_size, root.child(3));
    let mut step_losses = Vec::with_capacity(cfg.steps as usize);
    let mut diverged = false;
    for _ in 0..cfg.steps {
        let idx = sched.next_indices();
        match tr.train_step(&data.batch(&idx)) {
            Ok(loss) if loss.is_finite() => step_losses.push(loss),
            Ok(_) | Err(crate::error::Error::NanGradient { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let final_loss = if diverged {
        f64::NAN
    } else {
        tr.batch_loss(&data.batch(&data.train_idx))?
    };
    let vm = if diverged { f64::NAN } else { val_metric(&tr, data)? };
    Ok(SweepCell {
        // base width of the upscaled system (the model itself runs at k * n)
        width: base_ckpt.model.spec.widths[1],
        axis,
        grid_index,
        value,
        seed,
        final_loss,
        val_metric: vm,
        diverged,
        wall_ms: t0.elapsed().as_millis() as u64,
        step_losses,
    })
}

/// Argmin with NaN treated as +inf and ties broken toward the smaller grid
/// index (i.e. the smaller learning rate / noise).
fn argmin(losses: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::INFINITY;
    for (i, &v) in losses.iter().enumerate() {
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

fn majority_index(mut per_seed: Vec<usize>) -> usize {
    per_seed.sort_unstable();
    per_seed[per_seed.len() / 2]
}

pub fn run_transfer_sweep(cfg: &ExperimentConfig, data: &Dataset) -> Result<SweepResult> {
    let run = || -> Result<SweepResult> {
        // base checkpoints, one per (width, seed)
        let base_jobs: Vec<(usize, u64)> = cfg
            .widths
            .iter()
            .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
            .collect();
        let bases: Vec<Result<Checkpoint>> = base_jobs
            .par_iter()
            .map(|&(n, s)| train_base(cfg, data, n, s))
            .collect();
        let mut base_map = std::collections::BTreeMap::new();
        for ((n, s), b) in base_jobs.iter().zip(bases) {
            base_map.insert((*n, *s), b?);
        }

        // grid cells in deterministic order
        let mut jobs = Vec::new();
        for &n in &cfg.widths {
            for &s in &cfg.seeds {
                for (i, &lr) in cfg.lr_grid.iter().enumerate() {
                    jobs.push((n, s, SweepAxis::Lr, i, lr));
                }
                for (i, &noise) in cfg.noise_grid.iter().enumerate() {
                    jobs.push((n, s, SweepAxis::Noise, i, noise));
                }
            }
        }
        let cells: Vec<Result<SweepCell>> = jobs
            .par_iter()
            .map(|&(n, s, axis, i, v)| run_cell(cfg, data, &base_map[&(n, s)], axis, i, v, s))
            .collect();
        let mut out = Vec::with_capacity(cells.len());
        for c in cells {
            out.push(c?);
        }

        // per-width argmins, majority over seeds
        let mut argmins = Vec::new();
        for &n in &cfg.widths {
            for (axis, grid) in [(SweepAxis::Lr, &cfg.lr_grid), (SweepAxis::Noise, &cfg.noise_grid)]
            {
                if grid.is_empty() {
                    continue;
                }
                let per_seed: Vec<usize> = cfg
                    .seeds
                    .iter()
                    .map(|&s| {
                        let losses: Vec<f64> = grid
                            .iter()
                            .enumerate()
                            .map(|(i, _)| {
                                out.iter()
                                    .find(|c| {
                                        c.width == n
                                            && c.axis == axis
                                            && c.grid_index == i
                                            && c.seed == s
                                    })
                                    .map(|c| if cfg.tune_on_val { c.val_metric } else { c.final_loss })
                                    .unwrap_or(f64::NAN)
                            })
                            .collect();
                        argmin(&losses)
                    })
                    .collect();
                let idx = majority_index(per_seed);
                argmins.push(ArgminEntry { width: n, axis, grid_index: idx, value: grid[idx] });
            }
        }
        Ok(SweepResult { cells: out, argmins })
    };

    if cfg.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| crate::error::Error::Config(format!("thread pool: {e}")))?;
        pool.install(run)
    } else {
        run()
    }
}
