//! Assemble domain objects from config files. Key names mirror the CLI
//! flags; see docs/CONFIG.md.

use crate::error::{Error, Result};
use crate::harness::config::Config;
use crate::harness::data::{gen_teacher_data, load_csv, CsvSchema, Dataset, Task};
use crate::harness::sweep::ExperimentConfig;
use crate::infwidth::{Boundary, OracleConfig3, OracleConfig4};
use crate::linalg::Rng;
use crate::model::{Activation, Loss, MlpSpec, Readout};
use crate::mup::BaseConstants;
use crate::optim::{DecayMode, RuleKind, UpdateRule};

pub fn activation_from(name: &str) -> Result<Activation> {
    match name {
        "relu" => Ok(Activation::Relu),
        "identity" => Ok(Activation::Identity),
        "tanh" => Ok(Activation::Tanh),
        other => Err(Error::Config(format!("unknown activation '{other}'"))),
    }
}

pub fn model_spec_from(cfg: &Config) -> Result<MlpSpec> {
    let widths = cfg.usize_list("model", "widths")?;
    let activation = activation_from(cfg.str_or("model", "activation", "relu"))?;
    let readout = match cfg.str_or("model", "readout", "mean") {
        "sum" => Readout::Sum,
        "mean" => Readout::Mean,
        other => return Err(Error::Config(format!("unknown readout '{other}'"))),
    };
    let mut spec = MlpSpec::new(widths, activation, readout)?;
    spec.bias = cfg.bool_or("model", "bias", false)?;
    Ok(spec)
}

pub fn rule_from(cfg: &Config) -> Result<UpdateRule> {
    let decay = match cfg.str_or("optimizer", "decay", "none") {
        "none" => DecayMode::None,
        "vanilla" => DecayMode::Vanilla,
        "decoupled" => DecayMode::Decoupled,
        other => return Err(Error::Config(format!("unknown decay mode '{other}'"))),
    };
    let beta = cfg.f64_or("optimizer", "momentum", 0.9)?;
    let dampening = cfg.f64_or("optimizer", "dampening", 0.0)?;
    let beta1 = cfg.f64_or("optimizer", "beta1", 0.9)?;
    let beta2 = cfg.f64_or("optimizer", "beta2", 0.999)?;
    let kind = match cfg.str_or("optimizer", "rule", "sgd") {
        "sgd" => RuleKind::Sgd,
        "sgd_momentum" => RuleKind::SgdMomentum { beta, dampening },
        "nesterov" => RuleKind::Nesterov { beta, dampening },
        "adam" => RuleKind::Adam { beta1, beta2 },
        "adamw" => RuleKind::Adam { beta1, beta2 },
        "amsgrad" => RuleKind::Amsgrad { beta1, beta2 },
        other => return Err(Error::Config(format!("unknown optimizer rule '{other}'"))),
    };
    kind.validate()?;
    if cfg.str_or("optimizer", "rule", "sgd") == "adamw" {
        return Ok(UpdateRule::adamw(beta1, beta2));
    }
    Ok(UpdateRule::new(kind, decay))
}

pub fn base_constants_from(cfg: &Config) -> Result<BaseConstants> {
    let base = BaseConstants {
        gamma: cfg.f64("base_constants", "gamma")?,
        lambda: cfg.f64_or("base_constants", "lambda", 0.0)?,
        epsilon: cfg.f64_or("base_constants", "epsilon", 1e-8)?,
        sigma: cfg.f64_or("base_constants", "sigma", 1.0)?,
        sigma_delta: cfg.f64_or("base_constants", "sigma_delta", 0.0)?,
    };
    base.validate()?;
    Ok(base)
}

pub fn loss_from(cfg: &Config) -> Result<Loss> {
    match cfg.str_or("train", "loss", "mse") {
        "mse" => Ok(Loss::Mse),
        "cross_entropy" => Ok(Loss::CrossEntropy),
        other => Err(Error::Config(format!("unknown loss '{other}'"))),
    }
}

/// Build the dataset named by `[data] kind`. Teacher data derives its RNG
/// from `seed`; CSV loading is deterministic given the file.
pub fn dataset_from(cfg: &Config, seed: u64) -> Result<Dataset> {
    match cfg.str_or("data", "kind", "teacher") {
        "teacher" => {
            let d_in = cfg.usize_or("data", "d_in", 4)?;
            let d_out = cfg.usize_or("data", "d_out", 1)?;
            let samples = cfg.usize_or("data", "samples", 256)?;
            let hidden = if cfg.has("data", "teacher_widths") {
                cfg.usize_list("data", "teacher_widths")?
            } else {
                vec![32, 32]
            };
            let noise = cfg.f64_or("data", "observation_noise", 0.0)?;
            let data_seed = cfg.u64_or("data", "seed", seed ^ 0x9E37_79B9)?;
            gen_teacher_data(&mut Rng::from_seed(data_seed), d_in, d_out, samples, &hidden, noise)
        }
        "csv" => {
            let path = cfg.raw("data", "path")?;
            let task = match cfg.str_or("data", "task", "regression") {
                "regression" => Task::Regression,
                "classification" => Task::Classification,
                other => return Err(Error::Config(format!("unknown task '{other}'"))),
            };
            let schema = CsvSchema {
                target_column: cfg.raw("data", "target_column")?.to_string(),
                task,
                classes: cfg.usize_or("data", "classes", 0)?,
                val_fraction: cfg.f64_or("data", "val_fraction", 0.2)?,
                split_seed: cfg.u64_or("data", "split_seed", 0)?,
            };
            load_csv(std::path::Path::new(path), &schema)
        }
        other => Err(Error::Config(format!("unknown data kind '{other}'"))),
    }
}

pub fn experiment_from(cfg: &Config, seed_override: Option<u64>) -> Result<ExperimentConfig> {
    let seeds = if let Some(s) = seed_override {
        vec![s]
    } else if cfg.has("sweep", "seeds") {
        cfg.u64_list("sweep", "seeds")?
    } else {
        vec![cfg.u64_or("train", "seed", 0)?]
    };
    Ok(ExperimentConfig {
        hidden_layers: cfg.usize_or("model", "hidden_layers", 2)?,
        activation: activation_from(cfg.str_or("model", "activation", "relu"))?,
        rule: rule_from(cfg)?,
        base: base_constants_from(cfg)?,
        loss: loss_from(cfg)?,
        base_steps: cfg.u64_or("sweep", "base_steps", 100)?,
        steps: cfg.u64_or("train", "steps", 100)?,
        batch_size: cfg.usize_or("train", "batch_size", 32)?,
        seeds,
        widths: cfg.usize_list("sweep", "widths")?,
        k: cfg.usize_or("sweep", "multiplier", 2)?,
        lr_grid: if cfg.has("sweep", "lr_grid") { cfg.f64_list("sweep", "lr_grid")? } else { vec![] },
        noise_grid: if cfg.has("sweep", "noise_grid") {
            cfg.f64_list("sweep", "noise_grid")?
        } else {
            vec![]
        },
        fixed_noise: cfg.f64_or("sweep", "fixed_noise", 0.0)?,
        fixed_lr: cfg.f64_or("sweep", "fixed_lr", 0.1)?,
        workers: cfg.usize_or("sweep", "workers", 0)?,
        tune_on_val: match cfg.str_or("sweep", "tune_metric", "train") {
            "train" => false,
            "val" => true,
            other => return Err(Error::Config(format!("unknown tune_metric '{other}'"))),
        },
    })
}

fn boundary_from(cfg: &Config) -> Result<Boundary> {
    match cfg.str_or("oracle", "boundary", "stall") {
        "stall" => Ok(Boundary::Stall),
        "continuous" => Ok(Boundary::Continuous),
        other => Err(Error::Config(format!("unknown boundary '{other}'"))),
    }
}

pub fn oracle3_from(cfg: &Config) -> Result<OracleConfig3> {
    Ok(OracleConfig3 {
        x: cfg.f64_or("oracle", "x", 1.0)?,
        y_star: cfg.f64_or("oracle", "y_star", 1.0)?,
        sigma: cfg.f64_or("oracle", "sigma", 1.0)?,
        gamma: cfg.f64("oracle", "gamma")?,
        t_upscale: cfg.usize_or("oracle", "t_upscale", usize::MAX)?,
        gamma_up: cfg.f64_or("oracle", "gamma_up", cfg.f64("oracle", "gamma")?)?,
        sigma_da: cfg.f64_or("oracle", "sigma_da", 0.0)?,
        sigma_db: cfg.f64_or("oracle", "sigma_db", 0.0)?,
        sigma_dc: cfg.f64_or("oracle", "sigma_dc", 0.0)?,
        horizon: cfg.usize_or("oracle", "horizon", 10)?,
        boundary: boundary_from(cfg)?,
        k: cfg.usize_or("oracle", "k", 2)?,
    })
}

pub fn oracle4_from(cfg: &Config) -> Result<OracleConfig4> {
    let c3 = oracle3_from(cfg)?;
    Ok(OracleConfig4 {
        x: c3.x,
        y_star: c3.y_star,
        sigma: c3.sigma,
        gamma: c3.gamma,
        t_upscale: c3.t_upscale,
        gamma_up: c3.gamma_up,
        sigma_da: c3.sigma_da,
        sigma_db: c3.sigma_db,
        sigma_dc: c3.sigma_dc,
        sigma_dd: cfg.f64_or("oracle", "sigma_dd", 0.0)?,
        horizon: c3.horizon,
        boundary: c3.boundary,
        k: c3.k,
    })
}
