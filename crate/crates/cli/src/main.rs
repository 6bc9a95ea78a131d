//! `widenet` command-line driver.
//!
//! Exit codes: 0 success, 2 config/input error, 3 numerical failure.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use widenet::checkpoint::{self, Checkpoint, SeedLineage};
use widenet::error::Error;
use widenet::harness::build;
use widenet::harness::config::Config;
use widenet::harness::data::BatchSchedule;
use widenet::harness::report::{self, Format};
use widenet::harness::sweep::{run_transfer_sweep, SweepResult};
use widenet::infwidth::{self, McConfig};
use widenet::linalg::Rng;
use widenet::model::MlpModel;
use widenet::mup;
use widenet::trainer::Trainer;
use widenet::upscale::{train_logged, upscale, UpscaleConfig};
use widenet::widen::{
    rescale_hparams, transfer_opt_state, verify_dynamic_equivalence, widen_report, widen_static,
    EquivalenceConfig, WidenPlan,
};

#[derive(Parser)]
#[command(name = "widenet", version, about = "Width upscaling of MLPs with equivalent training dynamics")]
struct Cli {
    /// Root seed; overrides the seed recorded in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for emitted files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a config file and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Widen a checkpoint into a dynamically equivalent one.
    Widen {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated multipliers k_0..k_L (endpoints 1).
        #[arg(long)]
        k: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-layer widening report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Widen + noise + state transfer + resume training.
    Upscale {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Uniform hidden multiplier.
        #[arg(long)]
        k: usize,
        #[arg(long)]
        noise_std: f64,
        /// Post-upscale learning-rate base constant.
        #[arg(long)]
        lr: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        out: PathBuf,
        /// Config supplying the dataset to continue training on.
        #[arg(long)]
        config: PathBuf,
    },
    /// Lockstep base-vs-widened training check.
    VerifyEquivalence {
        #[arg(long)]
        config: PathBuf,
        /// Fail (exit 3) if any deviation exceeds this.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Infinite-width oracle vs finite-width Monte-Carlo.
    Infwidth {
        /// 3layer | 4layer
        #[arg(long)]
        example: String,
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated widths.
        #[arg(long)]
        widths: String,
        #[arg(long, default_value_t = 32)]
        seeds: usize,
    },
    /// Hyperparameter-transfer sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Re-emit a sweep JSON payload (and print the argmin table).
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_)
                | Error::Csv { .. }
                | Error::InvalidParameter(_)
                | Error::InvalidMultiplier
                | Error::ShapeMismatch(_)
                | Error::CheckpointVersion { .. }
                | Error::CorruptCheckpoint(_) => ExitCode::from(2),
                Error::NanGradient { .. } | Error::Diverged { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> widenet::Result<()> {
    std::fs::create_dir_all(&cli.out_dir)?;
    match cli.cmd {
        Cmd::Train { config } => cmd_train(&config, cli.seed, &cli.out_dir),
        Cmd::Widen { checkpoint, k, out, report } => cmd_widen(&checkpoint, &k, &out, report.as_deref()),
        Cmd::Upscale { checkpoint, k, noise_std, lr, steps, out, config } => {
            cmd_upscale(&checkpoint, k, noise_std, lr, steps, &out, &config, cli.seed, &cli.out_dir)
        }
        Cmd::VerifyEquivalence { config, tol } => cmd_verify(&config, cli.seed, tol),
        Cmd::Infwidth { example, config, widths, seeds } => {
            cmd_infwidth(&example, &config, &widths, seeds, cli.seed, &cli.out_dir)
        }
        Cmd::Sweep { config, format } => cmd_sweep(&config, &format, cli.seed, &cli.out_dir),
        Cmd::Report { input, format } => cmd_report(&input, &format, &cli.out_dir),
    }
}

fn parse_list(s: &str) -> widenet::Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad integer '{p}' in list")))
        })
        .collect()
}

fn probe_inputs(d_in: usize, rng: &mut Rng, count: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..d_in).map(|_| rng.next_gaussian()).collect()).collect()
}

fn cmd_train(config: &Path, seed: Option<u64>, out_dir: &Path) -> widenet::Result<()> {
    let cfg = Config::load(config)?;
    let spec = build::model_spec_from(&cfg)?;
    let rule = build::rule_from(&cfg)?;
    let base = build::base_constants_from(&cfg)?;
    let loss = build::loss_from(&cfg)?;
    let steps = cfg.u64_or("train", "steps", 100)?;
    let batch_size = cfg.usize_or("train", "batch_size", 32)?;
    let seed = seed.unwrap_or(cfg.u64_or("train", "seed", 0)?);

    let data = build::dataset_from(&cfg, seed)?;
    if data.d_in() != spec.d_in() || data.d_out() != spec.d_out() {
        return Err(Error::Config(format!(
            "model is {}->{} but dataset is {}->{}",
            spec.d_in(),
            spec.d_out(),
            data.d_in(),
            data.d_out()
        )));
    }

    let m = rule.kind.homogeneity_degree();
    let root = Rng::from_seed(seed);
    let mut model = MlpModel::zeros(spec.clone());
    mup::init_weights(&mut model, &base, &mut root.child(0))?;
    let hp = mup::resolve(&spec, m, &base, rule.decay)?;
    let mut trainer = Trainer::new(model, rule, hp.clone(), loss);
    if cfg.has("train", "grad_clip") {
        // clipping is not entrywise; it voids the widening-equivalence
        // guarantees and exists only as a stabilization escape hatch
        trainer.grad_clip = Some(cfg.f64("train", "grad_clip")?);
        eprintln!("warning: grad_clip breaks exact widening equivalence");
    }

    let mut sched = BatchSchedule::new(&data.train_idx, batch_size, root.child(1));
    let probe = probe_inputs(spec.d_in(), &mut root.child(4), 4);
    let log = train_logged(
        &mut trainer,
        |_| {
            let idx = sched.next_indices();
            let b = data.batch(&idx);
            (
                b.inputs.iter().map(|x| x.to_vec()).collect(),
                b.targets.iter().map(|t| t.to_vec()).collect(),
            )
        },
        &probe,
        steps,
    )?;

    std::fs::write(out_dir.join("trajectory.csv"), report::trajectory_csv(&log))?;
    let rep = mup::report(&spec, m, &base, rule.decay)?;
    std::fs::write(out_dir.join("hparams.json"), serde_json::to_string_pretty(&rep)?)?;

    let ckpt = Checkpoint {
        model: trainer.model,
        opt: trainer.state,
        rule,
        base,
        hp,
        // sum-readout models use the same per-kind factors but are not the
        // canonical parametrization upscaling assumes
        mup_parametrized: spec.readout == widenet::model::Readout::Mean,
        lineage: SeedLineage { root: seed, init_stream: 0, data_stream: 1, noise_stream: 2 },
    };
    let path = out_dir.join("checkpoint.bin");
    checkpoint::save(&ckpt, &path)?;
    println!(
        "trained {} steps (final loss {:.6}); checkpoint at {}",
        steps,
        log.rows.last().map_or(f64::NAN, |r| r.train_loss),
        path.display()
    );
    if let Some(s) = log.diverged_at {
        return Err(Error::Diverged { step: s });
    }
    Ok(())
}

fn cmd_widen(ckpt_path: &Path, k: &str, out: &Path, report_path: Option<&Path>) -> widenet::Result<()> {
    let ckpt = checkpoint::load(ckpt_path)?;
    let plan = WidenPlan::new(parse_list(k)?)?;
    let m = ckpt.rule.kind.homogeneity_degree();

    let model = widen_static(&ckpt.model, &plan)?;
    let hp = rescale_hparams(&ckpt.hp, &ckpt.model.spec, &plan, m, ckpt.rule.decay)?;
    let opt = transfer_opt_state(&ckpt.opt, &ckpt.model, &plan)?;
    let rep = widen_report(&ckpt.model.spec, &plan, m, ckpt.rule.decay)?;

    let widened = Checkpoint {
        model,
        opt,
        rule: ckpt.rule,
        base: ckpt.base,
        hp,
        mup_parametrized: ckpt.mup_parametrized,
        lineage: ckpt.lineage,
    };
    checkpoint::save(&widened, out)?;
    if let Some(rp) = report_path {
        std::fs::write(rp, serde_json::to_string_pretty(&rep)?)?;
    }
    println!(
        "widened {:?} -> {:?} at step {}",
        ckpt.model.spec.widths,
        widened.model.spec.widths,
        widened.opt.t
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_upscale(
    ckpt_path: &Path,
    k: usize,
    noise_std: f64,
    lr: f64,
    steps: u64,
    out: &Path,
    config: &Path,
    seed: Option<u64>,
    out_dir: &Path,
) -> widenet::Result<()> {
    let cfg = Config::load(config)?;
    let ckpt = checkpoint::load(ckpt_path)?;
    let seed = seed.unwrap_or(cfg.u64_or("train", "seed", 0)?);
    let batch_size = cfg.usize_or("train", "batch_size", 32)?;
    let loss = build::loss_from(&cfg)?;
    let data = build::dataset_from(&cfg, ckpt.lineage.root)?;

    let root = Rng::from_seed(seed);
    let up_cfg = UpscaleConfig {
        k,
        sigma_delta: noise_std,
        gamma_up: lr,
        noise_seed: root.child(2).seed(),
        noise_layers: None,
    };
    let probe_batch =
        if data.val_idx.is_empty() { data.train_batch_all() } else { data.val_batch() };
    let (up, rep) = upscale(&ckpt, &up_cfg, &probe_batch, loss)?;
    std::fs::write(out_dir.join("upscale_report.json"), serde_json::to_string_pretty(&rep)?)?;

    let spec = up.model.spec.clone();
    let mut trainer = Trainer::with_state(up.model.clone(), up.rule, up.hp.clone(), up.opt.clone(), loss);
    let mut sched = BatchSchedule::new(&data.train_idx, batch_size, root.child(3));
    let probe = probe_inputs(spec.d_in(), &mut root.child(4), 4);
    let log = train_logged(
        &mut trainer,
        |_| {
            let idx = sched.next_indices();
            let b = data.batch(&idx);
            (
                b.inputs.iter().map(|x| x.to_vec()).collect(),
                b.targets.iter().map(|t| t.to_vec()).collect(),
            )
        },
        &probe,
        steps,
    )?;
    std::fs::write(out_dir.join("trajectory.csv"), report::trajectory_csv(&log))?;

    let final_ckpt = Checkpoint {
        model: trainer.model,
        opt: trainer.state,
        rule: up.rule,
        base: up.base,
        hp: up.hp,
        mup_parametrized: true,
        lineage: SeedLineage { root: seed, ..up.lineage },
    };
    checkpoint::save(&final_ckpt, out)?;
    println!(
        "upscaled x{} (probe loss {:.6} -> {:.6}), trained {} steps; checkpoint at {}",
        k,
        rep.probe_loss_before,
        rep.probe_loss_after,
        steps,
        out.display()
    );
    if let Some(s) = log.diverged_at {
        return Err(Error::Diverged { step: s });
    }
    Ok(())
}

fn cmd_verify(config: &Path, seed: Option<u64>, tol: Option<f64>) -> widenet::Result<()> {
    let cfg = Config::load(config)?;
    let spec = build::model_spec_from(&cfg)?;
    let rule = build::rule_from(&cfg)?;
    let base = build::base_constants_from(&cfg)?;
    let seed = seed.unwrap_or(cfg.u64_or("verify", "seed", 0)?);
    let k = cfg.usize_list("verify", "k")?;
    let steps = cfg.usize_or("verify", "steps", 50)?;

    let m = rule.kind.homogeneity_degree();
    let mut model = MlpModel::zeros(spec.clone());
    mup::init_weights(&mut model, &base, &mut Rng::from_seed(seed).child(0))?;
    let hp = mup::resolve(&spec, m, &base, rule.decay)?;
    let plan = WidenPlan::new(k)?;
    let eq_cfg = EquivalenceConfig { rule, steps, batch_size: 8, probe_size: 16, seed };
    let rep = verify_dynamic_equivalence(&model, &hp, &plan, &eq_cfg)?;
    println!(
        "steps {}: max output deviation {:.3e}, max widening-relation violation {:.3e}",
        rep.steps, rep.max_output_dev, rep.max_relation_violation
    );
    if let Some(t) = tol {
        if rep.max_output_dev > t || rep.max_relation_violation > t {
            return Err(Error::Diverged { step: rep.steps as u64 });
        }
    }
    Ok(())
}

fn cmd_infwidth(
    example: &str,
    config: &Path,
    widths: &str,
    seeds: usize,
    seed: Option<u64>,
    out_dir: &Path,
) -> widenet::Result<()> {
    let cfg = Config::load(config)?;
    let widths = parse_list(widths)?;
    let base_seed = seed.unwrap_or(cfg.u64_or("oracle", "seed", 0)?);
    let mc = match example {
        "3layer" => McConfig::ThreeLayer(build::oracle3_from(&cfg)?),
        "4layer" => McConfig::FourLayer(build::oracle4_from(&cfg)?),
        other => return Err(Error::Config(format!("unknown example '{other}'"))),
    };
    let rows = infwidth::monte_carlo_compare(&mc, &widths, seeds, base_seed)?;
    let path = out_dir.join(format!("infwidth_{example}.csv"));
    std::fs::write(&path, report::mc_csv(&rows))?;
    for (w, e) in infwidth::max_err_by_width(&rows, &widths) {
        println!("width {w}: max |mean y - oracle| = {e:.5} (t >= 1)");
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_sweep(config: &Path, format: &str, seed: Option<u64>, out_dir: &Path) -> widenet::Result<()> {
    let cfg = Config::load(config)?;
    let exp = build::experiment_from(&cfg, seed)?;
    let data = build::dataset_from(&cfg, exp.seeds[0])?;
    let result = run_transfer_sweep(&exp, &data)?;
    let format: Format = format.parse()?;
    report::emit_sweep(&result, out_dir, format)?;
    // always keep the JSON payload alongside CSV so `report` can re-emit
    if format == Format::Csv {
        report::emit_sweep(&result, out_dir, Format::Json)?;
    }
    for a in &result.argmins {
        println!("width {} {:?} argmin: index {} (value {})", a.width, a.axis, a.grid_index, a.value);
    }
    Ok(())
}

fn cmd_report(input: &Path, format: &str, out_dir: &Path) -> widenet::Result<()> {
    let payload = std::fs::read_to_string(input)?;
    let result: SweepResult =
        serde_json::from_str(&payload).map_err(|e| Error::Config(format!("bad sweep payload: {e}")))?;
    let format: Format = format.parse()?;
    let files = report::emit_sweep(&result, out_dir, format)?;
    for a in &result.argmins {
        println!("width {} {:?} argmin: index {} (value {})", a.width, a.axis, a.grid_index, a.value);
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
