//! End-to-end smoke tests for the `widenet` binary: each subcommand runs,
//! emits its files, and exit codes follow the documented contract
//! (0 ok, 2 config error, 3 numerical failure).

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_widenet"))
}

fn tmpdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("widenet_cli_{name}_{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const TRAIN_CFG: &str = "\
[model]
widths = 4,8,8,2
activation = relu
readout = mean

[optimizer]
rule = adam
decay = decoupled

[base_constants]
gamma = 0.05
lambda = 0.001

[train]
steps = 20
batch_size = 8
seed = 3

[data]
kind = teacher
d_in = 4
d_out = 2
samples = 64
teacher_widths = 16,16
observation_noise = 0.05
seed = 11
";

fn write_cfg(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_widen_upscale_round_trip() {
    let dir = tmpdir("pipeline");
    let cfg = write_cfg(&dir, TRAIN_CFG);

    let st = bin()
        .args(["--out-dir", dir.to_str().unwrap(), "train", "--config", cfg.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(st.success());
    let ckpt = dir.join("checkpoint.bin");
    assert!(ckpt.exists());
    assert!(dir.join("trajectory.csv").exists());
    assert!(dir.join("hparams.json").exists());

    // trajectory has header + initial row + 20 steps
    let traj = std::fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 22);
    assert!(traj.starts_with("step,train_loss,probe_0"));

    let widened = dir.join("widened.bin");
    let report = dir.join("widen_report.json");
    let st = bin()
        .args([
            "widen",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--k",
            "1,2,2,1",
            "--out",
            widened.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(st.success());
    assert!(widened.exists());
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["plan"], serde_json::json!([1, 2, 2, 1]));

    let upscaled = dir.join("upscaled.bin");
    let st = bin()
        .args([
            "--out-dir",
            dir.to_str().unwrap(),
            "upscale",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--k",
            "2",
            "--noise-std",
            "0.5",
            "--lr",
            "0.05",
            "--steps",
            "10",
            "--out",
            upscaled.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(st.success());
    assert!(upscaled.exists());
    assert!(dir.join("upscale_report.json").exists());

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn verify_equivalence_runs_and_enforces_tol() {
    let dir = tmpdir("verify");
    let cfg = write_cfg(
        &dir,
        &format!(
            "{TRAIN_CFG}\n[verify]\nk = 1,2,3,1\nsteps = 25\nseed = 5\n"
        ),
    );
    let out = bin()
        .args(["verify-equivalence", "--config", cfg.to_str().unwrap(), "--tol", "1e-8"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max output deviation"));

    // an impossible tolerance trips the numerical-failure exit code
    let out = bin()
        .args(["verify-equivalence", "--config", cfg.to_str().unwrap(), "--tol", "1e-30"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn infwidth_emits_csv() {
    let dir = tmpdir("infwidth");
    let cfg = write_cfg(
        &dir,
        "[oracle]\ngamma = 0.5\ny_star = 1.0\nhorizon = 5\nt_upscale = 3\ngamma_up = 0.5\nboundary = continuous\nk = 2\n",
    );
    let st = bin()
        .args([
            "--out-dir",
            dir.to_str().unwrap(),
            "infwidth",
            "--example",
            "3layer",
            "--config",
            cfg.to_str().unwrap(),
            "--widths",
            "32,64",
            "--seeds",
            "8",
        ])
        .status()
        .unwrap();
    assert!(st.success());
    let csv = std::fs::read_to_string(dir.join("infwidth_3layer.csv")).unwrap();
    assert!(csv.starts_with("width,t,mean_y,oracle_y,abs_err,std"));
    assert_eq!(csv.lines().count(), 1 + 2 * 6);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_and_report_agree() {
    let dir = tmpdir("sweep");
    let cfg = write_cfg(
        &dir,
        &format!(
            "{TRAIN_CFG}\n[sweep]\nwidths = 8\nmultiplier = 2\nbase_steps = 10\nlr_grid = 0.02,0.08\nnoise_grid = 0.0,0.5\nfixed_lr = 0.05\nfixed_noise = 0.25\nseeds = 1,2\nworkers = 2\n[model]\nhidden_layers = 2\n"
        ),
    );
    let out = bin()
        .args(["--out-dir", dir.to_str().unwrap(), "sweep", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("results.csv").exists());
    assert!(dir.join("sweep.json").exists());
    let results = std::fs::read_to_string(dir.join("results.csv")).unwrap();
    // 2 widths-axes grids x 2 cells x 2 seeds = 8 rows + header
    assert_eq!(results.lines().count(), 9);

    // `report` re-emits byte-identical CSVs from the JSON payload
    let before = std::fs::read(dir.join("results.csv")).unwrap();
    let rep_dir = dir.join("reemit");
    let st = bin()
        .args([
            "--out-dir",
            rep_dir.to_str().unwrap(),
            "report",
            "--input",
            dir.join("sweep.json").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(st.success());
    let after = std::fs::read(rep_dir.join("results.csv")).unwrap();
    assert_eq!(before, after);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_errors_exit_2() {
    let dir = tmpdir("badcfg");
    let cfg = write_cfg(&dir, "[model]\nwidths = 4,8\nactivation = swish\n");
    let out = bin()
        .args(["train", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.join("nope.cfg");
    let out = bin()
        .args(["train", "--config", missing.to_str().unwrap()])
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(0));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn divergence_exits_3() {
    let dir = tmpdir("diverge");
    let cfg = write_cfg(&dir, &TRAIN_CFG.replace("gamma = 0.05", "gamma = 1e9"));
    let out = bin()
        .args(["--out-dir", dir.to_str().unwrap(), "train", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::remove_dir_all(&dir).ok();
}
