//! Result emission: CSV and JSON with a frozen column order and
//! 17-significant-digit decimal floats so files round-trip bit-exactly and
//! reruns are byte-identical.

use crate::error::Result;
use crate::harness::sweep::{SweepAxis, SweepResult};
use crate::infwidth::McRow;
use crate::upscale::TrajectoryLog;
use std::fmt::Write as _;
use std::path::Path;

/// 17 significant digits: enough to reproduce any finite f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{:.16e}", x)
    }
}

pub fn parse_f64(s: &str) -> Option<f64> {
    if s == "nan" {
        Some(f64::NAN)
    } else {
        s.parse().ok()
    }
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Format> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(crate::error::Error::Config(format!("unknown format '{other}'"))),
        }
    }
}

fn axis_name(a: SweepAxis) -> &'static str {
    match a {
        SweepAxis::Lr => "lr",
        SweepAxis::Noise => "noise",
    }
}

/// Emit a sweep result. CSV gets three files (`results.csv` per cell,
/// `trajectories.csv` per step, `argmins.csv`); JSON one file with the full
/// payload. Columns are frozen in docs/FORMATS.md.
pub fn emit_sweep(result: &SweepResult, dir: &Path, format: Format) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        Format::Json => {
            let path = dir.join("sweep.json");
            std::fs::write(&path, serde_json::to_string_pretty(result)?)?;
            written.push(path);
        }
        Format::Csv => {
            let header: Vec<String> = [
                "width", "axis", "grid_index", "value", "seed", "final_loss", "val_metric",
                "diverged", "wall_ms",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect();
            let rows: Vec<Vec<String>> = result
                .cells
                .iter()
                .map(|c| {
                    vec![
                        c.width.to_string(),
                        axis_name(c.axis).to_string(),
                        c.grid_index.to_string(),
                        fmt_f64(c.value),
                        c.seed.to_string(),
                        fmt_f64(c.final_loss),
                        fmt_f64(c.val_metric),
                        c.diverged.to_string(),
                        c.wall_ms.to_string(),
                    ]
                })
                .collect();
            let path = dir.join("results.csv");
            write_csv(&path, &header, &rows)?;
            written.push(path);

            let t_header: Vec<String> =
                ["width", "axis", "grid_index", "seed", "step", "train_loss"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect();
            let mut t_rows = Vec::new();
            for c in &result.cells {
                for (s, l) in c.step_losses.iter().enumerate() {
                    t_rows.push(vec![
                        c.width.to_string(),
                        axis_name(c.axis).to_string(),
                        c.grid_index.to_string(),
                        c.seed.to_string(),
                        s.to_string(),
                        fmt_f64(*l),
                    ]);
                }
            }
            let path = dir.join("trajectories.csv");
            write_csv(&path, &t_header, &t_rows)?;
            written.push(path);

            let a_header: Vec<String> = ["width", "axis", "grid_index", "value"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let a_rows: Vec<Vec<String>> = result
                .argmins
                .iter()
                .map(|a| {
                    vec![
                        a.width.to_string(),
                        axis_name(a.axis).to_string(),
                        a.grid_index.to_string(),
                        fmt_f64(a.value),
                    ]
                })
                .collect();
            let path = dir.join("argmins.csv");
            write_csv(&path, &a_header, &a_rows)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Trajectory CSV: `step, train_loss, probe_0.., rms_1..`.
pub fn trajectory_csv(log: &TrajectoryLog) -> String {
    let n_probe = log.rows.first().map_or(0, |r| r.probe_outputs.len());
    let n_rms = log.rows.first().map_or(0, |r| r.hidden_rms.len());
    let mut out = String::new();
    out.push_str("step,train_loss");
    for i in 0..n_probe {
        let _ = write!(out, ",probe_{i}");
    }
    for i in 0..n_rms {
        let _ = write!(out, ",rms_{}", i + 1);
    }
    out.push('\n');
    for r in &log.rows {
        let _ = write!(out, "{},{}", r.step, fmt_f64(r.train_loss));
        for v in &r.probe_outputs {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        for v in &r.hidden_rms {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Monte-Carlo comparison CSV: `width, t, mean_y, oracle_y, abs_err, std`.
pub fn mc_csv(rows: &[McRow]) -> String {
    let mut out = String::from("width,t,mean_y,oracle_y,abs_err,std\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.width,
            r.t,
            fmt_f64(r.mean_y),
            fmt_f64(r.oracle_y),
            fmt_f64(r.abs_err),
            fmt_f64(r.std_y)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::sweep::{ArgminEntry, SweepCell};

    #[test]
    fn f64_round_trips_bitwise() {
        let vals = [
            0.1,
            -1.0 / 3.0,
            1e-300,
            std::f64::consts::PI,
            6.02e23,
            -0.0,
            f64::MIN_POSITIVE,
        ];
        for v in vals {
            let s = fmt_f64(v);
            let back = parse_f64(&s).unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{v} via {s}");
        }
        assert!(parse_f64(&fmt_f64(f64::NAN)).unwrap().is_nan());
    }

    fn sample_result() -> SweepResult {
        SweepResult {
            cells: vec![SweepCell {
                width: 8,
                axis: SweepAxis::Lr,
                grid_index: 0,
                value: 0.1,
                seed: 1,
                final_loss: 0.25,
                val_metric: 0.5,
                diverged: false,
                wall_ms: 12,
                step_losses: vec![1.0, 0.5, 0.25],
            }],
            argmins: vec![ArgminEntry { width: 8, axis: SweepAxis::Lr, grid_index: 0, value: 0.1 }],
        }
    }

    #[test]
    fn empty_sweep_emits_header_only() {
        let dir = std::env::temp_dir().join("widenet_test_empty_sweep");
        let res = SweepResult { cells: vec![], argmins: vec![] };
        let files = emit_sweep(&res, &dir, Format::Csv).unwrap();
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("width,axis,"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn csv_and_json_carry_identical_payloads() {
        let dir = std::env::temp_dir().join("widenet_test_payloads");
        let res = sample_result();
        emit_sweep(&res, &dir, Format::Csv).unwrap();
        emit_sweep(&res, &dir, Format::Json).unwrap();
        let json: SweepResult =
            serde_json::from_str(&std::fs::read_to_string(dir.join("sweep.json")).unwrap())
                .unwrap();
        let csv = std::fs::read_to_string(dir.join("results.csv")).unwrap();
        let line = csv.lines().nth(1).unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0].parse::<usize>().unwrap(), json.cells[0].width);
        assert_eq!(parse_f64(fields[5]).unwrap().to_bits(), json.cells[0].final_loss.to_bits());
        assert_eq!(parse_f64(fields[3]).unwrap().to_bits(), json.cells[0].value.to_bits());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = std::env::temp_dir().join("widenet_test_rerun");
        let res = sample_result();
        emit_sweep(&res, &dir, Format::Csv).unwrap();
        let a = std::fs::read(dir.join("results.csv")).unwrap();
        emit_sweep(&res, &dir, Format::Csv).unwrap();
        let b = std::fs::read(dir.join("results.csv")).unwrap();
        assert_eq!(a, b);
        std::fs::remove_dir_all(&dir).ok();
    }
}
