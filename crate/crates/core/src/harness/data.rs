//! Dataset ingestion: synthetic teacher tasks and numeric CSV files, with a
//! train/val split and train-only normalization stats.

use crate::error::{Error, Result};
use crate::linalg::{gauss_mat, Mat, Rng};
use crate::model::{Activation, Batch, MlpModel, MlpSpec, Readout};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnNorm {
    pub mean: f64,
    pub std: f64,
    /// Binary columns (train values all 0/1) are left unnormalized.
    pub normalized: bool,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Mat,
    pub targets: Mat,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub norm: Vec<ColumnNorm>,
}

impl Dataset {
    pub fn d_in(&self) -> usize {
        self.features.cols
    }

    pub fn d_out(&self) -> usize {
        self.targets.cols
    }

    pub fn batch(&self, idx: &[usize]) -> Batch<'_> {
        Batch {
            inputs: idx.iter().map(|&i| self.features.row(i)).collect(),
            targets: idx.iter().map(|&i| self.targets.row(i)).collect(),
        }
    }

    pub fn train_batch_all(&self) -> Batch<'_> {
        self.batch(&self.train_idx)
    }

    pub fn val_batch(&self) -> Batch<'_> {
        self.batch(&self.val_idx)
    }
}

/// Deterministic batch schedule: shuffled epochs over the train split.
pub struct BatchSchedule {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: Rng,
}

impl BatchSchedule {
    pub fn new(train_idx: &[usize], batch_size: usize, rng: Rng) -> Self {
        // a batch can never exceed the split; full-batch descent otherwise
        let batch_size = batch_size.min(train_idx.len()).max(1);
        BatchSchedule { order: train_idx.to_vec(), pos: usize::MAX, batch_size, rng }
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos == usize::MAX || self.pos + self.batch_size > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.batch_size].to_vec();
        self.pos += self.batch_size;
        out
    }
}

fn split_idx(n: usize, val_fraction: f64, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// Compute train-column stats and standardize the non-binary columns in
/// place. Binary columns and (near-)constant columns pass through.
fn normalize(features: &mut Mat, train_idx: &[usize]) -> Vec<ColumnNorm> {
    let cols = features.cols;
    let mut norms = Vec::with_capacity(cols);
    for j in 0..cols {
        let vals: Vec<f64> = train_idx.iter().map(|&i| features.get(i, j)).collect();
        let binary = vals.iter().all(|&v| v == 0.0 || v == 1.0);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        let std = var.sqrt();
        let normalized = !binary && std > 1e-12;
        if normalized {
            for i in 0..features.rows {
                let v = features.get(i, j);
                features.set(i, j, (v - mean) / std);
            }
        }
        norms.push(ColumnNorm { mean, std, normalized });
    }
    norms
}

/// Labels from a fixed random teacher MLP plus observation noise; the
/// desk-scale stand-in for a real tabular task.
pub fn gen_teacher_data(
    rng: &mut Rng,
    d_in: usize,
    d_out: usize,
    samples: usize,
    teacher_hidden: &[usize],
    observation_noise: f64,
) -> Result<Dataset> {
    Ok(gen_teacher_with_model(rng, d_in, d_out, samples, teacher_hidden, observation_noise)?.0)
}

pub(crate) fn gen_teacher_with_model(
    rng: &mut Rng,
    d_in: usize,
    d_out: usize,
    samples: usize,
    teacher_hidden: &[usize],
    observation_noise: f64,
) -> Result<(Dataset, MlpModel)> {
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be >= 1".into()));
    }
    if observation_noise < 0.0 {
        return Err(Error::InvalidParameter("negative observation noise".into()));
    }
    let mut widths = vec![d_in];
    widths.extend_from_slice(teacher_hidden);
    widths.push(d_out);
    let spec = MlpSpec::new(widths, Activation::Relu, Readout::Sum)?;
    let mut teacher = MlpModel::zeros(spec);
    for w in teacher.weights.iter_mut() {
        // standard 1/fan_in init keeps teacher outputs O(1)
        *w = gauss_mat(rng, w.rows, w.cols, (1.0 / w.cols as f64).sqrt())?;
    }

    let features = gauss_mat(rng, samples, d_in, 1.0)?;
    let mut targets = Mat::zeros(samples, d_out);
    for i in 0..samples {
        let (y, _) = teacher.forward(features.row(i))?;
        for j in 0..d_out {
            targets.set(i, j, y[j] + observation_noise * rng.next_gaussian());
        }
    }
    let mut features = features;
    let (train_idx, val_idx) = split_idx(samples, 0.2, rng);
    let norm = normalize(&mut features, &train_idx);
    Ok((Dataset { features, targets, train_idx, val_idx, norm }, teacher))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone)]
pub struct CsvSchema {
    /// Header name of the target column.
    pub target_column: String,
    pub task: Task,
    /// Class count for classification targets (one-hot encoded).
    pub classes: usize,
    pub val_fraction: f64,
    pub split_seed: u64,
}

/// Parse a numeric CSV with a header row. Continuous features are
/// standardized with train-split statistics, binary features left unchanged;
/// classification uses a stratified split.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    load_csv_str(&text, schema)
}

pub fn load_csv_str(text: &str, schema: &CsvSchema) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Csv { line: 1, msg: "empty file".into() })?;
    let cols: Vec<&str> = header.split(',').map(|c| c.trim()).collect();
    let target_pos = cols
        .iter()
        .position(|c| *c == schema.target_column)
        .ok_or_else(|| Error::Csv {
            line: 1,
            msg: format!("target column '{}' not in header", schema.target_column),
        })?;
    let d_in = cols.len() - 1;
    if d_in == 0 {
        return Err(Error::Csv { line: 1, msg: "no feature columns".into() });
    }

    let mut feat_rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_targets: Vec<f64> = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|c| c.trim()).collect();
        if fields.len() != cols.len() {
            return Err(Error::Csv {
                line: line_no,
                msg: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let mut row = Vec::with_capacity(d_in);
        for (j, f) in fields.iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| Error::Csv {
                line: line_no,
                msg: format!("non-numeric cell '{}' in column '{}'", f, cols[j]),
            })?;
            if j == target_pos {
                raw_targets.push(v);
            } else {
                row.push(v);
            }
        }
        feat_rows.push(row);
    }
    if feat_rows.is_empty() {
        return Err(Error::Csv { line: 1, msg: "no data rows".into() });
    }

    let samples = feat_rows.len();
    let mut features = Mat::zeros(samples, d_in);
    for (i, row) in feat_rows.iter().enumerate() {
        features.data[i * d_in..(i + 1) * d_in].copy_from_slice(row);
    }

    let targets = match schema.task {
        Task::Regression => {
            let mut t = Mat::zeros(samples, 1);
            for (i, &v) in raw_targets.iter().enumerate() {
                t.set(i, 0, v);
            }
            t
        }
        Task::Classification => {
            let mut t = Mat::zeros(samples, schema.classes);
            for (i, &v) in raw_targets.iter().enumerate() {
                let c = v as usize;
                if v.fract() != 0.0 || c >= schema.classes {
                    return Err(Error::Csv {
                        line: i + 2,
                        msg: format!("class label {v} out of 0..{}", schema.classes),
                    });
                }
                t.set(i, c, 1.0);
            }
            t
        }
    };

    let mut rng = Rng::from_seed(schema.split_seed);
    let (train_idx, val_idx) = match schema.task {
        Task::Regression => split_idx(samples, schema.val_fraction, &mut rng),
        Task::Classification => {
            // stratified: split each class 80/20 and merge
            let mut train = Vec::new();
            let mut val = Vec::new();
            for c in 0..schema.classes {
                let mut members: Vec<usize> =
                    (0..samples).filter(|&i| targets.get(i, c) == 1.0).collect();
                rng.shuffle(&mut members);
                let n_val = ((members.len() as f64) * schema.val_fraction).round() as usize;
                val.extend_from_slice(&members[..n_val]);
                train.extend_from_slice(&members[n_val..]);
            }
            (train, val)
        }
    };
    let norm = normalize(&mut features, &train_idx);
    Ok(Dataset { features, targets, train_idx, val_idx, norm })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_is_reproducible() {
        let mk = || {
            gen_teacher_data(&mut Rng::from_seed(5), 4, 2, 64, &[8, 8], 0.1).unwrap()
        };
        let a = mk();
        let b = mk();
        assert_eq!(a.features, b.features);
        assert_eq!(a.targets, b.targets);
        assert_eq!(a.train_idx, b.train_idx);
    }

    #[test]
    fn zero_noise_teacher_is_exactly_learnable() {
        // with no observation noise the teacher itself achieves loss 0
        // (evaluated on the un-normalized inputs reconstructed from the
        // stored column stats)
        let (d, teacher) =
            gen_teacher_with_model(&mut Rng::from_seed(8), 3, 2, 32, &[8, 8], 0.0).unwrap();
        let mut worst = 0.0f64;
        for i in 0..d.features.rows {
            let raw: Vec<f64> = (0..d.features.cols)
                .map(|j| {
                    let v = d.features.get(i, j);
                    if d.norm[j].normalized {
                        v * d.norm[j].std + d.norm[j].mean
                    } else {
                        v
                    }
                })
                .collect();
            let (y, _) = teacher.forward(&raw).unwrap();
            worst = worst.max(crate::linalg::max_abs_diff(&y, d.targets.row(i)));
        }
        assert!(worst <= 1e-12, "teacher residual {worst}");
    }

    #[test]
    fn teacher_noise_adds_label_variance() {
        let var_of = |noise: f64| {
            let d = gen_teacher_data(&mut Rng::from_seed(3), 4, 1, 4000, &[8], noise).unwrap();
            let vals: Vec<f64> = (0..d.targets.rows).map(|i| d.targets.get(i, 0)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64
        };
        let clean = var_of(0.0);
        let sigma = 0.8;
        let noisy = var_of(sigma);
        let expect = clean + sigma * sigma;
        assert!((noisy - expect).abs() < 0.15 * expect, "{noisy} vs {expect}");
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let d = gen_teacher_data(&mut Rng::from_seed(1), 3, 1, 100, &[4], 0.0).unwrap();
        assert_eq!(d.train_idx.len(), 80);
        assert_eq!(d.val_idx.len(), 20);
        let mut all: Vec<usize> = d.train_idx.iter().chain(&d.val_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    const TOY: &str = "\
a,b,y
1.0,0.0,3.5
2.0,1.0,-1.25
3.0,1.0,0.5
";

    #[test]
    fn csv_exact_values() {
        let schema = CsvSchema {
            target_column: "y".into(),
            task: Task::Regression,
            classes: 0,
            val_fraction: 0.0,
            split_seed: 1,
        };
        let d = load_csv_str(TOY, &schema).unwrap();
        assert_eq!(d.targets.data, vec![3.5, -1.25, 0.5]);
        // column b is binary: untouched
        assert!(!d.norm[1].normalized);
        assert_eq!(d.features.get(0, 1), 0.0);
        assert_eq!(d.features.get(1, 1), 1.0);
        // column a is standardized over the (full) train split
        assert!(d.norm[0].normalized);
        let vals: Vec<f64> = (0..3).map(|i| d.features.get(i, 0)).collect();
        let mean = vals.iter().sum::<f64>() / 3.0;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_bad_rows_name_the_line() {
        let schema = CsvSchema {
            target_column: "y".into(),
            task: Task::Regression,
            classes: 0,
            val_fraction: 0.0,
            split_seed: 1,
        };
        let bad = "a,b,y\n1.0,2.0,3.0\n4.0,oops,6.0\n";
        match load_csv_str(bad, &schema) {
            Err(Error::Csv { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("oops"));
            }
            other => panic!("expected csv error, got {other:?}"),
        }
        let short = "a,b,y\n1.0,2.0\n";
        match load_csv_str(short, &schema) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected csv error, got {other:?}"),
        }
    }

    #[test]
    fn csv_classification_one_hot_stratified() {
        let text = "f,y\n0.1,0\n0.2,1\n0.3,0\n0.4,1\n0.5,0\n0.6,1\n0.7,0\n0.8,1\n0.9,0\n1.0,1\n";
        let schema = CsvSchema {
            target_column: "y".into(),
            task: Task::Classification,
            classes: 2,
            val_fraction: 0.2,
            split_seed: 7,
        };
        let d = load_csv_str(text, &schema).unwrap();
        assert_eq!(d.targets.cols, 2);
        // one val sample per class
        let class_of = |i: usize| if d.targets.get(i, 1) == 1.0 { 1 } else { 0 };
        let val_classes: Vec<usize> = d.val_idx.iter().map(|&i| class_of(i)).collect();
        assert_eq!(val_classes.len(), 2);
        assert!(val_classes.contains(&0) && val_classes.contains(&1));
    }

    #[test]
    fn batch_schedule_deterministic_epochs() {
        let d = gen_teacher_data(&mut Rng::from_seed(2), 3, 1, 50, &[4], 0.0).unwrap();
        let mut s1 = BatchSchedule::new(&d.train_idx, 8, Rng::from_seed(11));
        let mut s2 = BatchSchedule::new(&d.train_idx, 8, Rng::from_seed(11));
        for _ in 0..10 {
            assert_eq!(s1.next_indices(), s2.next_indices());
        }
    }
}
