//! Checkpoint file format: a JSON header (spec, weight kinds, hyperparameters,
//! seed lineage, step count, array directory) followed by raw little-endian
//! float64 arrays. Round trips are bit-exact.
//!
//! Layout: magic `WNCP`, u32 version, u64 header length, header JSON, then
//! the arrays in directory order. See docs/FORMATS.md.

use crate::bytes::{put_f64s, put_u32, put_u64, Cursor};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{MlpModel, MlpSpec};
use crate::mup::{classify, classify_biases, BaseConstants, WeightKind};
use crate::optim::{OptState, ParamState, UpdateRule};
use crate::trainer::ResolvedHParams;
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 4] = b"WNCP";
const VERSION: u32 = 1;

/// Seeds of the independent RNG streams a run draws from, recorded so any
/// trajectory can be reconstructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SeedLineage {
    pub root: u64,
    pub init_stream: u64,
    pub data_stream: u64,
    pub noise_stream: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub opt: OptState,
    pub rule: UpdateRule,
    pub base: BaseConstants,
    pub hp: ResolvedHParams,
    /// Trained under raw Table-2 muP scalings from these base constants.
    pub mup_parametrized: bool,
    pub lineage: SeedLineage,
}

impl Checkpoint {
    pub fn step_count(&self) -> u64 {
        self.opt.t
    }

    pub fn weight_kinds(&self) -> Vec<WeightKind> {
        classify(&self.model.spec)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: MlpSpec,
    weight_kinds: Vec<WeightKind>,
    bias_kinds: Vec<WeightKind>,
    rule: UpdateRule,
    base: BaseConstants,
    hp: ResolvedHParams,
    mup_parametrized: bool,
    step_count: u64,
    lineage: SeedLineage,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
}

fn collect_arrays(ckpt: &Checkpoint) -> (Vec<ArrayEntry>, Vec<&[f64]>) {
    let depth = ckpt.model.spec.depth();
    let mut dir = Vec::new();
    let mut arrays: Vec<&[f64]> = Vec::new();
    for (l, w) in ckpt.model.weights.iter().enumerate() {
        dir.push(ArrayEntry { name: format!("w{}", l + 1), rows: w.rows, cols: w.cols });
        arrays.push(&w.data);
    }
    if ckpt.model.spec.bias {
        for (l, b) in ckpt.model.biases.iter().enumerate() {
            dir.push(ArrayEntry { name: format!("b{}", l + 1), rows: b.len(), cols: 1 });
            arrays.push(b);
        }
    }
    dir.push(ArrayEntry { name: "multipliers".into(), rows: depth, cols: 1 });
    arrays.push(&ckpt.model.multipliers);
    for (i, slot) in ckpt.opt.slots.iter().enumerate() {
        match slot {
            ParamState::Stateless => {}
            ParamState::Momentum { buf } => {
                dir.push(ArrayEntry { name: format!("opt{i}.momentum"), rows: buf.len(), cols: 1 });
                arrays.push(buf);
            }
            ParamState::Moments { m, v, vmax } => {
                dir.push(ArrayEntry { name: format!("opt{i}.exp_avg"), rows: m.len(), cols: 1 });
                arrays.push(m);
                dir.push(ArrayEntry { name: format!("opt{i}.exp_avg_sq"), rows: v.len(), cols: 1 });
                arrays.push(v);
                if let Some(vm) = vmax {
                    dir.push(ArrayEntry { name: format!("opt{i}.max_exp_avg_sq"), rows: vm.len(), cols: 1 });
                    arrays.push(vm);
                }
            }
        }
    }
    (dir, arrays)
}

pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.model.check_shapes()?;
    let (dir, arrays) = collect_arrays(ckpt);
    let header = Header {
        version: VERSION,
        spec: ckpt.model.spec.clone(),
        weight_kinds: classify(&ckpt.model.spec),
        bias_kinds: if ckpt.model.spec.bias {
            classify_biases(&ckpt.model.spec)
        } else {
            Vec::new()
        },
        rule: ckpt.rule,
        base: ckpt.base,
        hp: ckpt.hp.clone(),
        mup_parametrized: ckpt.mup_parametrized,
        step_count: ckpt.opt.t,
        lineage: ckpt.lineage,
        arrays: dir,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, json.len() as u64);
    out.extend_from_slice(&json);
    for a in arrays {
        put_f64s(&mut out, a);
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor::new(bytes);
    if cur.get_bytes(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = cur.get_u32()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion { expected: VERSION, found: version });
    }
    let json_len = cur.get_u64()? as usize;
    let header: Header = serde_json::from_slice(cur.get_bytes(json_len)?)?;
    if header.version != VERSION {
        return Err(Error::CheckpointVersion { expected: VERSION, found: header.version });
    }

    let spec = header.spec;
    let depth = spec.depth();
    let mut idx = 0usize;

    fn read_named(
        cur: &mut Cursor,
        arrays: &[ArrayEntry],
        idx: &mut usize,
        expect: &str,
    ) -> Result<Vec<f64>> {
        let entry = arrays
            .get(*idx)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing array {expect}")))?;
        if entry.name != expect {
            return Err(Error::CorruptCheckpoint(format!(
                "array order: expected {expect}, found {}",
                entry.name
            )));
        }
        *idx += 1;
        cur.get_f64s(entry.rows * entry.cols)
    }
    fn peek_is(arrays: &[ArrayEntry], idx: usize, name: &str) -> bool {
        arrays.get(idx).is_some_and(|e| e.name == name)
    }

    let dir = &header.arrays;
    let mut weights = Vec::with_capacity(depth);
    for l in 0..depth {
        let data = read_named(&mut cur, dir, &mut idx, &format!("w{}", l + 1))?;
        weights.push(Mat { rows: spec.widths[l + 1], cols: spec.widths[l], data });
    }
    let mut biases = Vec::with_capacity(depth);
    if spec.bias {
        for l in 0..depth {
            biases.push(read_named(&mut cur, dir, &mut idx, &format!("b{}", l + 1))?);
        }
    } else {
        biases = vec![Vec::new(); depth];
    }
    let multipliers = read_named(&mut cur, dir, &mut idx, "multipliers")?;

    // optimizer slots: reconstruct from the directory tail
    let mut slots = Vec::new();
    let n_params = if spec.bias { 2 * depth } else { depth };
    for i in 0..n_params {
        if peek_is(dir, idx, &format!("opt{i}.momentum")) {
            let buf = read_named(&mut cur, dir, &mut idx, &format!("opt{i}.momentum"))?;
            slots.push(ParamState::Momentum { buf });
        } else if peek_is(dir, idx, &format!("opt{i}.exp_avg")) {
            let m = read_named(&mut cur, dir, &mut idx, &format!("opt{i}.exp_avg"))?;
            let v = read_named(&mut cur, dir, &mut idx, &format!("opt{i}.exp_avg_sq"))?;
            let vmax = if peek_is(dir, idx, &format!("opt{i}.max_exp_avg_sq")) {
                Some(read_named(&mut cur, dir, &mut idx, &format!("opt{i}.max_exp_avg_sq"))?)
            } else {
                None
            };
            slots.push(ParamState::Moments { m, v, vmax });
        } else {
            slots.push(ParamState::Stateless);
        }
    }
    if cur.remaining() != 0 {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", cur.remaining())));
    }

    let model = MlpModel { spec, weights, biases, multipliers };
    model.check_shapes()?;
    Ok(Checkpoint {
        model,
        opt: OptState { t: header.step_count, slots },
        rule: header.rule,
        base: header.base,
        hp: header.hp,
        mup_parametrized: header.mup_parametrized,
        lineage: header.lineage,
    })
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(ckpt)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path)?)
}
