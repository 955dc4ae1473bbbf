//! Versioned binary checkpoints.
//!
//! Layout (little endian):
//!
//! | bytes | content                                             |
//! |-------|-----------------------------------------------------|
//! | 4     | magic `MTGC`                                        |
//! | 1     | format version (1)                                  |
//! | 24    | `i32` × 6: J, T, T_out, H, L, flags                 |
//! | rest  | `f64` blobs: W_in; per block γ, β, running mean,    |
//! |       | running var, A_gs1, A_gs2, W_gs1, W_gs2, A_ls, W_ls, |
//! |       | A_jt, W_jt; then W_out                              |
//!
//! Flag bit 0 is the global last-frame residual.

use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MTGC";
pub const VERSION: u8 = 1;
const FLAG_GLOBAL_RESIDUAL: i32 = 1;

fn blobs<S: Scalar>(model: &Model<S>) -> Vec<&Tensor<S>> {
    let mut out = vec![&model.w_in];
    for b in &model.blocks {
        out.extend([
            &b.bn.gamma,
            &b.bn.beta,
            &b.bn.running_mean,
            &b.bn.running_var,
            &b.gs1.adjacency,
            &b.gs2.adjacency,
            &b.gs1.weight,
            &b.gs2.weight,
            &b.ls.adjacency,
            &b.ls.weight,
            &b.jt.adjacency,
            &b.jt.weight,
        ]);
    }
    out.push(&model.w_out);
    out
}

fn blobs_mut<S: Scalar>(model: &mut Model<S>) -> Vec<&mut Tensor<S>> {
    let mut out = vec![&mut model.w_in];
    for b in &mut model.blocks {
        out.extend([
            &mut b.bn.gamma,
            &mut b.bn.beta,
            &mut b.bn.running_mean,
            &mut b.bn.running_var,
            &mut b.gs1.adjacency,
            &mut b.gs2.adjacency,
            &mut b.gs1.weight,
            &mut b.gs2.weight,
            &mut b.ls.adjacency,
            &mut b.ls.weight,
            &mut b.jt.adjacency,
            &mut b.jt.weight,
        ]);
    }
    out.push(&mut model.w_out);
    out
}

pub fn to_bytes<S: Scalar>(model: &Model<S>) -> Vec<u8> {
    let c = &model.config;
    let mut buf = Vec::with_capacity(29 + 8 * model.num_learnable());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    let flags = if c.use_global_residual { FLAG_GLOBAL_RESIDUAL } else { 0 };
    for v in [c.joints, c.input_frames, c.output_frames, c.hidden, c.layers] {
        buf.extend_from_slice(&(v as i32).to_le_bytes());
    }
    buf.extend_from_slice(&flags.to_le_bytes());
    for t in blobs(model) {
        for v in t.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint {
                offset: self.pos,
                reason: format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        let b = self.take(4, what)?;
        Ok(i32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn from_bytes<S: Scalar>(bytes: &[u8]) -> Result<Model<S>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint {
            offset: 0,
            reason: "bad magic, expected MTGC".into(),
        });
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Checkpoint {
            offset: 4,
            reason: format!("unsupported format version {version}"),
        });
    }
    let mut dims = [0usize; 5];
    for (slot, name) in dims.iter_mut().zip(["J", "T", "T_out", "H", "L"]) {
        let at = r.pos;
        let v = r.i32(name)?;
        if v < 0 || (v == 0 && name != "L") {
            return Err(Error::Checkpoint {
                offset: at,
                reason: format!("invalid {name} = {v}"),
            });
        }
        *slot = v as usize;
    }
    let flags_at = r.pos;
    let flags = r.i32("flags")?;
    if flags & !FLAG_GLOBAL_RESIDUAL != 0 {
        return Err(Error::Checkpoint {
            offset: flags_at,
            reason: format!("unknown flag bits {flags:#x}"),
        });
    }
    let config = ModelConfig {
        joints: dims[0],
        input_frames: dims[1],
        output_frames: dims[2],
        hidden: dims[3],
        layers: dims[4],
        use_global_residual: flags & FLAG_GLOBAL_RESIDUAL != 0,
    };
    let expected = 29 + 8 * (config.count_params() + 2 * config.layers * config.subjoints());
    if bytes.len() > expected {
        return Err(Error::Checkpoint {
            offset: expected,
            reason: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    let mut model = Model::<S>::new(config, 0)?;
    for t in blobs_mut(&mut model) {
        for v in t.data_mut() {
            let b = r.take(8, "parameter blob")?;
            *v = S::from_f64_lossy(f64::from_le_bytes(b.try_into().expect("8 bytes")));
        }
    }
    Ok(model)
}

pub fn save_checkpoint<S: Scalar>(model: &Model<S>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Model<S>> {
    from_bytes(&std::fs::read(path)?)
}

/// Loads a checkpoint and insists it matches `expected` in every dimension.
pub fn load_checkpoint_for<S: Scalar>(path: &Path, expected: &ModelConfig) -> Result<Model<S>> {
    let model = load_checkpoint(path)?;
    let diff = model.config.diff(expected);
    if !diff.is_empty() {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint vs requested: {}",
            diff.join(", ")
        )));
    }
    Ok(model)
}
