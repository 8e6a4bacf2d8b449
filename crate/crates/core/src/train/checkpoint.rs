//! Binary checkpoint: parameters, optimizer moments and the step counter.
//!
//! Layout: `AQFT1\n`, then records of `u32 name length, name, 4 × u32 dims,
//! f32 values` (all little-endian): the parameters, then each moment tensor
//! under `<name>.m` / `<name>.v`. The final 8 bytes are the `u64` step.

use std::fs;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::net::{Layout, ParamStore};
use crate::tensor::{Shape, Tensor};
use crate::train::OptimizerState;

pub const MAGIC: &[u8; 6] = b"AQFT1\n";

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    for d in t.shape().0 {
        out.extend((d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

pub fn to_bytes(params: &ParamStore<f32>, state: &OptimizerState<f32>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (name, t) in params.iter() {
        put_tensor(&mut out, name, t);
    }
    for (suffix, moments) in [("m", &state.m), ("v", &state.v)] {
        for ((name, _), t) in params.iter().zip(moments) {
            put_tensor(&mut out, &format!("{name}.{suffix}"), t);
        }
    }
    out.extend(state.t.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CheckpointError::Truncated { what: what.into() });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn read_tensor(r: &mut Reader<'_>) -> std::result::Result<(String, Tensor<f32>), CheckpointError> {
    let len = r.u32("tensor name length")? as usize;
    let name = std::str::from_utf8(r.take(len, "tensor name")?)
        .map_err(|_| CheckpointError::BadName)?
        .to_string();
    let mut dims = [0u32; 4];
    for d in &mut dims {
        *d = r.u32(&format!("dimensions of {name}"))?;
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|n| n.checked_mul(4))
        .filter(|&bytes| bytes <= r.remaining())
        .ok_or_else(|| CheckpointError::DimensionOverflow {
            name: name.clone(),
            dims,
        })?;
    let data = r
        .take(count, &name)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let shape = Shape(dims.map(|d| d as usize));
    let t = Tensor::from_vec(shape, data).expect("length checked");
    Ok((name, t))
}

/// Parses a checkpoint and checks it against `layout`.
pub fn from_bytes(
    bytes: &[u8],
    layout: &Layout,
) -> std::result::Result<(ParamStore<f32>, OptimizerState<f32>), CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic {
            found: bytes[..bytes.len().min(MAGIC.len())].to_vec(),
        });
    }
    if bytes.len() < MAGIC.len() + 8 {
        return Err(CheckpointError::Truncated {
            what: "step counter".into(),
        });
    }
    let (body, step) = bytes.split_at(bytes.len() - 8);
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let (mut params, mut m, mut v) = (Vec::new(), Vec::new(), Vec::new());
    while r.remaining() > 0 {
        let (name, t) = read_tensor(&mut r)?;
        if let Some(base) = name.strip_suffix(".m").filter(|b| layout.find(b).is_some()) {
            m.push((base.to_string(), t));
        } else if let Some(base) = name.strip_suffix(".v").filter(|b| layout.find(b).is_some()) {
            v.push((base.to_string(), t));
        } else {
            params.push((name, t));
        }
    }
    let params = layout.arrange(params)?;
    let suffixed = |e: CheckpointError, s: &str| match e {
        CheckpointError::MissingTensor(n) => CheckpointError::MissingTensor(format!("{n}.{s}")),
        CheckpointError::ShapeMismatch {
            name,
            expected,
            found,
        } => CheckpointError::ShapeMismatch {
            name: format!("{name}.{s}"),
            expected,
            found,
        },
        CheckpointError::UnexpectedTensor(n) => {
            CheckpointError::UnexpectedTensor(format!("{n}.{s}"))
        }
        other => other,
    };
    let m = layout.arrange(m).map_err(|e| suffixed(e, "m"))?;
    let v = layout.arrange(v).map_err(|e| suffixed(e, "v"))?;
    let state = OptimizerState {
        m: m.iter().map(|(_, t)| t.clone()).collect(),
        v: v.iter().map(|(_, t)| t.clone()).collect(),
        t: u64::from_le_bytes(step.try_into().expect("8 bytes")),
    };
    Ok((params, state))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ParamStore<f32>,
    state: &OptimizerState<f32>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params, state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
    layout: &Layout,
) -> Result<(ParamStore<f32>, OptimizerState<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(from_bytes(&bytes, layout)?)
}
