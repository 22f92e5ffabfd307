//! Binary checkpoints.
//!
//! ```text
//! "RFCN"  u32 version  u32 len + descriptor (architecture text)
//! u32 tensor count, then per tensor:
//!   u32 len + name  u32 rank  rank × u32 extents  f64 data
//! ```
//! All integers and scalars are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{parse_architecture, Model};
use crate::tensor::{shape_str, Scalar, Tensor};
use crate::training::Adadelta;

const MAGIC: &[u8; 4] = b"RFCN";
const VERSION: u32 = 1;
const EG2: &str = "adadelta.eg2/";
const EDX2: &str = "adadelta.edx2/";
const HYPER: &str = "adadelta.rho_eps";

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Architecture text of the saved model.
    pub descriptor: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor<S: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<S>) {
    put_str(out, name);
    put_u32(out, t.rank());
    for &n in t.shape() {
        put_u32(out, n);
    }
    for v in t.data() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
}

/// Writes the model's parameters and, when given, the optimizer state.
pub fn save_checkpoint<S: Scalar>(path: &Path, model: &Model<S>, optimizer: Option<&Adadelta<S>>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_str(&mut out, &model.spec().to_text());
    let extra = optimizer.map_or(0, |o| 2 * o.eg2.len() + 1);
    put_u32(&mut out, model.params().len() + extra);
    for p in model.params() {
        put_tensor(&mut out, &p.name, &p.tensor);
    }
    if let Some(o) = optimizer {
        put_tensor(&mut out, HYPER, &Tensor::<f64>::from_vec(vec![o.rho, o.eps]));
        for (p, (a, b)) in model.params().iter().zip(o.eg2.iter().zip(&o.edx2)) {
            put_tensor(&mut out, &format!("{EG2}{}", p.name), a);
            put_tensor(&mut out, &format!("{EDX2}{}", p.name), b);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, field: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::load(format!("truncated file while reading {field}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<usize> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, field: &str) -> Result<String> {
        let n = self.u32(field)?;
        String::from_utf8(self.take(n, field)?.to_vec()).map_err(|_| Error::load(format!("{field} is not UTF-8")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4, "magic").ok() != Some(MAGIC.as_slice()) {
        return Err(Error::load("bad magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::load(format!("unsupported version {version} (expected {VERSION})")));
    }
    let descriptor = r.string("descriptor")?;
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let name = r.string(&format!("tensor {i} name"))?;
        let rank = r.u32(&format!("{name} rank"))?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32(&format!("{name} extents"))?);
        }
        let len = shape.iter().try_fold(1usize, |a, &n| a.checked_mul(n));
        let Some(len) = len.filter(|_| shape.iter().all(|&n| n > 0)) else {
            return Err(Error::load(format!("{name}: invalid extents {shape:?}")));
        };
        let raw = r.take(len.saturating_mul(8), &format!("{name} data"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::load(format!("{} trailing bytes after the last tensor", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { descriptor, tensors })
}

impl Checkpoint {
    fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the saved model.
    pub fn model<S: Scalar>(&self) -> Result<Model<S>> {
        let spec = parse_architecture(&self.descriptor)
            .map_err(|e| Error::load(format!("descriptor: {e}")))?;
        let mut model = Model::zeroed(spec)?;
        self.restore(&mut model)?;
        Ok(model)
    }

    /// Overwrites every parameter of `model`; fails, naming the field, when
    /// a parameter is missing or shaped differently.
    pub fn restore<S: Scalar>(&self, model: &mut Model<S>) -> Result<()> {
        let name = model.spec().name.clone();
        let params = self.tensors.iter().filter(|(n, _)| !n.starts_with("adadelta."));
        if params.clone().count() != model.params().len() {
            return Err(Error::load(format!(
                "checkpoint holds {} parameters, {name} has {}",
                params.count(),
                model.params().len()
            )));
        }
        for (p, (n, t)) in model.params_mut().iter_mut().zip(params) {
            if *n != p.name || t.shape() != p.tensor.shape() {
                return Err(Error::load(format!(
                    "shape disagreement: checkpoint field {n} is {}, {name} expects {} of {}",
                    shape_str(t.shape()),
                    p.name,
                    shape_str(p.tensor.shape())
                )));
            }
            p.tensor = t.cast();
        }
        Ok(())
    }

    /// Optimizer state saved alongside `model`'s parameters, if any.
    pub fn optimizer<S: Scalar>(&self, model: &Model<S>) -> Result<Option<Adadelta<S>>> {
        let Some(h) = self.get(HYPER) else {
            return Ok(None);
        };
        let mut opt = Adadelta::for_model(model, h.data()[0], h.data()[1]);
        for (i, p) in model.params().iter().enumerate() {
            for (prefix, slot) in [(EG2, &mut opt.eg2[i]), (EDX2, &mut opt.edx2[i])] {
                let field = format!("{prefix}{}", p.name);
                let t = self.get(&field).ok_or_else(|| Error::load(format!("missing field {field}")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::load(format!(
                        "shape disagreement: field {field} is {}, expected {}",
                        shape_str(t.shape()),
                        shape_str(slot.shape())
                    )));
                }
                *slot = t.cast();
            }
        }
        Ok(Some(opt))
    }
}
