//! Binary model file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "AFTN1"
//! u8   variant code
//! u32  x5 level channel counts, u32 input size, u8 frozen, f64 input scale
//! u32  fusion kernels, u32 fc units, f64 dropout
//! u64  seed
//! f64  x3 input mean (RGB)
//! u32  tensor count
//!      per tensor: u16 name length, name (UTF-8), u8 rank, u32 x rank dims,
//!                  f32 x product(dims) values
//! u32  CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::{FenConfig, HeadConfig, TrackerModel, Variant, LEVELS};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MODEL_MAGIC: &[u8; 5] = b"AFTN1";

const RUNNING_MEAN: &str = "head.bn.running_mean";
const RUNNING_VAR: &str = "head.bn.running_var";

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        self.u16(name.len() as u16);
        self.0.extend_from_slice(name.as_bytes());
        self.u8(shape.len() as u8);
        for &d in shape {
            self.u32(d as u32);
        }
        for &v in data {
            self.0.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("truncated model file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Serialize a model to bytes.
pub fn write_model(model: &TrackerModel) -> Vec<u8> {
    let mut w = Writer(MODEL_MAGIC.to_vec());
    let fen = model.fen_config();
    let head = model.head_config();
    w.u8(model.variant().code());
    for &c in &fen.channels {
        w.u32(c as u32);
    }
    w.u32(fen.input_size as u32);
    w.u8(fen.frozen as u8);
    w.f64(fen.input_scale);
    w.u32(head.fusion_kernels as u32);
    w.u32(head.fc_units as u32);
    w.f64(head.dropout);
    w.u64(model.seed());
    for c in model.mean_rgb() {
        w.f64(c);
    }
    w.u32(model.params().len() as u32 + 2);
    for p in model.params() {
        w.tensor(&p.name, p.shape(), p.data());
    }
    let stats = model.running_stats();
    w.tensor(RUNNING_MEAN, &[stats.mean.len()], &stats.mean);
    w.tensor(RUNNING_VAR, &[stats.var.len()], &stats.var);
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

/// Parse a model from bytes, verifying magic and checksum.
pub fn read_model(bytes: &[u8]) -> Result<TrackerModel> {
    if bytes.len() < MODEL_MAGIC.len() || &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    if bytes.len() < MODEL_MAGIC.len() + 4 {
        return Err(Error::Format("truncated model file".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader {
        buf: payload,
        pos: MODEL_MAGIC.len(),
    };
    let code = r.u8()?;
    let variant = Variant::from_code(code).ok_or_else(|| Error::Format(format!("unknown variant code {code}")))?;
    let mut channels = [0usize; LEVELS];
    for c in &mut channels {
        *c = r.u32()? as usize;
    }
    let fen = FenConfig {
        channels,
        input_size: r.u32()? as usize,
        frozen: r.u8()? != 0,
        input_scale: r.f64()?,
    };
    let head = HeadConfig {
        fusion_kernels: r.u32()? as usize,
        fc_units: r.u32()? as usize,
        dropout: r.f64()?,
    };
    let seed = r.u64()?;
    let mean_rgb = [r.f64()?, r.f64()?, r.f64()?];
    let mut model = TrackerModel::new(variant, fen, head, seed).map_err(|e| Error::Format(e.to_string()))?;
    model.set_mean_rgb(mean_rgb);

    let count = r.u32()? as usize;
    let mut seen = 0;
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        match name.as_str() {
            RUNNING_MEAN | RUNNING_VAR => {
                let target = if name == RUNNING_MEAN {
                    &mut model.bn_stats.mean
                } else {
                    &mut model.bn_stats.var
                };
                if target.len() != data.len() {
                    return Err(Error::Format(format!("{name} has {} entries, expected {}", data.len(), target.len())));
                }
                *target = data;
            }
            _ => {
                let p = model
                    .param_by_name_mut(&name)
                    .ok_or_else(|| Error::Format(format!("unexpected tensor `{name}`")))?;
                if p.shape() != shape.as_slice() {
                    return Err(Error::Format(format!("tensor `{name}` has shape {shape:?}, expected {:?}", p.shape())));
                }
                p.value = Tensor::new(shape, data)?;
                seen += 1;
            }
        }
    }
    if seen != model.params().len() {
        return Err(Error::Format(format!("file holds {seen} of {} parameters", model.params().len())));
    }
    if r.pos != payload.len() {
        return Err(Error::Format("trailing bytes after tensors".into()));
    }
    Ok(model)
}

pub fn save_model(model: &TrackerModel, path: &Path) -> Result<()> {
    fs::write(path, write_model(model)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_model(path: &Path) -> Result<TrackerModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    read_model(&bytes)
}
