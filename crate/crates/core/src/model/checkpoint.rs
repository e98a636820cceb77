//! Binary checkpoint format.
//!
//! ```text
//! "BCAM"                     magic
//! u32 version                currently 1
//! u32 K, u32 C, u32 M        classes, feature channels, prior heads
//! u8  variant                0 cam, 1 ours1, 2 ours2, 3 ours3
//! u32 in_channels
//! u32 stage count, then one u32 per stage
//! u32 blocks_per_stage
//! u8  downsample_last_stage
//! u32 array count, then per array:
//!     u32 name length, UTF-8 name,
//!     u32 rank, one u32 per extent,
//!     f64 values
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::model::{BackboneConfig, Model, ModelConfig, Variant};

pub const MAGIC: &[u8; 4] = b"BCAM";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let cfg = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, cfg.num_classes)?;
    put_u32(&mut out, cfg.channels())?;
    put_u32(&mut out, cfg.heads)?;
    out.push(cfg.variant.code());
    put_u32(&mut out, cfg.backbone.in_channels)?;
    put_u32(&mut out, cfg.backbone.stage_channels.len())?;
    for &c in &cfg.backbone.stage_channels {
        put_u32(&mut out, c)?;
    }
    put_u32(&mut out, cfg.backbone.blocks_per_stage)?;
    out.push(cfg.backbone.downsample_last_stage as u8);
    put_u32(&mut out, model.params().len())?;
    for p in model.params().iter() {
        put_u32(&mut out, p.name().len())?;
        out.extend_from_slice(p.name().as_bytes());
        let shape = p.value().shape();
        put_u32(&mut out, shape.len())?;
        for &d in shape {
            put_u32(&mut out, d)?;
        }
        for v in p.value().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let num_classes = r.u32()?;
    let channels = r.u32()?;
    let heads = r.u32()?;
    let variant = Variant::from_code(r.u8()?)
        .ok_or_else(|| Error::Checkpoint("unknown variant code".into()))?;
    let in_channels = r.u32()?;
    let n_stages = r.u32()?;
    let stage_channels = (0..n_stages).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let blocks_per_stage = r.u32()?;
    let downsample_last_stage = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Checkpoint(format!("invalid flag byte {b}"))),
    };
    let config = ModelConfig {
        num_classes,
        heads,
        backbone: BackboneConfig {
            in_channels,
            stage_channels,
            blocks_per_stage,
            downsample_last_stage,
        },
        variant,
    };
    config.validate()?;
    if config.channels() != channels {
        return Err(Error::Checkpoint(format!(
            "header declares C={channels} but backbone ends with {}",
            config.channels()
        )));
    }

    let mut model = Model::new(config, 0)?;
    let count = r.u32()?;
    if count != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "expected {} arrays, found {count}",
            model.params().len()
        )));
    }
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected array `{name}`")))?;
        let expected = model.params().value(id).shape().to_vec();
        if expected != shape {
            return Err(Error::Checkpoint(format!(
                "array `{name}` has shape {shape:?}, expected {expected:?}"
            )));
        }
        *model.params_mut().get_mut(id).value_mut() = Tensor::new(&shape, data)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&std::fs::read(path)?)
}
