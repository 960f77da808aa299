//! Versioned little-endian checkpoint format.
//!
//! ```text
//! "TMMF" | version u32 | M u32 | A u32 | d u32 | k u32 | k' u32 | C u32 | r u32
//!        | flags u32 | kernel width u32 | d_in u32 x M
//!        | tensor count u32 | { rank u32 | dims u32 x rank | f64 x numel }*
//!        | config length u32 | config bytes (UTF-8 key = value lines)
//! ```
//!
//! Flags: bit 0 per-mode encoders, bit 1 gate, bit 2 fused encoder,
//! bit 3 simple fusion. Parameters are stored in declaration order.

use std::path::Path;

use super::{Ablation, ModelConfig, TmmfModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TMMF";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Parameter(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serialises the model and an optional text block (the training config).
pub fn to_bytes<S: Scalar>(model: &TmmfModel<S>, extra: Option<&str>) -> Result<Vec<u8>> {
    let c = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        c.modes(),
        c.attention,
        c.channels,
        c.ufm_layers,
        c.mfm_layers,
        c.classes,
        c.reduction,
        c.ablation.bits() as usize,
        c.kernel_width,
    ] {
        put_u32(&mut out, v)?;
    }
    for &d in &c.input_dims {
        put_u32(&mut out, d)?;
    }
    let params = model.params();
    put_u32(&mut out, params.len())?;
    for id in params.ids() {
        let t = params.get(id);
        put_u32(&mut out, t.rank())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    let extra = extra.unwrap_or("").as_bytes();
    put_u32(&mut out, extra.len())?;
    out.extend_from_slice(extra);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            what: "checkpoint",
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated: need {n} more bytes, {} available",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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

/// Parses a checkpoint; returns the model and the stored text block.
pub fn from_bytes<S: Scalar>(bytes: &[u8]) -> Result<(TmmfModel<S>, String)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic, expected \"TMMF\""));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        r.pos -= 4;
        return Err(r.err(format!("unsupported version {version}")));
    }
    let modes = r.u32()?;
    let attention = r.u32()?;
    let channels = r.u32()?;
    let ufm_layers = r.u32()?;
    let mfm_layers = r.u32()?;
    let classes = r.u32()?;
    let reduction = r.u32()?;
    let ablation = Ablation::from_bits(r.u32()? as u32)?;
    let kernel_width = r.u32()?;
    if modes == 0 || modes > 1024 {
        return Err(r.err(format!("implausible mode count {modes}")));
    }
    let input_dims = (0..modes).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let config = ModelConfig {
        input_dims,
        channels,
        ufm_layers,
        mfm_layers,
        classes,
        attention,
        reduction,
        kernel_width,
        ablation,
    };
    let count = r.u32()?;
    let mut values = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let rank = r.u32()?;
        if rank == 0 || rank > 8 {
            return Err(r.err(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        if numel.saturating_mul(8) > bytes.len() - r.pos {
            return Err(r.err(format!(
                "truncated: tensor {shape:?} needs {} bytes, {} available",
                numel * 8,
                bytes.len() - r.pos
            )));
        }
        let data = (0..numel)
            .map(|_| r.f64().map(S::of))
            .collect::<Result<Vec<_>>>()?;
        values.push(Tensor::new(shape, data)?);
    }
    let len = r.u32()?;
    let extra =
        String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.err("config block is not UTF-8"))?;
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let model = TmmfModel::with_values(config, values)?;
    Ok((model, extra))
}

pub fn save<S: Scalar>(
    model: &TmmfModel<S>,
    path: impl AsRef<Path>,
    extra: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model, extra)?).map_err(|e| Error::io(path, e))
}

pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<(TmmfModel<S>, String)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
