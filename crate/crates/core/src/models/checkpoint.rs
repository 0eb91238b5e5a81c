//! Little-endian binary checkpoint:
//!
//! ```text
//! "SGPT" | version u32 | kind u8
//! d_model u32 | n_layers u32 | n_heads u32 | token_len u32 | context_tokens u32 | n_stations u32
//! tensor count u64
//! repeated: name_len u16 | name utf-8 | rank u8 | extents u64[rank] | data f64[prod(extents)]
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelKind, SeismoGpt};
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes(model: &SeismoGpt) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(cfg.kind.code());
    for v in [
        cfg.d_model,
        cfg.n_layers,
        cfg.n_heads,
        cfg.token_len,
        cfg.context_tokens,
        cfg.n_stations,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let params = model.params();
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(model: &SeismoGpt, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(self.path, "unexpected end of file"))?;
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
}

/// Parses a checkpoint and rebuilds the model it describes. The stored
/// tensors must match the layout implied by the stored config exactly.
pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<SeismoGpt> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Mismatch(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let kind = ModelKind::from_code(r.u8()?)
        .ok_or_else(|| Error::format(path, "unknown model kind"))?;
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = ModelConfig {
        kind,
        d_model: dims[0],
        n_layers: dims[1],
        n_heads: dims[2],
        token_len: dims[3],
        context_tokens: dims[4],
        n_stations: dims[5],
    };
    config
        .validate()
        .map_err(|e| Error::Mismatch(format!("{}: {e}", path.display())))?;

    let count = r.u64()? as usize;
    let mut stored = ParameterStore::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let numel = numel.ok_or_else(|| Error::format(path, "tensor extent overflow"))?;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::format(path, "tensor too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(path, e.to_string()))?;
        stored
            .insert(name, t)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }

    let mut model = SeismoGpt::new(config, 0)?;
    model
        .params_mut()
        .load_from(&stored)
        .map_err(|e| Error::Mismatch(format!("{}: {e}", path.display())))?;
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<SeismoGpt> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            token_len: 4,
            context_tokens: 8,
            n_stations: if kind == ModelKind::Array { 3 } else { 1 },
        }
    }

    #[test]
    fn bytes_round_trip() {
        for kind in [ModelKind::Single, ModelKind::Array] {
            let m = SeismoGpt::new(tiny(kind), 11).unwrap();
            let bytes = checkpoint_bytes(&m);
            let back = parse_checkpoint(&bytes, Path::new("mem")).unwrap();
            assert_eq!(back.config(), m.config());
            assert_eq!(checkpoint_bytes(&back), bytes);
        }
    }

    #[test]
    fn rejects_unknown_version_and_truncation() {
        let m = SeismoGpt::new(tiny(ModelKind::Single), 1).unwrap();
        let mut bytes = checkpoint_bytes(&m);
        let p = Path::new("mem");
        assert!(matches!(
            parse_checkpoint(&bytes[..bytes.len() - 3], p),
            Err(Error::Format { .. })
        ));
        bytes[4] = 9;
        assert!(matches!(parse_checkpoint(&bytes, p), Err(Error::Mismatch(_))));
    }

    #[test]
    fn rejects_config_that_disagrees_with_tensors() {
        let m = SeismoGpt::new(tiny(ModelKind::Single), 1).unwrap();
        let mut bytes = checkpoint_bytes(&m);
        // n_layers lives right after magic, version, kind and d_model.
        bytes[13..17].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            parse_checkpoint(&bytes, Path::new("mem")),
            Err(Error::Mismatch(_))
        ));
    }
}
