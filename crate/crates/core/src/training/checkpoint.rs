//! `LMVPCKPT` files: magic, `u32` version, then two tensor tables
//! (parameters, then optimizer moments), then `u64` iteration and `u64`
//! seed. Each table is a `u32` count followed by entries of
//! `u32` name length, UTF-8 name, `u32` rank, `u32` dims and `f32` payload,
//! all little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamEntry, ParamGroup};
use crate::numerics::Tensor;

pub const CKPT_MAGIC: &[u8; 8] = b"LMVPCKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
    /// `<param>.m` and `<param>.v` for every parameter, in parameter order.
    pub moments: Vec<NamedTensor>,
    pub iteration: u64,
    pub seed: u64,
}

fn put_table(out: &mut Vec<u8>, table: &[NamedTensor]) {
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for t in table {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.value.rank() as u32).to_le_bytes());
        for &d in t.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    put_table(&mut out, &ckpt.tensors);
    put_table(&mut out, &ckpt.moments);
    out.extend_from_slice(&ckpt.iteration.to_le_bytes());
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Format { path: self.path.to_path_buf(), offset: offset as u64, msg: msg.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(
                self.pos,
                format!("truncated: {what} needs {n} bytes, {} remain", self.bytes.len() - self.pos),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn table(&mut self) -> Result<Vec<NamedTensor>> {
        let count = self.u32("tensor count")? as usize;
        let mut out = Vec::new();
        for _ in 0..count {
            let at = self.pos;
            let len = self.u32("name length")? as usize;
            if len == 0 || len > self.bytes.len() - self.pos {
                return Err(self.fail(at, format!("name length {len} is impossible here")));
            }
            let raw = self.take(len, "name")?.to_vec();
            let name = String::from_utf8(raw).map_err(|_| self.fail(at + 4, "name is not UTF-8"))?;
            let rank_at = self.pos;
            let rank = self.u32("rank")? as usize;
            if rank > 8 {
                return Err(self.fail(rank_at, format!("rank {rank} of {name} is implausible")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(self.u32("dimension")? as usize);
            }
            let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let bytes = numel
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| self.fail(rank_at, format!("dims {dims:?} of {name} overflow")))?;
            let payload_at = self.pos;
            let data: Vec<f32> = self
                .take(bytes, "payload")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let value = Tensor::new(dims, data).map_err(|_| self.fail(payload_at, format!("{name} holds non-finite values")))?;
            out.push(NamedTensor { name, value });
        }
        Ok(out)
    }
}

/// Parses checkpoint bytes; `path` is only used in error messages.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if bytes.len() < 8 || &bytes[..8] != CKPT_MAGIC {
        return Err(r.fail(0, "bad magic, expected LMVPCKPT"));
    }
    r.pos = 8;
    let version = r.u32("version")?;
    if version != CKPT_VERSION {
        return Err(r.fail(8, format!("unsupported version {version}")));
    }
    let tensors = r.table()?;
    let moments = r.table()?;
    let iteration = r.u64("iteration")?;
    let seed = r.u64("seed")?;
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { tensors, moments, iteration, seed })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Parameter set stored in a checkpoint.
pub(crate) fn params_from(ckpt: &Checkpoint) -> Result<ModelParams> {
    let entries = ckpt
        .tensors
        .iter()
        .map(|t| {
            let group = ParamGroup::of_name(&t.name)
                .ok_or_else(|| Error::Compatibility(format!("tensor {} belongs to no network", t.name)))?;
            Ok(ParamEntry { name: t.name.clone(), group, value: t.value.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    ModelParams::from_entries(entries)
}

impl Checkpoint {
    pub fn params(&self) -> Result<ModelParams> {
        params_from(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let t = |name: &str, shape: Vec<usize>, v: f32| NamedTensor {
            name: name.into(),
            value: Tensor::full(shape, v),
        };
        Checkpoint {
            tensors: vec![t("G.a.w", vec![2, 3], 0.5), t("G.a.b", vec![2], -1.25)],
            moments: vec![t("G.a.w.m", vec![2, 3], 1e-3), t("G.a.w.v", vec![2, 3], 2e-7)],
            iteration: 42,
            seed: 7,
        }
    }

    #[test]
    fn roundtrip_bit_exact() {
        let c = sample();
        let bytes = encode_checkpoint(&c);
        assert_eq!(decode_checkpoint(&bytes, Path::new("x")).unwrap(), c);
    }

    #[test]
    fn tampered_name_length_reports_its_offset() {
        let mut bytes = encode_checkpoint(&sample());
        // magic(8) + version(4) + count(4) → first name length at 16
        bytes[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        match decode_checkpoint(&bytes, Path::new("x")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_truncation() {
        let bytes = encode_checkpoint(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad, Path::new("x")), Err(Error::Format { offset: 0, .. })));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_checkpoint(cut, Path::new("x")), Err(Error::Format { .. })));
    }
}
