//! `LMVPVID1` container: 8-byte magic, seven little-endian `u32` header
//! fields (version, N, T, H, W, C, dtype) and the raw `f32` payload in
//! `(N, T, H, W, C)` order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::VideoSet;

pub const MAGIC: &[u8; 8] = b"LMVPVID1";
pub const VERSION: u32 = 1;
const DTYPE_F32: u32 = 1;
pub const HEADER_LEN: usize = 8 + 7 * 4;

pub fn write_videoset(path: impl AsRef<Path>, set: &VideoSet) -> Result<()> {
    let path = path.as_ref();
    let shape = set.tensor().shape();
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * set.tensor().numel());
    bytes.extend_from_slice(MAGIC);
    for v in [VERSION, shape[0] as u32, shape[1] as u32, shape[2] as u32, shape[3] as u32, shape[4] as u32, DTYPE_F32] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for v in set.tensor().data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_videoset(path: impl AsRef<Path>) -> Result<VideoSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |offset: usize, msg: String| Error::Format { path: path.to_path_buf(), offset: offset as u64, msg };
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(fail(0, "bad magic, expected LMVPVID1".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len())));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    if field(0) != VERSION {
        return Err(fail(8, format!("unsupported version {}", field(0))));
    }
    if field(6) != DTYPE_F32 {
        return Err(fail(32, format!("unsupported dtype code {}", field(6))));
    }
    let dims: Vec<usize> = (1..6).map(|i| field(i) as usize).collect();
    let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let expected = count.and_then(|c| c.checked_mul(4)).and_then(|b| b.checked_add(HEADER_LEN));
    match expected {
        Some(e) if e == bytes.len() => {}
        Some(e) if e > bytes.len() => {
            return Err(fail(bytes.len(), format!("payload truncated: dims {dims:?} need {e} bytes, file has {}", bytes.len())))
        }
        Some(e) => return Err(fail(e, format!("{} trailing bytes after payload", bytes.len() - e))),
        None => return Err(fail(12, format!("dims {dims:?} overflow"))),
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    VideoSet::new(Tensor::new(dims, data)?)
}
