//! Binary parameter checkpoint.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! magic "C3GCKPT\0" | version | layers | array count
//! per array: name length | name (utf-8) | rows | cols | rows*cols f64 LE
//! ```
//!
//! Arrays appear in [`EncoderParams::named`] order; names are checked on read.

use std::fs;
use std::path::Path;

use super::EncoderParams;
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"C3GCKPT\0";
const VERSION: u32 = 1;
const MAX_NAME: usize = 256;

pub fn encode_checkpoint(params: &EncoderParams) -> Vec<u8> {
    let named = params.named();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, m) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EncoderParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC.as_slice() {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let layers = r.u32()?;
    let count = r.u32()?;
    if layers == 0 || layers > 1024 || count != 3 * layers + 8 {
        return Err(Error::Checkpoint(format!("{count} arrays for {layers} layers")));
    }
    let mut tensors = Vec::with_capacity(count);
    let mut names = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()?;
        if len > MAX_NAME {
            return Err(Error::Checkpoint("array name too long".into()));
        }
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("array name is not utf-8".into()))?
            .to_string();
        let rows = r.u32()?;
        let cols = r.u32()?;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| Error::Checkpoint(format!("array `{name}` larger than the file")))?;
        let data: Vec<f64> = r
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("array `{name}` has non-finite values")));
        }
        names.push(name);
        tensors.push(Matrix::from_vec(rows, cols, data)?);
    }
    if r.remaining() != 0 {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let params =
        EncoderParams::from_tensors(layers, tensors).map_err(|e| Error::Checkpoint(e.to_string()))?;
    for ((expected, _), got) in params.named().iter().zip(&names) {
        if expected != got {
            return Err(Error::Checkpoint(format!("expected array `{expected}`, found `{got}`")));
        }
    }
    Ok(params)
}

pub fn write_checkpoint(params: &EncoderParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<EncoderParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, EncoderDims};

    #[test]
    fn round_trip_is_exact() {
        for layers in 1..4 {
            let dims = EncoderDims {
                layers,
                ..EncoderDims::new(5, 3)
            };
            let p = init_params(&dims, layers as u64).unwrap();
            let bytes = encode_checkpoint(&p);
            assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back, p);
            assert_eq!(encode_checkpoint(&back), bytes);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let p = init_params(&EncoderDims::new(4, 2), 0).unwrap();
        write_checkpoint(&p, &path).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), p);
        assert!(read_checkpoint(dir.path().join("missing")).is_err());
    }

    #[test]
    fn rejects_corruption() {
        let p = init_params(&EncoderDims::new(4, 2), 0).unwrap();
        let bytes = encode_checkpoint(&p);
        for cut in [0, 7, 12, 20, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_checkpoint(&magic).is_err());
        // Rename the first array.
        let mut renamed = bytes.clone();
        renamed[24] = b'x';
        assert!(decode_checkpoint(&renamed).is_err());
        // NaN in the last value.
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_checkpoint(&nan).is_err());
    }
}
