//! Versioned binary checkpoint format.
//!
//! ```text
//! magic      8 bytes   "LMCCKPT\0"
//! version    u32 LE    1
//! precision  u8        0 = f64, 1 = f32
//! segments   u32 LE    number of layout entries
//!   name_len u32 LE, name (UTF-8), start u64 LE, len u64 LE   (per entry)
//! total      u64 LE    parameter count
//! payload    total × (8 | 4) bytes, little-endian IEEE-754
//! checksum   32 bytes  SHA-256 of everything above
//! ```

use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::{LayerLayout, ParamVector, Segment};

pub const MAGIC: &[u8; 8] = b"LMCCKPT\0";
pub const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F64,
    /// Lossy; only for storage-constrained runs.
    F32,
}

pub fn encode_checkpoint(theta: &ParamVector, precision: Precision) -> Vec<u8> {
    let layout = theta.layout();
    let mut out = Vec::with_capacity(64 + theta.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match precision {
        Precision::F64 => 0,
        Precision::F32 => 1,
    });
    out.extend_from_slice(&(layout.segments().len() as u32).to_le_bytes());
    for seg in layout.segments() {
        out.extend_from_slice(&(seg.name.len() as u32).to_le_bytes());
        out.extend_from_slice(seg.name.as_bytes());
        out.extend_from_slice(&(seg.start as u64).to_le_bytes());
        out.extend_from_slice(&(seg.len as u64).to_le_bytes());
    }
    out.extend_from_slice(&(layout.total_params() as u64).to_le_bytes());
    for &v in theta.values() {
        match precision {
            Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
            Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                expected: end as u64,
                found: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes a checkpoint; when `expected` is given the stored layout must
/// match it.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&Arc<LayerLayout>>) -> Result<ParamVector> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::BadMagic("checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let precision = match r.take(1)?[0] {
        0 => Precision::F64,
        1 => Precision::F32,
        other => {
            return Err(Error::Parse {
                offset: (r.pos - 1) as u64,
                msg: format!("unknown precision tag {other}"),
            })
        }
    };
    let n_segments = r.u32()? as usize;
    let mut segments = Vec::with_capacity(n_segments.min(1024));
    for _ in 0..n_segments {
        let name_len = r.u32()? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Parse {
                offset: at as u64,
                msg: "layer name is not UTF-8".into(),
            })?
            .to_string();
        let start = r.u64()? as usize;
        let len = r.u64()? as usize;
        segments.push(Segment { name, start, len });
    }
    let total = r.u64()? as usize;
    let width = match precision {
        Precision::F64 => 8,
        Precision::F32 => 4,
    };
    let payload_start = r.pos;
    let expected_len = total
        .checked_mul(width)
        .and_then(|p| p.checked_add(payload_start + CHECKSUM_LEN))
        .ok_or_else(|| Error::Parse {
            offset: (payload_start - 8) as u64,
            msg: "declared parameter count overflows".into(),
        })?;
    if bytes.len() < expected_len {
        return Err(Error::Truncated {
            expected: expected_len as u64,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() > expected_len {
        return Err(Error::Parse {
            offset: expected_len as u64,
            msg: format!("{} trailing bytes", bytes.len() - expected_len),
        });
    }
    let body = &bytes[..expected_len - CHECKSUM_LEN];
    if Sha256::digest(body).as_slice() != &bytes[expected_len - CHECKSUM_LEN..] {
        return Err(Error::ChecksumMismatch);
    }

    let layout = LayerLayout::new(segments)?;
    if layout.total_params() != total {
        return Err(Error::Layout(format!(
            "layout covers {} parameters but header declares {total}",
            layout.total_params()
        )));
    }
    let payload = &bytes[payload_start..expected_len - CHECKSUM_LEN];
    let values: Vec<f64> = match precision {
        Precision::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        Precision::F32 => payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect(),
    };
    let layout = match expected {
        Some(exp) if **exp == layout => exp.clone(),
        Some(_) => {
            return Err(Error::Layout(
                "checkpoint layout differs from the expected layout".into(),
            ))
        }
        None => Arc::new(layout),
    };
    ParamVector::new(values, layout)
}

/// Writes via a temporary file and rename.
pub fn save_checkpoint(path: &Path, theta: &ParamVector, precision: Precision) -> Result<()> {
    write_atomic(path, &encode_checkpoint(theta, precision))
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected: Option<&Arc<LayerLayout>>) -> Result<ParamVector> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected)
}
