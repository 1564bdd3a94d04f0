//! Shared file helpers: atomic writes and the little-endian array container.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Writes `bytes` to a sibling temp file, syncs it, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub const ARRAY_MAGIC: &[u8; 4] = b"RID4";

/// Encodes an n-dimensional array.
///
/// Layout (all little-endian): magic `RID4`, dtype code (u8: 1 = f32,
/// 2 = f64), rank (u8), `rank` dimensions as u32, then the raw elements in
/// row-major order.
pub fn encode_array<T: Scalar>(shape: &[usize], data: &[T]) -> Vec<u8> {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let mut out = Vec::with_capacity(6 + 4 * shape.len() + data.len() * T::BYTES);
    out.extend_from_slice(ARRAY_MAGIC);
    out.push(T::DTYPE_CODE);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        v.write_le(&mut out);
    }
    out
}

/// Decodes an array written by [`encode_array`], converting dtype if needed.
pub fn decode_array<T: Scalar>(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<T>)> {
    let corrupt = |message: &str| Error::Corrupt {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 6 || &bytes[..4] != ARRAY_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let dtype = bytes[4];
    let rank = bytes[5] as usize;
    let mut off = 6;
    if bytes.len() < off + 4 * rank {
        return Err(corrupt("truncated shape"));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| u32::from_le_bytes(bytes[off + 4 * i..off + 4 * i + 4].try_into().unwrap()) as usize)
        .collect();
    off += 4 * rank;
    let count: usize = shape.iter().product();
    let width = match dtype {
        1 => 4,
        2 => 8,
        _ => return Err(corrupt("unknown dtype code")),
    };
    if bytes.len() != off + count * width {
        return Err(corrupt("payload length does not match shape"));
    }
    let data = bytes[off..]
        .chunks_exact(width)
        .map(|c| match dtype {
            1 => T::lit(f32::read_le(c) as f64),
            _ => T::lit(f64::read_le(c)),
        })
        .collect();
    Ok((shape, data))
}
