//! On-disk embedding stores.
//!
//! Format (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "DFEM"
//! version u32      currently 1
//! rows    u64
//! cols    u32
//! flags   u32      bit 0: rows are unit-normalized
//!                  bit 1: an id table follows the payload
//! payload rows*cols f32, row-major
//! ids     rows u64 (only when flag bit 1 is set)
//! ```
//!
//! Values are stored as f32 and widened back to f64 on load, so
//! `read(write(m))` loses at most one f32 rounding and
//! `write(read(bytes))` reproduces `bytes` exactly.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor::EmbeddingMatrix;

const MAGIC: &[u8; 4] = b"DFEM";
const VERSION: u32 = 1;
const FLAG_UNIT: u32 = 1;
const FLAG_IDS: u32 = 1 << 1;
const HEADER_LEN: u64 = 4 + 4 + 8 + 4 + 4;

/// Writes `emb` to `path` atomically (temp file in the same directory,
/// then rename), so a crash never leaves a half-written store behind.
pub fn write_store(path: &Path, emb: &EmbeddingMatrix) -> Result<()> {
    let tmp = tmp_path(path);
    let res = write_to(&tmp, emb);
    if res.is_ok() {
        fs::rename(&tmp, path)?;
    } else {
        let _ = fs::remove_file(&tmp);
    }
    res
}

fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn write_to(path: &Path, emb: &EmbeddingMatrix) -> Result<()> {
    let rows = emb.rows();
    let cols = emb.dim();
    let mut flags = 0u32;
    if emb.is_unit_normalized() {
        flags |= FLAG_UNIT;
    }
    if emb.ids().is_some() {
        flags |= FLAG_IDS;
    }

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    w.write_all(&flags.to_le_bytes())?;

    for &v in emb.data().iter() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::NonFinite(format!(
                "value {v} does not fit in the on-disk f32 range"
            )));
        }
        w.write_all(&f.to_le_bytes())?;
    }
    if let Some(ids) = emb.ids() {
        for &id in ids {
            w.write_all(&id.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a store written by [`write_store`].
pub fn read_store(path: &Path) -> Result<EmbeddingMatrix> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            Error::StoreMissing(path.display().to_string())
        } else {
            Error::Io(e)
        }
    })?;
    let file_len = file.metadata()?.len();
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_or_truncated(&mut r, &mut magic, "header")?;
    if &magic != MAGIC {
        return Err(Error::BadMagic(format!("{:02x?}", magic)));
    }
    let version = read_u32(&mut r, "header")?;
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let rows64 = read_u64(&mut r, "header")?;
    let cols = read_u32(&mut r, "header")? as usize;
    let flags = read_u32(&mut r, "header")?;

    let rows: usize = rows64
        .try_into()
        .map_err(|_| Error::Truncated("row count exceeds address space".into()))?;

    // Validate the claimed size against the actual file length before
    // allocating, so a corrupt header cannot trigger a huge allocation.
    let payload = (rows64)
        .checked_mul(cols as u64)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Truncated("payload size overflows".into()))?;
    let ids_len = if flags & FLAG_IDS != 0 { rows64 * 8 } else { 0 };
    let expected = HEADER_LEN + payload + ids_len;
    if file_len < expected {
        return Err(Error::Truncated(format!(
            "expected {expected} bytes, file has {file_len}"
        )));
    }

    let mut buf = vec![0u8; payload as usize];
    read_or_truncated(&mut r, &mut buf, "payload")?;
    let mut data = Vec::with_capacity(rows * cols);
    for chunk in buf.chunks_exact(4) {
        let f = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
        data.push(f as f64);
    }
    let matrix = Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;

    let ids = if flags & FLAG_IDS != 0 {
        let mut buf = vec![0u8; rows * 8];
        read_or_truncated(&mut r, &mut buf, "id table")?;
        Some(
            buf.chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };

    let emb = match ids {
        Some(ids) => EmbeddingMatrix::with_ids(matrix, ids)?,
        None => EmbeddingMatrix::new(matrix)?,
    };
    Ok(if flags & FLAG_UNIT != 0 {
        emb.mark_unit_normalized()
    } else {
        emb
    })
}

fn read_or_truncated(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Truncated(what.to_string())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_or_truncated(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_or_truncated(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}
