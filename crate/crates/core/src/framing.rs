//! Self-describing binary container shared by the weight, store and
//! soft-prompt files:
//!
//! ```text
//! magic        8 bytes, identifies the file kind
//! header_len   u32 little-endian
//! header       header_len bytes of UTF-8 JSON
//! payload      kind-specific, little-endian
//! ```

use std::io::{self, Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("truncated payload")]
    Truncated,
    #[error("trailing bytes after payload")]
    TrailingData,
}

/// Caps the JSON header so a corrupt length field fails fast.
const MAX_HEADER: u32 = 16 << 20;

pub fn write_header<W: Write, H: Serialize>(
    w: &mut W,
    magic: &[u8; 8],
    header: &H,
) -> Result<(), FrameError> {
    let json = serde_json::to_vec(header)?;
    w.write_all(magic)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

pub fn read_header<R: Read, H: DeserializeOwned>(
    r: &mut R,
    magic: &[u8; 8],
) -> Result<H, FrameError> {
    let mut found = [0u8; 8];
    r.read_exact(&mut found).map_err(eof_as_truncated)?;
    if &found != magic {
        return Err(FrameError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&found).into_owned(),
        });
    }
    let len = read_u32(r)?;
    if len > MAX_HEADER {
        return Err(FrameError::Truncated);
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(eof_as_truncated)?;
    Ok(serde_json::from_slice(&buf)?)
}

pub fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>, FrameError> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(eof_as_truncated)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32, FrameError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(eof_as_truncated)?;
    Ok(u32::from_le_bytes(b))
}

/// Fails with `TrailingData` unless the reader is exhausted.
pub fn expect_eof<R: Read>(r: &mut R) -> Result<(), FrameError> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(FrameError::TrailingData),
    }
}

fn eof_as_truncated(e: io::Error) -> FrameError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        FrameError::Truncated
    } else {
        FrameError::Io(e)
    }
}
