//! Binary checkpoint layout shared by training and merging:
//!
//! ```text
//! "DLRP" | version: u32 LE | state_count: u32 LE | vocab_size: u32 LE | f64 LE * (state_count * vocab_size)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DLRP";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub state_count: u32,
    pub vocab_size: u32,
}

pub fn encode(header: CheckpointHeader, values: &[f64]) -> Result<Vec<u8>> {
    let expected = header.state_count as usize * header.vocab_size as usize;
    if values.len() != expected {
        return Err(Error::Alignment(format!(
            "checkpoint shape {}x{} needs {expected} values, got {}",
            header.state_count,
            header.vocab_size,
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&header.version.to_le_bytes());
    out.extend_from_slice(&header.state_count.to_le_bytes());
    out.extend_from_slice(&header.vocab_size.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<f64>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "file is {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::MalformedHeader(format!("bad magic bytes {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice"));
    let header = CheckpointHeader {
        version: word(4),
        state_count: word(8),
        vocab_size: word(12),
    };
    if header.version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: header.version,
        });
    }
    let count = header.state_count as usize * header.vocab_size as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * 8 {
        return Err(Error::TruncatedPayload {
            expected: count * 8,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, values))
}

/// Write-temp-then-rename so readers never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::other(format!("{} has no file name", path.display()))))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> CheckpointHeader {
        CheckpointHeader {
            version: FORMAT_VERSION,
            state_count: 2,
            vocab_size: 3,
        }
    }

    #[test]
    fn layout_is_exact() {
        let bytes = encode(header(), &[1.0, -2.5, 0.0, 3.25, 1e-300, -0.0]).unwrap();
        assert_eq!(&bytes[..4], b"DLRP");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &[3, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 48);
        let (h, v) = decode(&bytes).unwrap();
        assert_eq!(h, header());
        assert_eq!(v[5].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut bytes = encode(header(), &[0.0; 6]).unwrap();
        assert!(matches!(decode(&bytes[..10]), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode(&bytes[..40]), Err(Error::TruncatedPayload { .. })));
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::VersionMismatch { found: 9, .. })));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::MalformedHeader(_))));
        assert!(encode(header(), &[0.0; 5]).is_err());
    }
}
