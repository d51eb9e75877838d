//! On-disk feature cache: `b"ESTG"`, version, `mel_bins`, `frames` (all
//! `u32` little-endian), then `3 * mel_bins * frames` little-endian `f32`
//! values in channel-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::estgram::EstGram;

pub const MAGIC: [u8; 4] = *b"ESTG";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode(est: &EstGram) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * est.data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(est.mel_bins as u32).to_le_bytes());
    out.extend_from_slice(&(est.frames as u32).to_le_bytes());
    for &v in &est.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<EstGram> {
    let corrupt = |msg: String| Error::Corrupt {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MAGIC,
            found,
        });
    }
    let version = word(4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: VERSION,
        });
    }
    let (m, n) = (word(8) as usize, word(12) as usize);
    let count = 3 * m * n;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * count {
        return Err(corrupt(format!(
            "header declares 3 x {m} x {n} values ({} bytes) but payload has {} bytes",
            4 * count,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    EstGram::new(m, n, data)
}

pub fn write_cache(path: &Path, est: &EstGram) -> Result<()> {
    fs::write(path, encode(est)).map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: &Path) -> Result<EstGram> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EstGram {
        EstGram::new(2, 3, (0..18).map(|k| k as f64 * 0.5 - 3.0).collect()).unwrap()
    }

    #[test]
    fn round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.estg");
        write_cache(&p, &sample()).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"ESTG");
        assert_eq!(bytes[4..8], 1u32.to_le_bytes());
        assert_eq!(bytes[8..12], 2u32.to_le_bytes());
        assert_eq!(bytes[12..16], 3u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 18 * 4);
        // first value of channel 1 sits right after the 6 values of channel 0
        assert_eq!(bytes[16 + 24..16 + 28], 0.0f32.to_le_bytes());
        assert_eq!(read_cache(&p).unwrap(), sample());
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let p = Path::new("mem");
        let good = encode(&sample());

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, p), Err(Error::BadMagic { .. })));

        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(decode(&v2, p), Err(Error::UnsupportedVersion { found: 2, .. })));

        assert!(matches!(decode(&good[..good.len() - 1], p), Err(Error::Corrupt { .. })));
        assert!(matches!(decode(&good[..10], p), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_cache(Path::new("/nonexistent/x.estg")), Err(Error::Io { .. })));
    }
}
