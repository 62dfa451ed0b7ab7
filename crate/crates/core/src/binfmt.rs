//! Little-endian binary primitives shared by the dataset and checkpoint file
//! formats, with errors that tell truncation, bad magic, and version drift
//! apart.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::scalar::Scalar;

/// Elements converted per read/write burst.
const CHUNK: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (this build reads {expected})")]
    UnsupportedVersion { expected: u32, found: u32 },
    #[error("file truncated while reading {needed} more bytes")]
    Truncated { needed: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), FormatError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FormatError::Truncated { needed: buf.len() }
        } else {
            FormatError::Io(e)
        }
    })
}

pub fn read_magic<R: Read>(r: &mut R, expected: [u8; 4]) -> Result<(), FormatError> {
    let mut found = [0u8; 4];
    fill(r, &mut found)?;
    if found != expected {
        return Err(FormatError::BadMagic { expected, found });
    }
    Ok(())
}

/// Reads a version word and rejects anything but `expected`.
pub fn expect_version<R: Read>(r: &mut R, expected: u32) -> Result<(), FormatError> {
    let found = read_u32(r)?;
    if found != expected {
        return Err(FormatError::UnsupportedVersion { expected, found });
    }
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32, FormatError> {
    let mut buf = [0u8; 4];
    fill(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64, FormatError> {
    let mut buf = [0u8; 8];
    fill(r, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

/// Reads `count` little-endian f32 values, widening into `T`.
///
/// Reading is chunked, so a corrupt header claiming an absurd count fails
/// with [`FormatError::Truncated`] instead of a giant allocation.
pub fn read_f32_vec<T: Scalar, R: Read>(r: &mut R, count: usize) -> Result<Vec<T>, FormatError> {
    let mut out = Vec::with_capacity(count.min(CHUNK));
    let mut buf = vec![0u8; CHUNK * 4];
    let mut remaining = count;
    while remaining > 0 {
        let n = remaining.min(CHUNK);
        let bytes = &mut buf[..n * 4];
        fill(r, bytes)?;
        for c in bytes.chunks_exact(4) {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            out.push(T::from_f64_lossy(v as f64));
        }
        remaining -= n;
    }
    Ok(out)
}

/// Writes values as little-endian f32 (narrowing from `T` where wider).
pub fn write_f32_slice<T: Scalar, W: Write>(w: &mut W, data: &[T]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(data.len().min(CHUNK) * 4);
    for chunk in data.chunks(CHUNK) {
        buf.clear();
        for &v in chunk {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_round_trip_little_endian() {
        let mut buf = Vec::new();
        write_u32(&mut buf, 0xdead_beef).unwrap();
        write_u64(&mut buf, 42).unwrap();
        assert_eq!(&buf[..4], &[0xef, 0xbe, 0xad, 0xde]);
        let mut r = buf.as_slice();
        assert_eq!(read_u32(&mut r).unwrap(), 0xdead_beef);
        assert_eq!(read_u64(&mut r).unwrap(), 42);
    }

    #[test]
    fn f32_payload_round_trips_bit_exactly() {
        let data: Vec<f32> = vec![0.0, -1.5, 3.25e-7, f32::MIN_POSITIVE, 1.0];
        let mut buf = Vec::new();
        write_f32_slice(&mut buf, &data).unwrap();
        let back: Vec<f32> = read_f32_vec(&mut buf.as_slice(), data.len()).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn corruption_kinds_are_distinct() {
        let mut r: &[u8] = b"AVDX";
        assert!(matches!(
            read_magic(&mut r, *b"AVDD"),
            Err(FormatError::BadMagic { found: [b'A', b'V', b'D', b'X'], .. })
        ));

        let mut r: &[u8] = &9u32.to_le_bytes();
        assert!(matches!(
            expect_version(&mut r, 1),
            Err(FormatError::UnsupportedVersion { expected: 1, found: 9 })
        ));

        let mut r: &[u8] = &[1, 2];
        assert!(matches!(read_u32(&mut r), Err(FormatError::Truncated { .. })));
        let short = [0u8; 10];
        assert!(matches!(
            read_f32_vec::<f32, _>(&mut short.as_slice(), 1_000_000_000),
            Err(FormatError::Truncated { .. })
        ));
    }
}
