//! The T2DM binary tensor format.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "T2DM"
//! 4       1         version (1)
//! 5       1         dtype (0 = f32, 1 = f64)
//! 6       1         ndim (1..=3)
//! 7       1         reserved, zero
//! 8       8*ndim    dimensions, u64 little-endian
//! ..      ...       row-major payload, little-endian
//! ```
//!
//! Grids map to dimensions as follows: `H × W × D` with `D > 1` is written as
//! `(H, W, D)`; a single-channel grid with `H > 1` as `(H, W)`; a single-channel
//! single-row grid as `(W)`. Readers map rank 1 back to `1 × W × 1` and rank 2
//! to `H × W × 1`.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::tensor::grid::FeatureGrid;
use crate::tensor::real::{DType, Element, Real};

pub const MAGIC: [u8; 4] = *b"T2DM";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 8;

/// A grid of either precision, as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyGrid {
    F32(FeatureGrid<f32>),
    F64(FeatureGrid<f64>),
}

impl AnyGrid {
    pub fn dtype(&self) -> DType {
        match self {
            AnyGrid::F32(_) => DType::F32,
            AnyGrid::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        match self {
            AnyGrid::F32(g) => g.shape(),
            AnyGrid::F64(g) => g.shape(),
        }
    }

    /// Converts to the requested precision.
    pub fn to_real<T: Real>(&self) -> FeatureGrid<T> {
        match self {
            AnyGrid::F32(g) => g.cast(),
            AnyGrid::F64(g) => g.cast(),
        }
    }

    pub fn write_to<W: Write>(&self, sink: W) -> Result<u64> {
        match self {
            AnyGrid::F32(g) => write_tensor(g, sink),
            AnyGrid::F64(g) => write_tensor(g, sink),
        }
    }
}

impl From<FeatureGrid<f32>> for AnyGrid {
    fn from(g: FeatureGrid<f32>) -> Self {
        AnyGrid::F32(g)
    }
}

impl From<FeatureGrid<f64>> for AnyGrid {
    fn from(g: FeatureGrid<f64>) -> Self {
        AnyGrid::F64(g)
    }
}

fn dims_of<T: Element>(grid: &FeatureGrid<T>) -> Vec<u64> {
    let (h, w, d) = grid.shape();
    if d > 1 {
        vec![h as u64, w as u64, d as u64]
    } else if h > 1 {
        vec![h as u64, w as u64]
    } else {
        vec![w as u64]
    }
}

/// Number of bytes [`write_tensor`] emits for `grid`.
pub fn encoded_len<T: Element>(grid: &FeatureGrid<T>) -> u64 {
    (HEADER_LEN + 8 * dims_of(grid).len() + T::DTYPE.width() * grid.data().len()) as u64
}

struct Counting<W> {
    inner: W,
    written: u64,
}

impl<W: Write> Counting<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        let mut rest = bytes;
        while !rest.is_empty() {
            match self.inner.write(rest) {
                Ok(0) => {
                    return Err(Error::Io {
                        offset: self.written,
                        source: io::Error::new(io::ErrorKind::WriteZero, "sink accepted no bytes"),
                    })
                }
                Ok(n) => {
                    self.written += n as u64;
                    rest = &rest[n..];
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(source) => {
                    return Err(Error::Io {
                        offset: self.written,
                        source,
                    })
                }
            }
        }
        Ok(())
    }
}

/// Serializes `grid`; returns the number of bytes written.
pub fn write_tensor<T: Element, W: Write>(grid: &FeatureGrid<T>, sink: W) -> Result<u64> {
    let dims = dims_of(grid);
    let mut out = Counting {
        inner: sink,
        written: 0,
    };

    let mut head = Vec::with_capacity(HEADER_LEN + 8 * dims.len());
    head.extend_from_slice(&MAGIC);
    head.extend_from_slice(&[VERSION, T::DTYPE.code(), dims.len() as u8, 0]);
    for d in &dims {
        head.extend_from_slice(&d.to_le_bytes());
    }
    out.put(&head)?;

    const CHUNK: usize = 8192;
    let mut buf = Vec::with_capacity(CHUNK * T::DTYPE.width());
    for chunk in grid.data().chunks(CHUNK) {
        buf.clear();
        for &v in chunk {
            v.extend_le(&mut buf);
        }
        out.put(&buf)?;
    }
    out.inner.flush().map_err(|source| Error::Io {
        offset: out.written,
        source,
    })?;
    Ok(out.written)
}

fn read_full<R: Read>(src: &mut R, buf: &mut [u8], what: &'static str, offset: u64) -> Result<()> {
    let mut got = 0;
    while got < buf.len() {
        match src.read(&mut buf[got..]) {
            Ok(0) => {
                return Err(Error::Truncated {
                    what,
                    expected: buf.len() as u64,
                    got: got as u64,
                })
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(source) => {
                return Err(Error::Io {
                    offset: offset + got as u64,
                    source,
                })
            }
        }
    }
    Ok(())
}

/// Parses one tensor from `source`.
pub fn read_tensor<R: Read>(mut source: R) -> Result<AnyGrid> {
    let mut head = [0u8; HEADER_LEN];
    read_full(&mut source, &mut head, "header", 0)?;
    let magic: [u8; 4] = head[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    if head[4] != VERSION {
        return Err(Error::UnsupportedVersion(head[4]));
    }
    let dtype = DType::from_code(head[5]).ok_or(Error::UnsupportedDtype(head[5]))?;
    let ndim = head[6];
    if !(1..=3).contains(&ndim) {
        return Err(Error::UnsupportedRank(ndim));
    }
    if head[7] != 0 {
        return Err(Error::ReservedByte(head[7]));
    }

    let mut raw_dims = vec![0u8; 8 * ndim as usize];
    read_full(&mut source, &mut raw_dims, "dimensions", HEADER_LEN as u64)?;
    let dims: Vec<u64> = raw_dims
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if dims.contains(&0) {
        return Err(Error::EmptyDimension(dims));
    }
    let (h, w, d) = match dims[..] {
        [w] => (1, w, 1),
        [h, w] => (h, w, 1),
        [h, w, d] => (h, w, d),
        _ => unreachable!("rank checked above"),
    };
    let count = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(d))
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| Error::InvalidArgument(format!("dimensions {dims:?} overflow")))?;
    let payload_offset = (HEADER_LEN + raw_dims.len()) as u64;

    fn payload<T: Element, R: Read>(
        src: &mut R,
        count: usize,
        offset: u64,
        (h, w, d): (usize, usize, usize),
    ) -> Result<FeatureGrid<T>> {
        let width = T::DTYPE.width();
        let expected = (count * width) as u64;
        let mut bytes = Vec::new();
        src.take(expected)
            .read_to_end(&mut bytes)
            .map_err(|source| Error::Io { offset, source })?;
        if (bytes.len() as u64) < expected {
            return Err(Error::Truncated {
                what: "payload",
                expected,
                got: bytes.len() as u64,
            });
        }
        let data: Vec<T> = bytes.chunks_exact(width).map(T::from_le_slice).collect();
        FeatureGrid::new(h, w, d, data)
    }

    let shape = (h as usize, w as usize, d as usize);
    Ok(match dtype {
        DType::F32 => AnyGrid::F32(payload(&mut source, count, payload_offset, shape)?),
        DType::F64 => AnyGrid::F64(payload(&mut source, count, payload_offset, shape)?),
    })
}

/// Writes `grid` to a file at `path`.
pub fn save<T: Element>(grid: &FeatureGrid<T>, path: impl AsRef<std::path::Path>) -> Result<u64> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io { offset: 0, source })?;
    write_tensor(grid, io::BufWriter::new(file))
}

/// Reads a tensor file at `path`.
pub fn load(path: impl AsRef<std::path::Path>) -> Result<AnyGrid> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io { offset: 0, source })?;
    read_tensor(io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode<T: Element>(g: &FeatureGrid<T>) -> Vec<u8> {
        let mut out = Vec::new();
        let n = write_tensor(g, &mut out).unwrap();
        assert_eq!(n as usize, out.len());
        out
    }

    #[test]
    fn single_element_is_twenty_bytes() {
        let g = FeatureGrid::scalar(1, 1, vec![0.0f32]).unwrap();
        let bytes = encode(&g);
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..8], b"T2DM\x01\x00\x01\x00");
        assert_eq!(encoded_len(&g), 20);
    }

    #[test]
    fn two_by_three_double() {
        let g = FeatureGrid::scalar(2, 3, vec![1.5f64; 6]).unwrap();
        let bytes = encode(&g);
        assert_eq!(bytes[5], 1);
        assert_eq!(bytes[6], 2);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(bytes.len() - 24, 48);
    }

    #[test]
    fn fourteen_square_roundtrip() {
        let g = FeatureGrid::from_fn(14, 14, 1, |i, j, _| (i as f64) - 0.25 * j as f64).unwrap();
        let back = read_tensor(&encode(&g)[..]).unwrap();
        assert_eq!(back.shape(), (14, 14, 1));
        assert_eq!(back, AnyGrid::F64(g));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&FeatureGrid::scalar(1, 1, vec![1.0f32]).unwrap());
        bytes[0] = b'X';
        assert!(matches!(
            read_tensor(&bytes[..]),
            Err(Error::BadMagic { found }) if &found == b"X2DM"
        ));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode(&FeatureGrid::scalar(2, 2, vec![1.0f64; 4]).unwrap());
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            read_tensor(cut),
            Err(Error::Truncated {
                what: "payload",
                expected: 32,
                got: 29
            })
        ));
        assert!(matches!(
            read_tensor(&bytes[..5]),
            Err(Error::Truncated { what: "header", .. })
        ));
    }

    #[test]
    fn version_dtype_rank_errors() {
        let good = encode(&FeatureGrid::scalar(1, 1, vec![1.0f32]).unwrap());
        let mut v = good.clone();
        v[4] = 2;
        assert!(matches!(read_tensor(&v[..]), Err(Error::UnsupportedVersion(2))));
        let mut v = good.clone();
        v[5] = 7;
        assert!(matches!(read_tensor(&v[..]), Err(Error::UnsupportedDtype(7))));
        let mut v = good.clone();
        v[6] = 4;
        assert!(matches!(read_tensor(&v[..]), Err(Error::UnsupportedRank(4))));
        let mut v = good;
        v[7] = 1;
        assert!(matches!(read_tensor(&v[..]), Err(Error::ReservedByte(1))));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let mut bytes = encode(&FeatureGrid::scalar(1, 2, vec![1.0f64, 2.0]).unwrap());
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(read_tensor(&bytes[..]), Err(Error::NonFinite { index: 1 })));
    }

    #[test]
    fn sink_failure_reports_offset() {
        struct Limited(usize);
        impl Write for Limited {
            fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
                if self.0 == 0 {
                    return Err(io::Error::other("full"));
                }
                let n = buf.len().min(self.0);
                self.0 -= n;
                Ok(n)
            }
            fn flush(&mut self) -> io::Result<()> {
                Ok(())
            }
        }
        let g = FeatureGrid::scalar(4, 4, vec![0.0f64; 16]).unwrap();
        match write_tensor(&g, Limited(30)) {
            Err(Error::Io { offset, .. }) => assert_eq!(offset, 30),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn channel_grid_is_rank_three() {
        let g = FeatureGrid::zeros(2, 3, 4).unwrap() as FeatureGrid<f32>;
        let bytes = encode(&g);
        assert_eq!(bytes[6], 3);
        assert_eq!(read_tensor(&bytes[..]).unwrap(), AnyGrid::F32(g));
    }
}
