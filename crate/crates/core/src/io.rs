//! Raw grid files: one line of JSON header followed by a little-endian
//! payload.
//!
//! ```text
//! {"shape":[nx,ny,nt,nc],"dtype":"complex64","layout":"row-major"}\n
//! re0 im0 re1 im1 ...        (f32 LE, interleaved)
//! ```
//!
//! Masks use the same framing with `"dtype":"bool"`, a three-axis shape and
//! one byte (0 or 1) per location.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::SamplingMask;
use crate::tensor::{ComplexGrid, Shape, C64};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub layout: String,
}

impl Header {
    fn new(shape: Vec<usize>, dtype: &str) -> Self {
        Header { shape, dtype: dtype.to_string(), layout: "row-major".to_string() }
    }
}

fn write_header<W: Write>(w: &mut W, h: &Header) -> Result<()> {
    serde_json::to_writer(&mut *w, h)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let h: Header = serde_json::from_str(line.trim_end())?;
    if h.layout != "row-major" {
        return Err(Error::Format(format!("unsupported layout '{}'", h.layout)));
    }
    Ok(h)
}

pub fn write_grid<W: Write>(w: &mut W, g: &ComplexGrid) -> Result<()> {
    write_header(w, &Header::new(g.shape().dims().to_vec(), "complex64"))?;
    let mut buf = Vec::with_capacity(g.len() * 8);
    for z in g.data() {
        buf.extend_from_slice(&(z.re as f32).to_le_bytes());
        buf.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_grid<R: BufRead>(r: &mut R) -> Result<ComplexGrid> {
    let h = read_header(r)?;
    if h.dtype != "complex64" {
        return Err(Error::Format(format!("expected complex64 payload, got '{}'", h.dtype)));
    }
    let [nx, ny, nt, nc]: [usize; 4] = h
        .shape
        .as_slice()
        .try_into()
        .map_err(|_| Error::Format(format!("grid shape must have 4 axes, got {:?}", h.shape)))?;
    let shape = Shape::new(nx, ny, nt, nc);
    let mut bytes = vec![0u8; shape.len() * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            C64::new(f64::from(re), f64::from(im))
        })
        .collect();
    ComplexGrid::from_vec(shape, data)
}

pub fn write_mask<W: Write>(w: &mut W, m: &SamplingMask) -> Result<()> {
    let (nx, ny, nt) = m.dims();
    write_header(w, &Header::new(vec![nx, ny, nt], "bool"))?;
    let bytes: Vec<u8> = m.bits().iter().map(|&b| u8::from(b)).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_mask<R: BufRead>(r: &mut R) -> Result<SamplingMask> {
    let h = read_header(r)?;
    if h.dtype != "bool" {
        return Err(Error::Format(format!("expected bool payload, got '{}'", h.dtype)));
    }
    let [nx, ny, nt]: [usize; 3] = h
        .shape
        .as_slice()
        .try_into()
        .map_err(|_| Error::Format(format!("mask shape must have 3 axes, got {:?}", h.shape)))?;
    let mut bytes = vec![0u8; nx * ny * nt];
    r.read_exact(&mut bytes)?;
    let bits = bytes
        .into_iter()
        .map(|b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("mask byte {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    SamplingMask::from_bits((nx, ny, nt), bits)
}

pub fn save_grid(path: impl AsRef<Path>, g: &ComplexGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_grid(&mut w, g)?;
    w.flush()?;
    Ok(())
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<ComplexGrid> {
    read_grid(&mut BufReader::new(File::open(path)?))
}

pub fn save_mask(path: impl AsRef<Path>, m: &SamplingMask) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mask(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<SamplingMask> {
    read_mask(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_one_json_line() {
        let g = ComplexGrid::zeros(Shape::new(2, 3, 1, 1));
        let mut buf = Vec::new();
        write_grid(&mut buf, &g).unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&buf[..nl]).unwrap(),
            r#"{"shape":[2,3,1,1],"dtype":"complex64","layout":"row-major"}"#
        );
        assert_eq!(buf.len(), nl + 1 + 6 * 8);
    }

    #[test]
    fn payload_is_interleaved_le_f32() {
        let g = ComplexGrid::from_vec(Shape::new(1, 1, 1, 1), vec![C64::new(1.5, -2.0)]).unwrap();
        let mut buf = Vec::new();
        write_grid(&mut buf, &g).unwrap();
        let payload = &buf[buf.len() - 8..];
        assert_eq!(&payload[..4], &1.5f32.to_le_bytes());
        assert_eq!(&payload[4..], &(-2.0f32).to_le_bytes());
    }

    #[test]
    fn rejects_wrong_dtype_and_truncation() {
        let m = SamplingMask::ones((2, 2, 1));
        let mut buf = Vec::new();
        write_mask(&mut buf, &m).unwrap();
        assert!(read_grid(&mut buf.as_slice()).is_err());
        let mut g = Vec::new();
        write_grid(&mut g, &ComplexGrid::zeros(Shape::new(2, 2, 1, 1))).unwrap();
        g.truncate(g.len() - 3);
        assert!(read_grid(&mut g.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn grid_round_trip_is_f32_exact(vals in proptest::collection::vec(-1e3f32..1e3, 24)) {
            let data: Vec<C64> = vals.chunks(2).map(|c| C64::new(c[0].into(), c[1].into())).collect();
            let g = ComplexGrid::from_vec(Shape::new(2, 3, 2, 1), data).unwrap();
            let mut buf = Vec::new();
            write_grid(&mut buf, &g).unwrap();
            prop_assert_eq!(read_grid(&mut buf.as_slice()).unwrap(), g);
        }

        #[test]
        fn mask_round_trip(bits in proptest::collection::vec(any::<bool>(), 30)) {
            let m = SamplingMask::from_bits((5, 3, 2), bits).unwrap();
            let mut buf = Vec::new();
            write_mask(&mut buf, &m).unwrap();
            prop_assert_eq!(read_mask(&mut buf.as_slice()).unwrap(), m);
        }
    }
}
