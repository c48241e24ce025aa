//! Dense row-major tensors and the `TSR` fixture file format.
//!
//! `Tensor` is the plain value carrier: a shape plus a flat `f64` buffer.
//! Gradient tracking lives in [`crate::graph`]; this type is just data.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Dense N-dimensional array of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArg {
                op: "Tensor::new",
                msg: format!("zero extent in shape {shape:?}"),
            });
        }
        if n != data.len() {
            return Err(Error::InvalidArg {
                op: "Tensor::new",
                msg: format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value at a multi-dimensional index (test convenience; not a hot path).
    pub fn at(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0usize;
        for (i, (&x, &d)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(x < d, "index {x} out of bounds for dim {i} (extent {d})");
            flat = flat * d + x;
        }
        self.data[flat]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Storage precision for the on-disk `TSR` format. In-memory math is always f64.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn token(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

/// Write one tensor record: ASCII header `TSR <ndim> <d0> ... <dtype>\n`,
/// then the little-endian payload, row-major.
pub fn write_tensor(w: &mut impl Write, t: &Tensor, dtype: DType) -> Result<()> {
    let mut header = format!("TSR {}", t.ndim());
    for d in t.shape() {
        header.push_str(&format!(" {d}"));
    }
    header.push_str(&format!(" {}\n", dtype.token()));
    w.write_all(header.as_bytes())?;
    match dtype {
        DType::F64 => {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        DType::F32 => {
            for v in t.data() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Read one tensor record written by [`write_tensor`]. f32 payloads widen to f64.
pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(Error::Format {
                msg: "unexpected EOF in TSR header".into(),
            });
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 4096 {
            return Err(Error::Format {
                msg: "TSR header too long".into(),
            });
        }
    }
    let line = String::from_utf8(line).map_err(|_| Error::Format {
        msg: "TSR header is not ASCII".into(),
    })?;
    let mut tok = line.split_whitespace();
    if tok.next() != Some("TSR") {
        return Err(Error::Format {
            msg: format!("bad TSR magic in header {line:?}"),
        });
    }
    let ndim: usize = tok
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format {
            msg: format!("bad ndim in header {line:?}"),
        })?;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d: usize = tok
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                msg: format!("missing extent in header {line:?}"),
            })?;
        shape.push(d);
    }
    let dtype = match tok.next() {
        Some("f32") => DType::F32,
        Some("f64") => DType::F64,
        other => {
            return Err(Error::Format {
                msg: format!("bad dtype {other:?} in header {line:?}"),
            })
        }
    };
    if tok.next().is_some() {
        return Err(Error::Format {
            msg: format!("trailing tokens in header {line:?}"),
        });
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    match dtype {
        DType::F64 => {
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
        }
        DType::F32 => {
            let mut buf = [0u8; 4];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
        }
    }
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_checks_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::new(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.at(&[0, 0]), 0.0);
        assert_eq!(t.at(&[0, 2]), 2.0);
        assert_eq!(t.at(&[1, 0]), 3.0);
        assert_eq!(t.at(&[1, 2]), 5.0);
    }

    #[test]
    fn tsr_round_trip_f64() {
        let t = Tensor::new(vec![2, 2, 3], (0..12).map(|v| v as f64 * 0.25 - 1.0).collect())
            .unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, DType::F64).unwrap();
        assert!(buf.starts_with(b"TSR 3 2 2 3 f64\n"));
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn tsr_f32_widens_on_load() {
        let t = Tensor::new(vec![3], vec![1.5, -2.25, 0.125]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, DType::F32).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        // These values are exactly representable in f32.
        assert_eq!(back, t);
    }

    #[test]
    fn tsr_rejects_garbage() {
        assert!(read_tensor(&mut &b"RST 1 3 f64\n"[..]).is_err());
        assert!(read_tensor(&mut &b"TSR 2 3 f64\n"[..]).is_err());
        assert!(read_tensor(&mut &b"TSR 1 3 f16\n"[..]).is_err());
        // Truncated payload.
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::zeros(&[4]), DType::F64).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }
}
