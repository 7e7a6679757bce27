//! Dense row-major tensors and the differentiable primitives built on them.
//!
//! Values are held as `f64` so that every dot product accumulates in wider
//! precision than the 32-bit storage format used by checkpoints. Parameters
//! are kept exactly representable in `f32` (see [`Tensor::quantize_f32`]) so
//! that a save/load cycle is lossless.

pub mod gradcheck;
pub mod ops;

use std::fmt;

use indexmap::IndexMap;

use crate::error::{shape_err, Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(shape_err(
                "tensor",
                format!("extents must be positive, got {shape:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} holds {n} values but {} given", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "extents must be positive, got {shape:?}"
        );
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    /// A rank-1 tensor over `values`.
    pub fn vector(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "vector must be non-empty");
        Self {
            shape: vec![values.len()],
            data: values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(shape_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Interprets the tensor as C×H×W.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(shape_err(
                "chw",
                format!("expected a C×H×W tensor, got {:?}", self.shape),
            )),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rounds every element to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_same_shape("add", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub(crate) fn expect_same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    /// Serializes as `rank u8`, `extents u32 LE`, then row-major `f32 LE` payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 4 * self.rank() + 4 * self.len());
        self.write_bytes(&mut out);
        out
    }

    pub(crate) fn write_bytes(&self, out: &mut Vec<u8>) {
        out.push(self.rank() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    /// Inverse of [`Tensor::to_bytes`]. Returns the tensor and the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut reader = ByteReader::new(bytes, "tensor");
        let t = reader.tensor()?;
        Ok((t, reader.offset()))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}...", &self.data[..16])
        }
    }
}

/// Cursor over a little-endian byte buffer that reports the offset of any truncation.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self {
            bytes,
            pos: 0,
            what,
        }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn fail(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            what: self.what,
            offset: self.pos,
            detail: detail.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!(
                "need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn utf8(&mut self, n: usize) -> Result<&'a str> {
        let start = self.pos;
        let raw = self.take(n)?;
        std::str::from_utf8(raw).map_err(|e| Error::Format {
            what: self.what,
            offset: start + e.valid_up_to(),
            detail: "invalid UTF-8".into(),
        })
    }

    pub(crate) fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u8()? as usize;
        if rank == 0 {
            return Err(self.fail("tensor rank must be at least 1"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = self.u32()? as usize;
            if d == 0 {
                return Err(self.fail("zero extent"));
            }
            shape.push(d);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| self.fail("extent product overflows"))?;
        let payload = self.take(
            n.checked_mul(4)
                .ok_or_else(|| self.fail("payload too large"))?,
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Tensor { shape, data })
    }
}

/// Named gradient (or velocity) tensors, keyed by parameter name.
pub type Gradients = IndexMap<String, Tensor>;

/// Adds `src` into `dst`, inserting keys that are missing.
pub fn accumulate(dst: &mut Gradients, src: Gradients) -> Result<()> {
    for (name, g) in src {
        match dst.get_mut(&name) {
            Some(acc) => acc.add_assign(&g)?,
            None => {
                dst.insert(name, g);
            }
        }
    }
    Ok(())
}

/// Prepends `prefix` to every key.
pub fn prefixed(grads: Gradients, prefix: &str) -> Gradients {
    grads
        .into_iter()
        .map(|(k, v)| (format!("{prefix}{k}"), v))
        .collect()
}
