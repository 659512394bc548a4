//! Dense row-major tensors.
//!
//! Images and feature maps use the `N×C×H×W` layout. Data is stored
//! contiguously with the last axis fastest.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar element type. Implemented for `f32` (default) and `f64`
/// (gradient-check mode).
pub trait Element:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts")
    }

    fn f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Element for f32 {}
impl Element for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} holds {} elements but {} were given",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![v; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Dimensions as `(n, c, h, w)`; errors unless the tensor is 4-D.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::dim(format!(
                "expected a 4-D tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors with [`Error::Numerical`] if any element is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numerical {
                stage: what.to_string(),
                msg: format!("non-finite value at flat index {i}"),
            }),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Element at a 4-D index.
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let s = &self.shape;
        self.data[((n * s[1] + c) * s[2] + h) * s[3] + w]
    }

    /// Copy of channel `c` of sample `n` as a `1×1×H×W` tensor.
    pub fn channel(&self, n: usize, c: usize) -> Result<Tensor<T>> {
        let (_, cc, h, w) = self.dims4()?;
        let off = (n * cc + c) * h * w;
        Tensor::new([1, 1, h, w], self.data[off..off + h * w].to_vec())
    }

    /// Concatenate 4-D tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let (n, _, h, w) = first.dims4()?;
        let mut total_c = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::dim(format!(
                    "concat: shape {:?} incompatible with {:?}",
                    p.shape, first.shape
                )));
            }
            total_c += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for p in parts {
                let pc = p.shape[1];
                data.extend_from_slice(&p.data[b * pc * plane..(b + 1) * pc * plane]);
            }
        }
        Tensor::new([n, total_c, h, w], data)
    }
}

/// Bit-level checksum of the tensor contents, for invariance checks.
pub fn checksum<T: Element>(t: &Tensor<T>) -> u64 {
    // FNV-1a over the f64 bit patterns.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in t.data() {
        for b in v.f64().to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    for &d in t.shape() {
        h ^= d as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
