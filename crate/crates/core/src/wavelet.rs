//! Orthonormal 2-D Haar transform and the iterated decomposition pyramid.
//!
//! For every 2×2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! LL = ( a + b + c + d) / 2
//! HL = (-a + b - c + d) / 2   horizontal detail
//! LH = (-a - b + c + d) / 2   vertical detail
//! HH = ( a - b - c + d) / 2
//! ```

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SubBands<T: Element = f32> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

pub fn dwt2<T: Element>(x: &Tensor<T>) -> Result<SubBands<T>> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!(
            "dwt2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let half = T::of(0.5);
    let len = n * c * oh * ow;
    let (mut ll, mut lh, mut hl, mut hh) = (
        Vec::with_capacity(len),
        Vec::with_capacity(len),
        Vec::with_capacity(len),
        Vec::with_capacity(len),
    );
    let xd = x.data();
    for p in 0..n * c {
        let plane = &xd[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            let top = &plane[2 * i * w..(2 * i + 1) * w];
            let bot = &plane[(2 * i + 1) * w..(2 * i + 2) * w];
            for j in 0..ow {
                let (a, b) = (top[2 * j], top[2 * j + 1]);
                let (cc, d) = (bot[2 * j], bot[2 * j + 1]);
                ll.push((a + b + cc + d) * half);
                hl.push((-a + b - cc + d) * half);
                lh.push((-a - b + cc + d) * half);
                hh.push((a - b - cc + d) * half);
            }
        }
    }
    let shape = [n, c, oh, ow];
    Ok(SubBands {
        ll: Tensor::new(shape, ll)?,
        lh: Tensor::new(shape, lh)?,
        hl: Tensor::new(shape, hl)?,
        hh: Tensor::new(shape, hh)?,
    })
}

pub fn idwt2<T: Element>(bands: &SubBands<T>) -> Result<Tensor<T>> {
    let shape = bands.ll.shape();
    for (name, t) in [("lh", &bands.lh), ("hl", &bands.hl), ("hh", &bands.hh)] {
        if t.shape() != shape {
            return Err(Error::dim(format!(
                "idwt2: {name} shape {:?} differs from ll {:?}",
                t.shape(),
                shape
            )));
        }
    }
    let (n, c, h, w) = bands.ll.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let half = T::of(0.5);
    let mut out = vec![T::zero(); n * c * oh * ow];
    let (ll, lh, hl, hh) = (
        bands.ll.data(),
        bands.lh.data(),
        bands.hl.data(),
        bands.hh.data(),
    );
    for p in 0..n * c {
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..h {
            for j in 0..w {
                let k = p * h * w + i * w + j;
                let (s, x, y, z) = (ll[k], hl[k], lh[k], hh[k]);
                dst[2 * i * ow + 2 * j] = (s - x - y + z) * half;
                dst[2 * i * ow + 2 * j + 1] = (s + x - y - z) * half;
                dst[(2 * i + 1) * ow + 2 * j] = (s - x + y - z) * half;
                dst[(2 * i + 1) * ow + 2 * j + 1] = (s + x + y + z) * half;
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

/// Sub-bands for levels `1..=n_levels`; level `i` is the transform of
/// level `i-1`'s LL (level 0's LL is the input image).
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid<T: Element = f32> {
    pub levels: Vec<SubBands<T>>,
}

impl<T: Element> WaveletPyramid<T> {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Sub-bands at 1-based `level`.
    pub fn level(&self, level: usize) -> Result<&SubBands<T>> {
        if level == 0 || level > self.levels.len() {
            return Err(Error::Range(format!(
                "wavelet level {level} outside 1..={}",
                self.levels.len()
            )));
        }
        Ok(&self.levels[level - 1])
    }

    /// Detail bands of `level` concatenated along channels as HL, LH, HH.
    pub fn concat_high(&self, level: usize) -> Result<Tensor<T>> {
        let b = self.level(level)?;
        Tensor::concat_channels(&[&b.hl, &b.lh, &b.hh])
    }

    /// Cascade `idwt2` from the deepest level back to the input image.
    pub fn reconstruct(&self) -> Result<Tensor<T>> {
        let mut ll = self
            .levels
            .last()
            .ok_or_else(|| Error::Range("empty pyramid".into()))?
            .ll
            .clone();
        for b in self.levels.iter().rev() {
            ll = idwt2(&SubBands {
                ll,
                lh: b.lh.clone(),
                hl: b.hl.clone(),
                hh: b.hh.clone(),
            })?;
        }
        Ok(ll)
    }
}

pub fn build_pyramid<T: Element>(image: &Tensor<T>, n_levels: usize) -> Result<WaveletPyramid<T>> {
    let (_, _, h, w) = image.dims4()?;
    if n_levels == 0 {
        return Err(Error::Range("pyramid needs at least one level".into()));
    }
    let m = 1usize << n_levels;
    if h % m != 0 || w % m != 0 {
        let ph = (m - h % m) % m;
        let pw = (m - w % m) % m;
        return Err(Error::dim(format!(
            "{h}x{w} is not divisible by 2^{n_levels}; pad by {ph} rows and {pw} columns (e.g. --pad reflect)"
        )));
    }
    let mut levels = Vec::with_capacity(n_levels);
    let mut ll = image.clone();
    for _ in 0..n_levels {
        let b = dwt2(&ll)?;
        ll = b.ll.clone();
        levels.push(b);
    }
    Ok(WaveletPyramid { levels })
}

/// Reflect-pad (without edge repetition) so H and W become multiples of `m`.
pub fn pad_reflect<T: Element>(x: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let nh = h.div_ceil(m) * m;
    let nw = w.div_ceil(m) * m;
    if nh - h >= h.max(2) || nw - w >= w.max(2) {
        return Err(Error::dim(format!("{h}x{w} too small to reflect-pad to {nh}x{nw}")));
    }
    let reflect = |i: usize, len: usize| if i < len { i } else { 2 * (len - 1) - i };
    let mut out = Vec::with_capacity(n * c * nh * nw);
    for p in 0..n * c {
        for i in 0..nh {
            for j in 0..nw {
                out.push(x.data()[p * h * w + reflect(i, h) * w + reflect(j, w)]);
            }
        }
    }
    Tensor::new([n, c, nh, nw], out)
}
