//! Random-dot and noise stereograms with exact ground truth.
//!
//! The left image is drawn from the texture model; the right image is the
//! left image forward-warped by the disparity field (left pixel `x` lands at
//! `x - d(x)` in the right image). Where several surfaces land on the same
//! right pixel the larger disparity wins. Right pixels with no source get
//! fresh texture, and left pixels that are out of frame or hidden in the
//! right view are marked invalid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::DisparityMap;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisparityField {
    Constant { value: f64 },
    /// Varies linearly along x from `start` (column 0) to `end` (last column).
    LinearRamp { start: f64, end: f64 },
    /// `left` for columns `< width/2`, `right` elsewhere.
    TwoPlane { left: f64, right: f64 },
}

impl DisparityField {
    pub fn at(&self, x: usize, width: usize) -> f64 {
        match *self {
            DisparityField::Constant { value } => value,
            DisparityField::LinearRamp { start, end } => {
                if width < 2 {
                    start
                } else {
                    start + (end - start) * x as f64 / (width - 1) as f64
                }
            }
            DisparityField::TwoPlane { left, right } => {
                if x < width / 2 {
                    left
                } else {
                    right
                }
            }
        }
    }

    fn extremes(&self) -> (f64, f64) {
        let (a, b) = match *self {
            DisparityField::Constant { value } => (value, value),
            DisparityField::LinearRamp { start, end } => (start, end),
            DisparityField::TwoPlane { left, right } => (left, right),
        };
        (a.min(b), a.max(b))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    /// Binary dots on black, `dot_density` of the pixels lit.
    Dots,
    /// Uniform noise smoothed by two passes of a `[1,2,1]/4` filter, stretched to [0, 255].
    BandlimitedNoise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub disparity_field: DisparityField,
    #[serde(default = "default_density")]
    pub dot_density: f64,
    #[serde(default = "default_texture")]
    pub texture: Texture,
    pub seed: u64,
}

fn default_density() -> f64 {
    0.5
}

fn default_texture() -> Texture {
    Texture::Dots
}

impl SynthSpec {
    pub fn random_dots(width: usize, height: usize, d: f64, seed: u64) -> Self {
        SynthSpec {
            width,
            height,
            disparity_field: DisparityField::Constant { value: d },
            dot_density: 0.5,
            texture: Texture::Dots,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 1 {
            return Err(Error::Config(format!("image {}x{} is too small", self.width, self.height)));
        }
        if !(0.0..=1.0).contains(&self.dot_density) {
            return Err(Error::Config(format!("dot_density {} outside [0, 1]", self.dot_density)));
        }
        let (lo, hi) = self.disparity_field.extremes();
        if !lo.is_finite() || !hi.is_finite() || lo < 0.0 {
            return Err(Error::Config("disparities must be finite and non-negative".into()));
        }
        if hi >= self.width as f64 / 4.0 {
            return Err(Error::Config(format!(
                "max disparity {hi} must be below width/4 = {}",
                self.width as f64 / 4.0
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthPair {
    /// `3×H×W`, values in [0, 255]; the three channels are equal.
    pub left: Tensor,
    pub right: Tensor,
    pub gt: DisparityMap,
    pub spec: SynthSpec,
}

fn texture_row_major(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (w, h) = (spec.width, spec.height);
    match spec.texture {
        Texture::Dots => (0..w * h)
            .map(|_| if rng.random::<f64>() < spec.dot_density { 255.0 } else { 0.0 })
            .collect(),
        Texture::BandlimitedNoise => {
            let mut v: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
            for _ in 0..2 {
                v = smooth(&v, w, h);
            }
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = (hi - lo).max(1e-12);
            v.iter().map(|x| ((x - lo) / span * 255.0).round()).collect()
        }
    }
}

fn smooth(v: &[f64], w: usize, h: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        v[y * w + x]
    };
    let k = [0.25, 0.5, 0.25];
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut s = 0.0;
            for (dy, ky) in (-1..=1).zip(k) {
                for (dx, kx) in (-1..=1).zip(k) {
                    s += ky * kx * at(x + dx, y + dy);
                }
            }
            out[y as usize * w + x as usize] = s;
        }
    }
    out
}

/// Segments of one row: left columns `x` and `x + 1` on a continuous surface.
/// Returns the right-image span and disparities at both ends.
fn segments(d: &[f64]) -> Vec<(usize, f64, f64, f64, f64)> {
    (0..d.len().saturating_sub(1))
        .filter(|&x| (d[x + 1] - d[x]).abs() <= 1.0)
        .map(|x| {
            let p0 = x as f64 - d[x];
            let p1 = (x + 1) as f64 - d[x + 1];
            (x, p0, p1, d[x], d[x + 1])
        })
        .filter(|s| s.2 > s.1)
        .collect()
}

pub fn synth_pair(spec: &SynthSpec) -> Result<SynthPair> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let left = texture_row_major(spec, &mut rng);
    let d: Vec<f64> = (0..w).map(|x| spec.disparity_field.at(x, w)).collect();
    let segs = segments(&d);
    // Visible surface at every right column and at every left pixel's landing spot.
    let surface = |p: f64| -> Option<(f64, usize, f64)> {
        let mut best: Option<(f64, usize, f64)> = None;
        for &(x, p0, p1, d0, d1) in &segs {
            if p < p0 - 1e-9 || p > p1 + 1e-9 {
                continue;
            }
            let t = ((p - p0) / (p1 - p0)).clamp(0.0, 1.0);
            let dz = d0 + t * (d1 - d0);
            if best.is_none_or(|b| dz > b.0 + 1e-9) {
                best = Some((dz, x, t));
            }
        }
        best
    };
    let mut right = vec![0.0; w * h];
    let mut filled = vec![false; w];
    let mut src = vec![(0usize, 0.0f64); w];
    for xr in 0..w {
        if let Some((_, x, t)) = surface(xr as f64) {
            filled[xr] = true;
            src[xr] = (x, t);
        }
    }
    for y in 0..h {
        let row = &left[y * w..(y + 1) * w];
        for xr in 0..w {
            right[y * w + xr] = if filled[xr] {
                let (x, t) = src[xr];
                if t == 0.0 {
                    row[x]
                } else {
                    row[x] + t * (row[x + 1] - row[x])
                }
            } else {
                match spec.texture {
                    Texture::Dots => {
                        if rng.random::<f64>() < spec.dot_density { 255.0 } else { 0.0 }
                    }
                    Texture::BandlimitedNoise => (rng.random::<f64>() * 255.0).round(),
                }
            };
        }
    }
    let mut valid_row = vec![false; w];
    for x in 0..w {
        let p = x as f64 - d[x];
        if p < 0.0 || p > (w - 1) as f64 {
            continue;
        }
        valid_row[x] = match surface(p) {
            Some((dz, _, _)) => d[x] >= dz - 1e-9,
            None => false,
        };
    }
    let gt_vals: Vec<f32> = (0..h).flat_map(|_| d.iter().map(|&v| v as f32)).collect();
    let valid: Vec<bool> = (0..h).flat_map(|_| valid_row.iter().copied()).collect();
    let gt = DisparityMap::new(Tensor::new([h, w], gt_vals)?, valid)?;
    let to_rgb = |v: &[f64]| {
        let plane: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        let mut data = Vec::with_capacity(3 * w * h);
        for _ in 0..3 {
            data.extend_from_slice(&plane);
        }
        Tensor::new([3, h, w], data)
    };
    Ok(SynthPair {
        left: to_rgb(&left)?,
        right: to_rgb(&right)?,
        gt,
        spec: spec.clone(),
    })
}
