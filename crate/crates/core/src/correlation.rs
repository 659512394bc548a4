//! All-pairs row correlation, its pooled pyramid, and the windowed lookup.
//!
//! Disparity convention: a positive disparity `d` at left pixel `w`
//! matches right pixel `w - d`.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

/// Correlation pyramid. Level `p` has shape `N×H×W×(W/2^p)`; level 0
/// entry `(h, w, w')` is `<fl(h,w), fr(h,w')> / sqrt(Cf)`.
#[derive(Clone, Debug)]
pub struct CorrelationVolume {
    pub levels: Vec<Var>,
    pub scale: f64,
}

impl CorrelationVolume {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

pub fn build_volume<T: Element>(
    t: &mut Tape<T>,
    fl: Var,
    fr: Var,
    pyramid_levels: usize,
) -> Result<CorrelationVolume> {
    if pyramid_levels == 0 {
        return Err(Error::Config("correlation pyramid needs at least one level".into()));
    }
    let cf = t.value(fl).dims4()?.1;
    let mut levels = vec![t.correlation(fl, fr)?];
    for p in 1..pyramid_levels {
        let prev = levels[p - 1];
        if t.shape(prev)[3] < 2 {
            return Err(Error::dim(format!(
                "correlation pyramid level {p} would be empty; reduce pyramid_levels"
            )));
        }
        levels.push(t.pool_last(prev)?);
    }
    Ok(CorrelationVolume {
        levels,
        scale: 1.0 / (cf as f64).sqrt(),
    })
}

/// Sample every level around the current disparity: `N×P(2r+1)×H×W`,
/// channels grouped by level then by offset `-r..=r`.
pub fn lookup<T: Element>(t: &mut Tape<T>, vol: &CorrelationVolume, d: Var, radius: usize) -> Result<Var> {
    let parts = vol
        .levels
        .iter()
        .enumerate()
        .map(|(p, &lv)| t.lookup_level(lv, d, radius, p as u32))
        .collect::<Result<Vec<_>>>()?;
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    t.concat_channels(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn one_hot_codes_peak_on_diagonal() {
        let (h, w) = (2, 5);
        let c = h * w;
        let f = Tensor::<f32>::from_fn([1, c, h, w], |i| {
            let ch = i / (h * w);
            let px = i % (h * w);
            if ch == px { 1.0 } else { 0.0 }
        });
        let mut t = Tape::new();
        let a = t.constant(f.clone()).unwrap();
        let b = t.constant(f).unwrap();
        let v = build_volume(&mut t, a, b, 1).unwrap();
        let vol = t.value(v.levels[0]);
        for y in 0..h {
            for x in 0..w {
                let row = &vol.data()[(y * w + x) * w..][..w];
                let arg = (0..w).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
                assert_eq!(arg, x);
            }
        }
    }

    #[test]
    fn single_dot_product_by_hand() {
        let mut fl = Tensor::<f64>::zeros([1, 2, 1, 2]);
        let mut fr = Tensor::<f64>::zeros([1, 2, 1, 2]);
        fl.data_mut()[1] = 1.0; // channel 0, w = 1
        fr.data_mut()[0] = 1.0; // channel 0, w' = 0
        let mut t = Tape::new();
        let a = t.constant(fl).unwrap();
        let b = t.constant(fr).unwrap();
        let v = build_volume(&mut t, a, b, 2).unwrap();
        let l0 = t.value(v.levels[0]);
        assert!((l0.data()[2] - 0.70711).abs() < 1e-5);
        assert!((v.scale - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let l1 = t.value(v.levels[1]);
        assert_eq!(l1.shape(), &[1, 1, 2, 1]);
        assert_eq!(l1.data()[1], (l0.data()[2] + l0.data()[3]) / 2.0);
    }

    #[test]
    fn lookup_interpolates_and_counts_channels() {
        let vol = Tensor::<f64>::new([1, 1, 4, 4], {
            let mut v = vec![0.0; 16];
            // pixel w = 3 sees row [0, 10, 20, 30]
            v[12..16].copy_from_slice(&[0.0, 10.0, 20.0, 30.0]);
            v
        })
        .unwrap();
        let mut t = Tape::new();
        let vv = t.constant(vol).unwrap();
        // position = 3 - d = 1.5
        let d = t.constant(Tensor::full([1, 1, 1, 4], 1.5)).unwrap();
        let cv = CorrelationVolume { levels: vec![vv], scale: 1.0 };
        let out = lookup(&mut t, &cv, d, 0).unwrap();
        assert_eq!(t.shape(out), &[1, 1, 1, 4]);
        assert_eq!(t.value(out).data()[3], 15.0);
        // integer disparity lands on knots, clamping beyond the row ends
        let d1 = t.constant(Tensor::full([1, 1, 1, 4], 1.0)).unwrap();
        let out = lookup(&mut t, &cv, d1, 2).unwrap();
        let o: Vec<f64> = (0..5).map(|k| t.value(out).data()[k * 4 + 3]).collect();
        assert_eq!(o, [0.0, 10.0, 20.0, 30.0, 30.0]);
    }

    #[test]
    fn lookup_rejects_nan() {
        let mut t = Tape::<f64>::new();
        let vol = t.constant(Tensor::zeros([1, 1, 2, 2])).unwrap();
        let d = t.constant(Tensor::new([1, 1, 1, 2], vec![0.0, f64::NAN]).unwrap()).unwrap();
        let cv = CorrelationVolume { levels: vec![vol], scale: 1.0 };
        assert!(matches!(lookup(&mut t, &cv, d, 1), Err(Error::Value(_))));
    }

    #[test]
    fn channel_count_formula() {
        let mut t = Tape::<f32>::new();
        let f = t.constant(Tensor::zeros([1, 4, 2, 16])).unwrap();
        let v = build_volume(&mut t, f, f, 4).unwrap();
        let widths: Vec<usize> = v.levels.iter().map(|&l| t.shape(l)[3]).collect();
        assert_eq!(widths, [16, 8, 4, 2]);
        let d = t.constant(Tensor::zeros([1, 1, 2, 16])).unwrap();
        let out = lookup(&mut t, &v, d, 4).unwrap();
        assert_eq!(t.shape(out), &[1, 36, 2, 16]);
        assert!(build_volume(&mut t, f, f, 6).is_err());
    }
}
