//! Frequency-split evaluation: a Canny edge mask splits pixels into high-
//! and low-frequency regions, and EPE is reported per region alongside the
//! usual stereo metrics and per-iteration convergence traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CANNY_LOW: i32 = 100;
pub const CANNY_HIGH: i32 = 200;

/// Binary edge mask, row-major `H×W`; `true` marks a high-frequency pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyMask {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
    pub low: i32,
    pub high: i32,
}

impl FrequencyMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        Tensor::new([self.height, self.width], data).expect("mask shape")
    }
}

/// 8-bit luma of a `1×H×W` or `3×H×W` image (RGB order) with the
/// fixed-point weights `(4899, 9617, 1868) / 2^14` and round-half-up.
pub fn luma8(img: &Tensor) -> Result<(usize, usize, Vec<i32>)> {
    let s = img.shape();
    let (c, h, w) = match *s {
        [c, h, w] if c == 1 || c == 3 => (c, h, w),
        [1, c, h, w] if c == 1 || c == 3 => (c, h, w),
        _ => return Err(Error::dim(format!("edge mask needs a 1- or 3-channel image, got {s:?}"))),
    };
    let d = img.data();
    if let Some(v) = d.iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::Value(format!("pixel value {v} outside [0, 255]")));
    }
    let plane = h * w;
    let out = (0..plane)
        .map(|i| {
            let y = if c == 1 {
                d[i] as f64
            } else {
                (4899.0 * d[i] as f64 + 9617.0 * d[plane + i] as f64 + 1868.0 * d[2 * plane + i] as f64) / 16384.0
            };
            (y + 0.5).floor() as i32
        })
        .collect();
    Ok((h, w, out))
}

/// Canny edges: 3×3 Sobel with replicated borders, L1 magnitude, no
/// pre-blur, 4-direction non-maximum suppression, and hysteresis with
/// 8-connected linking. A pixel is a candidate when its magnitude exceeds
/// `low` and a seed when it exceeds `high`.
pub fn canny(img: &Tensor, low: i32, high: i32) -> Result<FrequencyMask> {
    let (h, w, y) = luma8(img)?;
    let (low, high) = if low > high { (high, low) } else { (low, high) };
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        y[r * w + c]
    };
    let mut dx = vec![0i32; h * w];
    let mut dy = vec![0i32; h * w];
    let mut mag = vec![0i32; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = (at(r - 1, c + 1) + 2 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2 * at(r, c - 1) + at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) + 2 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2 * at(r - 1, c) + at(r - 1, c + 1));
            let i = r as usize * w + c as usize;
            dx[i] = gx;
            dy[i] = gy;
            mag[i] = gx.abs() + gy.abs();
        }
    }
    // neighbours outside the image have zero magnitude
    let m_at = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0
        } else {
            mag[r as usize * w + c as usize]
        }
    };
    // tan(22.5°) in Q15; the 67.5° bound is tan22 + 2
    const SHIFT: i64 = 15;
    const TG22: i64 = 13573;
    let mut state = vec![0u8; h * w]; // 0 none, 1 candidate, 2 edge
    let mut stack = Vec::new();
    for r in 0..h as isize {
        for c in 0..w as isize {
            let i = r as usize * w + c as usize;
            let m = mag[i];
            if m <= low {
                continue;
            }
            let (xs, ys) = (dx[i], dy[i]);
            let x = (xs as i64).abs();
            let yq = (ys as i64).abs() << SHIFT;
            let tg22x = x * TG22;
            let keep = if yq < tg22x {
                m > m_at(r, c - 1) && m >= m_at(r, c + 1)
            } else {
                let tg67x = tg22x + (x << (SHIFT + 1));
                if yq > tg67x {
                    m > m_at(r - 1, c) && m >= m_at(r + 1, c)
                } else {
                    let s = if (xs ^ ys) < 0 { -1 } else { 1 };
                    m > m_at(r - 1, c - s) && m > m_at(r + 1, c + s)
                }
            };
            if keep {
                if m > high {
                    state[i] = 2;
                    stack.push(i);
                } else {
                    state[i] = 1;
                }
            }
        }
    }
    while let Some(i) = stack.pop() {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    continue;
                }
                let j = rr as usize * w + cc as usize;
                if state[j] == 1 {
                    state[j] = 2;
                    stack.push(j);
                }
            }
        }
    }
    Ok(FrequencyMask {
        height: h,
        width: w,
        mask: state.iter().map(|&s| s == 2).collect(),
        low,
        high,
    })
}

/// Mask with the default thresholds.
pub fn frequency_mask(img: &Tensor) -> Result<FrequencyMask> {
    canny(img, CANNY_LOW, CANNY_HIGH)
}

/// Region-split and standard stereo metrics. Region EPEs are `None` when
/// the region holds no valid pixel. Percentages are over valid pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyMetrics {
    pub epe_total: f64,
    pub epe_high: Option<f64>,
    pub epe_low: Option<f64>,
    pub d1: f64,
    pub bad_1: f64,
    pub bad_2: f64,
    pub bad_3: f64,
    pub n_high: usize,
    pub n_low: usize,
}

fn flat_hw<'a>(t: &'a Tensor, what: &str) -> Result<(usize, usize, &'a [f32])> {
    let s = t.shape();
    let (h, w) = match *s {
        [h, w] | [1, h, w] | [1, 1, h, w] => (h, w),
        _ => return Err(Error::dim(format!("{what} must be HxW, got {s:?}"))),
    };
    Ok((h, w, t.data()))
}

/// `E = |pred - gt|`; D1 counts `E > 3 and E > 0.05·gt`, bad-k counts `E > k`.
pub fn epe_split(pred: &Tensor, gt: &Tensor, mask: &FrequencyMask, valid: Option<&[bool]>) -> Result<FrequencyMetrics> {
    let (h, w, p) = flat_hw(pred, "prediction")?;
    let (gh, gw, g) = flat_hw(gt, "ground truth")?;
    if (h, w) != (gh, gw) || (h, w) != (mask.height, mask.width) {
        return Err(Error::dim(format!(
            "prediction {h}x{w}, ground truth {gh}x{gw} and mask {}x{} must match",
            mask.height, mask.width
        )));
    }
    if let Some(v) = valid {
        if v.len() != h * w {
            return Err(Error::dim("validity flags do not match the image size"));
        }
    }
    let (mut sh, mut sl) = (0.0f64, 0.0f64);
    let (mut nh, mut nl) = (0usize, 0usize);
    let (mut d1, mut b1, mut b2, mut b3) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..h * w {
        if valid.is_some_and(|v| !v[i]) {
            continue;
        }
        let e = (p[i] as f64 - g[i] as f64).abs();
        if !e.is_finite() {
            return Err(Error::Numerical {
                stage: "evaluation".into(),
                msg: format!("non-finite error at pixel {i}"),
            });
        }
        if mask.mask[i] {
            sh += e;
            nh += 1;
        } else {
            sl += e;
            nl += 1;
        }
        d1 += (e > 3.0 && e > 0.05 * g[i] as f64) as usize;
        b1 += (e > 1.0) as usize;
        b2 += (e > 2.0) as usize;
        b3 += (e > 3.0) as usize;
    }
    let n = nh + nl;
    if n == 0 {
        return Err(Error::Value("no valid pixel to evaluate".into()));
    }
    let pct = |k: usize| 100.0 * k as f64 / n as f64;
    Ok(FrequencyMetrics {
        epe_total: (sh + sl) / n as f64,
        epe_high: (nh > 0).then(|| sh / nh as f64),
        epe_low: (nl > 0).then(|| sl / nl as f64),
        d1: pct(d1),
        bad_1: pct(b1),
        bad_2: pct(b2),
        bad_3: pct(b3),
        n_high: nh,
        n_low: nl,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub epe_total: f64,
    pub epe_high: Option<f64>,
    pub epe_low: Option<f64>,
}

/// One row per iteration `k = 1..=n_k`.
pub fn convergence_trace(
    disparities: &[Tensor],
    gt: &Tensor,
    mask: &FrequencyMask,
    valid: Option<&[bool]>,
) -> Result<Vec<TraceRow>> {
    if disparities.is_empty() {
        return Err(Error::Value("empty inference result".into()));
    }
    disparities
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let m = epe_split(d, gt, mask, valid)?;
            Ok(TraceRow {
                k: i + 1,
                epe_total: m.epe_total,
                epe_high: m.epe_high,
                epe_low: m.epe_low,
            })
        })
        .collect()
}

/// Row-wise mean of several equally long traces; a region EPE is averaged
/// over the frames where it exists.
pub fn mean_trace(traces: &[Vec<TraceRow>]) -> Result<Vec<TraceRow>> {
    let first = traces.first().ok_or_else(|| Error::Value("no traces to average".into()))?;
    if traces.iter().any(|t| t.len() != first.len()) {
        return Err(Error::dim("traces differ in length"));
    }
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    Ok((0..first.len())
        .map(|k| TraceRow {
            k: k + 1,
            epe_total: traces.iter().map(|t| t[k].epe_total).sum::<f64>() / traces.len() as f64,
            epe_high: mean(traces.iter().filter_map(|t| t[k].epe_high).collect()),
            epe_low: mean(traces.iter().filter_map(|t| t[k].epe_low).collect()),
        })
        .collect())
}

/// Header `k,epe_total,epe_high,epe_low`, six decimals, `nan` for an absent region.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let f = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
    let mut s = String::from("k,epe_total,epe_high,epe_low\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{},{}\n", r.k, r.epe_total, f(r.epe_high), f(r.epe_low)));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(h: usize, w: usize, v: &[u8]) -> Tensor {
        Tensor::new([1, h, w], v.iter().map(|&x| x as f32).collect()).unwrap()
    }

    fn bits(m: &FrequencyMask) -> String {
        m.mask.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    fn mask_from(h: usize, w: usize, bits: &[bool]) -> FrequencyMask {
        FrequencyMask {
            height: h,
            width: w,
            mask: bits.to_vec(),
            low: CANNY_LOW,
            high: CANNY_HIGH,
        }
    }

    #[test]
    fn constant_image_has_no_edges() {
        let m = frequency_mask(&Tensor::full([3, 9, 7], 77.0)).unwrap();
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn step_edge_marks_boundary_column() {
        let img: Vec<u8> = (0..64).map(|i| if i % 8 >= 4 { 255 } else { 0 }).collect();
        let m = canny(&gray(8, 8, &img), 100, 200).unwrap();
        let want: String = (0..64).map(|i| if i % 8 == 3 { '1' } else { '0' }).collect();
        assert_eq!(bits(&m), want);
        let strict = canny(&gray(8, 8, &img), 255 * 4, 255 * 8).unwrap();
        assert_eq!(strict.count(), 0);
    }

    // Reference masks were produced by OpenCV's `Canny` (aperture 3, L1) on the same bytes.
    const SMOOTH_12: [u8; 144] = [
        169, 134, 90, 104, 110, 106, 120, 142, 142, 101, 86, 92, 133, 108, 80, 79, 74, 86, 129, 151, 125, 118, 126,
        103, 117, 112, 106, 107, 113, 140, 170, 149, 109, 121, 127, 96, 134, 138, 125, 129, 145, 161, 173, 151, 140,
        145, 100, 51, 149, 149, 126, 111, 106, 112, 138, 166, 183, 160, 94, 41, 153, 157, 123, 75, 58, 76, 109, 156,
        173, 133, 100, 95, 144, 134, 92, 55, 54, 80, 108, 135, 139, 118, 118, 133, 148, 93, 69, 90, 100, 113, 139, 142,
        121, 133, 163, 156, 155, 83, 89, 148, 143, 129, 155, 148, 119, 137, 176, 184, 171, 119, 120, 164, 150, 124,
        135, 131, 118, 114, 128, 168, 202, 170, 152, 151, 145, 120, 102, 106, 107, 82, 88, 148, 207, 193, 177, 137,
        130, 122, 76, 66, 79, 70, 90, 158,
    ];

    #[test]
    fn matches_reference_on_textured_image() {
        let img = gray(12, 12, &SMOOTH_12);
        let cases = [
            (50, 100, "011111100100110001101010011111000001100000001111000111100011001100111101011001000000010011000010001100010000110000001110010000111010011010100010"),
            (100, 200, "011111100100110001101010011111000001100000001111000111100011001100111101011001000000010011000010001100010000110000001110010000111010011000100010"),
            (200, 400, "010000000000110001100000001111000001000000001111000111100011001100111101011001000000010011000000001100000000110000000110010000111010011000100010"),
        ];
        for (lo, hi, want) in cases {
            assert_eq!(bits(&canny(&img, lo, hi).unwrap()), want, "thresholds {lo}/{hi}");
        }
    }

    #[test]
    fn matches_reference_on_color_image() {
        let rgb: [u8; 300] = [
            54, 24, 1, 45, 6, 39, 10, 60, 43, 63, 39, 46, 24, 51, 7, 39, 92, 182, 124, 216, 241, 102, 108, 141, 165, 122,
            154, 245, 187, 81, 27, 25, 9, 0, 50, 26, 22, 40, 36, 59, 39, 59, 37, 20, 20, 253, 150, 48, 212, 210, 2, 40,
            177, 103, 87, 18, 48, 219, 213, 212, 36, 8, 20, 33, 63, 16, 35, 31, 32, 35, 45, 6, 62, 55, 49, 71, 112, 114,
            79, 14, 190, 0, 195, 49, 164, 87, 60, 237, 121, 227, 12, 30, 22, 29, 0, 42, 22, 54, 13, 21, 2, 50, 34, 25,
            58, 152, 246, 188, 149, 128, 51, 176, 202, 178, 105, 1, 188, 10, 205, 38, 19, 13, 34, 13, 16, 3, 62, 13, 12,
            38, 9, 56, 50, 22, 25, 93, 188, 106, 73, 174, 35, 201, 109, 240, 66, 96, 223, 180, 10, 87, 1, 52, 26, 14, 46,
            55, 6, 32, 23, 46, 59, 34, 47, 20, 37, 126, 187, 12, 60, 11, 250, 135, 125, 122, 8, 213, 216, 5, 159, 142,
            24, 31, 56, 38, 31, 46, 44, 33, 53, 36, 39, 31, 37, 39, 57, 63, 93, 141, 86, 172, 211, 48, 14, 253, 130, 191,
            194, 244, 8, 75, 62, 28, 25, 16, 1, 2, 62, 1, 8, 15, 18, 55, 20, 10, 25, 176, 114, 63, 30, 16, 125, 49, 149,
            173, 97, 128, 14, 140, 46, 116, 7, 17, 26, 31, 1, 59, 26, 12, 12, 46, 28, 16, 28, 12, 10, 82, 246, 23, 139,
            239, 118, 93, 142, 45, 178, 0, 144, 15, 5, 54, 46, 26, 26, 38, 4, 62, 31, 56, 48, 15, 19, 39, 53, 58, 31,
            26, 254, 218, 182, 101, 34, 200, 52, 82, 221, 160, 76, 129, 156, 26,
        ];
        // interleaved HxWx3 -> planar 3xHxW
        let planar = Tensor::from_fn([3, 10, 10], |i| rgb[(i % 100) * 3 + i / 100] as f32);
        let (_, _, y) = luma8(&planar).unwrap();
        assert_eq!(&y[..10], &[30, 21, 43, 47, 38, 86, 191, 110, 139, 192]);
        let m = canny(&planar, 100, 200).unwrap();
        assert_eq!(
            bits(&m),
            "0000010010000001110100001000010000100011000011100000001000010000100101000001000100001110010000100001"
        );
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(matches!(canny(&Tensor::full([1, 4, 4], 256.0), 100, 200), Err(Error::Value(_))));
        assert!(matches!(canny(&Tensor::full([1, 4, 4], -1.0), 100, 200), Err(Error::Value(_))));
    }

    #[test]
    fn epe_examples() {
        let gt = Tensor::new([2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let top_left = mask_from(2, 2, &[true, false, false, false]);
        let m = epe_split(&gt, &gt, &top_left, None).unwrap();
        assert_eq!((m.epe_total, m.epe_high, m.epe_low, m.d1), (0.0, Some(0.0), Some(0.0), 0.0));
        let plus1 = gt.map(|v| v + 1.0);
        let m = epe_split(&plus1, &gt, &top_left, None).unwrap();
        assert_eq!((m.epe_total, m.epe_high, m.epe_low), (1.0, Some(1.0), Some(1.0)));
        assert_eq!(m.bad_1, 0.0);
        let pred = Tensor::new([2, 2], vec![7.0, 5.0, 5.0, 5.0]).unwrap();
        let m = epe_split(&pred, &gt, &top_left, None).unwrap();
        assert_eq!((m.epe_total, m.epe_high, m.epe_low), (0.5, Some(2.0), Some(0.0)));
        assert_eq!((m.bad_1, m.bad_2, m.bad_3), (25.0, 0.0, 0.0));
        let m = epe_split(&pred, &gt, &mask_from(2, 2, &[false; 4]), None).unwrap();
        assert_eq!((m.n_high, m.epe_high), (0, None));
        assert!(matches!(epe_split(&pred, &gt, &top_left, Some(&[false; 4])), Err(Error::Value(_))));
    }

    #[test]
    fn d1_needs_both_conditions() {
        let gt = Tensor::new([1, 3], vec![100.0, 10.0, 100.0]).unwrap();
        // error 4: > 3 px but < 5% of 100; error 4 on gt 10: both; error 6 on 100: both
        let pred = Tensor::new([1, 3], vec![104.0, 14.0, 106.0]).unwrap();
        let m = epe_split(&pred, &gt, &mask_from(1, 3, &[false; 3]), None).unwrap();
        assert!((m.d1 - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn trace_csv_format() {
        let gt = Tensor::full([2, 2], 1.0);
        let mask = mask_from(2, 2, &[true, false, false, false]);
        let rows = convergence_trace(&[gt.map(|v| v + 0.5), gt.clone()], &gt, &mask, None).unwrap();
        assert_eq!(
            trace_csv(&rows),
            "k,epe_total,epe_high,epe_low\n1,0.500000,0.500000,0.500000\n2,0.000000,0.000000,0.000000\n"
        );
        assert!(convergence_trace(&[], &gt, &mask, None).is_err());
        let mean = mean_trace(&[rows.clone(), rows]).unwrap();
        assert_eq!(mean[0].epe_total, 0.5);
    }

    proptest! {
        #[test]
        fn partition_identity(vals in prop::collection::vec((0.0f32..64.0, 0.0f32..64.0, any::<bool>(), any::<bool>()), 1..80)) {
            let n = vals.len();
            let pred = Tensor::new([1, n], vals.iter().map(|v| v.0).collect()).unwrap();
            let gt = Tensor::new([1, n], vals.iter().map(|v| v.1).collect()).unwrap();
            let mask = mask_from(1, n, &vals.iter().map(|v| v.2).collect::<Vec<_>>());
            let valid: Vec<bool> = vals.iter().map(|v| v.3).collect();
            if let Ok(m) = epe_split(&pred, &gt, &mask, Some(&valid)) {
                let lhs = m.n_high as f64 * m.epe_high.unwrap_or(0.0) + m.n_low as f64 * m.epe_low.unwrap_or(0.0);
                let rhs = (m.n_high + m.n_low) as f64 * m.epe_total;
                prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
                for p in [m.d1, m.bad_1, m.bad_2, m.bad_3] {
                    prop_assert!((0.0..=100.0).contains(&p));
                }
            }
        }

        #[test]
        fn permutation_invariant(vals in prop::collection::vec((0.0f32..64.0, 0.0f32..64.0, any::<bool>()), 2..60), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm = vals.clone();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let run = |v: &[(f32, f32, bool)]| {
                let n = v.len();
                let pred = Tensor::new([1, n], v.iter().map(|x| x.0).collect()).unwrap();
                let gt = Tensor::new([1, n], v.iter().map(|x| x.1).collect()).unwrap();
                epe_split(&pred, &gt, &mask_from(1, n, &v.iter().map(|x| x.2).collect::<Vec<_>>()), None).unwrap()
            };
            let (a, b) = (run(&vals), run(&perm));
            prop_assert!((a.epe_total - b.epe_total).abs() < 1e-9);
            prop_assert_eq!(a.n_high, b.n_high);
            prop_assert!((a.epe_high.unwrap_or(0.0) - b.epe_high.unwrap_or(0.0)).abs() < 1e-9);
            prop_assert!((a.epe_low.unwrap_or(0.0) - b.epe_low.unwrap_or(0.0)).abs() < 1e-9);
            prop_assert_eq!(a.d1, b.d1);
        }

        #[test]
        fn canny_ignores_constant_offset(px in prop::collection::vec(0u8..=200, 64), off in 0u8..=55) {
            let a = gray(8, 8, &px);
            let shifted: Vec<u8> = px.iter().map(|&v| v + off).collect();
            let b = gray(8, 8, &shifted);
            prop_assert_eq!(canny(&a, 100, 200).unwrap(), canny(&b, 100, 200).unwrap());
        }

        #[test]
        fn d1_relative_branch_scale_invariant(gts in prop::collection::vec(100.0f64..200.0, 1..40), rel in prop::collection::vec(0.0f64..0.2, 40), alpha in 1.0f64..4.0) {
            // gt >= 100 and error < 20% keeps the decision on the 5% branch:
            // e > 3 always holds where e > 0.05·gt does
            let n = gts.len();
            let run = |a: f64| {
                let gt = Tensor::new([1, n], gts.iter().map(|&g| (a * g) as f32).collect()).unwrap();
                let pred = Tensor::new([1, n], gts.iter().zip(&rel).map(|(&g, &r)| (a * g * (1.0 + r)) as f32).collect()).unwrap();
                epe_split(&pred, &gt, &mask_from(1, n, &vec![false; n]), None).unwrap().d1
            };
            prop_assert_eq!(run(1.0), run(alpha));
        }
    }
}
