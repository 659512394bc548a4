//! Forward and backward numeric kernels on raw row-major buffers.
//!
//! Every reduction runs in a fixed sequential order inside one output
//! element, so results do not depend on how rayon splits the work.

use rayon::prelude::*;

use crate::tensor::Element;

#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output columns `ow` for which `ow*stride + k - pad` lands inside `[0, len)`.
    fn valid_range(out: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
        // lo = ceil((pad - k) / stride) clamped at 0
        let lo = if pad > k {
            (pad - k).div_ceil(stride)
        } else {
            0
        };
        // hi (exclusive) = floor((len - 1 + pad - k) / stride) + 1
        let top = len + pad;
        let hi = if top > k { (top - 1 - k) / stride + 1 } else { 0 };
        (lo.min(out), hi.min(out).max(lo.min(out)))
    }
}

pub fn conv2d_forward<T: Element>(g: &ConvGeom, x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let plane_out = g.oh * g.ow;
    let plane_in = g.h * g.w;
    out.par_chunks_mut(plane_out)
        .enumerate()
        .for_each(|(idx, o)| {
            let n = idx / g.cout;
            let co = idx % g.cout;
            o.fill(b[co]);
            for ci in 0..g.cin {
                let xin = &x[(n * g.cin + ci) * plane_in..][..plane_in];
                for ky in 0..g.kh {
                    let (oy0, oy1) = ConvGeom::valid_range(g.oh, g.h, ky, g.stride, g.pad);
                    for kx in 0..g.kw {
                        let wv = w[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (ox0, ox1) = ConvGeom::valid_range(g.ow, g.w, kx, g.stride, g.pad);
                        if ox0 == ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                            let orow = &mut o[oy * g.ow..(oy + 1) * g.ow];
                            if g.stride == 1 {
                                let shift = ox0 + kx - g.pad;
                                let src = &xrow[shift..shift + (ox1 - ox0)];
                                for (ov, &xv) in orow[ox0..ox1].iter_mut().zip(src) {
                                    *ov = *ov + wv * xv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * g.stride + kx - g.pad;
                                    orow[ox] = orow[ox] + wv * xrow[ix];
                                }
                            }
                        }
                    }
                }
            }
        });
}

/// Gradient w.r.t. the conv input.
pub fn conv2d_backward_input<T: Element>(g: &ConvGeom, dy: &[T], w: &[T], dx: &mut [T]) {
    let plane_out = g.oh * g.ow;
    let plane_in = g.h * g.w;
    dx.par_chunks_mut(plane_in)
        .enumerate()
        .for_each(|(idx, dxp)| {
            let n = idx / g.cin;
            let ci = idx % g.cin;
            for co in 0..g.cout {
                let dyp = &dy[(n * g.cout + co) * plane_out..][..plane_out];
                for ky in 0..g.kh {
                    let (oy0, oy1) = ConvGeom::valid_range(g.oh, g.h, ky, g.stride, g.pad);
                    for kx in 0..g.kw {
                        let wv = w[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (ox0, ox1) = ConvGeom::valid_range(g.ow, g.w, kx, g.stride, g.pad);
                        if ox0 == ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let dyrow = &dyp[oy * g.ow..(oy + 1) * g.ow];
                            let dxrow = &mut dxp[iy * g.w..(iy + 1) * g.w];
                            if g.stride == 1 {
                                let shift = ox0 + kx - g.pad;
                                let dst = &mut dxrow[shift..shift + (ox1 - ox0)];
                                for (dv, &gv) in dst.iter_mut().zip(&dyrow[ox0..ox1]) {
                                    *dv = *dv + wv * gv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * g.stride + kx - g.pad;
                                    dxrow[ix] = dxrow[ix] + wv * dyrow[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
}

/// Gradients w.r.t. the conv weights and bias.
pub fn conv2d_backward_params<T: Element>(
    g: &ConvGeom,
    dy: &[T],
    x: &[T],
    dw: &mut [T],
    db: &mut [T],
) {
    let plane_out = g.oh * g.ow;
    let plane_in = g.h * g.w;
    let per_co = g.cin * g.kh * g.kw;
    dw.par_chunks_mut(per_co)
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(co, (dwc, dbc))| {
            let mut bsum = T::zero();
            for n in 0..g.n {
                let dyp = &dy[(n * g.cout + co) * plane_out..][..plane_out];
                for &v in dyp {
                    bsum = bsum + v;
                }
            }
            *dbc = bsum;
            for ci in 0..g.cin {
                for ky in 0..g.kh {
                    let (oy0, oy1) = ConvGeom::valid_range(g.oh, g.h, ky, g.stride, g.pad);
                    for kx in 0..g.kw {
                        let (ox0, ox1) = ConvGeom::valid_range(g.ow, g.w, kx, g.stride, g.pad);
                        if ox0 == ox1 {
                            continue;
                        }
                        let mut acc = T::zero();
                        for n in 0..g.n {
                            let dyp = &dy[(n * g.cout + co) * plane_out..][..plane_out];
                            let xin = &x[(n * g.cin + ci) * plane_in..][..plane_in];
                            for oy in oy0..oy1 {
                                let iy = oy * g.stride + ky - g.pad;
                                let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                                let dyrow = &dyp[oy * g.ow..(oy + 1) * g.ow];
                                if g.stride == 1 {
                                    let shift = ox0 + kx - g.pad;
                                    let src = &xrow[shift..shift + (ox1 - ox0)];
                                    for (&gv, &xv) in dyrow[ox0..ox1].iter().zip(src) {
                                        acc = acc + gv * xv;
                                    }
                                } else {
                                    for ox in ox0..ox1 {
                                        let ix = ox * g.stride + kx - g.pad;
                                        acc = acc + dyrow[ox] * xrow[ix];
                                    }
                                }
                            }
                        }
                        dwc[(ci * g.kh + ky) * g.kw + kx] = acc;
                    }
                }
            }
        });
}

/// Per-axis sampling table for align-corners=false bilinear resizing:
/// output index -> (low index, high index, weight of high index).
pub fn resize_table(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let lambda = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, lambda)
        })
        .collect()
}

/// Linear interpolation on a 1-D row with border clamping.
/// Returns (value, index lo, index hi, weight hi, clamped).
#[inline]
pub fn sample_linear<T: Element>(row: &[T], pos: T) -> (T, usize, usize, T, bool) {
    let len = row.len();
    let maxp = T::of((len - 1) as f64);
    let clamped = pos < T::zero() || pos > maxp;
    let p = pos.max(T::zero()).min(maxp);
    let i0 = p.floor().to_usize().unwrap_or(0).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    let f = if i1 == i0 { T::zero() } else { p - T::of(i0 as f64) };
    let v = (T::one() - f) * row[i0] + f * row[i1];
    (v, i0, i1, f, clamped)
}
