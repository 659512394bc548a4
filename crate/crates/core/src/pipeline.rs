//! End-to-end model: decomposition, extraction, correlation, iterative
//! updates and full-resolution disparities, plus the sequence loss.

use std::time::Instant;

use crate::autodiff::{Tape, Var};
use crate::backbone::{extract_high, extract_low, extract_matching, init_high, init_low, init_matching, MultiScaleFeatures};
use crate::config::{ModelConfig, Variant};
use crate::correlation::build_volume;
use crate::error::{Error, Result};
use crate::gru::{gru_update, init_gru};
use crate::hpu::{hpu_update, init_hpu, HpuState};
use crate::params::{Bound, Init, ParameterStore};
use crate::tensor::{Element, Tensor};
use crate::wavelet::build_pyramid;

/// Fresh parameters for `cfg.variant`, drawn from `cfg.seed`.
pub fn init_params(cfg: &ModelConfig) -> Result<ParameterStore> {
    cfg.validate()?;
    let mut init = Init::new(cfg.seed);
    let mut store = ParameterStore::new();
    init_matching(&mut init, &mut store, &cfg.channels)?;
    match cfg.variant {
        Variant::Wavelet => {
            init_low(&mut init, &mut store, &cfg.channels, false)?;
            init_high(&mut init, &mut store, &cfg.channels, cfg.n_i)?;
            init_hpu(&mut init, &mut store, cfg)?;
        }
        Variant::GruBaseline => {
            init_low(&mut init, &mut store, &cfg.channels, true)?;
            init_gru(&mut init, &mut store, cfg)?;
        }
    }
    Ok(store)
}

/// Map pixel values in [0, 255] to [-1, 1].
pub fn normalize<T: Element>(img: &Tensor<T>) -> Tensor<T> {
    let (a, b) = (T::of(1.0 / 127.5), T::one());
    img.map(|v| v * a - b)
}

/// Handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `d_1..d_{n_k}` at 1/4 resolution.
    pub quarter: Vec<Var>,
    /// The same fields upsampled ×4 in size and value.
    pub full: Vec<Var>,
    pub deltas: Vec<Var>,
    /// Preserved high-frequency features (wavelet variant only).
    pub fh0: Option<MultiScaleFeatures>,
    /// Wall-clock seconds spent in each update iteration.
    pub update_seconds: Vec<f64>,
}

fn check_inputs<T: Element>(left: &Tensor<T>, right: &Tensor<T>) -> Result<()> {
    let (_, c, h, w) = left.dims4()?;
    if left.shape() != right.shape() {
        return Err(Error::dim(format!(
            "left {:?} and right {:?} images differ in shape",
            left.shape(),
            right.shape()
        )));
    }
    if c != 3 || h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
        return Err(Error::dim(format!(
            "images must be Nx3xHxW with H and W divisible by 16, got {:?}",
            left.shape()
        )));
    }
    Ok(())
}

fn upsample<T: Element>(t: &mut Tape<T>, d: Var) -> Result<Var> {
    let up = t.resize_bilinear(d, 4.0)?;
    t.scale(up, 4.0)
}

/// Record the whole model on `t`. Images are `N×3×H×W` in [0, 255].
pub fn forward<T: Element>(
    t: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    left: &Tensor<T>,
    right: &Tensor<T>,
    n_k: usize,
) -> Result<ForwardOutput> {
    check_inputs(left, right)?;
    if n_k == 0 {
        return Err(Error::Config("need at least one update iteration".into()));
    }
    let (il, ir) = (normalize(left), normalize(right));
    let stage = |s: &'static str| move |e: Error| e.in_stage(s);

    let vl = t.constant(il.clone()).map_err(stage("input"))?;
    let vr = t.constant(ir).map_err(stage("input"))?;
    vl_finite(t, vl).map_err(stage("input"))?;
    vl_finite(t, vr).map_err(stage("input"))?;
    let fl = extract_matching(t, p, vl).map_err(stage("matching encoder"))?;
    let fr = extract_matching(t, p, vr).map_err(stage("matching encoder"))?;
    let vol = build_volume(t, fl, fr, cfg.pyramid_levels).map_err(stage("correlation"))?;

    let (_, _, h4, w4) = t.value(fl).dims4()?;
    let n = left.shape()[0];
    let d0 = t.constant(Tensor::zeros([n, 1, h4, w4]))?;

    let mut out = ForwardOutput {
        quarter: Vec::with_capacity(n_k),
        full: Vec::with_capacity(n_k),
        deltas: Vec::with_capacity(n_k),
        fh0: None,
        update_seconds: Vec::with_capacity(n_k),
    };
    match cfg.variant {
        Variant::Wavelet => {
            let pyr = build_pyramid(&il, 3).map_err(stage("wavelet"))?;
            let ll1 = t.constant(pyr.level(1)?.ll.clone())?;
            let hidden = extract_low(t, p, ll1).map_err(stage("low-frequency encoder"))?;
            let fh0 = extract_high(t, p, &pyr, cfg.n_i).map_err(stage("high-frequency encoder"))?;
            out.fh0 = Some(fh0);
            let mut state = HpuState { hidden, fh0, d: d0, k: 0 };
            for _ in 0..n_k {
                let start = Instant::now();
                let (next, delta) = hpu_update(t, p, cfg, &state, &vol).map_err(stage("update"))?;
                out.update_seconds.push(start.elapsed().as_secs_f64());
                state = next;
                out.quarter.push(state.d);
                out.deltas.push(delta);
                out.full.push(upsample(t, state.d).map_err(stage("upsample"))?);
            }
        }
        Variant::GruBaseline => {
            let mut hidden = extract_low(t, p, vl).map_err(stage("context encoder"))?;
            let mut d = d0;
            for _ in 0..n_k {
                let start = Instant::now();
                let (h, nd, delta) = gru_update(t, p, cfg, &hidden, d, &vol).map_err(stage("update"))?;
                out.update_seconds.push(start.elapsed().as_secs_f64());
                hidden = h;
                d = nd;
                out.quarter.push(d);
                out.deltas.push(delta);
                out.full.push(upsample(t, d).map_err(stage("upsample"))?);
            }
        }
    }
    Ok(out)
}

fn vl_finite<T: Element>(t: &Tape<T>, v: Var) -> Result<()> {
    t.value(v).check_finite("image")
}

/// Disparities from one inference run.
#[derive(Clone, Debug)]
pub struct InferenceResult {
    /// `N×1×H×W` per iteration, full resolution.
    pub disparities: Vec<Tensor>,
    /// Seconds per update iteration.
    pub per_iter_runtime: Vec<f64>,
}

impl InferenceResult {
    pub fn update_seconds(&self) -> f64 {
        self.per_iter_runtime.iter().sum()
    }

    pub fn last(&self) -> &Tensor {
        self.disparities.last().expect("at least one iteration")
    }
}

/// Run the model on an `N×3×H×W` pair for `n_k` iterations.
pub fn infer(params: &ParameterStore, cfg: &ModelConfig, left: &Tensor, right: &Tensor, n_k: usize) -> Result<InferenceResult> {
    let mut t = Tape::<f32>::new();
    let p = params.bind(&mut t)?;
    let out = forward(&mut t, &p, cfg, left, right, n_k)?;
    Ok(InferenceResult {
        disparities: out.full.iter().map(|&v| t.value(v).clone()).collect(),
        per_iter_runtime: out.update_seconds,
    })
}

/// Run the ConvGRU baseline regardless of `cfg.variant`.
pub fn forward_gru_baseline(
    params: &ParameterStore,
    cfg: &ModelConfig,
    left: &Tensor,
    right: &Tensor,
    n_k: usize,
) -> Result<InferenceResult> {
    let cfg = ModelConfig {
        variant: Variant::GruBaseline,
        ..cfg.clone()
    };
    infer(params, &cfg, left, right, n_k)
}

/// Iteration weights `γ^(n_k - k)` for `k = 1..=n_k`.
pub fn sequence_weights(n_k: usize, gamma: f64) -> Vec<f64> {
    (1..=n_k).map(|k| gamma.powi((n_k - k) as i32)).collect()
}

/// `Σ_k γ^(n_k-k) · mean_valid |d_k - d_gt|`. The weight exponent uses the
/// iteration index, so later iterations weigh more. `mask` is 1 for valid
/// pixels and has the shape of `gt`.
pub fn sequence_loss<T: Element>(
    t: &mut Tape<T>,
    preds: &[Var],
    gt: &Tensor<T>,
    mask: Option<&Tensor<T>>,
    gamma: f64,
) -> Result<Var> {
    if preds.is_empty() {
        return Err(Error::Value("no predictions to score".into()));
    }
    let count = match mask {
        Some(m) => {
            if m.shape() != gt.shape() {
                return Err(Error::dim(format!("mask {:?} does not match gt {:?}", m.shape(), gt.shape())));
            }
            m.data().iter().filter(|&&v| v > T::zero()).count()
        }
        None => gt.len(),
    };
    if count == 0 {
        return Err(Error::Value("mask marks no valid pixel".into()));
    }
    let g = t.constant(gt.clone())?;
    let m = mask.map(|m| t.constant(m.clone())).transpose()?;
    let weights = sequence_weights(preds.len(), gamma);
    let mut total: Option<Var> = None;
    for (&d, w) in preds.iter().zip(weights) {
        if t.shape(d) != gt.shape() {
            return Err(Error::dim(format!(
                "prediction {:?} does not match gt {:?}",
                t.shape(d),
                gt.shape()
            )));
        }
        let e = t.sub(d, g)?;
        let mut e = t.abs(e)?;
        if let Some(m) = m {
            e = t.mul(e, m)?;
        }
        let s = t.sum(e)?;
        let term = t.scale(s, w / count as f64)?;
        total = Some(match total {
            Some(acc) => t.add(acc, term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty"))
}

/// Loss of a finished inference run, evaluated without a tape.
pub fn loss(result: &InferenceResult, gt: &Tensor, gamma: f64, valid_mask: Option<&Tensor>) -> Result<f64> {
    let mut t = Tape::<f64>::new();
    let preds = result
        .disparities
        .iter()
        .map(|d| t.constant(d.cast()))
        .collect::<Result<Vec<_>>>()?;
    let gt = gt.cast::<f64>();
    let mask = valid_mask.map(|m| m.cast::<f64>());
    let l = sequence_loss(&mut t, &preds, &gt, mask.as_ref(), gamma)?;
    Ok(t.value(l).data()[0])
}
