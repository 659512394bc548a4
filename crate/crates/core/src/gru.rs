//! ConvGRU update operator for the baseline variant: same multi-level
//! schedule, motion encoder and head as the wavelet model, but plain
//! `h' = h + z⊙(q - h)` cells and no high-frequency branch.

use crate::autodiff::{Tape, Var};
use crate::backbone::MultiScaleFeatures;
use crate::config::ModelConfig;
use crate::correlation::CorrelationVolume;
use crate::error::Result;
use crate::hpu::{build_motion_input, cell_inputs, decode_delta, init_motion_and_head, CellInputs, SCALES};
use crate::nn::conv;
use crate::params::{Bound, Init, ParameterStore};
use crate::tensor::Element;

pub fn init_gru(init: &mut Init, store: &mut ParameterStore, cfg: &ModelConfig) -> Result<()> {
    let c = cfg.channels.hidden;
    for (s, xin) in SCALES.iter().zip(cell_inputs(cfg)) {
        for g in ["z", "r", "q"] {
            init.conv(store, &format!("gru.l{s}.{g}"), c, c + xin, 3)?;
        }
    }
    init_motion_and_head(init, store, cfg)
}

pub fn gru_step<T: Element>(t: &mut Tape<T>, p: &Bound, prefix: &str, h: Var, x: Var) -> Result<Var> {
    let hx = t.concat_channels(&[h, x])?;
    let z = conv(t, p, &format!("{prefix}.z"), hx, 1)?;
    let z = t.sigmoid(z)?;
    let r = conv(t, p, &format!("{prefix}.r"), hx, 1)?;
    let r = t.sigmoid(r)?;
    let rh = t.mul(r, h)?;
    let rhx = t.concat_channels(&[rh, x])?;
    let q = conv(t, p, &format!("{prefix}.q"), rhx, 1)?;
    let q = t.tanh(q)?;
    let diff = t.sub(q, h)?;
    let step = t.mul(z, diff)?;
    t.add(h, step)
}

/// One iteration: returns new hidden states, new disparity and `Δd`.
pub fn gru_update<T: Element>(
    t: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    hidden: &MultiScaleFeatures,
    d: Var,
    vol: &CorrelationVolume,
) -> Result<(MultiScaleFeatures, Var, Var)> {
    let x16 = CellInputs::x16(t, hidden)?;
    let h16 = gru_step(t, p, "gru.l16", hidden.f16, x16)?;
    let x8 = CellInputs::x8(t, hidden, h16)?;
    let h8 = gru_step(t, p, "gru.l8", hidden.f8, x8)?;
    let motion = build_motion_input(t, p, vol, d, cfg.lookup_radius)?;
    let x4 = CellInputs::x4(t, hidden, motion, h8)?;
    let h4 = gru_step(t, p, "gru.l4", hidden.f4, x4)?;
    let delta = decode_delta(t, p, h4)?;
    let d = t.add(d, delta)?;
    Ok((MultiScaleFeatures { f4: h4, f8: h8, f16: h16 }, d, delta))
}
