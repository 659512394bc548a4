//! Feature extractors: the shared matching encoder, the low-frequency
//! context encoder, and the U-shaped high-frequency encoder.
//!
//! Every extractor emits features at 1/4, 1/8 and 1/16 of the input
//! image resolution except the matching encoder, which stops at 1/4.

use crate::autodiff::{Tape, Var};
use crate::config::Channels;
use crate::error::{Error, Result};
use crate::nn::{conv, conv_relu, init_res_block, res_block, resize_like};
use crate::params::{Bound, Init, ParameterStore};
use crate::tensor::Element;
use crate::wavelet::WaveletPyramid;

/// Handles to features at 1/4, 1/8 and 1/16 resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MultiScaleFeatures {
    pub f4: Var,
    pub f8: Var,
    pub f16: Var,
}

impl MultiScaleFeatures {
    /// Coarse-to-fine order: 1/16, 1/8, 1/4.
    pub fn coarse_to_fine(&self) -> [Var; 3] {
        [self.f16, self.f8, self.f4]
    }
}

const FNET_MID: usize = 48;

pub fn init_matching(init: &mut Init, store: &mut ParameterStore, ch: &Channels) -> Result<()> {
    init.conv(store, "fnet.conv1", 32, 3, 4)?;
    init.conv(store, "fnet.conv2", FNET_MID, 32, 4)?;
    init_res_block(init, store, "fnet.res", FNET_MID)?;
    init.conv(store, "fnet.out", ch.matching, FNET_MID, 1)
}

/// Shared matching encoder: `N×3×H×W -> N×Cf×H/4×W/4`.
pub fn extract_matching<T: Element>(t: &mut Tape<T>, p: &Bound, img: Var) -> Result<Var> {
    let (_, c, h, w) = t.value(img).dims4()?;
    if c != 3 || h % 4 != 0 || w % 4 != 0 {
        return Err(Error::dim(format!(
            "matching encoder needs a 3-channel image with dims divisible by 4, got {c}x{h}x{w}"
        )));
    }
    let x = conv_relu(t, p, "fnet.conv1", img, 2)?;
    let x = conv_relu(t, p, "fnet.conv2", x, 2)?;
    let x = res_block(t, p, "fnet.res", x)?;
    conv(t, p, "fnet.out", x, 1)
}

/// `raw_image` adds a stride-2 pre-stage so the encoder can take the
/// full-resolution image instead of the level-1 LL band.
pub fn init_low(init: &mut Init, store: &mut ParameterStore, ch: &Channels, raw_image: bool) -> Result<()> {
    let c = ch.hidden;
    let stem_in = if raw_image {
        init.conv(store, "cnet.pre", 16, 3, 4)?;
        16
    } else {
        3
    };
    init.conv(store, "cnet.stem", c, stem_in, 4)?;
    for s in ["4", "8", "16"] {
        if s != "4" {
            init.conv(store, &format!("cnet.down{s}"), c, c, 4)?;
        }
        init_res_block(init, store, &format!("cnet.res{s}"), c)?;
        init.conv(store, &format!("cnet.out{s}"), c, c, 1)?;
    }
    Ok(())
}

/// Low-frequency context encoder. `input` is the level-1 LL band
/// (`H/2×W/2`), or the raw image when the parameters include `cnet.pre`.
/// Outputs pass through `tanh` since they seed the hidden states.
pub fn extract_low<T: Element>(t: &mut Tape<T>, p: &Bound, input: Var) -> Result<MultiScaleFeatures> {
    let raw = p.get("cnet.pre.w").is_ok();
    let (_, c, h, w) = t.value(input).dims4()?;
    let m = if raw { 16 } else { 8 };
    if c != 3 || h % m != 0 || w % m != 0 {
        return Err(Error::dim(format!(
            "low-frequency encoder input {c}x{h}x{w} must have 3 channels and dims divisible by {m}"
        )));
    }
    let mut x = input;
    if raw {
        x = conv_relu(t, p, "cnet.pre", x, 2)?;
    }
    x = conv_relu(t, p, "cnet.stem", x, 2)?;
    let mut outs = Vec::with_capacity(3);
    for s in ["4", "8", "16"] {
        if s != "4" {
            x = conv_relu(t, p, &format!("cnet.down{s}"), x, 2)?;
        }
        x = res_block(t, p, &format!("cnet.res{s}"), x)?;
        let o = conv(t, p, &format!("cnet.out{s}"), x, 1)?;
        outs.push(t.tanh(o)?);
    }
    Ok(MultiScaleFeatures {
        f4: outs[0],
        f8: outs[1],
        f16: outs[2],
    })
}

pub fn init_high(init: &mut Init, store: &mut ParameterStore, ch: &Channels, n_i: usize) -> Result<()> {
    let c = ch.hidden;
    init.conv(store, "hnet.stem", c, 9, 4)?;
    if n_i >= 2 {
        init.conv(store, "hnet.inj2", c, 9, 3)?;
    }
    init.conv(store, "hnet.enc4", c, c, 3)?;
    init.conv(store, "hnet.down8", c, c, 4)?;
    if n_i >= 3 {
        init.conv(store, "hnet.inj3", c, 9, 3)?;
    }
    init.conv(store, "hnet.enc8", c, c, 3)?;
    init.conv(store, "hnet.down16", c, c, 4)?;
    init.conv(store, "hnet.dec8", c, c, 3)?;
    init.conv(store, "hnet.dec4", c, c, 3)?;
    for s in ["4", "8", "16"] {
        init.conv(store, &format!("hnet.out{s}"), c, c, 1)?;
    }
    Ok(())
}

/// U-shaped high-frequency encoder over the detail bands of a 3-level
/// pyramid. Level `i` bands (HL, LH, HH concatenated, 9 channels) enter
/// at the stage whose resolution is `H/2^i`; levels above `n_i` are not
/// injected. Skip connections are additive.
pub fn extract_high<T: Element>(
    t: &mut Tape<T>,
    p: &Bound,
    pyr: &WaveletPyramid<T>,
    n_i: usize,
) -> Result<MultiScaleFeatures> {
    if pyr.n_levels() != 3 {
        return Err(Error::Config(format!(
            "high-frequency encoder is wired for a 3-level pyramid, got {}",
            pyr.n_levels()
        )));
    }
    let h1 = t.constant(pyr.concat_high(1)?)?;
    let mut s0 = conv_relu(t, p, "hnet.stem", h1, 2)?;
    if n_i >= 2 {
        let h2 = t.constant(pyr.concat_high(2)?)?;
        let inj = conv(t, p, "hnet.inj2", h2, 1)?;
        s0 = t.add(s0, inj)?;
    }
    let x4 = conv_relu(t, p, "hnet.enc4", s0, 1)?;

    let mut e8 = conv_relu(t, p, "hnet.down8", x4, 2)?;
    if n_i >= 3 {
        let h3 = t.constant(pyr.concat_high(3)?)?;
        let inj = conv(t, p, "hnet.inj3", h3, 1)?;
        e8 = t.add(e8, inj)?;
    }
    let x8 = conv_relu(t, p, "hnet.enc8", e8, 1)?;
    let x16 = conv_relu(t, p, "hnet.down16", x8, 2)?;

    let up = resize_like(t, x16, x8)?;
    let s8 = t.add(up, x8)?;
    let u8 = conv_relu(t, p, "hnet.dec8", s8, 1)?;
    let up = resize_like(t, u8, x4)?;
    let s4 = t.add(up, x4)?;
    let u4 = conv_relu(t, p, "hnet.dec4", s4, 1)?;

    Ok(MultiScaleFeatures {
        f4: conv(t, p, "hnet.out4", u4, 1)?,
        f8: conv(t, p, "hnet.out8", u8, 1)?,
        f16: conv(t, p, "hnet.out16", x16, 1)?,
    })
}
