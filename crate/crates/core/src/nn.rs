//! Small layer helpers over the tape, keyed by parameter name.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{Bound, Init, ParameterStore};
use crate::tensor::Element;

/// Convolution with weights `{name}.w` and bias `{name}.b`. Padding is
/// `(k - stride) / 2`, which keeps size for odd kernels at stride 1 and
/// halves it exactly for 4×4 kernels at stride 2.
pub fn conv<T: Element>(t: &mut Tape<T>, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    let k = t.shape(w)[2];
    let pad = k.saturating_sub(stride) / 2;
    t.conv2d(x, w, b, stride, pad)
}

pub fn conv_relu<T: Element>(t: &mut Tape<T>, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let y = conv(t, p, name, x, stride)?;
    t.relu(y)
}

/// `relu(x + conv2(relu(conv1(x))))`
pub fn res_block<T: Element>(t: &mut Tape<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let y = conv_relu(t, p, &format!("{name}.conv1"), x, 1)?;
    let y = conv(t, p, &format!("{name}.conv2"), y, 1)?;
    let s = t.add(x, y)?;
    t.relu(s)
}

pub fn init_res_block(init: &mut Init, store: &mut ParameterStore, name: &str, c: usize) -> Result<()> {
    init.conv(store, &format!("{name}.conv1"), c, c, 3)?;
    init.conv(store, &format!("{name}.conv2"), c, c, 3)
}

/// Bilinear resize of `x` to the spatial size of `like`.
pub fn resize_like<T: Element>(t: &mut Tape<T>, x: Var, like: Var) -> Result<Var> {
    let s = t.shape(like);
    let (h, w) = (s[2], s[3]);
    t.resize_to(x, h, w)
}
