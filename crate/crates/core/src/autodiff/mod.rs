//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value. Nodes are
//! never mutated after they are recorded; `backward` walks the tape in
//! reverse and accumulates gradients for every node that depends on a
//! tracked leaf.

pub mod kernels;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

use kernels::ConvGeom;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolAxis {
    /// Reduce H and W: `N×C×H×W -> N×C×1×1`.
    Spatial,
    /// Reduce C: `N×C×H×W -> N×1×H×W`.
    Channel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    Pool { x: Var, kind: PoolKind, axis: PoolAxis, argmax: Vec<usize> },
    Resize { x: Var },
    Concat(Vec<Var>),
    Sum(Var),
    Correlation { fl: Var, fr: Var },
    PoolLast(Var),
    Lookup { vol: Var, d: Var, radius: usize, level: u32 },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool, name: &str) -> Result<Var> {
        // Leaves are stored as given; every op output must be finite.
        if !matches!(op, Op::Leaf) {
            value.check_finite(name)?;
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Untracked input: gradients never flow into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// Tracked leaf: receives a gradient on `backward`.
    pub fn param(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, true, "param")
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- operations -------------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4()?;
        let (cout, wcin, kh, kw) = self.value(w).dims4()?;
        if wcin != cin {
            return Err(Error::dim(format!(
                "conv2d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if self.shape(b) != [cout] {
            return Err(Error::dim(format!(
                "conv2d: bias shape {:?} does not match {cout} output channels",
                self.shape(b)
            )));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d: stride must be positive"));
        }
        let (ph, pw) = (h + 2 * pad, wd + 2 * pad);
        if ph < kh || pw < kw || (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(Error::dim(format!(
                "conv2d: non-integral output size for {h}x{wd}, kernel {kh}x{kw}, stride {stride}, pad {pad}"
            )));
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            pad,
            oh: (ph - kh) / stride + 1,
            ow: (pw - kw) / stride + 1,
        };
        let mut out = vec![T::zero(); n * cout * geom.oh * geom.ow];
        kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
        );
        let value = Tensor::new([n, cout, geom.oh, geom.ow], out)?;
        let rg = self.rg(&[x, w, b]);
        self.push(value, Op::Conv2d { x, w, b, geom }, rg, "conv2d")
    }

    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var> {
        let f: fn(T) -> T = match op {
            Unary::Sigmoid => |v| T::one() / (T::one() + (-v).exp()),
            Unary::Tanh => |v| v.tanh(),
            Unary::Relu => |v| v.max(T::zero()),
            Unary::Abs => |v| v.abs(),
        };
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, Op::Unary(op, a), rg, "unary")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Abs, a)
    }

    /// Elementwise binary op. Shapes must have equal rank; on every axis
    /// the sizes must agree or one of them must be 1.
    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb)?;
        let f: fn(T, T) -> T = match op {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut data = Vec::with_capacity(out_shape.iter().product());
            for_each_broadcast(&out_shape, &sa, &sb, |_, ia, ib| data.push(f(va[ia], vb[ib])));
            data
        };
        let value = Tensor::new(out_shape, data)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Binary(op, a, b), rg, "binary")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let k = T::of(s);
        let value = self.value(a).map(|v| v * k);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg, "scale")
    }

    pub fn global_pool(&mut self, kind: PoolKind, axis: PoolAxis, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let xd = self.value(x).data();
        let plane = h * w;
        let mut argmax = Vec::new();
        let (shape, data) = match axis {
            PoolAxis::Spatial => {
                let mut out = Vec::with_capacity(n * c);
                for p in 0..n * c {
                    let s = &xd[p * plane..(p + 1) * plane];
                    match kind {
                        PoolKind::Avg => out.push(s.iter().copied().sum::<T>() / T::of(plane as f64)),
                        PoolKind::Max => {
                            let mut best = 0;
                            for (i, &v) in s.iter().enumerate() {
                                if v > s[best] {
                                    best = i;
                                }
                            }
                            argmax.push(p * plane + best);
                            out.push(s[best]);
                        }
                    }
                }
                (vec![n, c, 1, 1], out)
            }
            PoolAxis::Channel => {
                let mut out = Vec::with_capacity(n * plane);
                for b in 0..n {
                    for q in 0..plane {
                        let at = |ch: usize| (b * c + ch) * plane + q;
                        match kind {
                            PoolKind::Avg => {
                                let mut s = T::zero();
                                for ch in 0..c {
                                    s = s + xd[at(ch)];
                                }
                                out.push(s / T::of(c as f64));
                            }
                            PoolKind::Max => {
                                let mut best = at(0);
                                for ch in 1..c {
                                    if xd[at(ch)] > xd[best] {
                                        best = at(ch);
                                    }
                                }
                                argmax.push(best);
                                out.push(xd[best]);
                            }
                        }
                    }
                }
                (vec![n, 1, h, w], out)
            }
        };
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Pool { x, kind, axis, argmax }, rg, "global_pool")
    }

    /// Bilinear resize (align-corners=false) to an explicit size.
    pub fn resize_to(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if oh == 0 || ow == 0 {
            return Err(Error::dim("resize: output dimension is zero"));
        }
        let th = kernels::resize_table(h, oh);
        let tw = kernels::resize_table(w, ow);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            for &(y0, y1, ly) in &th {
                let ly = T::of(ly);
                for &(x0, x1, lx) in &tw {
                    let lx = T::of(lx);
                    let top = (T::one() - lx) * src[y0 * w + x0] + lx * src[y0 * w + x1];
                    let bot = (T::one() - lx) * src[y1 * w + x0] + lx * src[y1 * w + x1];
                    out.push((T::one() - ly) * top + ly * bot);
                }
            }
        }
        let value = Tensor::new([n, c, oh, ow], out)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Resize { x }, rg, "resize")
    }

    /// Bilinear resize by a scale factor; output dims are `floor(dim * scale)`.
    pub fn resize_bilinear(&mut self, x: Var, scale: f64) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        if !(scale > 0.0) {
            return Err(Error::dim(format!("resize: scale {scale} must be positive")));
        }
        let oh = (h as f64 * scale).floor() as usize;
        let ow = (w as f64 * scale).floor() as usize;
        self.resize_to(x, oh, ow)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_channels(&values)?;
        let rg = self.rg(parts);
        self.push(value, Op::Concat(parts.to_vec()), rg, "concat")
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// All-pairs row correlation: `N×C×H×W` pair -> `N×H×W×W`, entry
    /// `(h, w, w')` is `<fl(h,w), fr(h,w')> / sqrt(C)`.
    pub fn correlation(&mut self, fl: Var, fr: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(fl).dims4()?;
        if self.shape(fl) != self.shape(fr) {
            return Err(Error::dim(format!(
                "correlation: feature shapes differ: {:?} vs {:?}",
                self.shape(fl),
                self.shape(fr)
            )));
        }
        let (a, b) = (self.value(fl).data(), self.value(fr).data());
        let norm = T::of(c as f64).sqrt();
        let plane = h * w;
        let mut out = vec![T::zero(); n * h * w * w];
        use rayon::prelude::*;
        out.par_chunks_mut(w * w).enumerate().for_each(|(row, o)| {
            let (bn, y) = (row / h, row % h);
            for x0 in 0..w {
                for x1 in 0..w {
                    let mut s = T::zero();
                    for ch in 0..c {
                        let base = (bn * c + ch) * plane + y * w;
                        s = s + a[base + x0] * b[base + x1];
                    }
                    o[x0 * w + x1] = s / norm;
                }
            }
        });
        let value = Tensor::new([n, h, w, w], out)?;
        let rg = self.rg(&[fl, fr]);
        self.push(value, Op::Correlation { fl, fr }, rg, "correlation")
    }

    /// Average-pool the last axis with kernel 2, stride 2.
    pub fn pool_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let len = *shape.last().ok_or_else(|| Error::dim("pool_last on a scalar"))?;
        if len < 2 {
            return Err(Error::dim("pool_last: last axis shorter than 2"));
        }
        let half = len / 2;
        let xd = self.value(x).data();
        let rows = xd.len() / len;
        let mut out = Vec::with_capacity(rows * half);
        let two = T::of(2.0);
        for r in 0..rows {
            let row = &xd[r * len..(r + 1) * len];
            for j in 0..half {
                out.push((row[2 * j] + row[2 * j + 1]) / two);
            }
        }
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = half;
        let value = Tensor::new(oshape, out)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::PoolLast(x), rg, "pool_last")
    }

    /// Windowed lookup into one correlation level (`N×H×W×L`) at
    /// positions `(w - d) / 2^level + o`, `o in -radius..=radius`.
    /// Output is `N×(2r+1)×H×W`.
    pub fn lookup_level(&mut self, vol: Var, d: Var, radius: usize, level: u32) -> Result<Var> {
        let vs = self.shape(vol).to_vec();
        let [n, h, w, l] = vs[..] else {
            return Err(Error::dim(format!("lookup: volume shape {vs:?} is not 4-D")));
        };
        if self.shape(d) != [n, 1, h, w] {
            return Err(Error::dim(format!(
                "lookup: disparity shape {:?} does not match volume {vs:?}",
                self.shape(d)
            )));
        }
        let dd = self.value(d).data();
        if dd.iter().any(|v| v.is_nan()) {
            return Err(Error::Value("lookup: NaN in disparity".into()));
        }
        let vd = self.value(vol).data();
        let k = 2 * radius + 1;
        let inv = T::of(1.0 / (1u64 << level) as f64);
        let plane = h * w;
        let mut out = vec![T::zero(); n * k * plane];
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let dv = dd[b * plane + y * w + x];
                    let centre = (T::of(x as f64) - dv) * inv;
                    let row = &vd[((b * h + y) * w + x) * l..][..l];
                    for (oi, o) in (-(radius as i64)..=radius as i64).enumerate() {
                        let (v, ..) = kernels::sample_linear(row, centre + T::of(o as f64));
                        out[(b * k + oi) * plane + y * w + x] = v;
                    }
                }
            }
        }
        let value = Tensor::new([n, k, h, w], out)?;
        let rg = self.rg(&[vol, d]);
        self.push(value, Op::Lookup { vol, d, radius, level }, rg, "lookup")
    }

    // ---- backward ---------------------------------------------------

    /// Populate gradients of `loss` w.r.t. every tracked node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Graph(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        if !self.value(loss).shape().iter().all(|&d| d == 1) {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Graph(
                "loss does not depend on any tracked parameter".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                if self.requires_grad(*x) {
                    let mut dx = vec![T::zero(); self.value(*x).len()];
                    kernels::conv2d_backward_input(geom, g.data(), self.value(*w).data(), &mut dx);
                    self.accumulate(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?);
                }
                if self.requires_grad(*w) || self.requires_grad(*b) {
                    let mut dw = vec![T::zero(); self.value(*w).len()];
                    let mut db = vec![T::zero(); geom.cout];
                    kernels::conv2d_backward_params(geom, g.data(), self.value(*x).data(), &mut dw, &mut db);
                    self.accumulate(grads, *w, Tensor::new(self.shape(*w).to_vec(), dw)?);
                    self.accumulate(grads, *b, Tensor::new([geom.cout], db)?);
                }
            }
            Op::Unary(op, a) => {
                let y = node.value.data();
                let x = self.value(*a).data();
                let gd = g.data();
                let dx: Vec<T> = match op {
                    Unary::Sigmoid => gd.iter().zip(y).map(|(&g, &y)| g * y * (T::one() - y)).collect(),
                    Unary::Tanh => gd.iter().zip(y).map(|(&g, &y)| g * (T::one() - y * y)).collect(),
                    Unary::Relu => gd
                        .iter()
                        .zip(x)
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect(),
                    Unary::Abs => gd
                        .iter()
                        .zip(x)
                        .map(|(&g, &x)| {
                            if x > T::zero() {
                                g
                            } else if x < T::zero() {
                                -g
                            } else {
                                T::zero()
                            }
                        })
                        .collect(),
                };
                self.accumulate(grads, *a, Tensor::new(self.shape(*a).to_vec(), dx)?);
            }
            Op::Binary(op, a, b) => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let gd = g.data();
                let mut da = vec![T::zero(); va.len()];
                let mut db = vec![T::zero(); vb.len()];
                let out_shape = node.value.shape().to_vec();
                for_each_broadcast(&out_shape, &sa, &sb, |io, ia, ib| {
                    let gv = gd[io];
                    match op {
                        Binary::Add => {
                            da[ia] = da[ia] + gv;
                            db[ib] = db[ib] + gv;
                        }
                        Binary::Sub => {
                            da[ia] = da[ia] + gv;
                            db[ib] = db[ib] - gv;
                        }
                        Binary::Mul => {
                            da[ia] = da[ia] + gv * vb[ib];
                            db[ib] = db[ib] + gv * va[ia];
                        }
                    }
                });
                self.accumulate(grads, *a, Tensor::new(sa, da)?);
                self.accumulate(grads, *b, Tensor::new(sb, db)?);
            }
            Op::Scale(a, s) => {
                let k = T::of(*s);
                self.accumulate(grads, *a, g.map(|v| v * k));
            }
            Op::Pool { x, kind, axis, argmax } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let plane = h * w;
                let mut dx = vec![T::zero(); n * c * plane];
                let gd = g.data();
                match (kind, axis) {
                    (PoolKind::Max, _) => {
                        for (o, &src) in argmax.iter().enumerate() {
                            dx[src] = dx[src] + gd[o];
                        }
                    }
                    (PoolKind::Avg, PoolAxis::Spatial) => {
                        let k = T::of(1.0 / plane as f64);
                        for p in 0..n * c {
                            let v = gd[p] * k;
                            dx[p * plane..(p + 1) * plane].iter_mut().for_each(|d| *d = v);
                        }
                    }
                    (PoolKind::Avg, PoolAxis::Channel) => {
                        let k = T::of(1.0 / c as f64);
                        for b in 0..n {
                            for ch in 0..c {
                                for q in 0..plane {
                                    dx[(b * c + ch) * plane + q] = gd[b * plane + q] * k;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new([n, c, h, w], dx)?);
            }
            Op::Resize { x } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let (_, _, oh, ow) = node.value.dims4()?;
                let th = kernels::resize_table(h, oh);
                let tw = kernels::resize_table(w, ow);
                let gd = g.data();
                let mut dx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    let src = &gd[p * oh * ow..(p + 1) * oh * ow];
                    for (oy, &(y0, y1, ly)) in th.iter().enumerate() {
                        let ly = T::of(ly);
                        for (ox, &(x0, x1, lx)) in tw.iter().enumerate() {
                            let lx = T::of(lx);
                            let gv = src[oy * ow + ox];
                            let top = gv * (T::one() - ly);
                            let bot = gv * ly;
                            dst[y0 * w + x0] = dst[y0 * w + x0] + top * (T::one() - lx);
                            dst[y0 * w + x1] = dst[y0 * w + x1] + top * lx;
                            dst[y1 * w + x0] = dst[y1 * w + x0] + bot * (T::one() - lx);
                            dst[y1 * w + x1] = dst[y1 * w + x1] + bot * lx;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new([n, c, h, w], dx)?);
            }
            Op::Concat(parts) => {
                let (n, total, h, w) = node.value.dims4()?;
                let plane = h * w;
                let gd = g.data();
                let mut off = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    if self.requires_grad(p) {
                        let mut d = Vec::with_capacity(n * pc * plane);
                        for b in 0..n {
                            let start = (b * total + off) * plane;
                            d.extend_from_slice(&gd[start..start + pc * plane]);
                        }
                        self.accumulate(grads, p, Tensor::new([n, pc, h, w], d)?);
                    }
                    off += pc;
                }
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.shape(*a).to_vec(), gv));
            }
            Op::Correlation { fl, fr } => {
                let (n, c, h, w) = self.value(*fl).dims4()?;
                let (a, b) = (self.value(*fl).data(), self.value(*fr).data());
                let norm = T::of(c as f64).sqrt();
                let plane = h * w;
                let gd = g.data();
                let mut da = vec![T::zero(); a.len()];
                let mut db = vec![T::zero(); b.len()];
                for bn in 0..n {
                    for y in 0..h {
                        let grow = &gd[(bn * h + y) * w * w..][..w * w];
                        for ch in 0..c {
                            let base = (bn * c + ch) * plane + y * w;
                            for x0 in 0..w {
                                for x1 in 0..w {
                                    let gv = grow[x0 * w + x1] / norm;
                                    da[base + x0] = da[base + x0] + gv * b[base + x1];
                                    db[base + x1] = db[base + x1] + gv * a[base + x0];
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *fl, Tensor::new([n, c, h, w], da)?);
                self.accumulate(grads, *fr, Tensor::new([n, c, h, w], db)?);
            }
            Op::PoolLast(x) => {
                let shape = self.shape(*x).to_vec();
                let len = *shape.last().unwrap();
                let half = len / 2;
                let gd = g.data();
                let rows = gd.len() / half;
                let mut dx = vec![T::zero(); rows * len];
                let k = T::of(0.5);
                for r in 0..rows {
                    for j in 0..half {
                        let v = gd[r * half + j] * k;
                        dx[r * len + 2 * j] = v;
                        dx[r * len + 2 * j + 1] = v;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(shape, dx)?);
            }
            Op::Lookup { vol, d, radius, level } => {
                let vs = self.shape(*vol).to_vec();
                let (n, h, w, l) = (vs[0], vs[1], vs[2], vs[3]);
                let k = 2 * radius + 1;
                let inv = T::of(1.0 / (1u64 << level) as f64);
                let plane = h * w;
                let vd = self.value(*vol).data();
                let dd = self.value(*d).data();
                let gd = g.data();
                let mut dvol = vec![T::zero(); vd.len()];
                let mut ddisp = vec![T::zero(); dd.len()];
                for b in 0..n {
                    for y in 0..h {
                        for x in 0..w {
                            let di = b * plane + y * w + x;
                            let centre = (T::of(x as f64) - dd[di]) * inv;
                            let roff = ((b * h + y) * w + x) * l;
                            let row = &vd[roff..roff + l];
                            for (oi, o) in (-(*radius as i64)..=*radius as i64).enumerate() {
                                let gv = gd[(b * k + oi) * plane + y * w + x];
                                let (_, i0, i1, f, clamped) =
                                    kernels::sample_linear(row, centre + T::of(o as f64));
                                dvol[roff + i0] = dvol[roff + i0] + gv * (T::one() - f);
                                dvol[roff + i1] = dvol[roff + i1] + gv * f;
                                if !clamped && i1 != i0 {
                                    // d(pos)/d(d) = -1/2^level
                                    ddisp[di] = ddisp[di] - gv * (row[i1] - row[i0]) * inv;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *vol, Tensor::new(vs, dvol)?);
                self.accumulate(grads, *d, Tensor::new(self.shape(*d).to_vec(), ddisp)?);
            }
        }
        Ok(())
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("cannot broadcast {a:?} with {b:?}")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::dim(format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

/// Visit every output index with the matching flat indices into `a` and `b`.
fn for_each_broadcast(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let nd = out.len();
    let strides = |s: &[usize]| {
        let mut st = vec![0usize; nd];
        let mut acc = 1;
        for i in (0..nd).rev() {
            st[i] = if s[i] == 1 { 0 } else { acc };
            acc *= s[i];
        }
        st
    };
    let (sa, sb) = (strides(a), strides(b));
    let total: usize = out.iter().product();
    let mut idx = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    for io in 0..total {
        f(io, ia, ib);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}
