//! High-frequency preserving update operator.
//!
//! Each scale keeps a hidden state `F_l`. Per iteration the preserved
//! high-frequency features `F_h` (never modified) and the hidden state go
//! through the frequency adapter, whose alternating attention rounds give
//! iteration-local copies of both; the adapted `F_h` then replaces the
//! carried cell state of an LSTM step. Scales are updated coarse to fine
//! and only the 1/4 scale sees the correlation lookup and decodes `Δd`.

use crate::autodiff::{PoolAxis, PoolKind, Tape, Var};
use crate::backbone::MultiScaleFeatures;
use crate::config::{Channels, HsaPooling, ModelConfig};
use crate::correlation::{lookup, CorrelationVolume};
use crate::error::{Error, Result};
use crate::nn::{conv, conv_relu, resize_like};
use crate::params::{Bound, Init, ParameterStore};
use crate::tensor::Element;

pub const SCALES: [&str; 3] = ["16", "8", "4"];

/// Recurrent state. `fh0` holds the extractor output and is only read.
#[derive(Clone, Copy, Debug)]
pub struct HpuState {
    pub hidden: MultiScaleFeatures,
    pub fh0: MultiScaleFeatures,
    /// Disparity at 1/4 resolution, `N×1×H/4×W/4`.
    pub d: Var,
    pub k: usize,
}

/// `σ(relu(W1·GMP(fl)) + relu(W2·GAP(fl)))`, `N×C×1×1`.
pub fn lsa<T: Element>(t: &mut Tape<T>, p: &Bound, prefix: &str, fl: Var) -> Result<Var> {
    let gmp = t.global_pool(PoolKind::Max, PoolAxis::Spatial, fl)?;
    let gap = t.global_pool(PoolKind::Avg, PoolAxis::Spatial, fl)?;
    let zm = conv_relu(t, p, &format!("{prefix}.lsa.w1"), gmp, 1)?;
    let za = conv_relu(t, p, &format!("{prefix}.lsa.w2"), gap, 1)?;
    let s = t.add(zm, za)?;
    t.sigmoid(s)
}

/// `σ(W3 * [max_c(fh), mean_c(fh)])` with a 7×7 kernel, `N×1×H×W`.
/// With spatial pooling the two maps are per-channel global statistics
/// and the gate is a single value per sample.
pub fn hsa<T: Element>(t: &mut Tape<T>, p: &Bound, prefix: &str, fh: Var, pooling: HsaPooling) -> Result<Var> {
    let axis = match pooling {
        HsaPooling::Channel => PoolAxis::Channel,
        HsaPooling::Spatial => PoolAxis::Spatial,
    };
    let zm = t.global_pool(PoolKind::Max, axis, fh)?;
    let za = t.global_pool(PoolKind::Avg, axis, fh)?;
    let z = t.concat_channels(&[zm, za])?;
    let a = conv(t, p, &format!("{prefix}.hsa.w3"), z, 1)?;
    t.sigmoid(a)
}

/// Alternating frequency adapter. Odd rounds gate `F_h` by `LSA(F_l)`,
/// even rounds gate `F_l` by `HSA(F_h)`. Returns `(F_h, F_l)` after `n_j` rounds.
pub fn ifa<T: Element>(
    t: &mut Tape<T>,
    p: &Bound,
    prefix: &str,
    fh0: Var,
    fl: Var,
    n_j: usize,
    pooling: HsaPooling,
) -> Result<(Var, Var)> {
    if n_j < 1 {
        return Err(Error::Config("frequency adapter needs at least one round".into()));
    }
    if t.shape(fh0)[2..] != t.shape(fl)[2..] {
        return Err(Error::dim(format!(
            "adapter inputs differ spatially: {:?} vs {:?}",
            t.shape(fh0),
            t.shape(fl)
        )));
    }
    let (mut fh, mut fl) = (fh0, fl);
    for j in 1..=n_j {
        if j % 2 == 1 {
            let a = lsa(t, p, prefix, fl)?;
            fh = t.mul(a, fh)?;
        } else {
            let a = hsa(t, p, prefix, fh, pooling)?;
            fl = t.mul(a, fl)?;
        }
    }
    Ok((fh, fl))
}

/// One LSTM step whose cell input is the adapted high-frequency feature:
/// `c = f⊙F_h + i⊙g`, `h' = o⊙tanh(c)`, gates over `[h, x]`.
pub fn hp_lstm_step<T: Element>(
    t: &mut Tape<T>,
    p: &Bound,
    prefix: &str,
    hidden: Var,
    fh: Var,
    x: Var,
) -> Result<Var> {
    if t.shape(hidden) != t.shape(fh) {
        return Err(Error::dim(format!(
            "hidden {:?} and high-frequency features {:?} must match",
            t.shape(hidden),
            t.shape(fh)
        )));
    }
    let hx = t.concat_channels(&[hidden, x])?;
    let gate = |t: &mut Tape<T>, g: &str| conv(t, p, &format!("{prefix}.lstm.gate_{g}"), hx, 1);
    let i = gate(t, "i")?;
    let i = t.sigmoid(i)?;
    let f = gate(t, "f")?;
    let f = t.sigmoid(f)?;
    let g = gate(t, "g")?;
    let g = t.tanh(g)?;
    let o = gate(t, "o")?;
    let o = t.sigmoid(o)?;
    let fc = t.mul(f, fh)?;
    let ig = t.mul(i, g)?;
    let c = t.add(fc, ig)?;
    let c = t.tanh(c)?;
    t.mul(o, c)
}

/// `[enc_g(L(C, d)), enc_d(d), d]`.
pub fn build_motion_input<T: Element>(
    t: &mut Tape<T>,
    p: &Bound,
    vol: &CorrelationVolume,
    d: Var,
    radius: usize,
) -> Result<Var> {
    let corr = lookup(t, vol, d, radius)?;
    let g = conv_relu(t, p, "motion.enc_g.conv1", corr, 1)?;
    let g = conv_relu(t, p, "motion.enc_g.conv2", g, 1)?;
    let e = conv_relu(t, p, "motion.enc_d.conv1", d, 1)?;
    let e = conv_relu(t, p, "motion.enc_d.conv2", e, 1)?;
    t.concat_channels(&[g, e, d])
}

pub fn motion_channels(ch: &Channels) -> usize {
    ch.motion_corr + ch.motion_disp + 1
}

/// Motion encoder and disparity head, shared by both update operators.
pub fn init_motion_and_head(init: &mut Init, store: &mut ParameterStore, cfg: &ModelConfig) -> Result<()> {
    let ch = &cfg.channels;
    let corr = cfg.pyramid_levels * (2 * cfg.lookup_radius + 1);
    init.conv(store, "motion.enc_g.conv1", 2 * ch.motion_corr, corr, 1)?;
    init.conv(store, "motion.enc_g.conv2", ch.motion_corr, 2 * ch.motion_corr, 3)?;
    init.conv(store, "motion.enc_d.conv1", ch.motion_disp, 1, 3)?;
    init.conv(store, "motion.enc_d.conv2", ch.motion_disp, ch.motion_disp, 3)?;
    init.conv(store, "head.conv1", ch.decoder, ch.hidden, 3)?;
    // zero last layer: training starts from Δd = 0
    init.conv_zero(store, "head.conv2", 1, ch.decoder, 3)
}

/// `Δd = conv2(relu(conv1(h4)))`.
pub fn decode_delta<T: Element>(t: &mut Tape<T>, p: &Bound, h4: Var) -> Result<Var> {
    let x = conv_relu(t, p, "head.conv1", h4, 1)?;
    conv(t, p, "head.conv2", x, 1)
}

/// Input channels of each scale's recurrent cell, coarse to fine.
pub fn cell_inputs(cfg: &ModelConfig) -> [usize; 3] {
    let c = cfg.channels.hidden;
    [c, 2 * c, motion_channels(&cfg.channels) + c]
}

pub fn init_hpu(init: &mut Init, store: &mut ParameterStore, cfg: &ModelConfig) -> Result<()> {
    let c = cfg.channels.hidden;
    for (s, xin) in SCALES.iter().zip(cell_inputs(cfg)) {
        let pre = format!("hpu.l{s}");
        init.conv(store, &format!("{pre}.lsa.w1"), c, c, 1)?;
        init.conv(store, &format!("{pre}.lsa.w2"), c, c, 1)?;
        let hsa_in = match cfg.hsa_pooling {
            HsaPooling::Channel => 2,
            HsaPooling::Spatial => 2 * c,
        };
        init.conv(store, &format!("{pre}.hsa.w3"), 1, hsa_in, 7)?;
        for g in ["i", "f", "g", "o"] {
            init.conv(store, &format!("{pre}.lstm.gate_{g}"), c, c + xin, 3)?;
        }
    }
    init_motion_and_head(init, store, cfg)
}

/// Recurrent-cell inputs shared by both update operators: the 1/16 cell
/// sees the previous 1/8 state, the 1/8 cell the previous 1/4 state and
/// the new 1/16 state, the 1/4 cell the motion features and the new 1/8
/// state.
pub(crate) struct CellInputs;

impl CellInputs {
    pub(crate) fn x16<T: Element>(t: &mut Tape<T>, prev: &MultiScaleFeatures) -> Result<Var> {
        resize_like(t, prev.f8, prev.f16)
    }

    pub(crate) fn x8<T: Element>(t: &mut Tape<T>, prev: &MultiScaleFeatures, new16: Var) -> Result<Var> {
        let a = resize_like(t, prev.f4, prev.f8)?;
        let b = resize_like(t, new16, prev.f8)?;
        t.concat_channels(&[a, b])
    }

    pub(crate) fn x4<T: Element>(t: &mut Tape<T>, prev: &MultiScaleFeatures, motion: Var, new8: Var) -> Result<Var> {
        let b = resize_like(t, new8, prev.f4)?;
        t.concat_channels(&[motion, b])
    }
}

fn hpu_cell<T: Element>(
    t: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    scale: &str,
    fh0: Var,
    hidden: Var,
    x: Var,
) -> Result<Var> {
    let pre = format!("hpu.l{scale}");
    let (fh, fl) = ifa(t, p, &pre, fh0, hidden, cfg.n_j, cfg.hsa_pooling)?;
    hp_lstm_step(t, p, &pre, fl, fh, x)
}

/// One full iteration. Returns the new state and `Δd` (1/4 resolution).
pub fn hpu_update<T: Element>(
    t: &mut Tape<T>,
    p: &Bound,
    cfg: &ModelConfig,
    state: &HpuState,
    vol: &CorrelationVolume,
) -> Result<(HpuState, Var)> {
    let prev = state.hidden;
    let x16 = CellInputs::x16(t, &prev)?;
    let h16 = hpu_cell(t, p, cfg, "16", state.fh0.f16, prev.f16, x16)?;
    let x8 = CellInputs::x8(t, &prev, h16)?;
    let h8 = hpu_cell(t, p, cfg, "8", state.fh0.f8, prev.f8, x8)?;
    let motion = build_motion_input(t, p, vol, state.d, cfg.lookup_radius)?;
    let x4 = CellInputs::x4(t, &prev, motion, h8)?;
    let h4 = hpu_cell(t, p, cfg, "4", state.fh0.f4, prev.f4, x4)?;
    let delta = decode_delta(t, p, h4)?;
    let d = t.add(state.d, delta)?;
    Ok((
        HpuState {
            hidden: MultiScaleFeatures { f4: h4, f8: h8, f16: h16 },
            fh0: state.fh0,
            d,
            k: state.k + 1,
        },
        delta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::build_volume;
    use crate::tensor::{checksum, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], amp: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-amp..amp))
    }

    fn small_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::default();
        cfg.channels.hidden = 4;
        cfg.channels.matching = 4;
        cfg.channels.motion_corr = 3;
        cfg.channels.motion_disp = 2;
        cfg.channels.decoder = 4;
        cfg.pyramid_levels = 2;
        cfg.lookup_radius = 1;
        cfg
    }

    fn store_for(cfg: &ModelConfig, seed: u64) -> ParameterStore {
        let mut s = ParameterStore::new();
        init_hpu(&mut Init::new(seed), &mut s, cfg).unwrap();
        s
    }

    fn zero_attention(s: &mut ParameterStore) {
        for (name, v) in s.iter_mut() {
            if name.contains(".lsa.") || name.contains(".hsa.") {
                v.data_mut().fill(0.0);
            }
        }
    }

    #[test]
    fn zero_attention_gates_are_one_half() {
        let mut s = store_for(&small_cfg(), 1);
        zero_attention(&mut s);
        let mut t = Tape::<f64>::new();
        let p = s.bind(&mut t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = t.constant(rand_tensor(&mut rng, [2, 4, 3, 5], 1.0)).unwrap();
        let a = lsa(&mut t, &p, "hpu.l4", x).unwrap();
        assert_eq!(t.shape(a), &[2, 4, 1, 1]);
        assert!(t.value(a).data().iter().all(|&v| v == 0.5));
        let h = hsa(&mut t, &p, "hpu.l4", x, HsaPooling::Channel).unwrap();
        assert_eq!(t.shape(h), &[2, 1, 3, 5]);
        assert!(t.value(h).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn lsa_on_channel_constant_input_by_hand() {
        let mut s = ParameterStore::<f32>::new();
        // W1 = [[1, 2], [0, -1]], W2 = [[0.5, 0], [1, 1]], zero biases
        s.insert("a.lsa.w1.w", Tensor::new([2, 2, 1, 1], vec![1.0, 2.0, 0.0, -1.0]).unwrap()).unwrap();
        s.insert("a.lsa.w1.b", Tensor::zeros([2])).unwrap();
        s.insert("a.lsa.w2.w", Tensor::new([2, 2, 1, 1], vec![0.5, 0.0, 1.0, 1.0]).unwrap()).unwrap();
        s.insert("a.lsa.w2.b", Tensor::zeros([2])).unwrap();
        let mut t = Tape::<f64>::new();
        let p = s.bind(&mut t).unwrap();
        // channel values v = [1, 3]
        let x = t
            .constant(Tensor::from_fn([1, 2, 2, 2], |i| if i < 4 { 1.0 } else { 3.0 }))
            .unwrap();
        let a = lsa(&mut t, &p, "a", x).unwrap();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        // W1 v = [7, -3] -> relu [7, 0]; W2 v = [0.5, 4]
        let want = [sig(7.0 + 0.5), sig(0.0 + 4.0)];
        for (g, w) in t.value(a).data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn hsa_single_channel_sees_duplicated_input() {
        let mut s = ParameterStore::<f32>::new();
        let mut w = Tensor::zeros([1, 2, 7, 7]);
        w.data_mut()[24] = 1.0; // centre tap, max map
        w.data_mut()[49 + 24] = 2.0; // centre tap, mean map
        s.insert("a.hsa.w3.w", w).unwrap();
        s.insert("a.hsa.w3.b", Tensor::zeros([1])).unwrap();
        let mut t = Tape::<f64>::new();
        let p = s.bind(&mut t).unwrap();
        let x = t.constant(Tensor::new([1, 1, 1, 3], vec![-1.0, 0.0, 0.5]).unwrap()).unwrap();
        let a = hsa(&mut t, &p, "a", x, HsaPooling::Channel).unwrap();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        for (g, v) in t.value(a).data().iter().zip([-1.0, 0.0, 0.5]) {
            assert!((g - sig(3.0 * v)).abs() < 1e-12);
        }
    }

    #[test]
    fn ifa_alternation_counts() {
        let mut s = store_for(&small_cfg(), 3);
        zero_attention(&mut s);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fh_t = rand_tensor(&mut rng, [1, 4, 4, 6], 1.0);
        let fl_t = rand_tensor(&mut rng, [1, 4, 4, 6], 1.0);
        for n_j in 1..=6 {
            let mut t = Tape::<f64>::new();
            let p = s.bind(&mut t).unwrap();
            let fh0 = t.constant(fh_t.clone()).unwrap();
            let fl = t.constant(fl_t.clone()).unwrap();
            let (fh, fl2) = ifa(&mut t, &p, "hpu.l4", fh0, fl, n_j, HsaPooling::Channel).unwrap();
            let kh = n_j.div_ceil(2) as i32;
            let kl = (n_j / 2) as i32;
            assert_eq!(t.value(fh), &fh_t.map(|v| v * 0.5f64.powi(kh)));
            assert_eq!(t.value(fl2), &fl_t.map(|v| v * 0.5f64.powi(kl)));
            if n_j == 1 {
                assert_eq!(fl2, fl);
            }
        }
        let mut t = Tape::<f64>::new();
        let p = s.bind(&mut t).unwrap();
        let fh0 = t.constant(fh_t).unwrap();
        let fl = t.constant(fl_t).unwrap();
        assert!(matches!(
            ifa(&mut t, &p, "hpu.l4", fh0, fl, 0, HsaPooling::Channel),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ifa_round_four_changes_fl() {
        let s = store_for(&small_cfg(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fh_t = rand_tensor(&mut rng, [1, 4, 4, 6], 1.0);
        let fl_t = rand_tensor(&mut rng, [1, 4, 4, 6], 1.0);
        let run = |n_j| {
            let mut t = Tape::<f64>::new();
            let p = s.bind(&mut t).unwrap();
            let a = t.constant(fh_t.clone()).unwrap();
            let b = t.constant(fl_t.clone()).unwrap();
            let (fh, fl) = ifa(&mut t, &p, "hpu.l4", a, b, n_j, HsaPooling::Channel).unwrap();
            (t.value(fh).clone(), t.value(fl).clone())
        };
        let (h3, l3) = run(3);
        let (h4, l4) = run(4);
        assert_eq!(h3, h4);
        assert_ne!(l3, l4);
    }

    #[test]
    fn lstm_closed_form_at_zero_params() {
        let cfg = small_cfg();
        let mut s = store_for(&cfg, 7);
        for (_, v) in s.iter_mut() {
            v.data_mut().fill(0.0);
        }
        let mut t = Tape::<f64>::new();
        let p = s.bind(&mut t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = t.constant(rand_tensor(&mut rng, [1, 4, 2, 4], 1.0)).unwrap();
        let fh_t = rand_tensor(&mut rng, [1, 4, 2, 4], 3.0);
        let fh = t.constant(fh_t.clone()).unwrap();
        let x = t.constant(rand_tensor(&mut rng, [1, 4, 2, 4], 1.0)).unwrap();
        let out = hp_lstm_step(&mut t, &p, "hpu.l16", h, fh, x).unwrap();
        for (g, f) in t.value(out).data().iter().zip(fh_t.data()) {
            assert!((g - 0.5 * (0.5 * f).tanh()).abs() < 1e-15);
        }
        let zero = t.constant(Tensor::zeros([1, 4, 2, 4])).unwrap();
        let out = hp_lstm_step(&mut t, &p, "hpu.l16", h, zero, x).unwrap();
        assert!(t.value(out).data().iter().all(|&v| v == 0.0));
        let bad = t.constant(Tensor::zeros([1, 3, 2, 4])).unwrap();
        assert!(hp_lstm_step(&mut t, &p, "hpu.l16", h, bad, x).is_err());
    }

    #[test]
    fn lstm_output_strictly_bounded() {
        let s = store_for(&small_cfg(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut t = Tape::<f64>::new();
        let p = s.bind(&mut t).unwrap();
        let h = t.constant(rand_tensor(&mut rng, [1, 4, 3, 3], 50.0)).unwrap();
        let fh = t.constant(rand_tensor(&mut rng, [1, 4, 3, 3], 50.0)).unwrap();
        let x = t.constant(rand_tensor(&mut rng, [1, 4, 3, 3], 50.0)).unwrap();
        let out = hp_lstm_step(&mut t, &p, "hpu.l16", h, fh, x).unwrap();
        assert!(t.value(out).data().iter().all(|v| v.abs() < 1.0));
    }

    struct Fixture {
        t: Tape<f64>,
        p: Bound,
        cfg: ModelConfig,
        vol: CorrelationVolume,
        state: HpuState,
    }

    fn fixture(seed: u64, random_head: bool) -> Fixture {
        let cfg = small_cfg();
        let mut s = store_for(&cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        if random_head {
            let w = s.get_mut("head.conv2.w").unwrap();
            for v in w.data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
        let mut t = Tape::<f64>::new();
        let p = s.bind(&mut t).unwrap();
        let (h4, w4) = (4, 8);
        let f = t.constant(rand_tensor(&mut rng, [1, 4, h4, w4], 1.0)).unwrap();
        let g = t.constant(rand_tensor(&mut rng, [1, 4, h4, w4], 1.0)).unwrap();
        let vol = build_volume(&mut t, f, g, cfg.pyramid_levels).unwrap();
        let mut ms = |t: &mut Tape<f64>, amp: f64| {
            let a = t.constant(rand_tensor(&mut rng, [1, 4, h4, w4], amp)).unwrap();
            let b = t.constant(rand_tensor(&mut rng, [1, 4, h4 / 2, w4 / 2], amp)).unwrap();
            let c = t.constant(rand_tensor(&mut rng, [1, 4, h4 / 4, w4 / 4], amp)).unwrap();
            MultiScaleFeatures { f4: a, f8: b, f16: c }
        };
        let hidden = ms(&mut t, 0.9);
        let fh0 = ms(&mut t, 2.0);
        let d = t.constant(Tensor::zeros([1, 1, h4, w4])).unwrap();
        Fixture {
            t,
            p,
            cfg,
            vol,
            state: HpuState { hidden, fh0, d, k: 0 },
        }
    }

    #[test]
    fn zero_head_leaves_disparity() {
        let Fixture { mut t, p, cfg, vol, mut state } = fixture(11, false);
        for _ in 0..3 {
            let (next, delta) = hpu_update(&mut t, &p, &cfg, &state, &vol).unwrap();
            assert!(t.value(delta).data().iter().all(|&v| v == 0.0));
            assert!(t.value(next.d).data().iter().all(|&v| v == 0.0));
            state = next;
        }
        assert_eq!(state.k, 3);
    }

    #[test]
    fn preservation_bounds_and_additivity() {
        let Fixture { mut t, p, cfg, vol, mut state } = fixture(12, true);
        let sums = |t: &Tape<f64>, m: &MultiScaleFeatures| m.coarse_to_fine().map(|v| checksum(t.value(v)));
        let before = sums(&t, &state.fh0);
        let d0 = t.value(state.d).clone();
        let mut acc = d0.clone();
        for _ in 0..10 {
            let (next, delta) = hpu_update(&mut t, &p, &cfg, &state, &vol).unwrap();
            for v in next.hidden.coarse_to_fine() {
                assert!(t.value(v).data().iter().all(|x| x.abs() < 1.0));
            }
            let want: Vec<f64> = t
                .value(state.d)
                .data()
                .iter()
                .zip(t.value(delta).data())
                .map(|(a, b)| a + b)
                .collect();
            assert_eq!(t.value(next.d).data(), &want[..]);
            acc = Tensor::new(acc.shape().to_vec(), acc.data().iter().zip(t.value(delta).data()).map(|(a, b)| a + b).collect()).unwrap();
            state = next;
        }
        assert_eq!(sums(&t, &state.fh0), before);
        assert!(t.value(state.d).max_abs_diff(&acc) < 1e-12);
        assert!(t.value(state.d).max_abs_diff(&d0) > 0.0);
    }

    #[test]
    fn motion_input_channels_and_zero_disparity() {
        let Fixture { mut t, p, cfg, vol, state } = fixture(13, false);
        let m = build_motion_input(&mut t, &p, &vol, state.d, cfg.lookup_radius).unwrap();
        assert_eq!(t.shape(m)[1], motion_channels(&cfg.channels));
        // channels after the correlation encoder come from d = 0 with zero biases
        let (_, c, h, w) = t.value(m).dims4().unwrap();
        let plane = h * w;
        let from = cfg.channels.motion_corr * plane;
        assert!(t.value(m).data()[from..c * plane].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn motion_input_is_local_in_disparity() {
        let Fixture { mut t, p, cfg, vol, .. } = fixture(14, false);
        let base = t.constant(Tensor::full([1, 1, 4, 8], 0.5)).unwrap();
        let mut bumped = Tensor::full([1, 1, 4, 8], 0.5);
        bumped.data_mut()[8 + 1] = 1.25; // row 1, col 1
        let bumped = t.constant(bumped).unwrap();
        let a = build_motion_input(&mut t, &p, &vol, base, cfg.lookup_radius).unwrap();
        let b = build_motion_input(&mut t, &p, &vol, bumped, cfg.lookup_radius).unwrap();
        // 1×1 then 3×3 on the lookup path, 3×3 twice on the disparity path: reach 2
        let (_, c, h, w) = t.value(a).dims4().unwrap();
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let i = (ch * h + y) * w + x;
                    let far = (y as i64 - 1).abs() > 2 || (x as i64 - 1).abs() > 2;
                    if far {
                        assert_eq!(t.value(a).data()[i], t.value(b).data()[i], "({ch},{y},{x})");
                    }
                }
            }
        }
    }

    #[test]
    fn spatial_pooling_variant_gives_one_gate_per_sample() {
        let mut cfg = small_cfg();
        cfg.hsa_pooling = HsaPooling::Spatial;
        let s = store_for(&cfg, 15);
        assert_eq!(s.get("hpu.l4.hsa.w3.w").unwrap().shape(), &[1, 8, 7, 7]);
        let mut t = Tape::<f64>::new();
        let p = s.bind(&mut t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = t.constant(rand_tensor(&mut rng, [2, 4, 3, 5], 1.0)).unwrap();
        let a = hsa(&mut t, &p, "hpu.l4", x, HsaPooling::Spatial).unwrap();
        assert_eq!(t.shape(a), &[2, 1, 1, 1]);
    }
}
