//! End-to-end gradient check in f64: reverse-mode gradients of the
//! sequence loss against central finite differences, one directional
//! derivative per parameter tensor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::config::ModelConfig;
use crate::error::Result;
use crate::io::{synth_pair, DisparityField, SynthSpec, Texture};
use crate::params::ParameterStore;
use crate::pipeline::{forward, init_params, sequence_loss};
use crate::tensor::Tensor;

/// Finite-difference steps, tried in order until the one-sided differences
/// agree to [`MAX_ASYMMETRY`]; a larger gap means a ReLU or interpolation
/// kink lies inside the stencil.
pub const STEPS: &[f64] = &[1e-5, 1e-6, 1e-7];
pub const MAX_ASYMMETRY: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
pub const HEIGHT: usize = 16;
pub const WIDTH: usize = 32;
pub const ITERS: usize = 2;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradEntry {
    pub name: String,
    pub numel: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub step: f64,
    /// Relative gap between the forward and backward one-sided differences.
    pub asymmetry: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub loss: f64,
    pub entries: Vec<GradEntry>,
    pub max_rel_err: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.rel_err < TOLERANCE)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradEntry> {
        self.entries.iter().filter(|e| e.rel_err >= TOLERANCE)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

struct Problem {
    cfg: ModelConfig,
    left: Tensor<f64>,
    right: Tensor<f64>,
    gt: Tensor<f64>,
    mask: Tensor<f64>,
}

impl Problem {
    fn loss(&self, params: &ParameterStore<f64>) -> Result<f64> {
        let mut t = Tape::<f64>::new();
        let p = params.bind(&mut t)?;
        let out = forward(&mut t, &p, &self.cfg, &self.left, &self.right, ITERS)?;
        let l = sequence_loss(&mut t, &out.full, &self.gt, Some(&self.mask), self.cfg.train.gamma)?;
        Ok(t.value(l).data()[0])
    }

    fn loss_and_grads(&self, params: &mut ParameterStore<f64>) -> Result<f64> {
        let mut t = Tape::<f64>::new();
        let p = params.bind(&mut t)?;
        let out = forward(&mut t, &p, &self.cfg, &self.left, &self.right, ITERS)?;
        let l = sequence_loss(&mut t, &out.full, &self.gt, Some(&self.mask), self.cfg.train.gamma)?;
        t.backward(l)?;
        params.collect_grads(&t, &p)?;
        Ok(t.value(l).data()[0])
    }
}

/// Every parameter is redrawn from `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
/// biases included. The zero-initialized head would otherwise switch off
/// most gradient paths, and the wider range keeps the 1/16 branch above
/// the finite-difference noise floor.
fn randomized_params(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ParameterStore<f64>> {
    let mut store = init_params(cfg)?.cast::<f64>();
    let bounds: Vec<(String, f64)> = store
        .iter()
        .map(|(name, t)| {
            // a bias shares the fan-in of its weight
            let w = name.strip_suffix(".b").and_then(|stem| store.get(&format!("{stem}.w")));
            let shape = w.map_or(t.shape(), |w| w.shape());
            let fan: usize = shape[1..].iter().product();
            (name.to_string(), (6.0 / fan.max(1) as f64).sqrt())
        })
        .collect();
    for (name, bound) in bounds {
        for v in store.get_mut(&name).expect("listed").data_mut() {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(store)
}

/// Run the check for `cfg` at `16×32`, two iterations, with all random
/// draws derived from `seed`.
///
/// The probe direction for a tensor is the normalized sum of a random unit
/// vector and the unit analytic gradient, so the check sees both the
/// gradient magnitude and its components off the gradient axis.
pub fn gradcheck(cfg: &ModelConfig, seed: u64) -> Result<GradcheckReport> {
    let mut cfg = cfg.clone();
    cfg.n_k_train = ITERS;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pair = synth_pair(&SynthSpec {
        width: WIDTH,
        height: HEIGHT,
        disparity_field: DisparityField::LinearRamp { start: 1.0, end: 3.0 },
        dot_density: 0.5,
        texture: Texture::BandlimitedNoise,
        seed,
    })?;
    let batch = |t: &Tensor| t.cast::<f64>().reshape([1, 3, HEIGHT, WIDTH]);
    let problem = Problem {
        left: batch(&pair.left)?,
        right: batch(&pair.right)?,
        gt: pair.gt.values.cast::<f64>().reshape([1, 1, HEIGHT, WIDTH])?,
        mask: pair.gt.mask().cast::<f64>().reshape([1, 1, HEIGHT, WIDTH])?,
        cfg,
    };

    let mut params = randomized_params(&problem.cfg, &mut rng)?;
    let loss = problem.loss_and_grads(&mut params)?;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut entries = Vec::with_capacity(names.len());
    for name in &names {
        let n = params.get(name).expect("listed").len();
        let mut dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);
        let grad = params.grad(name).expect("collected");
        let gn = grad.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        // a single scalar could cancel to a zero direction
        if gn > 0.0 && n > 1 {
            for (v, g) in dir.iter_mut().zip(grad.data()) {
                *v += g / gn;
            }
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|v| *v /= norm);
        }
        let analytic: f64 = grad.data().iter().zip(&dir).map(|(g, v)| g * v).sum();

        let mut probe = params.clone();
        let mut shifted = |delta: f64| -> Result<f64> {
            let base = params.get(name).expect("listed").data();
            let t = probe.get_mut(name).expect("listed");
            for ((p, &b), &v) in t.data_mut().iter_mut().zip(base).zip(&dir) {
                *p = b + delta * v;
            }
            problem.loss(&probe)
        };
        let mut chosen = None;
        for &h in STEPS {
            let (fp, fm) = (shifted(h)?, shifted(-h)?);
            let (dp, dm) = ((fp - loss) / h, (loss - fm) / h);
            let asym = (dp - dm).abs() / dp.abs().max(dm.abs()).max(1e-8);
            chosen = Some(((fp - fm) / (2.0 * h), h, asym));
            if asym < MAX_ASYMMETRY {
                break;
            }
        }
        let (numeric, step, asymmetry) = chosen.expect("at least one step");
        entries.push(GradEntry {
            name: name.clone(),
            numel: n,
            analytic,
            numeric,
            step,
            asymmetry,
            rel_err: rel_err(analytic, numeric),
        });
    }
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport {
        seed,
        loss,
        entries,
        max_rel_err,
    })
}
