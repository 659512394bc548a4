//! Toy trainer: gradient descent on the sequence loss with elementwise
//! gradient clipping, optional momentum and an optional linear step decay.

use std::path::{Path, PathBuf};

use crate::autodiff::Tape;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::io::{read_image, read_pfm, DisparityMap};
use crate::params::ParameterStore;
use crate::pipeline::{forward, init_params, sequence_loss};
use crate::tensor::Tensor;

/// One training pair. Images are `1×3×H×W` in [0, 255].
#[derive(Clone, Debug)]
pub struct StereoSample {
    pub left: Tensor,
    pub right: Tensor,
    pub gt: DisparityMap,
}

impl StereoSample {
    /// Wrap `3×H×W` images (as produced by the readers and the synthesizer).
    pub fn new(left: &Tensor, right: &Tensor, gt: DisparityMap) -> Result<Self> {
        let s = left.shape();
        if s.len() != 3 || s[0] != 3 || right.shape() != s {
            return Err(Error::dim(format!(
                "expected two 3xHxW images, got {:?} and {:?}",
                s,
                right.shape()
            )));
        }
        if gt.dims() != (s[1], s[2]) {
            return Err(Error::dim(format!("ground truth {:?} does not match image {:?}", gt.dims(), s)));
        }
        let batch = |t: &Tensor| t.clone().reshape([1, s[0], s[1], s[2]]);
        Ok(StereoSample {
            left: batch(left)?,
            right: batch(right)?,
            gt,
        })
    }

    pub fn gt_tensor(&self) -> Result<Tensor> {
        let (h, w) = self.gt.dims();
        self.gt.values.clone().reshape([1, 1, h, w])
    }

    pub fn mask_tensor(&self) -> Result<Tensor> {
        let (h, w) = self.gt.dims();
        self.gt.mask().reshape([1, 1, h, w])
    }
}

fn find(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["pfm", "ppm", "pgm"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

/// A pair directory holds `left`, `right` (PFM, PPM or PGM) and `disp.pfm`.
pub fn load_pair_dir(dir: &Path) -> Result<StereoSample> {
    let missing = |what: &str| Error::Config(format!("{}: no {what} image", dir.display()));
    let left = read_image(&find(dir, "left").ok_or_else(|| missing("left"))?)?;
    let right = read_image(&find(dir, "right").ok_or_else(|| missing("right"))?)?;
    let gt = read_pfm(&dir.join("disp.pfm"))?;
    StereoSample::new(&to_rgb(left)?, &to_rgb(right)?, gt)
}

/// Expand a `1×H×W` image to three equal channels.
pub fn to_rgb(img: Tensor) -> Result<Tensor> {
    if img.shape()[0] == 3 {
        return Ok(img);
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let plane = img.data();
    Tensor::new([3, h, w], [plane, plane, plane].concat())
}

/// A single pair directory, or a directory of pair directories taken in name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<StereoSample>> {
    if find(dir, "left").is_some() {
        return Ok(vec![load_pair_dir(dir)?]);
    }
    let mut subs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && find(p, "left").is_some())
        .collect();
    subs.sort();
    if subs.is_empty() {
        return Err(Error::Config(format!("{}: no stereo pairs found", dir.display())));
    }
    subs.iter().map(|p| load_pair_dir(p)).collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParameterStore,
    /// Loss before each update step.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    /// `step,loss` with one row per step.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l:.9}\n"));
        }
        s
    }
}

/// Train from the initialization given by `cfg.seed` for `cfg.train.steps`
/// steps, visiting samples in order. `on_step` sees `(step, loss)`.
pub fn train_toy(data: &[StereoSample], cfg: &ModelConfig, on_step: impl FnMut(usize, f64)) -> Result<TrainOutcome> {
    let params = init_params(cfg)?;
    train_from(params, data, cfg, on_step)
}

pub fn train_from(
    mut params: ParameterStore,
    data: &[StereoSample],
    cfg: &ModelConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let tc = &cfg.train;
    let mut velocity: Vec<Vec<f32>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
    let mut losses = Vec::with_capacity(tc.steps);
    let (mu, clip) = (tc.momentum as f32, tc.clip as f32);
    for step in 0..tc.steps {
        let sample = &data[step % data.len()];
        let diverged = |e: Error| match e {
            Error::Numerical { stage, msg } => Error::Training {
                step,
                msg: format!("{stage}: {msg}"),
            },
            other => other,
        };
        let mut t = Tape::<f32>::new();
        let bound = params.bind(&mut t)?;
        let out = forward(&mut t, &bound, cfg, &sample.left, &sample.right, cfg.n_k_train).map_err(diverged)?;
        let gt = sample.gt_tensor()?;
        let mask = sample.mask_tensor()?;
        let loss = sequence_loss(&mut t, &out.full, &gt, Some(&mask), tc.gamma).map_err(diverged)?;
        let lv = t.value(loss).data()[0] as f64;
        if !lv.is_finite() {
            return Err(Error::Training {
                step,
                msg: format!("loss is {lv}"),
            });
        }
        t.backward(loss).map_err(diverged)?;
        params.collect_grads(&t, &bound)?;
        let lr = tc.lr_at(step) as f32;
        let grads: Vec<Vec<f32>> = params.grads().map(|(_, g)| g.data().to_vec()).collect();
        for ((( _, p), g), v) in params.iter_mut().zip(&grads).zip(&mut velocity) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                if !gv.is_finite() {
                    return Err(Error::Training {
                        step,
                        msg: "non-finite gradient".into(),
                    });
                }
                *vv = mu * *vv + gv.clamp(-clip, clip);
                *pv -= lr * *vv;
            }
        }
        losses.push(lv);
        on_step(step, lv);
    }
    Ok(TrainOutcome { params, losses })
}
