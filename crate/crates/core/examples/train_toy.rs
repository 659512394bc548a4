//! Overfits a small model to one random-dot pair and reports the loss
//! curve and the end-point error per iteration count.
//!
//! cargo run --release --example train_toy -- [steps]

use wstereo::config::ModelConfig;
use wstereo::freqeval::{epe_split, frequency_mask};
use wstereo::io::{synth_pair, SynthSpec};
use wstereo::pipeline::infer;
use wstereo::train::{train_toy, StereoSample};

fn main() -> wstereo::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let mut cfg = ModelConfig::default();
    cfg.channels.matching = 16;
    cfg.channels.hidden = 8;
    cfg.channels.decoder = 16;
    cfg.train.steps = steps;

    let pair = synth_pair(&SynthSpec::random_dots(64, 32, 3.0, 17))?;
    let sample = StereoSample::new(&pair.left, &pair.right, pair.gt.clone())?;
    let outcome = train_toy(std::slice::from_ref(&sample), &cfg, |step, loss| {
        if step % 25 == 0 {
            println!("step {step:>4}  loss {loss:.4}");
        }
    })?;
    println!("final loss {:.4}", outcome.losses.last().unwrap());

    let mask = frequency_mask(&pair.left)?;
    for n_k in [1, 4, 8, 16] {
        let r = infer(&outcome.params, &cfg, &sample.left, &sample.right, n_k)?;
        let d = r.last().clone().reshape([32, 64])?;
        let m = epe_split(&d, &pair.gt.values, &mask, Some(&pair.gt.valid))?;
        println!("n_k {n_k:>2}  epe {:.3}  update {:.0} ms", m.epe_total, r.update_seconds() * 1e3);
    }
    Ok(())
}
