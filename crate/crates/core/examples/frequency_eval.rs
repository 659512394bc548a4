//! Edge-based frequency split of a textured image and the resulting
//! region EPEs for a prediction that is off by one pixel near edges.
//!
//! cargo run --example frequency_eval

use wstereo::freqeval::{convergence_trace, epe_split, frequency_mask, trace_csv};
use wstereo::io::{synth_pair, DisparityField, SynthSpec, Texture};
use wstereo::Tensor;

fn main() -> wstereo::Result<()> {
    let spec = SynthSpec {
        width: 64,
        height: 48,
        disparity_field: DisparityField::LinearRamp { start: 1.0, end: 5.0 },
        dot_density: 0.5,
        texture: Texture::BandlimitedNoise,
        seed: 4,
    };
    let pair = synth_pair(&spec)?;
    let mask = frequency_mask(&pair.left)?;
    println!("edge pixels {} of {}", mask.count(), mask.mask.len());
    for row in mask.mask.chunks(mask.width).take(12) {
        println!("  {}", row.iter().map(|&m| if m { '#' } else { '.' }).collect::<String>());
    }

    let gt = &pair.gt.values;
    // a sequence whose errors shrink everywhere but faster away from edges
    let preds: Vec<Tensor> = (1..=4)
        .map(|k| {
            let (eh, el) = (2.0 / k as f32, 1.0 / (k * k) as f32);
            Tensor::new(
                gt.shape().to_vec(),
                gt.data().iter().zip(&mask.mask).map(|(g, &m)| g + if m { eh } else { el }).collect(),
            )
        })
        .collect::<wstereo::Result<_>>()?;
    let m = epe_split(preds.last().unwrap(), gt, &mask, Some(&pair.gt.valid))?;
    println!("{}", serde_json::to_string_pretty(&m).unwrap());
    print!("{}", trace_csv(&convergence_trace(&preds, gt, &mask, Some(&pair.gt.valid))?));
    Ok(())
}
