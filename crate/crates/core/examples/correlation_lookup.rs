//! All-pairs correlation of a feature map against a shifted copy of itself,
//! then a windowed lookup around a few candidate disparities. The response
//! peaks at the true shift.
//!
//! cargo run --example correlation_lookup

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wstereo::autodiff::Tape;
use wstereo::correlation::{build_volume, lookup};
use wstereo::Tensor;

const SHIFT: usize = 3;

fn main() -> wstereo::Result<()> {
    let (c, h, w) = (8, 4, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let right = Tensor::<f64>::from_fn([1, c, h, w], |_| rng.random_range(-1.0..1.0));
    // left(x) = right(x - SHIFT)
    let left = Tensor::from_fn([1, c, h, w], |i| {
        let x = i % w;
        if x >= SHIFT {
            right.data()[i - SHIFT]
        } else {
            0.0
        }
    });

    let mut t = Tape::<f64>::new();
    let fl = t.constant(left)?;
    let fr = t.constant(right)?;
    let vol = build_volume(&mut t, fl, fr, 2)?;
    let radius = 4;
    for guess in [0.0, 1.5, 3.0] {
        let d = t.constant(Tensor::full([1, 1, h, w], guess))?;
        let corr = lookup(&mut t, &vol, d, radius)?;
        // level 0 channels, pixel (row 1, col 12); offset o samples right column 12 - d + o
        let v = t.value(corr);
        let row: Vec<String> = (0..=2 * radius)
            .map(|o| format!("{:+.2}", v.at4(0, o, 1, 12)))
            .collect();
        let best = (0..=2 * radius)
            .max_by(|&a, &b| v.at4(0, a, 1, 12).total_cmp(&v.at4(0, b, 1, 12)))
            .unwrap();
        println!(
            "d = {guess:.1}: [{}]  peak at offset {:+} -> disparity {:.1}",
            row.join(" "),
            best as i64 - radius as i64,
            guess - (best as f64 - radius as f64)
        );
    }
    Ok(())
}
