//! Three-level Haar pyramid of a synthetic image: per-band energy and the
//! cascaded reconstruction error.
//!
//! cargo run --example dwt_pyramid

use wstereo::io::{synth_pair, SynthSpec, Texture};
use wstereo::wavelet::build_pyramid;
use wstereo::Tensor;

fn main() -> wstereo::Result<()> {
    let mut spec = SynthSpec::random_dots(64, 32, 2.0, 5);
    spec.texture = Texture::BandlimitedNoise;
    let left = synth_pair(&spec)?.left;
    let img: Tensor<f64> = left.cast::<f64>().reshape([1, 3, 32, 64])?;

    let pyr = build_pyramid(&img, 3)?;
    let total = img.sum_squares();
    println!("input energy {total:.1}");
    for (i, b) in pyr.levels.iter().enumerate() {
        let e = |t: &Tensor<f64>| t.sum_squares() / total;
        println!(
            "level {}  {:?}  LH {:.4}  HL {:.4}  HH {:.4}",
            i + 1,
            b.ll.shape(),
            e(&b.lh),
            e(&b.hl),
            e(&b.hh)
        );
    }
    let deepest = pyr.level(3)?.ll.sum_squares() / total;
    println!("LL3 share {deepest:.4}");
    println!("reconstruction max abs err {:.3e}", pyr.reconstruct()?.max_abs_diff(&img));
    Ok(())
}
