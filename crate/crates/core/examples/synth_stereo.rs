//! Synthesizes a two-plane stereo pair, writes it as PFM files and prints
//! where the ground truth is invalid.
//!
//! cargo run --example synth_stereo -- [out_dir]

use std::path::PathBuf;

use wstereo::io::{read_pfm, synth_pair, write_pfm, write_pfm_image, DisparityField, SynthSpec, Texture};

fn main() -> wstereo::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("wstereo_synth"));
    let spec = SynthSpec {
        width: 96,
        height: 32,
        disparity_field: DisparityField::TwoPlane { left: 2.0, right: 6.0 },
        dot_density: 0.5,
        texture: Texture::Dots,
        seed: 11,
    };
    let pair = synth_pair(&spec)?;
    std::fs::create_dir_all(&out)?;
    write_pfm_image(&out.join("left.pfm"), &pair.left)?;
    write_pfm_image(&out.join("right.pfm"), &pair.right)?;
    write_pfm(&out.join("disp.pfm"), &pair.gt)?;

    let back = read_pfm(&out.join("disp.pfm"))?;
    assert_eq!(back, pair.gt);
    let (h, w) = pair.gt.dims();
    let invalid_cols: Vec<usize> = (0..w).filter(|&x| !pair.gt.valid[x]).collect();
    println!("wrote {}x{} pair to {}", w, h, out.display());
    println!("valid pixels {}/{}", pair.gt.num_valid(), w * h);
    println!("invalid columns in row 0: {invalid_cols:?}");
    Ok(())
}
