//! Round trips through the supported file formats: PFM disparity with
//! invalid pixels, 16-bit PNG disparity, and binary PGM/PPM images.
//!
//! cargo run --example stereo_io

use wstereo::io::png16::{decode_png16, encode_png16};
use wstereo::io::pnm::{decode_pnm, encode_pnm};
use wstereo::io::{read_pfm, write_pfm, DisparityMap};
use wstereo::Tensor;

fn main() -> wstereo::Result<()> {
    let dir = tempfile::tempdir()?;
    let values = Tensor::from_fn([4, 6], |i| i as f32 * 0.75);
    let valid: Vec<bool> = (0..24).map(|i| i % 5 != 0).collect();
    let map = DisparityMap::new(values, valid)?;

    let pfm = dir.path().join("d.pfm");
    write_pfm(&pfm, &map)?;
    println!("pfm: {} bytes, round trip equal: {}", std::fs::metadata(&pfm)?.len(), read_pfm(&pfm)? == map);

    let png = encode_png16(&map)?;
    let back = decode_png16(&png)?;
    let err = back.values.max_abs_diff(&map.values);
    println!("png16: {} bytes, max err {err} (1/256 px steps), invalid kept: {}", png.len(), back.valid == map.valid);

    let gray = Tensor::from_fn([1, 3, 5], |i| (i * 17) as f32);
    let bytes = encode_pnm(&gray)?;
    println!("pgm header {:?}, round trip equal: {}", String::from_utf8_lossy(&bytes[..11]), decode_pnm(&bytes)? == gray);
    Ok(())
}
