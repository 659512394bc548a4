//! KITTI-style 16-bit disparity PNGs: stored value = round(256·d), 0 = invalid.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{atomic_write, DisparityMap};
use crate::tensor::Tensor;

fn fmt_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("png16: {e}"))
}

pub fn decode_png16(bytes: &[u8]) -> Result<DisparityMap> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(fmt_err)?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Sixteen {
        return Err(fmt_err(format!("expected 16-bit depth, found {:?}", info.bit_depth)));
    }
    if info.color_type != png::ColorType::Grayscale {
        return Err(fmt_err(format!("expected single-channel image, found {:?}", info.color_type)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| fmt_err("image too large"))?];
    let frame = reader.next_frame(&mut buf).map_err(fmt_err)?;
    let raw = &buf[..frame.buffer_size()];
    let stored: Vec<u16> = raw.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    let values = stored.iter().map(|&s| s as f32 / 256.0).collect();
    let valid = stored.iter().map(|&s| s != 0).collect();
    DisparityMap::new(Tensor::new([h, w], values)?, valid)
}

pub fn encode_png16(map: &DisparityMap) -> Result<Vec<u8>> {
    let (h, w) = map.dims();
    let mut raw = Vec::with_capacity(h * w * 2);
    for (&v, &ok) in map.values.data().iter().zip(&map.valid) {
        let s = if ok {
            let q = (v as f64 * 256.0).round();
            if !(0.0..=65535.0).contains(&q) {
                return Err(Error::Range(format!("png16: disparity {v} outside [0, 255.996]")));
            }
            q as u16
        } else {
            0
        };
        raw.extend_from_slice(&s.to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut wr = enc.write_header().map_err(fmt_err)?;
        wr.write_image_data(&raw).map_err(fmt_err)?;
    }
    Ok(out)
}

pub fn read_png16(path: &Path) -> Result<DisparityMap> {
    decode_png16(&std::fs::read(path)?)
}

pub fn write_png16(path: &Path, map: &DisparityMap) -> Result<()> {
    atomic_write(path, &encode_png16(map)?)
}
