//! Portable float maps. `Pf` is one channel, `PF` three; a negative scale
//! means little-endian payload. Rows are stored bottom-up.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{atomic_write, DisparityMap};
use crate::tensor::Tensor;

struct Decoded {
    channels: usize,
    width: usize,
    height: usize,
    /// Top-down, interleaved.
    data: Vec<f32>,
}

fn decode(bytes: &[u8]) -> Result<Decoded> {
    let bad = |m: &str| Error::Format(format!("pfm: {m}"));
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing payload"));
    }
    pos += 1;
    let channels = match tokens[0] {
        "Pf" => 1,
        "PF" => 3,
        m => return Err(bad(&format!("unknown magic {m:?}"))),
    };
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    if width == 0 || height == 0 {
        return Err(bad("empty image"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be a nonzero number"));
    }
    let little = scale < 0.0;
    let row = width * channels;
    let need = row * height * 4;
    let payload = &bytes[pos..];
    if payload.len() != need {
        return Err(bad(&format!("expected {need} payload bytes, found {}", payload.len())));
    }
    let mut data = vec![0f32; row * height];
    for (i, c) in payload.chunks_exact(4).enumerate() {
        let b = [c[0], c[1], c[2], c[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (y, x) = (i / row, i % row);
        data[(height - 1 - y) * row + x] = v;
    }
    Ok(Decoded {
        channels,
        width,
        height,
        data,
    })
}

fn encode(channels: usize, width: usize, height: usize, top_down: &[f32]) -> Vec<u8> {
    let magic = if channels == 1 { "Pf" } else { "PF" };
    let mut out = format!("{magic}\n{width} {height}\n-1.0\n").into_bytes();
    let row = width * channels;
    out.reserve(top_down.len() * 4);
    for y in (0..height).rev() {
        for v in &top_down[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Grayscale disparity map. NaN and infinite values become invalid pixels.
pub fn read_pfm(path: &Path) -> Result<DisparityMap> {
    let d = decode(&std::fs::read(path)?)?;
    if d.channels != 1 {
        return Err(Error::Format("pfm: color (PF) file cannot hold a disparity map".into()));
    }
    let valid: Vec<bool> = d.data.iter().map(|v| v.is_finite()).collect();
    let values = d
        .data
        .iter()
        .map(|&v| if v.is_finite() { v } else { 0.0 })
        .collect();
    DisparityMap::new(Tensor::new([d.height, d.width], values)?, valid)
}

/// Invalid pixels are written as NaN.
pub fn write_pfm(path: &Path, map: &DisparityMap) -> Result<()> {
    let (h, w) = map.dims();
    let data: Vec<f32> = map
        .values
        .data()
        .iter()
        .zip(&map.valid)
        .map(|(&v, &ok)| if ok { v } else { f32::NAN })
        .collect();
    atomic_write(path, &encode(1, w, h, &data))
}

/// Any float image as `C×H×W` with C = 1 or 3.
pub fn read_pfm_image(path: &Path) -> Result<Tensor> {
    let d = decode(&std::fs::read(path)?)?;
    let (c, h, w) = (d.channels, d.height, d.width);
    let mut planar = vec![0f32; c * h * w];
    for (i, &v) in d.data.iter().enumerate() {
        let (px, ch) = (i / c, i % c);
        planar[ch * h * w + px] = v;
    }
    Tensor::new([c, h, w], planar)
}

pub fn write_pfm_image(path: &Path, img: &Tensor) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(Error::dim(format!("pfm: expected 1xHxW or 3xHxW, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut inter = vec![0f32; c * h * w];
    for ch in 0..c {
        for px in 0..h * w {
            inter[px * c + ch] = img.data()[ch * h * w + px];
        }
    }
    atomic_write(path, &encode(c, w, h, &inter))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_for_small_map() {
        let bytes = encode(1, 3, 2, &[0.0; 6]);
        assert!(bytes.starts_with(b"Pf\n3 2\n-1.0\n"));
        assert_eq!(bytes.len(), 12 + 24);
    }

    #[test]
    fn rows_are_bottom_up() {
        let bytes = encode(1, 1, 2, &[1.0, 2.0]);
        assert_eq!(&bytes[12..16], &2f32.to_le_bytes());
        let d = decode(&bytes).unwrap();
        assert_eq!(d.data, [1.0, 2.0]);
    }

    #[test]
    fn big_endian_payload() {
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        bytes.extend_from_slice(&(-3f32).to_be_bytes());
        assert_eq!(decode(&bytes).unwrap().data, [1.5, -3.0]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(decode(b"P5\n1 1\n-1.0\n\0\0\0\0").is_err());
        assert!(decode(b"Pf\n1 1\n-1.0\n\0\0\0").is_err());
        assert!(decode(b"Pf\n1 1\n0\n\0\0\0\0").is_err());
        assert!(decode(b"Pf\n1").is_err());
    }
}
