//! Binary PGM (P5) and PPM (P6), 8-bit.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::tensor::Tensor;

/// Decode to `C×H×W` with C = 1 (P5) or 3 (P6), values in [0, 255].
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let bad = |m: &str| Error::Format(format!("pnm: {m}"));
    let mut pos = 0;
    let mut tokens: Vec<&str> = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
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
    if pos >= bytes.len() {
        return Err(bad("missing payload"));
    }
    pos += 1;
    let c = match tokens[0] {
        "P5" => 1,
        "P6" => 3,
        m => return Err(bad(&format!("unsupported magic {m:?}"))),
    };
    let w: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let maxval: u32 = tokens[3].parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad(&format!("only maxval 255 is supported, found {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(bad("empty image"));
    }
    let payload = &bytes[pos..];
    if payload.len() != w * h * c {
        return Err(bad(&format!("expected {} payload bytes, found {}", w * h * c, payload.len())));
    }
    let mut data = vec![0f32; c * h * w];
    for (i, &b) in payload.iter().enumerate() {
        data[(i % c) * h * w + i / c] = b as f32;
    }
    Tensor::new([c, h, w], data)
}

/// Encode a `C×H×W` image (C = 1 or 3). Values are rounded and must lie in [0, 255].
pub fn encode_pnm(img: &Tensor) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(Error::dim(format!("pnm: expected 1xHxW or 3xHxW, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for px in 0..h * w {
        for ch in 0..c {
            let v = img.data()[ch * h * w + px].round();
            if !(0.0..=255.0).contains(&v) {
                return Err(Error::Range(format!("pnm: value {v} outside [0, 255]")));
            }
            out.push(v as u8);
        }
    }
    Ok(out)
}

pub fn read_pnm(path: &Path) -> Result<Tensor> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn write_pnm(path: &Path, img: &Tensor) -> Result<()> {
    atomic_write(path, &encode_pnm(img)?)
}

/// Read a PGM/PPM or a PFM image, chosen by the file's magic bytes.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    match bytes.get(..2) {
        Some(b"Pf") | Some(b"PF") => crate::io::read_pfm_image(path),
        _ => decode_pnm(&bytes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_with_comment() {
        let img = Tensor::from_fn([3, 2, 2], |i| (i * 20) as f32);
        let bytes = encode_pnm(&img).unwrap();
        assert_eq!(&bytes[..11], b"P6\n2 2\n255\n");
        assert_eq!(decode_pnm(&bytes).unwrap(), img);
        let mut commented = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        commented.extend_from_slice(&[3, 250]);
        assert_eq!(decode_pnm(&commented).unwrap().data(), &[3.0, 250.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode_pnm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pnm(b"P5\n2 2\n255\n\0").is_err());
        assert!(decode_pnm(b"P5\n1 1\n65535\n\0\0").is_err());
        assert!(encode_pnm(&Tensor::full([1, 1, 1], 300.0)).is_err());
    }
}
