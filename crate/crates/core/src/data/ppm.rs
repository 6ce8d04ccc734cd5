//! Binary PPM (P6, 8-bit) images as `[3×H×W]` tensors in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::Tensor;

/// Quantize to 8 bits (round to nearest, clamped) and encode.
pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("encode_ppm", s, &[3, 0, 0]));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    for i in 0..h * w {
        for c in 0..3 {
            out.push((d[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8], origin: &str) -> Result<Tensor> {
    let err = |offset: usize, msg: &str| Error::Parse {
        path: origin.to_string(),
        offset,
        msg: msg.to_string(),
    };
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
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
            return Err(err(pos, "truncated header"));
        }
        fields.push((start, std::str::from_utf8(&bytes[start..pos]).unwrap_or("")));
    }
    if fields[0].1 != "P6" {
        return Err(err(0, "expected P6 magic"));
    }
    let mut dims = [0usize; 3];
    for (d, &(at, text)) in dims.iter_mut().zip(&fields[1..]) {
        *d = text
            .parse()
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| err(at, "expected a positive integer"))?;
    }
    let [w, h, maxval] = dims;
    if maxval != 255 {
        return Err(err(fields[3].0, "only 8-bit images (maxval 255) are supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(err(bytes.len(), "truncated pixel data"));
    }
    let raster = &bytes[pos..pos + need];
    let mut data = vec![0.0; need];
    for i in 0..w * h {
        for c in 0..3 {
            data[c * h * w + i] = raster[3 * i + c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub fn write_image(img: &Tensor, path: &Path) -> Result<()> {
    write_atomic(path, &encode_ppm(img)?)
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn quantized_round_trip_is_exact() {
        let mut rng = SplitMix64::new(3);
        let q: Vec<f64> = (0..3 * 5 * 4).map(|_| rng.below(256) as f64 / 255.0).collect();
        let img = Tensor::new(vec![3, 5, 4], q).unwrap();
        let bytes = encode_ppm(&img).unwrap();
        assert!(bytes.starts_with(b"P6\n4 5\n255\n"));
        assert_eq!(decode_ppm(&bytes, "m").unwrap(), img);
    }

    #[test]
    fn malformed_inputs() {
        let img = Tensor::full(&[3, 2, 2], 0.5);
        let bytes = encode_ppm(&img).unwrap();
        match decode_ppm(&bytes[..bytes.len() - 1], "m").unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, bytes.len() - 1),
            e => panic!("{e}"),
        }
        assert!(matches!(decode_ppm(b"P5\n1 1\n255\n\0", "m"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(decode_ppm(b"P6\n1 x\n255\n", "m"), Err(Error::Parse { offset: 5, .. })));
        assert!(matches!(decode_ppm(b"P6\n1", "m"), Err(Error::Parse { .. })));
        let commented = b"P6\n# made by hand\n1 1\n255\n\xff\x00\x80";
        let t = decode_ppm(commented, "m").unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 128.0 / 255.0]);
    }
}
