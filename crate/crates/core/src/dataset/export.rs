//! 8-bit image dumps as binary PPM (`P6`), readable by common viewers and
//! convertible to PNG losslessly.

use std::path::Path;

use cjade_nn::Tensor;

use super::DatasetError;

/// Quantizes a `[3, H, W]` image in `[0, 1]` to interleaved 8-bit RGB.
pub fn to_rgb8(img: &Tensor) -> Vec<u8> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let plane = h * w;
    let d = img.data();
    let mut out = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn encode_ppm(img: &Tensor) -> Vec<u8> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(to_rgb8(img));
    out
}

fn bad(msg: &str) -> DatasetError {
    DatasetError::Manifest(format!("not a binary PPM image: {msg}"))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor, DatasetError> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
    }
    pos += 1;
    if fields[0] != "P6" {
        return Err(bad("magic"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("dimension"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 || w == 0 || h == 0 || w > 4096 || h > 4096 {
        return Err(bad("unsupported dimensions or depth"));
    }
    let body = bytes
        .get(pos..pos + 3 * w * h)
        .ok_or_else(|| bad("truncated pixels"))?;
    let plane = w * h;
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / plane, i % plane);
        body[p * 3 + c] as f32 / 255.0
    }))
}

pub fn write_ppm(img: &Tensor, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    std::fs::write(path, encode_ppm(img))?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor, DatasetError> {
    decode_ppm(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_exact_on_8bit_values() {
        let img = Tensor::from_fn(&[3, 5, 7], |i| ((i * 13) % 256) as f32 / 255.0);
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-6);
        assert_eq!(&encode_ppm(&img)[..11], b"P6\n7 5\n255\n");
    }

    #[test]
    fn malformed_inputs_rejected() {
        assert!(decode_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\0\0").is_err());
        assert!(decode_ppm(b"").is_err());
        assert!(decode_ppm(b"P6 # c\n1 1 255\n\x01\x02\x03").is_ok());
    }
}
