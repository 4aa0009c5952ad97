//! Symmetric 8-bit feature quantisation.
//!
//! `scale = 2·max|v|/255`, `q = round_ties_even((v + max)/scale)` clamped to
//! `[0, 255]`, and `v' = (q − 127.5)·scale`. The all-zero vector is sent as
//! every `q = 128` with `scale = 1`; no other input produces that pattern,
//! because the largest-magnitude element always lands on 0 or 255.

use super::messages::QuantizedFeatures;
use super::ProtocolError;

pub const MAX_MAGNITUDE: f32 = 1e6;
const ZERO_CODE: u8 = 128;

pub fn quantize_features(v: &[f32]) -> Result<QuantizedFeatures, ProtocolError> {
    if let Some(bad) = v.iter().find(|x| !x.is_finite() || x.abs() > MAX_MAGNITUDE) {
        return Err(ProtocolError::InvalidFeatures(format!(
            "feature value {bad} is not a finite number within ±{MAX_MAGNITUDE}"
        )));
    }
    let max = v.iter().fold(0.0f32, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return Ok(QuantizedFeatures {
            scale: 1.0,
            values: vec![ZERO_CODE; v.len()],
        });
    }
    let scale = (max as f64 * 2.0 / 255.0) as f32;
    // quantise against the transmitted scale so the decoder's grid is exact
    let s = scale as f64;
    let offset = 127.5 * s;
    let values = v
        .iter()
        .map(|&x| {
            ((x as f64 + offset) / s)
                .round_ties_even()
                .clamp(0.0, 255.0) as u8
        })
        .collect();
    Ok(QuantizedFeatures { scale, values })
}

pub fn dequantize(q: &QuantizedFeatures) -> Vec<f32> {
    if q.values.iter().all(|&c| c == ZERO_CODE) {
        return vec![0.0; q.values.len()];
    }
    let s = q.scale as f64;
    q.values
        .iter()
        .map(|&c| ((c as f64 - 127.5) * s) as f32)
        .collect()
}
