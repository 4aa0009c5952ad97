//! The three adverse capture conditions.

use cjade_nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::generate::{hsv_to_rgb, ValueNoise};
use super::{mix_seed, Condition, DatasetError, SampleRecord};
use crate::image::rotate_reflect;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub low_light_factor: f64,
    pub low_light_sigma: f64,
    pub max_angle_degrees: f64,
    /// Fixes the DifferentAngle rotation instead of drawing it.
    #[serde(default)]
    pub forced_angle: Option<f64>,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            low_light_factor: 0.4,
            low_light_sigma: 0.02,
            max_angle_degrees: 30.0,
            forced_angle: None,
        }
    }
}

fn low_light(img: &Tensor, factor: f64, sigma: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            (v as f64 * factor + n).clamp(0.0, 1.0) as f32
        })
        .collect();
    Tensor::new(img.shape().to_vec(), data).expect("same shape")
}

/// Seeded high-frequency clutter: two octaves of value noise in a random
/// hue, plus fine stripes.
pub fn textured_background(size: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let fine = ValueNoise::new(12, rng);
    let finer = ValueNoise::new(24, rng);
    let hue = rng.random::<f64>();
    let hue2 = (hue + rng.random_range(0.2..0.8)).rem_euclid(1.0);
    let sat = rng.random_range(0.02..0.1);
    let stripes = rng.random_range(6.0..12.0);
    let (st, ct) = rng.random_range(0.0..std::f64::consts::PI).sin_cos();
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5) / size as f64;
            let v = (y as f64 + 0.5) / size as f64;
            let n = 0.6 * fine.at(u, v) + 0.4 * finer.at(u, v);
            let stripe =
                0.5 + 0.5 * (2.0 * std::f64::consts::PI * stripes * (u * ct + v * st)).sin();
            let h = if stripe > 0.5 { hue } else { hue2 };
            let value = 0.4 + 0.35 * n + 0.1 * (stripe - 0.5);
            let rgb = hsv_to_rgb(h, sat, value.clamp(0.0, 1.0));
            for (c, &ch) in rgb.iter().enumerate() {
                data[c * plane + y * size + x] = ch as f32;
            }
        }
    }
    Tensor::new(vec![3, size, size], data).expect("background shape")
}

/// Centred elliptical foreground mask with a soft edge, values in `[0, 1]`.
pub fn ellipse_mask(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = rng.random_range(0.40..0.47);
    let b = rng.random_range(0.36..0.44);
    let edge = 0.08;
    (0..size * size)
        .map(|i| {
            let u = ((i % size) as f64 + 0.5) / size as f64 - 0.5;
            let v = ((i / size) as f64 + 0.5) / size as f64 - 0.5;
            let r = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
            // 1 inside, 0 outside, linear ramp across the edge band
            ((1.0 + edge - r) / (2.0 * edge)).clamp(0.0, 1.0)
        })
        .collect()
}

fn composite(img: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    let size = img.shape()[1];
    let bg = textured_background(size, rng);
    let mask = ellipse_mask(size, rng);
    let plane = size * size;
    Tensor::from_fn(img.shape(), |i| {
        let m = mask[i % plane] as f32;
        m * img.data()[i] + (1.0 - m) * bg.data()[i]
    })
}

/// Applies `condition` to a Normal sample.
pub fn perturb_with(
    sample: &SampleRecord,
    condition: Condition,
    config: &PerturbConfig,
) -> Result<SampleRecord, DatasetError> {
    if sample.condition != Condition::Normal {
        return Err(DatasetError::DoublePerturbation(sample.condition));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[sample.seed, condition.code() as u64]));
    let image = match condition {
        Condition::Normal => sample.image.clone(),
        Condition::LowLight => low_light(
            &sample.image,
            config.low_light_factor,
            config.low_light_sigma,
            &mut rng,
        ),
        Condition::ComplexBackground => composite(&sample.image, &mut rng),
        Condition::DifferentAngle => {
            let m = config.max_angle_degrees;
            let angle = config
                .forced_angle
                .unwrap_or_else(|| rng.random_range(-m..=m));
            let r = rotate_reflect(&sample.image, angle);
            r.map(|v| v.clamp(0.0, 1.0))
        }
    };
    Ok(SampleRecord {
        image,
        condition,
        ..sample.clone()
    })
}

pub fn perturb(sample: &SampleRecord, condition: Condition) -> Result<SampleRecord, DatasetError> {
    perturb_with(sample, condition, &PerturbConfig::default())
}
