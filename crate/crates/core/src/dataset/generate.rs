//! Procedural jade-like textures.

use std::f64::consts::PI;

use cjade_nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::style::ClassStyle;
use super::{Condition, SampleRecord};

/// Smoothly interpolated lattice noise in `[0, 1]` over the unit square.
pub struct ValueNoise {
    res: usize,
    grid: Vec<f64>,
}

impl ValueNoise {
    pub fn new(res: usize, rng: &mut impl Rng) -> Self {
        let n = res + 1;
        Self {
            res,
            grid: (0..n * n).map(|_| rng.random::<f64>()).collect(),
        }
    }

    pub fn at(&self, u: f64, v: f64) -> f64 {
        let fx = u.clamp(0.0, 1.0) * self.res as f64;
        let fy = v.clamp(0.0, 1.0) * self.res as f64;
        let x0 = (fx.floor() as usize).min(self.res - 1);
        let y0 = (fy.floor() as usize).min(self.res - 1);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let tx = smooth(fx - x0 as f64);
        let ty = smooth(fy - y0 as f64);
        let n = self.res + 1;
        let g = |x: usize, y: usize| self.grid[y * n + x];
        let top = g(x0, y0) * (1.0 - tx) + g(x0 + 1, y0) * tx;
        let bot = g(x0, y0 + 1) * (1.0 - tx) + g(x0 + 1, y0 + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

/// HSV (all in `[0, 1]`) to RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as usize).min(5);
    let f = h6 - sector as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Hue of an RGB triple, `None` for achromatic pixels.
pub fn rgb_hue(rgb: [f64; 3]) -> Option<f64> {
    let max = rgb.iter().cloned().fold(f64::MIN, f64::max);
    let min = rgb.iter().cloned().fold(f64::MAX, f64::min);
    let d = max - min;
    if d < 1e-9 {
        return None;
    }
    let [r, g, b] = rgb;
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    Some(h / 6.0)
}

/// Renders one sample: a smooth base colour field, turbulent sinusoidal
/// veins, a radial translucency glow and dark speckle inclusions.
pub fn render(style: &ClassStyle, seed: u64, size: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hue = style.base_hue + rng.random_range(-1.0..=1.0) * style.hue_jitter;
    let sat = (style.saturation * rng.random_range(0.85..1.15)).clamp(0.0, 1.0);
    let val = style.value * rng.random_range(0.9..1.1);
    let field = ValueNoise::new(3, &mut rng);
    let turbulence = ValueNoise::new(4, &mut rng);
    let freq = style.vein_frequency * rng.random_range(0.85..1.15);
    let (sin_t, cos_t) = rng.random_range(0.0..PI).sin_cos();
    let phase = rng.random_range(0.0..2.0 * PI);
    let cx = 0.5 + rng.random_range(-0.22..0.22);
    let cy = 0.5 + rng.random_range(-0.22..0.22);
    let radius = rng.random_range(0.35..0.5);

    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5) / size as f64;
            let v = (y as f64 + 0.5) / size as f64;
            let r = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
            let glow = (1.0 - r / radius).max(0.0).powf(1.5);
            let t = style.translucency;

            let mut value = val * (1.0 + 0.16 * (field.at(u, v) - 0.5));
            let s = (2.0 * PI * freq * (u * cos_t + v * sin_t)
                + 3.0 * (turbulence.at(u, v) - 0.5)
                + phase)
                .sin();
            let vein = (1.0 - s.abs()).powi(4);
            value *= 1.0 - style.vein_contrast * (0.3 + 0.7 * glow) * vein;
            value *= 1.0 - t + 1.5 * t * glow;
            let saturation = sat * (1.0 - 0.3 * t * glow);
            if style.speckle_density > 0.0 && rng.random::<f64>() < style.speckle_density {
                value *= rng.random_range(0.4..0.7);
            }
            let rgb = hsv_to_rgb(hue, saturation, value.clamp(0.0, 1.0));
            for (c, &ch) in rgb.iter().enumerate() {
                data[c * plane + y * size + x] = ch.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(vec![3, size, size], data).expect("render shape")
}

/// Normal-condition sample of `class_id` rendered from `seed`.
pub fn generate_sample(
    style: &ClassStyle,
    class_id: usize,
    seed: u64,
    size: usize,
) -> SampleRecord {
    SampleRecord {
        image: render(style, seed, size),
        label: class_id,
        condition: Condition::Normal,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::style::class_style;

    #[test]
    fn same_seed_same_bytes() {
        let s = class_style(4, 7);
        let a = generate_sample(&s, 4, 99, 32);
        let b = generate_sample(&s, 4, 99, 32);
        assert_eq!(a, b);
        assert_ne!(a.image, generate_sample(&s, 4, 100, 32).image);
    }

    #[test]
    fn degenerate_style_has_one_hue() {
        let mut s = ClassStyle::flat(0.31, 0.5, 0.7);
        s.vein_frequency = 4.0;
        let img = render(&s, 3, 32);
        let plane = 32 * 32;
        let d = img.data();
        let hues: Vec<f64> = (0..plane)
            .filter_map(|i| rgb_hue([d[i] as f64, d[plane + i] as f64, d[2 * plane + i] as f64]))
            .collect();
        assert_eq!(hues.len(), plane);
        let h0 = hues[0];
        assert!(hues.iter().all(|h| (h - h0).abs() < 1e-5));
    }

    #[test]
    fn pixels_in_unit_range_for_all_classes() {
        for c in 0..10 {
            let s = class_style(c, 1);
            for seed in 0..5 {
                let img = render(&s, seed, 32);
                assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn hsv_round_trip() {
        for &(h, s, v) in &[(0.1, 0.5, 0.8), (0.5, 1.0, 0.3), (0.9, 0.2, 0.6)] {
            let rgb = hsv_to_rgb(h, s, v);
            assert!((rgb_hue(rgb).unwrap() - h).abs() < 1e-9);
        }
        assert_eq!(rgb_hue([0.4, 0.4, 0.4]), None);
    }

    #[test]
    fn noise_is_bounded_and_continuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = ValueNoise::new(4, &mut rng);
        for i in 0..=100 {
            let u = i as f64 / 100.0;
            let a = n.at(u, 0.3);
            assert!((0.0..=1.0).contains(&a));
            assert!((a - n.at(u + 1e-6, 0.3)).abs() < 1e-4);
        }
    }
}
