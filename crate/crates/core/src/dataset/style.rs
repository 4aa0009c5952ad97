//! Per-class appearance parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStyle {
    /// Hue in `[0, 1)`.
    pub base_hue: f64,
    /// Half-width of the per-sample uniform hue offset.
    pub hue_jitter: f64,
    pub saturation: f64,
    pub value: f64,
    /// Vein cycles across the image.
    pub vein_frequency: f64,
    /// Fractional darkening along veins, `[0, 1]`.
    pub vein_contrast: f64,
    /// Strength of the radial glow/falloff, `[0, 1]`.
    pub translucency: f64,
    /// Fraction of pixels carrying a dark inclusion.
    pub speckle_density: f64,
}

impl ClassStyle {
    /// A style with every texture term switched off.
    pub fn flat(hue: f64, saturation: f64, value: f64) -> Self {
        Self {
            base_hue: hue,
            hue_jitter: 0.0,
            saturation,
            value,
            vein_frequency: 1.0,
            vein_contrast: 0.0,
            translucency: 0.0,
            speckle_density: 0.0,
        }
    }
}

// Five colour families, each split into a calm and a busy texture variant.
const FAMILY_HUE: [f64; 5] = [0.33, 0.45, 0.22, 0.11, 0.76];
const FAMILY_SAT: [f64; 5] = [0.55, 0.45, 0.50, 0.50, 0.30];
const FAMILY_VAL: [f64; 5] = [0.70, 0.62, 0.78, 0.80, 0.75];

/// `(vein_frequency, vein_contrast, translucency, speckle_density)`
const VARIANT: [(f64, f64, f64, f64); 2] = [(3.0, 0.50, 0.50, 0.03), (4.0, 0.50, 0.42, 0.03)];

pub const HUE_JITTER: f64 = 0.045;

/// Deterministic style for `class_id`; the master seed nudges every
/// parameter slightly without changing the family layout.
pub fn class_style(class_id: usize, master_seed: u64) -> ClassStyle {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[master_seed, 0x5747_4c45, class_id as u64]));
    let slot = class_id % 10;
    let family = slot / 2;
    let (freq, contrast, trans, speckle) = VARIANT[slot % 2];
    // classes beyond ten reuse the layout with a rotated hue
    let rotation = (class_id / 10) as f64 * 0.047;
    let mut nudge = |w: f64| rng.random_range(-w..=w);
    ClassStyle {
        base_hue: (FAMILY_HUE[family] + rotation + nudge(0.005)).rem_euclid(1.0),
        hue_jitter: HUE_JITTER,
        saturation: FAMILY_SAT[family] + nudge(0.02),
        value: FAMILY_VAL[family] + nudge(0.02),
        vein_frequency: freq * (1.0 + nudge(0.05)),
        vein_contrast: contrast + nudge(0.02),
        translucency: trans + nudge(0.02),
        speckle_density: speckle * (1.0 + nudge(0.1)),
    }
}
