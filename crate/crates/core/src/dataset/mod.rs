//! Procedural jade-image dataset and its capture conditions.

pub mod export;
pub mod generate;
pub mod perturb;
pub mod style;

use std::collections::BTreeSet;
use std::path::Path;

use cjade_nn::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use generate::generate_sample;
pub use perturb::{perturb, perturb_with, PerturbConfig};
pub use style::{class_style, ClassStyle};

use crate::image::flip_horizontal;
use crate::models::io::canonical_json;
use crate::models::Labeled;

pub const GENERATOR_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("sample already carries condition {0:?}; perturbations do not stack")]
    DoublePerturbation(Condition),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    Normal,
    LowLight,
    ComplexBackground,
    DifferentAngle,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Normal,
        Condition::LowLight,
        Condition::ComplexBackground,
        Condition::DifferentAngle,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Normal => "Normal",
            Condition::LowLight => "LowLight",
            Condition::ComplexBackground => "ComplexBackground",
            Condition::DifferentAngle => "DifferentAngle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub image: Tensor,
    pub label: usize,
    pub condition: Condition,
    pub seed: u64,
}

impl Labeled for SampleRecord {
    fn input(&self) -> &Tensor {
        &self.image
    }
    fn label(&self) -> usize {
        self.label
    }
}

/// SplitMix64 over a sequence of words; used to derive independent streams.
pub fn mix_seed(words: &[u64]) -> u64 {
    let mut state = 0x243f_6a88_85a3_08d3u64;
    for &w in words {
        state ^= w;
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        state = z ^ (z >> 31);
    }
    state
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_count: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub split: SplitFractions,
    pub master_seed: u64,
    pub generator_version: u32,
    /// Augmented copies added per training sample.
    pub augment_copies: usize,
    #[serde(default)]
    pub perturb: PerturbConfig,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            class_count: 10,
            samples_per_class: 200,
            image_size: 32,
            split: SplitFractions {
                train: 0.70,
                val: 0.15,
                test: 0.15,
            },
            master_seed: 20_240_601,
            generator_version: GENERATOR_VERSION,
            augment_copies: 1,
            perturb: PerturbConfig::default(),
        }
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let f = &self.split;
        if [f.train, f.val, f.test]
            .iter()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(DatasetError::Manifest(
                "split fractions must lie in [0, 1]".into(),
            ));
        }
        if (f.train + f.val + f.test - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Manifest(format!(
                "split fractions sum to {}, not 1",
                f.train + f.val + f.test
            )));
        }
        if self.class_count < 2 {
            return Err(DatasetError::Manifest("need at least two classes".into()));
        }
        if !crate::models::arch::SUPPORTED_INPUT_SIZES.contains(&self.image_size) {
            return Err(DatasetError::Manifest(format!(
                "image size {} unsupported",
                self.image_size
            )));
        }
        if self.generator_version != GENERATOR_VERSION {
            return Err(DatasetError::Manifest(format!(
                "generator version {} unsupported",
                self.generator_version
            )));
        }
        Ok(())
    }

    /// Per-class split sizes `(train, val, test)`.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.samples_per_class;
        let train = (self.split.train * n as f64).round() as usize;
        let val = ((self.split.val * n as f64).round() as usize).min(n - train.min(n));
        (train.min(n), val, n - train.min(n) - val)
    }

    /// SHA-256 over the canonical JSON of every generation parameter.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(canonical_json(self).as_bytes()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        std::fs::write(path, canonical_json(self))?;
        Ok(())
    }

    pub fn sample_seed(&self, class_id: usize, index: usize) -> u64 {
        mix_seed(&[self.master_seed, 0x5341_4d50, class_id as u64, index as u64])
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// Normal samples followed by their augmented copies.
    pub train: Vec<SampleRecord>,
    /// Every held-out sample under each of the four conditions, grouped by
    /// condition in `Condition::ALL` order.
    pub val: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[SampleRecord] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// SHA-256 over every label, condition, seed and pixel in split order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.manifest.hash().as_bytes());
        for (tag, split) in [(0u8, &self.train), (1, &self.val), (2, &self.test)] {
            h.update([tag]);
            h.update((split.len() as u64).to_le_bytes());
            for s in split {
                h.update((s.label as u64).to_le_bytes());
                h.update([s.condition.code()]);
                h.update(s.seed.to_le_bytes());
                for v in s.image.data() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex(&h.finalize())
    }
}

/// Seeded horizontal flip and brightness scaling in `[0.9, 1.1]`.
fn augmented_copy(sample: &SampleRecord, copy: usize) -> SampleRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[sample.seed, 0x4155_4721, copy as u64]));
    let flipped = if rng.random_bool(0.5) {
        flip_horizontal(&sample.image)
    } else {
        sample.image.clone()
    };
    let gain = rng.random_range(0.9..=1.1f32);
    SampleRecord {
        image: flipped.map(|v| (v * gain).clamp(0.0, 1.0)),
        ..sample.clone()
    }
}

/// Deterministic stratified splits of a freshly generated dataset.
pub fn build_dataset(manifest: &DatasetManifest) -> Result<Dataset, DatasetError> {
    manifest.validate()?;
    let (n_train, n_val, _) = manifest.split_counts();
    let mut train = Vec::new();
    let mut held: [Vec<SampleRecord>; 2] = [Vec::new(), Vec::new()];
    for class_id in 0..manifest.class_count {
        let style = class_style(class_id, manifest.master_seed);
        let mut order: Vec<usize> = (0..manifest.samples_per_class).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(&[manifest.master_seed, 0x5350, class_id as u64]));
        order.shuffle(&mut rng);
        for (rank, &index) in order.iter().enumerate() {
            let seed = manifest.sample_seed(class_id, index);
            let s = generate_sample(&style, class_id, seed, manifest.image_size);
            if rank < n_train {
                train.push(s);
            } else if rank < n_train + n_val {
                held[0].push(s);
            } else {
                held[1].push(s);
            }
        }
    }
    let copies: Vec<SampleRecord> = (0..manifest.augment_copies)
        .flat_map(|k| train.iter().map(move |s| augmented_copy(s, k)))
        .collect();
    train.extend(copies);
    let expand = |base: &[SampleRecord]| -> Result<Vec<SampleRecord>, DatasetError> {
        let mut out = Vec::with_capacity(base.len() * 4);
        for c in Condition::ALL {
            for s in base {
                out.push(perturb_with(s, c, &manifest.perturb)?);
            }
        }
        Ok(out)
    };
    let [val, test] = held;
    Ok(Dataset {
        manifest: manifest.clone(),
        train,
        val: expand(&val)?,
        test: expand(&test)?,
    })
}

/// `(class, seed)` identities of the base samples in a split.
pub fn identities(samples: &[SampleRecord]) -> BTreeSet<(usize, u64)> {
    samples.iter().map(|s| (s.label, s.seed)).collect()
}
