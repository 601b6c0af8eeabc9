//! Training-time augmentation: waveform transforms, SpecAugment-style
//! warping and masking, and mixup.

mod mixup;
mod spec;
mod waveform;

pub use mixup::{mixup, sample_lambda, MixupConfig};
pub use spec::{apply_freq_mask, apply_time_mask, spec_augment, time_warp, MaskFill, SpecAugConfig};
pub use waveform::{augment_waveform, apply_gain_db, pitch_shift, WaveAugConfig};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Every augmentation stage in one place, as found under `augment` in the
/// experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub waveform: WaveAugConfig,
    pub spec: SpecAugConfig,
    pub mixup: MixupConfig,
    /// Master switch; evaluation never augments regardless.
    pub enabled: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            waveform: WaveAugConfig::default(),
            spec: SpecAugConfig::default(),
            mixup: MixupConfig::default(),
            enabled: true,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.waveform.validate()?;
        self.spec.validate()?;
        self.mixup.validate()
    }
}
