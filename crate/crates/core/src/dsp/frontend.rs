use serde::{Deserialize, Serialize};

use super::{log_mel, mel_filterbank, stft_magnitude, MelFilterbank, Normalization, Spectrogram, StftParams};
use crate::audio_io::{resample, AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::Result;

/// Waveform to log-mel settings, the `dsp` section of the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub sample_rate_hz: u32,
    pub stft: StftParams,
    pub n_mels: usize,
    pub f_min_hz: f64,
    /// `None` means Nyquist.
    pub f_max_hz: Option<f64>,
    pub normalization: Normalization,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
            stft: StftParams::default(),
            n_mels: 128,
            f_min_hz: 0.0,
            f_max_hz: None,
            normalization: Normalization::PerClipStandardize,
        }
    }
}

/// Resample, STFT and mel projection with the filterbank built once.
#[derive(Debug, Clone)]
pub struct Featurizer {
    cfg: FeatureConfig,
    fb: MelFilterbank,
}

impl Featurizer {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.stft.validate(cfg.sample_rate_hz)?;
        let f_max = cfg.f_max_hz.unwrap_or(cfg.sample_rate_hz as f64 / 2.0);
        let fb = mel_filterbank(
            cfg.n_mels,
            cfg.stft.fft_len(cfg.sample_rate_hz),
            cfg.sample_rate_hz,
            cfg.f_min_hz,
            f_max,
        )?;
        Ok(Self { cfg, fb })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn log_mel(&self, clip: &AudioClip) -> Result<Spectrogram> {
        let clip = resample(clip, self.cfg.sample_rate_hz)?;
        log_mel(&stft_magnitude(&clip, &self.cfg.stft)?, &self.fb)
    }
}
