//! Spectral front end: STFT, band energy, zero-phase smoothing, mel
//! projection and conversion of log-mel spectrograms into model inputs.

mod filter;
mod frontend;
mod input;
mod mel;
mod specfile;
mod stft;

pub use frontend::{FeatureConfig, Featurizer};
pub use filter::{butterworth_design, butterworth_lowpass, filtfilt, lfilter, IirCoeffs};
pub use input::{resize_bilinear, to_model_input, InputShape, ModelInput, Normalization};
pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz, MelFilterbank, LOG_MEL_FLOOR};
pub use specfile::{read_spec_file, read_spec_bytes, spec_file_bytes, write_spec_file};
pub use stft::{band_energy, hann_window, stft_magnitude, StftParams};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecKind {
    Magnitude,
    LogMel,
}

impl SpecKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SpecKind::Magnitude => "magnitude",
            SpecKind::LogMel => "log_mel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinAxis {
    /// Bin `k` is centered at `k * bin_hz`.
    LinearHz { bin_hz: f64 },
    Mel,
    /// Plain index; frequency mapping unknown (e.g. read back from file).
    Index,
}

/// Time-frequency array stored row-major as `[n_frames x n_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Vec<f64>,
    n_frames: usize,
    n_bins: usize,
    pub frame_rate_hz: f64,
    pub bin_axis: BinAxis,
    pub kind: SpecKind,
}

impl Spectrogram {
    pub fn new(
        values: Vec<f64>,
        n_frames: usize,
        n_bins: usize,
        frame_rate_hz: f64,
        bin_axis: BinAxis,
        kind: SpecKind,
    ) -> crate::Result<Self> {
        if values.len() != n_frames * n_bins {
            return Err(crate::Error::ShapeMismatch {
                op: "spectrogram",
                left: vec![values.len()],
                right: vec![n_frames, n_bins],
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(crate::Error::NonFinite("spectrogram"));
        }
        if kind == SpecKind::Magnitude && values.iter().any(|&v| v < 0.0) {
            return Err(crate::Error::InvalidArgument("magnitude spectrogram has negative values".into()));
        }
        Ok(Self { values, n_frames, n_bins, frame_rate_hz, bin_axis, kind })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.values[t * self.n_bins + k]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self { values, ..self.clone() }
    }
}
