//! Rule-based cough onset detection and fixed-duration segment extraction.
//!
//! Band energy (120-8000 Hz by default) is turned into a log energy-ratio
//! sequence, smoothed with a zero-phase Butterworth filter, and peaks above
//! a threshold are refined to the nearby band-energy maximum. The onset is
//! placed a fixed number of frames before that maximum.

use serde::{Deserialize, Serialize};

use crate::audio_io::AudioClip;
use crate::dsp::{band_energy, butterworth_lowpass, stft_magnitude, StftParams};
use crate::error::{invalid, Error, Result};

/// Floor applied to frame energies before taking ratios.
pub const ENERGY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    Natural,
    Base10,
}

impl LogBase {
    fn apply(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Base10 => x.log10(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothConfig {
    pub enabled: bool,
    pub order: usize,
    /// Cutoff in Hz of the frame-rate sequence.
    pub cutoff_hz: f64,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self { enabled: true, order: 2, cutoff_hz: 10.0 }
    }
}

fn default_band_lo() -> f64 {
    120.0
}
fn default_band_hi() -> f64 {
    8000.0
}
fn default_log_base() -> LogBase {
    LogBase::Natural
}
fn default_energy_window() -> usize {
    5
}
fn default_backoff() -> usize {
    2
}
fn default_duration() -> f64 {
    1.0
}

/// Onset detector settings. In JSON configs `peak_threshold` must be given
/// explicitly; every other field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnsetConfig {
    #[serde(default)]
    pub stft: StftParams,
    #[serde(default = "default_band_lo")]
    pub band_lo_hz: f64,
    #[serde(default = "default_band_hi")]
    pub band_hi_hz: f64,
    #[serde(default = "default_log_base")]
    pub ratio_log_base: LogBase,
    #[serde(default)]
    pub smooth: SmoothConfig,
    pub peak_threshold: f64,
    #[serde(default = "default_energy_window")]
    pub energy_window_frames: usize,
    #[serde(default = "default_backoff")]
    pub onset_backoff_frames: usize,
    #[serde(default = "default_duration")]
    pub segment_duration_s: f64,
}

impl Default for OnsetConfig {
    fn default() -> Self {
        Self {
            stft: StftParams::default(),
            band_lo_hz: default_band_lo(),
            band_hi_hz: default_band_hi(),
            ratio_log_base: LogBase::Natural,
            smooth: SmoothConfig::default(),
            peak_threshold: 100.0,
            energy_window_frames: default_energy_window(),
            onset_backoff_frames: default_backoff(),
            segment_duration_s: default_duration(),
        }
    }
}

impl OnsetConfig {
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.peak_threshold = threshold;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.peak_threshold.is_finite() {
            return Err(invalid("peak_threshold must be finite"));
        }
        if self.energy_window_frames % 2 == 0 {
            return Err(invalid("energy_window_frames must be odd"));
        }
        if !(self.segment_duration_s > 0.0) {
            return Err(invalid("segment_duration_s must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoughSegment {
    pub clip: AudioClip,
    pub onset_frame: usize,
    pub onset_time_s: f64,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub segments: Vec<CoughSegment>,
    /// Onsets that fell beyond the end of the clip.
    pub skipped: usize,
}

struct Analysis {
    energy: Vec<f64>,
    /// `rate[i]` describes the step from frame `i` to frame `i + 1`.
    rate: Vec<f64>,
}

fn analyse(clip: &AudioClip, cfg: &OnsetConfig) -> Result<Analysis> {
    cfg.validate()?;
    let sr = clip.sample_rate_hz;
    let n_frames = cfg.stft.n_frames(clip.samples.len(), sr);
    if n_frames < 2 {
        let needed = cfg.stft.win_samples(sr) + cfg.stft.hop_samples(sr);
        return Err(Error::TooShort { needed, got: clip.samples.len() });
    }
    let spec = stft_magnitude(clip, &cfg.stft)?;
    let energy = band_energy(&spec, cfg.band_lo_hz, cfg.band_hi_hz)?;
    let raw = log_energy_ratios(&energy, cfg.ratio_log_base);
    let rate = if cfg.smooth.enabled {
        let nyquist = spec.frame_rate_hz / 2.0;
        butterworth_lowpass(&raw, cfg.smooth.order, cfg.smooth.cutoff_hz / nyquist)?
    } else {
        raw
    };
    Ok(Analysis { energy, rate })
}

/// `log(E[t] / E[t-1])` with both energies floored at [`ENERGY_FLOOR`].
pub fn log_energy_ratios(energy: &[f64], base: LogBase) -> Vec<f64> {
    energy
        .windows(2)
        .map(|w| base.apply(w[1].max(ENERGY_FLOOR) / w[0].max(ENERGY_FLOOR)))
        .collect()
}

/// Smoothed log energy-ratio sequence, length `n_frames - 1`.
pub fn energy_change_rate(clip: &AudioClip, cfg: &OnsetConfig) -> Result<Vec<f64>> {
    Ok(analyse(clip, cfg)?.rate)
}

/// Indices of strict local maxima above `threshold`; a plateau reports its
/// leftmost index.
pub fn local_maxima(x: &[f64], threshold: f64) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < x.len() {
        if x[i] > x[i - 1] {
            let mut j = i;
            while j + 1 < x.len() && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < x.len() && x[j + 1] < x[i] && x[i] > threshold {
                peaks.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

pub fn detect_onsets(clip: &AudioClip, cfg: &OnsetConfig) -> Result<Vec<usize>> {
    let Analysis { energy, rate } = analyse(clip, cfg)?;
    let half = cfg.energy_window_frames / 2;
    let mut onsets: Vec<usize> = local_maxima(&rate, cfg.peak_threshold)
        .into_iter()
        .map(|i| {
            let frame = i + 1;
            let lo = frame.saturating_sub(half);
            let hi = (frame + half).min(energy.len() - 1);
            let mut best = lo;
            for t in lo..=hi {
                if energy[t] > energy[best] {
                    best = t;
                }
            }
            best.saturating_sub(cfg.onset_backoff_frames)
        })
        .collect();
    onsets.sort_unstable();
    onsets.dedup();
    let mut kept: Vec<usize> = Vec::with_capacity(onsets.len());
    for o in onsets {
        match kept.last() {
            Some(&last) if o < last + cfg.energy_window_frames => {}
            _ => kept.push(o),
        }
    }
    Ok(kept)
}

/// Cuts `duration_s` of audio from each onset; the tail is zero-padded.
pub fn extract_segments(clip: &AudioClip, onsets: &[usize], duration_s: f64, stft: &StftParams) -> Result<Extraction> {
    if !(duration_s > 0.0) {
        return Err(invalid("segment duration must be positive"));
    }
    let sr = clip.sample_rate_hz;
    let hop = stft.hop_samples(sr);
    let len = (duration_s * sr as f64).round() as usize;
    let mut segments = Vec::with_capacity(onsets.len());
    let mut skipped = 0;
    for &frame in onsets {
        let start = frame * hop;
        if start >= clip.samples.len() {
            skipped += 1;
            continue;
        }
        let end = (start + len).min(clip.samples.len());
        let mut samples = clip.samples[start..end].to_vec();
        samples.resize(len, 0.0);
        let source_id = format!("{}_onset{}", clip.source_id, frame);
        segments.push(CoughSegment {
            clip: AudioClip { samples, sample_rate_hz: sr, source_id: source_id.clone() },
            onset_frame: frame,
            onset_time_s: start as f64 / sr as f64,
            source_id: clip.source_id.clone(),
        });
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} onset(s) beyond the end of the clip", clip.source_id);
    }
    Ok(Extraction { segments, skipped })
}

/// Detection followed by extraction with the configured duration.
pub fn segment_clip(clip: &AudioClip, cfg: &OnsetConfig) -> Result<Extraction> {
    let onsets = detect_onsets(clip, cfg)?;
    extract_segments(clip, &onsets, cfg.segment_duration_s, &cfg.stft)
}
