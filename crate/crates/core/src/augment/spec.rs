use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskFill {
    /// Mean of the whole spectrogram before any mask is applied.
    #[default]
    Mean,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecAugConfig {
    pub time_warp_max_frames: usize,
    pub n_freq_masks: usize,
    pub freq_mask_max_bins: usize,
    pub n_time_masks: usize,
    /// `None` means a tenth of the frame count.
    pub time_mask_max_frames: Option<usize>,
    pub mask_fill: MaskFill,
}

impl Default for SpecAugConfig {
    fn default() -> Self {
        Self {
            time_warp_max_frames: 5,
            n_freq_masks: 2,
            freq_mask_max_bins: 8,
            n_time_masks: 2,
            time_mask_max_frames: None,
            mask_fill: MaskFill::Mean,
        }
    }
}

impl SpecAugConfig {
    pub fn off() -> Self {
        Self {
            time_warp_max_frames: 0,
            n_freq_masks: 0,
            freq_mask_max_bins: 0,
            n_time_masks: 0,
            time_mask_max_frames: Some(0),
            mask_fill: MaskFill::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // every field is unsigned; shape-dependent checks happen per call
        Ok(())
    }

    fn time_mask_width(&self, n_frames: usize) -> usize {
        self.time_mask_max_frames.unwrap_or(n_frames / 10)
    }
}

/// Piecewise-linear time warp moving frame `anchor` to `dest` while the
/// first and last frames stay fixed; bins are interpolated linearly.
pub fn time_warp(spec: &Spectrogram, anchor: usize, dest: usize) -> Result<Spectrogram> {
    let n = spec.n_frames();
    let b = spec.n_bins();
    if n < 3 || anchor == 0 || anchor >= n - 1 || dest == 0 || dest >= n - 1 {
        return Err(invalid(format!("warp {anchor} -> {dest} needs interior frames of a {n}-frame spectrogram")));
    }
    let last = (n - 1) as f64;
    let (a, d) = (anchor as f64, dest as f64);
    let src = spec.values();
    let mut out = vec![0.0; n * b];
    for t in 0..n {
        let tf = t as f64;
        let s = if tf <= d { tf * a / d } else { a + (tf - d) * (last - a) / (last - d) };
        let i0 = (s.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let w = s - i0 as f64;
        for k in 0..b {
            out[t * b + k] = (1.0 - w) * src[i0 * b + k] + w * src[i1 * b + k];
        }
    }
    Ok(spec.with_values(out))
}

/// Sets bins `start .. start + width` of every frame to `fill`.
pub fn apply_freq_mask(spec: &mut Spectrogram, start: usize, width: usize, fill: f64) -> Result<()> {
    let b = spec.n_bins();
    if start + width > b {
        return Err(invalid(format!("frequency mask {start}+{width} exceeds {b} bins")));
    }
    let vals = spec.values_mut();
    for row in vals.chunks_mut(b) {
        row[start..start + width].fill(fill);
    }
    Ok(())
}

/// Sets frames `start .. start + width` to `fill`.
pub fn apply_time_mask(spec: &mut Spectrogram, start: usize, width: usize, fill: f64) -> Result<()> {
    let (n, b) = (spec.n_frames(), spec.n_bins());
    if start + width > n {
        return Err(invalid(format!("time mask {start}+{width} exceeds {n} frames")));
    }
    spec.values_mut()[start * b..(start + width) * b].fill(fill);
    Ok(())
}

/// One random time warp, then frequency masks, then time masks. Widths are
/// uniform over `0..=max`. Requires the total mask budget along each axis to
/// stay below that axis' length so some cells always survive.
pub fn spec_augment(spec: &Spectrogram, cfg: &SpecAugConfig, rng: &mut impl Rng) -> Result<Spectrogram> {
    let (n, b) = (spec.n_frames(), spec.n_bins());
    let t_max = cfg.time_mask_width(n);
    if cfg.n_freq_masks * cfg.freq_mask_max_bins >= b && cfg.n_freq_masks > 0 && cfg.freq_mask_max_bins > 0 {
        return Err(invalid(format!(
            "{} frequency masks of up to {} bins could cover all {b} bins",
            cfg.n_freq_masks, cfg.freq_mask_max_bins
        )));
    }
    if cfg.n_time_masks * t_max >= n && cfg.n_time_masks > 0 && t_max > 0 {
        return Err(invalid(format!(
            "{} time masks of up to {t_max} frames could cover all {n} frames",
            cfg.n_time_masks
        )));
    }
    let w = cfg.time_warp_max_frames;
    let mut out = if w > 0 && n > 2 * w + 2 {
        let anchor = rng.random_range(w.max(1)..n - w.max(1));
        let shift = rng.random_range(-(w as i64)..=w as i64);
        let dest = (anchor as i64 + shift).clamp(1, n as i64 - 2) as usize;
        time_warp(spec, anchor, dest)?
    } else {
        spec.clone()
    };
    let fill = match cfg.mask_fill {
        MaskFill::Mean => out.values().iter().sum::<f64>() / out.values().len().max(1) as f64,
        MaskFill::Zero => 0.0,
    };
    for _ in 0..cfg.n_freq_masks {
        let width = rng.random_range(0..=cfg.freq_mask_max_bins);
        let start = rng.random_range(0..=b - width);
        apply_freq_mask(&mut out, start, width, fill)?;
    }
    for _ in 0..cfg.n_time_masks {
        let width = rng.random_range(0..=t_max);
        let start = rng.random_range(0..=n - width);
        apply_time_mask(&mut out, start, width, fill)?;
    }
    Ok(out)
}
