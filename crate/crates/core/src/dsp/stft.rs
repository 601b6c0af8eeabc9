use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{BinAxis, SpecKind, Spectrogram};
use crate::audio_io::AudioClip;
use crate::error::{invalid, Error, Result};

/// STFT framing in seconds; converted to samples per clip rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftParams {
    pub hop_s: f64,
    pub win_s: f64,
    /// Defaults to the next power of two at or above the window length.
    pub fft_size: Option<usize>,
}

impl Default for StftParams {
    fn default() -> Self {
        Self { hop_s: 0.016, win_s: 0.021, fft_size: None }
    }
}

impl StftParams {
    pub fn with_fft_size(mut self, n: usize) -> Self {
        self.fft_size = Some(n);
        self
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        ((self.hop_s * sample_rate as f64).round() as usize).max(1)
    }

    pub fn win_samples(&self, sample_rate: u32) -> usize {
        ((self.win_s * sample_rate as f64).round() as usize).max(1)
    }

    pub fn fft_len(&self, sample_rate: u32) -> usize {
        self.fft_size.unwrap_or_else(|| self.win_samples(sample_rate).next_power_of_two())
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(self.hop_s > 0.0) || !self.hop_s.is_finite() {
            return Err(invalid("hop_s must be positive"));
        }
        if !(self.win_s >= self.hop_s) || !self.win_s.is_finite() {
            return Err(invalid("win_s must be at least hop_s"));
        }
        if self.fft_len(sample_rate) < self.win_samples(sample_rate) {
            return Err(invalid(format!(
                "fft_size {} is shorter than the {}-sample window",
                self.fft_len(sample_rate),
                self.win_samples(sample_rate)
            )));
        }
        Ok(())
    }

    /// Number of frames for `n` samples with no centering pad.
    pub fn n_frames(&self, n: usize, sample_rate: u32) -> usize {
        let win = self.win_samples(sample_rate);
        if n < win {
            0
        } else {
            (n - win) / self.hop_samples(sample_rate) + 1
        }
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Hann-windowed magnitude STFT without centering; `n_bins = fft/2 + 1`.
pub fn stft_magnitude(clip: &AudioClip, params: &StftParams) -> Result<Spectrogram> {
    let sr = clip.sample_rate_hz;
    params.validate(sr)?;
    let hop = params.hop_samples(sr);
    let win = params.win_samples(sr);
    let nfft = params.fft_len(sr);
    if clip.samples.len() < win {
        return Err(Error::TooShort { needed: win, got: clip.samples.len() });
    }
    let n_frames = params.n_frames(clip.samples.len(), sr);
    let n_bins = nfft / 2 + 1;
    let window = hann_window(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut values = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let start = t * hop;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < win {
                Complex::new(clip.samples[start + i] as f64 * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        values.extend(buf[..n_bins].iter().map(|c| c.norm()));
    }
    Spectrogram::new(
        values,
        n_frames,
        n_bins,
        sr as f64 / hop as f64,
        BinAxis::LinearHz { bin_hz: sr as f64 / nfft as f64 },
        SpecKind::Magnitude,
    )
}

/// Per-frame sum of magnitudes over bins centered inside `[lo_hz, hi_hz]`.
pub fn band_energy(spec: &Spectrogram, lo_hz: f64, hi_hz: f64) -> Result<Vec<f64>> {
    let bin_hz = match (spec.kind, spec.bin_axis) {
        (SpecKind::Magnitude, BinAxis::LinearHz { bin_hz }) => bin_hz,
        _ => return Err(invalid("band_energy needs a linear-frequency magnitude spectrogram")),
    };
    let nyquist = bin_hz * (spec.n_bins() - 1) as f64;
    if !(lo_hz < hi_hz) || hi_hz > nyquist + 1e-9 {
        return Err(invalid(format!("band [{lo_hz}, {hi_hz}] invalid for Nyquist {nyquist}")));
    }
    let bins: Vec<usize> = (0..spec.n_bins())
        .filter(|&k| {
            let f = k as f64 * bin_hz;
            f >= lo_hz && f <= hi_hz
        })
        .collect();
    if bins.is_empty() {
        return Err(invalid(format!("no bins inside [{lo_hz}, {hi_hz}] Hz")));
    }
    let (first, last) = (bins[0], bins[bins.len() - 1]);
    Ok((0..spec.n_frames())
        .map(|t| spec.frame(t)[first..=last].iter().sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn clip(samples: Vec<f32>) -> AudioClip {
        AudioClip::new(samples, 16000, "t").unwrap()
    }

    #[test]
    fn framing_defaults_at_16k() {
        let p = StftParams::default();
        assert_eq!(p.hop_samples(16000), 256);
        assert_eq!(p.win_samples(16000), 336);
        assert_eq!(p.fft_len(16000), 512);
        assert_eq!(p.n_frames(16000, 16000), (16000 - 336) / 256 + 1);
    }

    #[test]
    fn zero_clip_gives_zero_magnitude() {
        let spec = stft_magnitude(&clip(vec![0.0; 4000]), &StftParams::default()).unwrap();
        assert!(spec.values().iter().all(|&v| v == 0.0));
        assert_eq!(spec.n_bins(), 257);
    }

    #[test]
    fn too_short_is_rejected() {
        let err = stft_magnitude(&clip(vec![0.0; 100]), &StftParams::default()).unwrap_err();
        assert!(matches!(err, Error::TooShort { needed: 336, got: 100 }));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let s = (0..8000)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 16000.0).sin() as f32)
            .collect();
        let spec = stft_magnitude(&clip(s), &StftParams::default()).unwrap();
        for t in 0..spec.n_frames() {
            let frame = spec.frame(t);
            let k = (0..frame.len()).max_by(|&a, &b| frame[a].partial_cmp(&frame[b]).unwrap()).unwrap();
            assert_eq!(k, 32);
        }
    }

    #[test]
    fn linear_in_positive_gain() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f32> = (0..3000).map(|_| rng.random_range(-0.4..0.4)).collect();
        let scaled: Vec<f32> = s.iter().map(|v| v * 2.0).collect();
        let a = stft_magnitude(&clip(s), &StftParams::default()).unwrap();
        let b = stft_magnitude(&clip(scaled), &StftParams::default()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((2.0 * x - y).abs() <= 1e-9 * y.abs().max(1e-12));
        }
    }

    #[test]
    fn band_bins_at_16k() {
        let nb = 257;
        let mut values = vec![0.0; nb];
        for k in 0..nb {
            values[k] = k as f64;
        }
        let spec = Spectrogram::new(
            values,
            1,
            nb,
            62.5,
            BinAxis::LinearHz { bin_hz: 31.25 },
            SpecKind::Magnitude,
        )
        .unwrap();
        let e = band_energy(&spec, 120.0, 8000.0).unwrap();
        // enumerate centers k * 31.25 Hz independently
        let expected: f64 = (0..nb)
            .filter(|&k| (120.0..=8000.0).contains(&(k as f64 * 31.25)))
            .map(|k| k as f64)
            .sum();
        assert_eq!(e[0], expected);
        assert_eq!(expected, (4..=256).map(|k| k as f64).sum::<f64>());
    }

    #[test]
    fn band_energy_single_bin_and_errors() {
        let mut values = vec![0.0; 257 * 2];
        values[257 + 14] = 3.5; // 437.5 Hz, frame 1
        let spec =
            Spectrogram::new(values, 2, 257, 62.5, BinAxis::LinearHz { bin_hz: 31.25 }, SpecKind::Magnitude)
                .unwrap();
        assert_eq!(band_energy(&spec, 120.0, 8000.0).unwrap(), vec![0.0, 3.5]);
        assert!(band_energy(&spec, 100.0, 110.0).is_err());
        assert!(band_energy(&spec, 500.0, 400.0).is_err());
        assert!(band_energy(&spec, 100.0, 9000.0).is_err());
    }
}
