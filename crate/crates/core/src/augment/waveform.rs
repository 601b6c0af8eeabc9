use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::{resample_to_len, AudioClip};
use crate::dsp::hann_window;
use crate::error::{invalid, Result};

const PV_FFT: usize = 1024;
const PV_HOP: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveAugConfig {
    /// Standard deviation of additive Gaussian noise, in full-scale units.
    pub noise_sigma_range: [f64; 2],
    pub noise_prob: f64,
    pub gain_db_range: [f64; 2],
    pub gain_prob: f64,
    pub pitch_semitone_range: [f64; 2],
    pub pitch_prob: f64,
}

impl Default for WaveAugConfig {
    fn default() -> Self {
        Self {
            noise_sigma_range: [0.001, 0.01],
            noise_prob: 0.5,
            gain_db_range: [-6.0, 6.0],
            gain_prob: 0.5,
            pitch_semitone_range: [-2.0, 2.0],
            pitch_prob: 0.5,
        }
    }
}

impl WaveAugConfig {
    /// Leaves every clip untouched.
    pub fn off() -> Self {
        Self { noise_prob: 0.0, gain_prob: 0.0, pitch_prob: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("noise_sigma_range", self.noise_sigma_range),
            ("gain_db_range", self.gain_db_range),
            ("pitch_semitone_range", self.pitch_semitone_range),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(invalid(format!("augment.waveform.{name} must be an ordered finite pair")));
            }
        }
        if self.noise_sigma_range[0] < 0.0 {
            return Err(invalid("augment.waveform.noise_sigma_range must be non-negative"));
        }
        for (name, p) in [("noise_prob", self.noise_prob), ("gain_prob", self.gain_prob), ("pitch_prob", self.pitch_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("augment.waveform.{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Noise, gain and pitch shift, each applied independently with its own
/// probability; output is clipped to [-1, 1]. The draw sequence depends
/// only on the config and the stream, never on the audio.
pub fn augment_waveform(clip: &AudioClip, cfg: &WaveAugConfig, rng: &mut impl Rng) -> AudioClip {
    let mut out = clip.clone();
    let apply_noise = rng.random::<f64>() < cfg.noise_prob;
    let sigma = uniform(rng, cfg.noise_sigma_range);
    let apply_gain = rng.random::<f64>() < cfg.gain_prob;
    let gain_db = uniform(rng, cfg.gain_db_range);
    let apply_pitch = rng.random::<f64>() < cfg.pitch_prob;
    let semitones = uniform(rng, cfg.pitch_semitone_range);

    if apply_noise && sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        for s in &mut out.samples {
            *s = (*s as f64 + normal.sample(rng)) as f32;
        }
    }
    if apply_gain {
        out = apply_gain_db(&out, gain_db);
    }
    if apply_pitch && semitones != 0.0 {
        out = pitch_shift(&out, semitones);
    }
    for s in &mut out.samples {
        *s = s.clamp(-1.0, 1.0);
    }
    out
}

/// Scales by `10^(db/20)` without clipping.
pub fn apply_gain_db(clip: &AudioClip, db: f64) -> AudioClip {
    let g = 10f64.powf(db / 20.0);
    let samples = clip.samples.iter().map(|&s| (s as f64 * g) as f32).collect();
    AudioClip { samples, ..clip.clone() }
}

/// Shifts pitch by `semitones` and keeps the sample count: phase-vocoder
/// stretch by `2^(s/12)`, then band-limited resampling back to the
/// original length.
pub fn pitch_shift(clip: &AudioClip, semitones: f64) -> AudioClip {
    let n = clip.samples.len();
    if n == 0 || semitones == 0.0 {
        return clip.clone();
    }
    let factor = 2f64.powf(semitones / 12.0);
    let x: Vec<f64> = clip.samples.iter().map(|&s| s as f64).collect();
    let stretched = time_stretch(&x, factor);
    let as_f32: Vec<f32> = stretched.iter().map(|&v| v as f32).collect();
    let samples = resample_to_len(&as_f32, n);
    AudioClip { samples, ..clip.clone() }
}

/// Phase-vocoder time stretch: output lasts `factor` times the input.
fn time_stretch(x: &[f64], factor: f64) -> Vec<f64> {
    let out_len = ((x.len() as f64) * factor).round().max(1.0) as usize;
    let window = hann_window(PV_FFT);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(PV_FFT);
    let inv = planner.plan_fft_inverse(PV_FFT);
    let n_bins = PV_FFT / 2 + 1;
    let pad = PV_FFT / 2;

    // centered analysis frames over a zero-padded signal
    let n_frames = x.len() / PV_HOP + 1;
    let frames: Vec<Vec<Complex<f64>>> = (0..n_frames)
        .map(|t| {
            let mut buf: Vec<Complex<f64>> = (0..PV_FFT)
                .map(|i| {
                    let pos = (t * PV_HOP + i) as isize - pad as isize;
                    let v = if pos >= 0 && (pos as usize) < x.len() { x[pos as usize] } else { 0.0 };
                    Complex::new(v * window[i], 0.0)
                })
                .collect();
            fwd.process(&mut buf);
            buf.truncate(n_bins);
            buf
        })
        .collect();

    let rate = 1.0 / factor;
    let advance: Vec<f64> = (0..n_bins).map(|k| 2.0 * PI * PV_HOP as f64 * k as f64 / PV_FFT as f64).collect();
    let mut phase: Vec<f64> = frames[0].iter().map(|c| c.arg()).collect();
    let zero = vec![Complex::new(0.0, 0.0); n_bins];
    let n_out_frames = out_len / PV_HOP + 1;
    let mut out = vec![0.0; (n_out_frames - 1) * PV_HOP + PV_FFT];
    let mut norm = vec![0.0; out.len()];
    let mut buf = vec![Complex::new(0.0, 0.0); PV_FFT];
    for t in 0..n_out_frames {
        let step = t as f64 * rate;
        let i0 = (step.floor() as usize).min(n_frames - 1);
        let alpha = step - step.floor();
        let c0 = &frames[i0];
        let c1 = frames.get(i0 + 1).unwrap_or(&zero);
        for k in 0..n_bins {
            let mag = (1.0 - alpha) * c0[k].norm() + alpha * c1[k].norm();
            buf[k] = Complex::from_polar(mag, phase[k]);
            let mut d = c1[k].arg() - c0[k].arg() - advance[k];
            d -= 2.0 * PI * (d / (2.0 * PI)).round();
            phase[k] += advance[k] + d;
        }
        for k in 1..PV_FFT - n_bins + 1 {
            buf[PV_FFT - k] = buf[k].conj();
        }
        inv.process(&mut buf);
        let base = t * PV_HOP;
        for i in 0..PV_FFT {
            out[base + i] += buf[i].re / PV_FFT as f64 * window[i];
            norm[base + i] += window[i] * window[i];
        }
    }
    (0..out_len)
        .map(|i| {
            let j = i + pad;
            let w = norm.get(j).copied().unwrap_or(0.0);
            let v = out.get(j).copied().unwrap_or(0.0);
            if w > 1e-8 {
                v / w
            } else {
                0.0
            }
        })
        .collect()
}
