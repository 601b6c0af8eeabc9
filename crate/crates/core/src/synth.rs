//! Synthetic recordings and spectrogram sets for tests, demos and CI runs.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::audio_io::{write_wav, AudioClip};
use crate::dsp::{BinAxis, SpecKind, Spectrogram};
use crate::error::Result;
use crate::manifest::{write_manifest, Split};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Burst {
    pub start_s: f64,
    pub len_s: f64,
    /// Peak amplitude of the uniform white-noise burst.
    pub amp: f64,
}

/// Gaussian noise floor (standard deviation `floor_amp`) with additive
/// white-noise bursts. A `floor_amp` of zero gives digital silence between
/// bursts.
pub fn burst_recording(rate: u32, duration_s: f64, floor_amp: f64, bursts: &[Burst], seed: u64) -> AudioClip {
    tonal_burst_recording(rate, duration_s, floor_amp, bursts, None, seed)
}

/// Like [`burst_recording`], with half of each burst's energy replaced by a
/// sinusoid at `tone_hz` when given.
pub fn tonal_burst_recording(
    rate: u32,
    duration_s: f64,
    floor_amp: f64,
    bursts: &[Burst],
    tone_hz: Option<f64>,
    seed: u64,
) -> AudioClip {
    let n = (duration_s * rate as f64).round() as usize;
    let mut rng = stream(seed, "synth.recording", &[]);
    let floor = Normal::new(0.0, floor_amp.max(0.0)).expect("finite std");
    let mut samples: Vec<f64> = (0..n)
        .map(|_| if floor_amp > 0.0 { floor.sample(&mut rng) } else { 0.0 })
        .collect();
    for b in bursts {
        let start = (b.start_s * rate as f64).round() as usize;
        let len = (b.len_s * rate as f64).round() as usize;
        for i in start..(start + len).min(n) {
            let noise: f64 = rng.random_range(-1.0..1.0);
            let v = match tone_hz {
                Some(f) => {
                    let ph = 2.0 * std::f64::consts::PI * f * (i - start) as f64 / rate as f64;
                    0.5 * noise + 0.5 * ph.sin()
                }
                None => noise,
            };
            samples[i] += b.amp * v;
        }
    }
    AudioClip {
        samples: samples.into_iter().map(|s| s.clamp(-1.0, 1.0) as f32).collect(),
        sample_rate_hz: rate,
        source_id: format!("synth{seed}"),
    }
}

/// Log-mel-like arrays of unit Gaussian noise where positives carry a
/// `shift` offset on the mel band `n_mels/4 .. n_mels/2`. The offset
/// survives per-clip standardization, so the classes stay separable.
pub fn separable_logmel_set(
    n: usize,
    n_mels: usize,
    n_frames: usize,
    shift: f64,
    positive_every: usize,
    seed: u64,
) -> Vec<(Spectrogram, u8)> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n)
        .map(|i| {
            let label = u8::from(i % positive_every.max(1) == 0);
            let mut rng = stream(seed, "synth.logmel", &[i as u64]);
            let mut values = Vec::with_capacity(n_frames * n_mels);
            for _t in 0..n_frames {
                for m in 0..n_mels {
                    let band = m >= n_mels / 4 && m < n_mels / 2;
                    let offset = if label == 1 && band { shift } else { 0.0 };
                    values.push(normal.sample(&mut rng) + offset);
                }
            }
            let spec = Spectrogram::new(values, n_frames, n_mels, 62.5, BinAxis::Mel, SpecKind::LogMel)
                .expect("finite synthetic values");
            (spec, label)
        })
        .collect()
}

/// Writes a small labelled corpus under `dir`: `audio/*.wav` plus
/// `manifest.csv`. Each subject contributes two 3 s recordings with two
/// bursts each; positive subjects' bursts carry an 800 Hz tone. Subjects
/// cycle through (negative, train), (positive, train), (negative, test),
/// (positive, test). Returns the manifest path.
pub fn write_demo_dataset(dir: &Path, n_subjects: usize, seed: u64) -> Result<PathBuf> {
    let audio = dir.join("audio");
    std::fs::create_dir_all(&audio)?;
    let mut rows = Vec::new();
    for s in 0..n_subjects {
        let label = (s % 2) as u8;
        let split = if s % 4 < 2 { Split::Train } else { Split::Test };
        for k in 0..2u64 {
            let mut rng = stream(seed, "synth.demo", &[s as u64, k]);
            let bursts = [0.4, 1.7].map(|t: f64| Burst {
                start_s: t + rng.random_range(0.0..0.3),
                len_s: 0.25,
                amp: rng.random_range(0.3..0.6),
            });
            let tone = (label == 1).then_some(800.0);
            let mut clip = tonal_burst_recording(16000, 3.0, 0.001, &bursts, tone, seed ^ (s as u64) << 8 ^ k);
            clip.source_id = format!("s{s:03}_{k}");
            write_wav(&audio.join(format!("{}.wav", clip.source_id)), &clip)?;
            rows.push((format!("audio/{}.wav", clip.source_id), label, format!("s{s:03}"), split));
        }
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, rows.iter().map(|(p, l, subj, sp)| (p.as_str(), *l, subj.as_str(), *sp)))?;
    Ok(manifest)
}
