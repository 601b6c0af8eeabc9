use super::{BinAxis, SpecKind, Spectrogram};
use crate::error::{invalid, Error, Result};

/// Additive floor inside the log of the mel power.
pub const LOG_MEL_FLOOR: f64 = 1e-6;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters, row-major `[n_mels x n_fft_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Vec<f64>,
    pub n_mels: usize,
    pub n_fft_bins: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// `n_mels + 2` edge frequencies; filter `m` spans `edges[m]..edges[m + 2]`.
    pub edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_fft_bins..(m + 1) * self.n_fft_bins]
    }
}

pub fn mel_filterbank(
    n_mels: usize,
    fft_size: usize,
    sample_rate_hz: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    let nyquist = sample_rate_hz as f64 / 2.0;
    if n_mels < 1 {
        return Err(invalid("n_mels must be at least 1"));
    }
    if fft_size < 2 {
        return Err(invalid("fft_size must be at least 2"));
    }
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(invalid(format!("need 0 <= f_min < f_max <= {nyquist}, got [{f_min}, {f_max}]")));
    }
    let n_bins = fft_size / 2 + 1;
    let bin_hz = sample_rate_hz as f64 / fft_size as f64;
    let (mel_lo, mel_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut weights = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, peak, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rise = (f - lo) / (peak - lo);
            let fall = (hi - f) / (hi - peak);
            *w = rise.min(fall).max(0.0);
        }
        // Filters narrower than one FFT bin would be empty: fall back to the
        // bin nearest the peak so every mel channel carries signal.
        if row.iter().all(|&w| w == 0.0) {
            let k = ((peak / bin_hz).round() as usize).min(n_bins - 1);
            row[k] = 1.0;
        }
    }
    Ok(MelFilterbank { weights, n_mels, n_fft_bins: n_bins, f_min, f_max, edges_hz })
}

/// `ln(fb . |X|^2 + 1e-6)` per frame and mel channel.
pub fn log_mel(spec: &Spectrogram, fb: &MelFilterbank) -> Result<Spectrogram> {
    if spec.kind != SpecKind::Magnitude {
        return Err(invalid("log_mel expects a magnitude spectrogram"));
    }
    if spec.n_bins() != fb.n_fft_bins {
        return Err(Error::ShapeMismatch {
            op: "log_mel",
            left: vec![spec.n_frames(), spec.n_bins()],
            right: vec![fb.n_mels, fb.n_fft_bins],
        });
    }
    let mut values = Vec::with_capacity(spec.n_frames() * fb.n_mels);
    let mut power = vec![0.0; spec.n_bins()];
    for t in 0..spec.n_frames() {
        for (p, &m) in power.iter_mut().zip(spec.frame(t)) {
            *p = m * m;
        }
        for m in 0..fb.n_mels {
            let e: f64 = fb.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
            values.push((e + LOG_MEL_FLOOR).ln());
        }
    }
    Spectrogram::new(values, spec.n_frames(), fb.n_mels, spec.frame_rate_hz, BinAxis::Mel, SpecKind::LogMel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn mag(values: Vec<f64>, frames: usize, bins: usize) -> Spectrogram {
        Spectrogram::new(values, frames, bins, 62.5, BinAxis::LinearHz { bin_hz: 31.25 }, SpecKind::Magnitude)
            .unwrap()
    }

    #[test]
    fn htk_anchor_values() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn filterbank_covers_interior_bins() {
        let fb = mel_filterbank(128, 512, 16000, 0.0, 8000.0).unwrap();
        assert!(fb.weights().iter().all(|&w| w >= 0.0));
        for m in 0..fb.n_mels {
            assert!(fb.row(m).iter().any(|&w| w > 0.0), "empty filter {m}");
        }
        for k in 0..fb.n_fft_bins {
            let f = k as f64 * 31.25;
            if f > fb.f_min && f < fb.f_max {
                let col: f64 = (0..fb.n_mels).map(|m| fb.row(m)[k]).sum();
                assert!(col > 0.0, "bin {k} uncovered");
            }
        }
    }

    #[test]
    fn rows_unimodal_and_neighbours_overlap() {
        let fb = mel_filterbank(40, 512, 16000, 0.0, 8000.0).unwrap();
        for m in 0..fb.n_mels {
            let row = fb.row(m);
            let peak = (0..row.len()).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
            assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
            if m + 1 < fb.n_mels {
                let next = fb.row(m + 1);
                assert!(row.iter().zip(next).any(|(a, b)| *a > 0.0 && *b > 0.0), "filters {m},{} disjoint", m + 1);
            }
        }
        // analytic supports overlap for any channel count
        let dense = mel_filterbank(128, 512, 16000, 0.0, 8000.0).unwrap();
        for m in 0..127 {
            assert!(dense.edges_hz[m + 2] > dense.edges_hz[m + 1]);
        }
    }

    #[test]
    fn filterbank_rejects_bad_ranges() {
        assert!(mel_filterbank(0, 512, 16000, 0.0, 8000.0).is_err());
        assert!(mel_filterbank(10, 512, 16000, 500.0, 400.0).is_err());
        assert!(mel_filterbank(10, 512, 16000, 0.0, 9000.0).is_err());
    }

    #[test]
    fn log_mel_of_silence_is_floor() {
        let fb = mel_filterbank(16, 512, 16000, 0.0, 8000.0).unwrap();
        let lm = log_mel(&mag(vec![0.0; 257 * 3], 3, 257), &fb).unwrap();
        assert!(lm.values().iter().all(|&v| (v - (-13.815510557964274)).abs() < 1e-12));
    }

    #[test]
    fn doubling_magnitude_shifts_by_ln4() {
        let fb = mel_filterbank(16, 512, 16000, 0.0, 8000.0).unwrap();
        let base: Vec<f64> = (0..257).map(|k| 1.0 + k as f64 * 0.01).collect();
        let doubled: Vec<f64> = base.iter().map(|v| v * 2.0).collect();
        let a = log_mel(&mag(base, 1, 257), &fb).unwrap();
        let b = log_mel(&mag(doubled, 1, 257), &fb).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((y - x - 4f64.ln()).abs() < 1e-5);
        }
    }

    #[test]
    fn log_mel_matches_naive_loop() {
        let fb = mel_filterbank(32, 512, 16000, 20.0, 7600.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<f64> = (0..257 * 5).map(|_| rng.random_range(0.0..3.0)).collect();
        let spec = mag(vals.clone(), 5, 257);
        let lm = log_mel(&spec, &fb).unwrap();
        for t in 0..5 {
            for m in 0..32 {
                let mut e = 0.0;
                for k in 0..257 {
                    e += fb.weights()[m * 257 + k] * vals[t * 257 + k] * vals[t * 257 + k];
                }
                assert!((lm.get(t, m) - (e + 1e-6).ln()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn log_mel_dimension_mismatch() {
        let fb = mel_filterbank(16, 256, 16000, 0.0, 8000.0).unwrap();
        assert!(matches!(log_mel(&mag(vec![0.0; 257], 1, 257), &fb), Err(Error::ShapeMismatch { .. })));
    }
}
