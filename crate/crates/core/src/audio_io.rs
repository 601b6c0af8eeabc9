//! WAV decoding/encoding and band-limited resampling.

use std::path::Path;

use crate::error::{Error, Result};

/// Canonical pipeline sample rate.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

const KAISER_BETA: f64 = 8.0;
const ZERO_CROSSINGS: f64 = 64.0;

/// Mono waveform with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("non-finite sample".into()));
        }
        Ok(Self { samples, sample_rate_hz, source_id: source_id.into() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Pcm16,
    Float32,
}

/// Decodes a RIFF/WAVE byte buffer (PCM 16-bit or IEEE float 32-bit, mono
/// or stereo) into a mono clip. Stereo is averaged.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Decode("missing RIFF/WAVE header".into()));
    }
    let mut fmt: Option<(Encoding, u16, u32)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).filter(|&e| e <= bytes.len());
        let body = match body_end {
            Some(end) => &bytes[body_start..end],
            // tolerate a truncated data chunk, reject anything else
            None if id == b"data" => &bytes[body_start..],
            None => return Err(Error::Decode(format!("chunk {:?} overruns file", String::from_utf8_lossy(id)))),
        };
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Decode("fmt chunk too short".into()));
                }
                let mut tag = u16_at(body, 0);
                let channels = u16_at(body, 2);
                let rate = u32_at(body, 4);
                let bits = u16_at(body, 14);
                if tag == 0xFFFE {
                    if body.len() < 26 {
                        return Err(Error::Decode("extensible fmt chunk too short".into()));
                    }
                    tag = u16_at(body, 24);
                }
                let enc = match (tag, bits) {
                    (1, 16) => Encoding::Pcm16,
                    (3, 32) => Encoding::Float32,
                    (1, b) => return Err(Error::UnsupportedFormat(format!("PCM {b}-bit integer"))),
                    (3, b) => return Err(Error::UnsupportedFormat(format!("IEEE float {b}-bit"))),
                    (t, b) => return Err(Error::UnsupportedFormat(format!("format tag 0x{t:04X} ({b}-bit)"))),
                };
                if channels != 1 && channels != 2 {
                    return Err(Error::UnsupportedFormat(format!("{channels} channels")));
                }
                if rate == 0 {
                    return Err(Error::Decode("sample rate is zero".into()));
                }
                fmt = Some((enc, channels, rate));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start + size + (size & 1);
    }
    let (enc, channels, rate) = fmt.ok_or_else(|| Error::Decode("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Decode("missing data chunk".into()))?;
    let width = match enc {
        Encoding::Pcm16 => 2,
        Encoding::Float32 => 4,
    };
    let frame = width * channels as usize;
    let n_frames = data.len() / frame;
    if n_frames == 0 {
        return Err(Error::Decode("no audio frames".into()));
    }
    let mut samples = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let mut acc = 0f32;
        for c in 0..channels as usize {
            let at = f * frame + c * width;
            let v = match enc {
                Encoding::Pcm16 => i16::from_le_bytes([data[at], data[at + 1]]) as f32 / 32768.0,
                Encoding::Float32 => f32::from_le_bytes([data[at], data[at + 1], data[at + 2], data[at + 3]]),
            };
            if !v.is_finite() {
                return Err(Error::Decode(format!("non-finite sample at frame {f}")));
            }
            acc += v;
        }
        let mono = if channels == 2 { acc * 0.5 } else { acc };
        samples.push(mono.clamp(-1.0, 1.0));
    }
    Ok(AudioClip { samples, sample_rate_hz: rate, source_id: String::new() })
}

/// Encodes a clip as 16-bit PCM little-endian mono WAV.
pub fn encode_wav_pcm16(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path)?;
    let mut clip = decode_wav(&bytes)?;
    clip.source_id = path.display().to_string();
    Ok(clip)
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    std::fs::write(path, encode_wav_pcm16(clip))?;
    Ok(())
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Kaiser-windowed sinc interpolation of `input` onto `out_len` samples,
/// where output sample `i` sits at source position `i * step`.
fn sinc_interpolate(input: &[f32], out_len: usize, step: f64) -> Vec<f32> {
    // lowpass at the narrower of the two Nyquist limits
    let cutoff = (1.0 / step).min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let i0_beta = bessel_i0(KAISER_BETA);
    let n = input.len() as isize;
    (0..out_len)
        .map(|i| {
            let x = i as f64 * step;
            let lo = ((x - half_width).ceil() as isize).max(0);
            let hi = ((x + half_width).floor() as isize).min(n - 1);
            let mut acc = 0.0f64;
            for j in lo..=hi {
                let d = x - j as f64;
                let u = d / half_width;
                let w = bessel_i0(KAISER_BETA * (1.0 - u * u).max(0.0).sqrt()) / i0_beta;
                acc += input[j as usize] as f64 * cutoff * sinc(cutoff * d) * w;
            }
            acc as f32
        })
        .collect()
}

/// Resamples to `target_hz`; output length is `round(len * target / source)`.
pub fn resample(clip: &AudioClip, target_hz: u32) -> Result<AudioClip> {
    if target_hz == 0 {
        return Err(Error::InvalidArgument("target sample rate must be positive".into()));
    }
    if target_hz == clip.sample_rate_hz {
        return Ok(clip.clone());
    }
    let ratio = target_hz as f64 / clip.sample_rate_hz as f64;
    let out_len = (clip.samples.len() as f64 * ratio).round() as usize;
    let samples = sinc_interpolate(&clip.samples, out_len, 1.0 / ratio)
        .into_iter()
        .map(|s| s.clamp(-1.0, 1.0))
        .collect();
    Ok(AudioClip { samples, sample_rate_hz: target_hz, source_id: clip.source_id.clone() })
}

/// Stretches or squeezes a sample buffer to exactly `out_len` samples with
/// the same band-limited interpolator, keeping the nominal sample rate.
pub(crate) fn resample_to_len(samples: &[f32], out_len: usize) -> Vec<f32> {
    if out_len == samples.len() {
        return samples.to_vec();
    }
    let step = samples.len() as f64 / out_len as f64;
    sinc_interpolate(samples, out_len, step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, n: usize, amp: f32) -> AudioClip {
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32)
            .collect();
        AudioClip::new(samples, rate, "tone").unwrap()
    }

    fn wav_bytes(tag: u16, channels: u16, bits: u16, rate: u32, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + payload.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        let block = channels * bits / 8;
        out.extend_from_slice(&(rate * block as u32).to_le_bytes());
        out.extend_from_slice(&block.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn decodes_pcm16_mono_header() {
        let payload: Vec<u8> = (0..16000).flat_map(|i| ((i % 100) as i16).to_le_bytes()).collect();
        let clip = decode_wav(&wav_bytes(1, 1, 16, 16000, &payload)).unwrap();
        assert_eq!(clip.samples.len(), 16000);
        assert_eq!(clip.sample_rate_hz, 16000);
    }

    #[test]
    fn pcm16_scaling() {
        let clip = decode_wav(&wav_bytes(1, 1, 16, 8000, &16384i16.to_le_bytes())).unwrap();
        assert_eq!(clip.samples, vec![0.5]);
    }

    #[test]
    fn stereo_is_channel_mean() {
        let mut payload = Vec::new();
        payload.extend_from_slice(&1.0f32.to_le_bytes());
        payload.extend_from_slice(&0.0f32.to_le_bytes());
        let clip = decode_wav(&wav_bytes(3, 2, 32, 16000, &payload)).unwrap();
        assert_eq!(clip.samples, vec![0.5]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(decode_wav(b"RIFX0000WAVE"), Err(Error::Decode(_))));
        assert!(matches!(decode_wav(&[0u8; 4]), Err(Error::Decode(_))));
        let err = decode_wav(&wav_bytes(1, 1, 24, 16000, &[0, 0, 0])).unwrap_err();
        match err {
            Error::UnsupportedFormat(msg) => assert!(msg.contains("24-bit"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            decode_wav(&wav_bytes(6, 1, 8, 8000, &[0])),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(
            decode_wav(&wav_bytes(1, 3, 16, 8000, &[0; 6])),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn pcm16_round_trip_within_one_lsb() {
        let clip = tone(330.0, 16000, 4000, 0.8);
        let once = decode_wav(&encode_wav_pcm16(&clip)).unwrap();
        let twice = decode_wav(&encode_wav_pcm16(&once)).unwrap();
        for (a, b) in clip.samples.iter().zip(&once.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
        assert_eq!(once.samples, twice.samples);
    }

    #[test]
    fn resample_identity_is_bitwise() {
        let clip = tone(440.0, 16000, 1000, 0.3);
        assert_eq!(resample(&clip, 16000).unwrap(), clip);
    }

    #[test]
    fn resample_length_ratio() {
        let clip = tone(200.0, 8000, 8000, 0.3);
        let up = resample(&clip, 16000).unwrap();
        assert_eq!(up.samples.len(), 16000);
        assert_eq!(up.sample_rate_hz, 16000);
        assert!(resample(&clip, 0).is_err());
    }

    #[test]
    fn resample_preserves_tone_bin() {
        use crate::dsp::{stft_magnitude, StftParams};
        let argmax_hz = |clip: &AudioClip| {
            let params = StftParams::default().with_fft_size(4096);
            let spec = stft_magnitude(clip, &params).unwrap();
            let bins = spec.n_bins();
            let mut acc = vec![0.0f64; bins];
            for t in 0..spec.n_frames() {
                for (k, a) in acc.iter_mut().enumerate() {
                    *a += spec.get(t, k) as f64;
                }
            }
            let k = acc
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            k as f64 * clip.sample_rate_hz as f64 / 4096.0
        };
        let clip = tone(440.0, 48000, 48000, 0.5);
        let down = resample(&clip, 16000).unwrap();
        let before = argmax_hz(&clip);
        let after = argmax_hz(&down);
        assert!((before - 440.0).abs() <= 48000.0 / 4096.0);
        assert!((after - 440.0).abs() <= 16000.0 / 4096.0, "{after}");
    }
}
