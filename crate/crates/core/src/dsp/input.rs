use serde::{Deserialize, Serialize};

use super::{SpecKind, Spectrogram};
use crate::error::{invalid, Result};

const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Normalization {
    PerClipStandardize,
    FixedMeanStd { mean: f64, std: f64 },
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::PerClipStandardize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Image-like model input `[channels x height x width]`; height runs over
/// mel channels and width over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    pub normalization: Normalization,
}

impl ModelInput {
    pub fn shape(&self) -> InputShape {
        InputShape { channels: self.channels, height: self.height, width: self.width }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }
}

/// Bilinear resize with half-pixel centers; same-size input is returned as is.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    if h == out_h && w == out_w {
        return src.to_vec();
    }
    let coord = |dst: usize, scale: f64, len: usize| {
        let x = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (x.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, x - i0 as f64)
    };
    let (sy, sx) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, sy, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, sx, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

pub fn to_model_input(spec: &Spectrogram, target: InputShape, normalization: Normalization) -> Result<ModelInput> {
    if target.channels < 1 || target.height < 1 || target.width < 1 {
        return Err(invalid(format!("target dims must be positive, got {target:?}")));
    }
    if spec.n_frames() == 0 || spec.n_bins() == 0 {
        return Err(invalid("empty spectrogram"));
    }
    if spec.kind != SpecKind::LogMel {
        log::debug!("building model input from a {} spectrogram", spec.kind.as_str());
    }
    let (h, w) = (spec.n_bins(), spec.n_frames());
    let mut plane = vec![0.0; h * w];
    for t in 0..w {
        for m in 0..h {
            plane[m * w + t] = spec.get(t, m);
        }
    }
    let mut plane = resize_bilinear(&plane, h, w, target.height, target.width);
    let (mean, std) = match normalization {
        Normalization::PerClipStandardize => {
            let n = plane.len() as f64;
            let mean = plane.iter().sum::<f64>() / n;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var.sqrt().max(STD_FLOOR))
        }
        Normalization::FixedMeanStd { mean, std } => {
            if !(std > 0.0) {
                return Err(invalid("fixed std must be positive"));
            }
            (mean, std)
        }
    };
    for v in plane.iter_mut() {
        *v = (*v - mean) / std;
    }
    let plane: Vec<f32> = plane.into_iter().map(|v| v as f32).collect();
    let mut values = Vec::with_capacity(plane.len() * target.channels);
    for _ in 0..target.channels {
        values.extend_from_slice(&plane);
    }
    Ok(ModelInput { channels: target.channels, height: target.height, width: target.width, values, normalization })
}
