use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixupConfig {
    pub enabled: bool,
    /// Both shape parameters of the Beta distribution for the mixing weight.
    pub alpha: f64,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self { enabled: true, alpha: 0.8 }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("augment.mixup.alpha must be positive"));
        }
        Ok(())
    }
}

/// Draws the mixing weight from Beta(alpha, alpha).
pub fn sample_lambda(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| invalid(format!("mixup alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

/// `lambda * a + (1 - lambda) * b` for both inputs and label vectors.
pub fn mixup(x_a: &[f32], y_a: &[f64], x_b: &[f32], y_b: &[f64], lambda: f64) -> Result<(Vec<f32>, Vec<f64>)> {
    if x_a.len() != x_b.len() || y_a.len() != y_b.len() {
        return Err(Error::ShapeMismatch {
            op: "mixup",
            left: vec![x_a.len(), y_a.len()],
            right: vec![x_b.len(), y_b.len()],
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("mixup weight {lambda} outside [0, 1]")));
    }
    for y in [y_a, y_b] {
        let s: f64 = y.iter().sum();
        if (s - 1.0).abs() > 1e-9 || y.iter().any(|&p| p < 0.0) {
            return Err(invalid("mixup labels must be probability vectors"));
        }
    }
    let x = x_a
        .iter()
        .zip(x_b)
        .map(|(&a, &b)| (lambda * a as f64 + (1.0 - lambda) * b as f64) as f32)
        .collect();
    let y = y_a.iter().zip(y_b).map(|(&a, &b)| lambda * a + (1.0 - lambda) * b).collect();
    Ok((x, y))
}
