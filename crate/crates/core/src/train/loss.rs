use crate::autodiff::{Real, Tensor, Var};
use crate::error::{invalid, Error, Result};

/// Negative-to-positive count ratio used to up-weight the positive class.
pub fn class_weight(n_neg: usize, n_pos: usize) -> Result<f64> {
    if n_pos == 0 || n_neg == 0 {
        return Err(invalid(format!("class weighting needs both classes, got {n_neg} negative and {n_pos} positive")));
    }
    Ok(n_neg as f64 / n_pos as f64)
}

/// One-hot target row for a binary label.
pub fn one_hot(label: u8) -> [f64; 2] {
    if label == 1 {
        [0.0, 1.0]
    } else {
        [1.0, 0.0]
    }
}

fn check_targets(targets: &[f64], rows: usize) -> Result<()> {
    if targets.len() != rows * 2 {
        return Err(Error::ShapeMismatch { op: "cross entropy", left: vec![rows, 2], right: vec![targets.len()] });
    }
    for (i, row) in targets.chunks(2).enumerate() {
        if row.iter().any(|&p| !(p >= 0.0)) || (row[0] + row[1] - 1.0).abs() > 1e-6 {
            return Err(invalid(format!("target row {i} is not a probability vector")));
        }
    }
    Ok(())
}

/// Per-sample weights `pos_weight * y_pos + y_neg`.
pub fn sample_weights(targets: &[f64], pos_weight: f64) -> Vec<f64> {
    targets.chunks(2).map(|r| r[0] + pos_weight * r[1]).collect()
}

/// Batch mean of `w_i * (-sum_j y_ij log softmax(z_i)_j)` over `[B, 2]`
/// logits and row-major `[B, 2]` soft targets.
pub fn weighted_cross_entropy<'t, T: Real>(logits: Var<'t, T>, targets: &[f64], pos_weight: f64) -> Result<Var<'t, T>> {
    let shape = logits.shape();
    let rows = match shape[..] {
        [b, 2] => b,
        _ => return Err(Error::ShapeMismatch { op: "cross entropy", left: shape, right: vec![0, 2] }),
    };
    check_targets(targets, rows)?;
    weighted_cross_entropy_scaled(logits, targets, pos_weight, rows)
}

/// Same loss with a caller-chosen divisor; lets per-sample terms computed
/// on separate tapes sum to the batch mean.
pub(crate) fn weighted_cross_entropy_scaled<'t, T: Real>(
    logits: Var<'t, T>,
    targets: &[f64],
    pos_weight: f64,
    divisor: usize,
) -> Result<Var<'t, T>> {
    let weights = sample_weights(targets, pos_weight);
    let coef = Tensor::from_fn(&logits.shape(), |i| T::lit(-weights[i / 2] * targets[i] / divisor as f64));
    logits.log_softmax()?.mul(&logits.tape().constant(coef))?.sum()
}
