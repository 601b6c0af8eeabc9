use super::tensor::{Real, Tensor};
use crate::error::Result;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_grad<T: Real>(mut f: impl FnMut(&Tensor<T>) -> Result<T>, theta: &Tensor<T>, h: T) -> Result<Tensor<T>> {
    let mut probe = theta.clone();
    let mut out = Vec::with_capacity(theta.numel());
    for i in 0..theta.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((up - down) / (h + h));
    }
    Tensor::new(theta.shape().to_vec(), out)
}
