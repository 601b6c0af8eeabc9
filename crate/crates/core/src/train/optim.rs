use indexmap::IndexMap;

use crate::autodiff::{GradMap, ParamStore, Real, Tensor};
use crate::error::{invalid, Error, Result};

pub trait Optimizer<T: Real> {
    /// Applies one update in place. Gradients must align with parameters.
    fn step(&mut self, params: &mut ParamStore<T>, grads: &GradMap<T>) -> Result<()>;
    fn learning_rate(&self) -> f64;
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl<T: Real> Optimizer<T> for Sgd {
    fn step(&mut self, params: &mut ParamStore<T>, grads: &GradMap<T>) -> Result<()> {
        params.check_aligned(grads)?;
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?;
            for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                *w = T::lit(w.as_f64() - self.lr * d.as_f64());
            }
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }
}

/// Bias-corrected Adam with state keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: IndexMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, moments: IndexMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// First and second moments as tensors named `m.<param>` and `v.<param>`.
    pub fn state(&self, params: &ParamStore<f32>) -> Result<ParamStore<f32>> {
        let mut out = ParamStore::new();
        for (name, (m, v)) in &self.moments {
            let shape = params.get(name)?.shape().to_vec();
            out.insert(format!("m.{name}"), Tensor::new(shape.clone(), m.iter().map(|&x| x as f32).collect())?);
            out.insert(format!("v.{name}"), Tensor::new(shape, v.iter().map(|&x| x as f32).collect())?);
        }
        Ok(out)
    }
}

impl<T: Real> Optimizer<T> for Adam {
    fn step(&mut self, params: &mut ParamStore<T>, grads: &GradMap<T>) -> Result<()> {
        params.check_aligned(grads)?;
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; p.numel()], vec![0.0; p.numel()]));
            if m.len() != p.numel() {
                return Err(Error::ShapeMismatch { op: "adam state", left: vec![m.len()], right: p.shape().to_vec() });
            }
            for (i, (w, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let d = d.as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * d;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * d * d;
                let update = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                *w = T::lit(w.as_f64() - update);
            }
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Loss at the parameters before the step.
    pub loss: f64,
    /// Loss at the SAM-perturbed point (equal to `loss` for plain steps).
    pub perturbed_loss: f64,
    pub grad_norm: f64,
}

fn finite(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite("loss"))
    }
}

/// Gradient at the current point, then one optimizer step.
pub fn plain_step<T: Real, O: Optimizer<T> + ?Sized>(
    params: &mut ParamStore<T>,
    opt: &mut O,
    mut loss_and_grad: impl FnMut(&ParamStore<T>) -> Result<(f64, GradMap<T>)>,
) -> Result<StepOutcome> {
    let (loss, g) = loss_and_grad(params)?;
    finite(loss)?;
    let grad_norm = g.global_norm();
    opt.step(params, &g)?;
    Ok(StepOutcome { loss, perturbed_loss: loss, grad_norm })
}

/// Sharpness-aware step: ascend to `w + rho * g / |g|`, take the gradient
/// there, and apply it through `opt` at the original `w`. A zero gradient
/// skips the ascent.
pub fn sam_step<T: Real, O: Optimizer<T> + ?Sized>(
    params: &mut ParamStore<T>,
    opt: &mut O,
    rho: f64,
    mut loss_and_grad: impl FnMut(&ParamStore<T>) -> Result<(f64, GradMap<T>)>,
) -> Result<StepOutcome> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(invalid(format!("SAM radius must be positive, got {rho}")));
    }
    let (loss, g) = loss_and_grad(params)?;
    finite(loss)?;
    let grad_norm = g.global_norm();
    if grad_norm == 0.0 {
        opt.step(params, &g)?;
        return Ok(StepOutcome { loss, perturbed_loss: loss, grad_norm });
    }
    let scale = rho / grad_norm;
    let mut perturbed = params.clone();
    for (name, p) in perturbed.iter_mut() {
        let gi = g.get(name)?;
        for (w, &d) in p.data_mut().iter_mut().zip(gi.data()) {
            *w = T::lit(w.as_f64() + scale * d.as_f64());
        }
    }
    let (perturbed_loss, g_sharp) = loss_and_grad(&perturbed)?;
    finite(perturbed_loss)?;
    opt.step(params, &g_sharp)?;
    Ok(StepOutcome { loss, perturbed_loss, grad_norm })
}
