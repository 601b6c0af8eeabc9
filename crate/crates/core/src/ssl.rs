//! Teacher-student masked pretraining with an EMA teacher.
//!
//! The student sees only unmasked patches. A light decoder fills masked
//! positions with a learned token and regresses the teacher's per-block
//! representations there (the local loss), while the student's class token
//! is pulled toward the teacher's mean patch representation (the global
//! loss).

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, concat_rows, Bound, GradMap, ParamStore, Real, Tape, Tensor, Var};
use crate::dsp::ModelInput;
use crate::error::{invalid, Error, Result};
use crate::model::{block_forward, init_block, ForwardOptions, VitModel};
use crate::rng::stream;
use crate::train::{Adam, Optimizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslConfig {
    pub mask_ratio: f64,
    pub ema_tau: f64,
    /// When set, tau moves linearly from `ema_tau` to this value over `steps`.
    pub ema_tau_end: Option<f64>,
    pub w_global: f64,
    pub w_local: f64,
    pub decoder_depth: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Write checkpoints every this many steps; 0 writes only at the end.
    pub checkpoint_every: usize,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.75,
            ema_tau: 0.999,
            ema_tau_end: None,
            w_global: 1.0,
            w_local: 1.0,
            decoder_depth: 1,
            steps: 100,
            batch_size: 8,
            learning_rate: 1e-4,
            checkpoint_every: 0,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(invalid("ssl.mask_ratio must lie in (0, 1)"));
        }
        for tau in std::iter::once(self.ema_tau).chain(self.ema_tau_end) {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(invalid("ssl EMA tau must lie in (0, 1]"));
            }
        }
        if !(self.w_global >= 0.0 && self.w_local >= 0.0 && self.w_global + self.w_local > 0.0) {
            return Err(invalid("ssl loss weights must be non-negative and not both zero"));
        }
        if self.decoder_depth == 0 || self.batch_size == 0 {
            return Err(invalid("ssl.decoder_depth and ssl.batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("ssl.learning_rate must be non-negative"));
        }
        Ok(())
    }

    /// EMA coefficient for step `i` of `steps`.
    pub fn tau_at(&self, i: usize) -> f64 {
        match self.ema_tau_end {
            Some(end) if self.steps > 1 => {
                let f = i.min(self.steps - 1) as f64 / (self.steps - 1) as f64;
                self.ema_tau + (end - self.ema_tau) * f
            }
            _ => self.ema_tau,
        }
    }
}

/// `true` marks a masked patch; exactly `round(ratio * n)` are masked.
pub fn sample_mask(n_patches: usize, mask_ratio: f64, rng: &mut impl Rng) -> Result<Vec<bool>> {
    if n_patches < 2 || !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(invalid(format!("cannot mask {mask_ratio} of {n_patches} patches")));
    }
    let n_masked = (mask_ratio * n_patches as f64).round() as usize;
    if n_masked == 0 || n_masked == n_patches {
        return Err(invalid(format!("mask ratio {mask_ratio} over {n_patches} patches masks none or all")));
    }
    let mut mask = vec![false; n_patches];
    for i in sample(rng, n_patches, n_masked) {
        mask[i] = true;
    }
    Ok(mask)
}

/// `teacher <- tau * teacher + (1 - tau) * student`, elementwise.
pub fn ema_update<T: Real>(teacher: &mut ParamStore<T>, student: &ParamStore<T>, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(invalid(format!("EMA tau {tau} outside [0, 1]")));
    }
    teacher.check_aligned(student)?;
    let (a, b) = (T::lit(tau), T::lit(1.0 - tau));
    for (name, t) in teacher.iter_mut() {
        let s = student.get(name)?;
        for (x, &y) in t.data_mut().iter_mut().zip(s.data()) {
            *x = a * *x + b * y;
        }
    }
    Ok(())
}

/// Predicts every student block's representation at masked positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T: Real = f32> {
    pub params: ParamStore<T>,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub depth: usize,
    /// Number of encoder blocks whose outputs are predicted.
    pub target_blocks: usize,
    pub n_patches: usize,
}

impl<T: Real> Decoder<T> {
    pub fn new(encoder: &VitModel<T>, depth: usize, seed: u64) -> Result<Self> {
        if depth == 0 {
            return Err(invalid("decoder depth must be positive"));
        }
        let cfg = &encoder.config;
        let (e, p, m) = (cfg.embed_dim, cfg.n_patches(), cfg.depth);
        let mut rng = stream(seed, "ssl.decoder.init", &[]);
        let mut params = ParamStore::new();
        let init = |shape: &[usize], rng: &mut crate::rng::StreamRng| {
            let normal = rand_distr::Normal::new(0.0, 0.02).expect("valid std");
            Tensor::from_fn(shape, |_| loop {
                let v: f64 = rand_distr::Distribution::sample(&normal, rng);
                if v.abs() <= 0.04 {
                    break T::lit(v);
                }
            })
        };
        params.insert("mask_token", init(&[1, e], &mut rng));
        params.insert("pos_embed", init(&[p, e], &mut rng));
        for i in 0..depth {
            init_block(&mut params, &format!("blocks.{i}"), e, cfg.mlp_hidden(), &mut rng);
        }
        params.insert("norm.weight", Tensor::full(&[e], T::one()));
        params.insert("norm.bias", Tensor::zeros(&[e]));
        params.insert("pred.weight", init(&[e, m * e], &mut rng));
        params.insert("pred.bias", Tensor::zeros(&[m * e]));
        Ok(Self { params, embed_dim: e, n_heads: cfg.n_heads, depth, target_blocks: m, n_patches: p })
    }

    /// `visible_reps` are the student's final patch tokens, one row per
    /// visible index in ascending order. Returns `[P', M * E]`.
    pub fn forward<'t>(&self, p: &Bound<'t, T>, visible_reps: Var<'t, T>, mask: &[bool]) -> Result<Var<'t, T>> {
        if mask.len() != self.n_patches {
            return Err(Error::ShapeMismatch { op: "decoder mask", left: vec![mask.len()], right: vec![self.n_patches] });
        }
        let k = mask.iter().filter(|m| !**m).count();
        let token_row = k;
        let mut next = 0;
        let layout: Vec<usize> = mask
            .iter()
            .map(|&masked| {
                if masked {
                    token_row
                } else {
                    next += 1;
                    next - 1
                }
            })
            .collect();
        let rows = concat_rows(&[visible_reps, p.get("mask_token")?])?;
        let mut x = rows.gather_rows(&layout)?.add(&p.get("pos_embed")?)?;
        for i in 0..self.depth {
            x = block_forward(p, &format!("blocks.{i}"), x, self.n_heads, false)?.out;
        }
        let g = p.get("norm.weight")?;
        let b = p.get("norm.bias")?;
        let masked: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let x = x.layer_norm(Some((&g, &b)))?.gather_rows(&masked)?;
        x.matmul(&p.get("pred.weight")?)?.add_bias(&p.get("pred.bias")?)
    }
}

/// Teacher-side regression targets for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTargets<T: Real = f32> {
    /// Layer-normalized block outputs at masked positions, `[P', M * E]`.
    pub local: Tensor<T>,
    /// Mean of the final normalized patch tokens, `[1, E]`.
    pub global: Tensor<T>,
}

pub fn teacher_targets<T: Real>(teacher: &VitModel<T>, input: &ModelInput, mask: &[bool]) -> Result<TeacherTargets<T>> {
    let tape = Tape::new();
    let p = teacher.bind_frozen(&tape);
    let trace = teacher.forward(&p, teacher.patches(&tape, input)?, None, ForwardOptions::default())?;
    let masked: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let per_block = trace
        .patch_reps_per_block
        .iter()
        .map(|r| r.gather_rows(&masked)?.layer_norm(None))
        .collect::<Result<Vec<_>>>()?;
    let local = concat_cols(&per_block)?;
    let global = trace.final_patch_reps.mean_rows()?.reshape(&[1, teacher.config.embed_dim])?;
    Ok(TeacherTargets { local: (*local.value()).clone(), global: (*global.value()).clone() })
}

pub struct SslLosses<'t, T: Real> {
    pub global: Var<'t, T>,
    pub local: Var<'t, T>,
    pub total: Var<'t, T>,
}

fn mse<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    let d = a.sub(&b)?;
    d.mul(&d)?.mean()
}

/// Mean-squared local and global losses and their weighted sum.
pub fn ssl_losses<'t, T: Real>(
    x_s: Var<'t, T>,
    f_t: Var<'t, T>,
    c_s: Var<'t, T>,
    f_t_global: Var<'t, T>,
    w_global: f64,
    w_local: f64,
) -> Result<SslLosses<'t, T>> {
    let local = mse(x_s, f_t)?;
    let global = mse(c_s, f_t_global)?;
    let total = global.scale(T::lit(w_global))?.add(&local.scale(T::lit(w_local))?)?;
    Ok(SslLosses { global, local, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub global: f64,
    pub local: f64,
}

/// Student, EMA teacher, decoder and the two optimizers.
#[derive(Debug, Clone)]
pub struct SslState {
    pub student: VitModel<f32>,
    pub teacher: VitModel<f32>,
    pub decoder: Decoder<f32>,
    pub student_opt: Adam,
    pub decoder_opt: Adam,
    pub step: usize,
}

impl SslState {
    /// Teacher starts as an exact copy of the student.
    pub fn new(student: VitModel<f32>, cfg: &SslConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let decoder = Decoder::new(&student, cfg.decoder_depth, seed)?;
        Ok(Self {
            teacher: student.clone(),
            student,
            decoder,
            student_opt: Adam::new(cfg.learning_rate),
            decoder_opt: Adam::new(cfg.learning_rate),
            step: 0,
        })
    }
}

/// One gradient step on student and decoder followed by the EMA update.
/// Returned losses are measured before the update.
pub fn pretrain_step(state: &mut SslState, batch: &[ModelInput], cfg: &SslConfig, rng: &mut impl Rng) -> Result<StepLosses> {
    if state.student.config != state.teacher.config {
        return Err(invalid("student and teacher configs differ"));
    }
    if batch.is_empty() {
        return Err(invalid("empty pretraining batch"));
    }
    let n_patches = state.student.config.n_patches();
    let masks = batch
        .iter()
        .map(|_| sample_mask(n_patches, cfg.mask_ratio, rng))
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len();
    let (student, teacher, decoder) = (&state.student, &state.teacher, &state.decoder);
    let parts: Vec<(StepLosses, GradMap<f32>, GradMap<f32>)> = batch
        .par_iter()
        .zip(masks.par_iter())
        .map(|(x, mask)| {
            let targets = teacher_targets(teacher, x, mask)?;
            let tape = Tape::new();
            let sp = student.bind(&tape);
            let dp = decoder.params.bind(&tape);
            let visible: Vec<bool> = mask.iter().map(|m| !m).collect();
            let trace = student.forward(&sp, student.patches(&tape, x)?, Some(&visible), ForwardOptions::default())?;
            let x_s = decoder.forward(&dp, trace.final_patch_reps, mask)?;
            let l = ssl_losses(
                x_s,
                tape.constant(targets.local),
                trace.cls_out,
                tape.constant(targets.global),
                cfg.w_global,
                cfg.w_local,
            )?;
            let scaled = l.total.scale(1.0 / n as f32)?;
            let grads = tape.backward(scaled)?;
            let losses = StepLosses {
                total: l.total.item() as f64,
                global: l.global.item() as f64,
                local: l.local.item() as f64,
            };
            Ok((losses, sp.grads(&grads), dp.grads(&grads)))
        })
        .collect::<Result<_>>()?;
    let mut gs = state.student.params.zeros_like();
    let mut gd = state.decoder.params.zeros_like();
    let mut sum = StepLosses { total: 0.0, global: 0.0, local: 0.0 };
    for (l, s, d) in &parts {
        sum.total += l.total;
        sum.global += l.global;
        sum.local += l.local;
        gs.accumulate(s)?;
        gd.accumulate(d)?;
    }
    let mean = StepLosses { total: sum.total / n as f64, global: sum.global / n as f64, local: sum.local / n as f64 };
    if !mean.total.is_finite() {
        return Err(Error::NonFinite("ssl loss"));
    }
    state.student_opt.step(&mut state.student.params, &gs)?;
    state.decoder_opt.step(&mut state.decoder.params, &gd)?;
    ema_update(&mut state.teacher.params, &state.student.params, cfg.tau_at(state.step))?;
    state.step += 1;
    Ok(mean)
}
