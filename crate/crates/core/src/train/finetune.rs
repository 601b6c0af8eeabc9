use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{class_weight, one_hot, weighted_cross_entropy_scaled};
use super::optim::{plain_step, sam_step, Adam};
use super::{OptimizerKind, PosWeight, TrainConfig};
use crate::audio_io::AudioClip;
use crate::augment::{augment_waveform, mixup, sample_lambda, spec_augment, AugmentConfig};
use crate::autodiff::{GradMap, ParamStore, Tape};
use crate::dsp::{to_model_input, Featurizer, ModelInput, Spectrogram};
use crate::error::{invalid, Result};
use crate::eval::{score_auroc, Aggregation, ScoredSample};
use crate::model::{ForwardOptions, VitModel};
use crate::rng::stream;

/// One labelled segment. `clip` enables waveform augmentation; without it
/// only the spectrogram stage runs.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub subject_id: String,
    pub label: u8,
    pub spec: Spectrogram,
    pub clip: Option<AudioClip>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_auroc: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_auroc: f64,
    pub pos_weight: f64,
}

/// Turns an example into a model input, running both augmentation stages
/// when `augment` is given.
pub fn prepare_input(
    ex: &Example,
    model: &VitModel<f32>,
    features: &Featurizer,
    augment: Option<&AugmentConfig>,
    rng: &mut impl Rng,
) -> Result<ModelInput> {
    let norm = features.config().normalization;
    let Some(aug) = augment.filter(|a| a.enabled) else {
        return to_model_input(&ex.spec, model.config.input, norm);
    };
    let spec = match &ex.clip {
        Some(clip) => features.log_mel(&augment_waveform(clip, &aug.waveform, rng))?,
        None => ex.spec.clone(),
    };
    let spec = spec_augment(&spec, &aug.spec, rng)?;
    to_model_input(&spec, model.config.input, norm)
}

/// Class-weighted cross-entropy and its gradient for a batch. Samples run
/// on separate tapes in parallel; the reduction is sequential in batch
/// order so the result does not depend on the thread count.
pub fn batch_loss_and_grad(
    model: &VitModel<f32>,
    params: &ParamStore<f32>,
    inputs: &[ModelInput],
    targets: &[[f64; 2]],
    pos_weight: f64,
) -> Result<(f64, GradMap<f32>)> {
    let n = inputs.len();
    if n == 0 || targets.len() != n {
        return Err(invalid("batch inputs and targets must be non-empty and aligned"));
    }
    let parts: Vec<(f64, GradMap<f32>)> = inputs
        .par_iter()
        .zip(targets.par_iter())
        .map(|(x, y)| {
            let tape = Tape::new();
            let p = params.bind(&tape);
            let trace = model.forward(&p, model.patches(&tape, x)?, None, ForwardOptions::default())?;
            let loss = weighted_cross_entropy_scaled(model.logits(&p, &trace)?, y, pos_weight, n)?;
            let grads = p.grads(&tape.backward(loss)?);
            Ok((loss.item() as f64, grads))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut acc = params.zeros_like();
    for (l, g) in &parts {
        total += l;
        acc.accumulate(g)?;
    }
    Ok((total, acc))
}

/// Positive-class probabilities, no augmentation.
pub fn predict_scores(model: &VitModel<f32>, features: &Featurizer, examples: &[Example]) -> Result<Vec<f64>> {
    examples
        .par_iter()
        .map(|ex| {
            let x = to_model_input(&ex.spec, model.config.input, features.config().normalization)?;
            Ok(model.predict_proba(&x)?[1])
        })
        .collect()
}

fn eval_auroc(model: &VitModel<f32>, features: &Featurizer, eval: &[Example]) -> Result<f64> {
    let scores = predict_scores(model, features, eval)?;
    let samples: Vec<ScoredSample> = eval
        .iter()
        .zip(scores)
        .map(|(ex, score)| ScoredSample { subject_id: ex.subject_id.clone(), score, label: ex.label })
        .collect();
    Ok(score_auroc(&samples, Aggregation::SubjectMean)?.auroc)
}

/// Runs the epoch loop and leaves the best-AUROC parameters in `model`.
pub fn finetune(
    model: &mut VitModel<f32>,
    train: &[Example],
    eval: &[Example],
    cfg: &TrainConfig,
    augment: &AugmentConfig,
    features: &Featurizer,
    seed: u64,
) -> Result<FinetuneReport> {
    cfg.validate()?;
    augment.validate()?;
    if train.is_empty() || eval.is_empty() {
        return Err(invalid("fine-tuning needs non-empty training and evaluation splits"));
    }
    if model.config.n_classes != 2 {
        return Err(invalid(format!("expected a two-way head, model has {}", model.config.n_classes)));
    }
    let n_pos = train.iter().filter(|e| e.label == 1).count();
    let pos_weight = match cfg.pos_weight {
        PosWeight::Fixed(w) => w,
        PosWeight::Auto(_) => class_weight(train.len() - n_pos, n_pos)?,
    };
    log::info!("fine-tuning on {} examples, positive weight {pos_weight:.4}", train.len());

    let mut params = model.params.clone();
    let mut opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let template = &*model;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut stream(seed, "finetune.shuffle", &[epoch as u64]));
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut inputs: Vec<ModelInput> = chunk
                .par_iter()
                .map(|&i| {
                    let mut rng = stream(seed, "augment", &[epoch as u64, i as u64]);
                    prepare_input(&train[i], template, features, Some(augment), &mut rng)
                })
                .collect::<Result<_>>()?;
            let mut targets: Vec<[f64; 2]> = chunk.iter().map(|&i| one_hot(train[i].label)).collect();
            if augment.enabled && augment.mixup.enabled && chunk.len() > 1 {
                let mut rng = stream(seed, "mixup", &[epoch as u64, b as u64]);
                let lambda = sample_lambda(augment.mixup.alpha, &mut rng)?;
                let mut partner: Vec<usize> = (0..chunk.len()).collect();
                partner.shuffle(&mut rng);
                let (xs, ys) = (inputs.clone(), targets.clone());
                for (k, &j) in partner.iter().enumerate() {
                    let (x, y) = mixup(&xs[k].values, &ys[k], &xs[j].values, &ys[j], lambda)?;
                    inputs[k].values = x;
                    targets[k] = [y[0], y[1]];
                }
            }
            let lg = |p: &ParamStore<f32>| batch_loss_and_grad(template, p, &inputs, &targets, pos_weight);
            let out = match cfg.optimizer {
                OptimizerKind::Adam => plain_step(&mut params, &mut opt, lg)?,
                OptimizerKind::AdamSam => sam_step(&mut params, &mut opt, cfg.sam_rho, lg)?,
            };
            loss_sum += out.loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let snapshot = VitModel { config: template.config.clone(), params: params.clone() };
        let auroc = eval_auroc(&snapshot, features, eval)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen as f64,
            eval_auroc: auroc,
            lr: cfg.learning_rate,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: loss {:.5} auroc {:.4}", m.train_loss, auroc);
        metrics.push(m);
        if best.as_ref().is_none_or(|(a, _, _)| auroc > *a) {
            best = Some((auroc, epoch, snapshot.params));
        }
    }
    let (best_auroc, best_epoch) = match best {
        Some((a, e, p)) => {
            model.params = p;
            (a, e)
        }
        None => (f64::NAN, 0),
    };
    Ok(FinetuneReport { metrics, best_epoch, best_auroc, pos_weight })
}
