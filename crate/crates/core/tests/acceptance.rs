//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails or exceeds its time budget.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use coughkit::audio_io::AudioClip;
use coughkit::augment::AugmentConfig;
use coughkit::autodiff::{finite_diff_grad, ParamStore, Tape, Tensor};
use coughkit::config::ExperimentConfig;
use coughkit::dsp::{
    butterworth_lowpass, hann_window, log_mel, mel_filterbank, stft_magnitude, FeatureConfig, Featurizer, InputShape,
    ModelInput, Normalization, StftParams,
};
use coughkit::eval::auroc;
use coughkit::model::{param_count, ForwardOptions, VitConfig, VitModel};
use coughkit::pipeline::{run_pipeline, Command, RunRequest};
use coughkit::rng::stream;
use coughkit::segmenter::{detect_onsets, OnsetConfig};
use coughkit::ssl::{ema_update, pretrain_step, SslConfig, SslState};
use coughkit::synth::{burst_recording, separable_logmel_set, write_demo_dataset, Burst};
use coughkit::train::{class_weight, finetune, sam_step, weighted_cross_entropy, Example, OptimizerKind, Sgd, TrainConfig};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- 1

fn brute_force_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn auroc_oracle() -> Outcome {
    let ex = auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).map_err(|e| e.to_string())?;
    check(ex == 0.75, format!("worked example gave {ex}"))?;
    let mut rng = stream(1, "acceptance.auroc", &[]);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=200);
        // a small score alphabet forces ties
        let levels = rng.random_range(2..=20);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let fast = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((fast - brute_force_auroc(&scores, &labels)).abs());
    }
    check(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    Ok(format!("1000 tied instances, max deviation {worst:e}"))
}

// ---------------------------------------------------------------- 2

fn gradient_check() -> Outcome {
    let cfg = VitConfig {
        patch_size: 4,
        embed_dim: 16,
        depth: 2,
        n_heads: 2,
        mlp_ratio: 2,
        input: InputShape { channels: 1, height: 8, width: 12 },
        n_classes: 2,
    };
    let mut model = VitModel::<f64>::new(cfg, 5).map_err(|e| e.to_string())?;
    // move every tensor away from its init so no group sits at an
    // exactly symmetric point (zero biases, unit norm gains)
    let mut rng = stream(5, "acceptance.grad", &[]);
    for (_, t) in model.params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let input = ModelInput {
        channels: 1,
        height: 8,
        width: 12,
        values: (0..96).map(|_| rng.random_range(-2.0f32..2.0)).collect(),
        normalization: Normalization::PerClipStandardize,
    };
    let targets = [0.3, 0.7];
    let loss_of = |params: &ParamStore<f64>| -> f64 {
        let tape = Tape::new();
        let p = params.bind(&tape);
        let trace = model.forward(&p, model.patches(&tape, &input).unwrap(), None, ForwardOptions::default()).unwrap();
        weighted_cross_entropy(model.logits(&p, &trace).unwrap(), &targets, 2.5).unwrap().item()
    };
    let tape = Tape::new();
    let p = model.params.bind(&tape);
    let trace = model.forward(&p, model.patches(&tape, &input).unwrap(), None, ForwardOptions::default()).unwrap();
    let loss = weighted_cross_entropy(model.logits(&p, &trace).unwrap(), &targets, 2.5).unwrap();
    let grads = p.grads(&tape.backward(loss).unwrap());

    let mut worst = (0.0f64, String::new());
    for (name, theta) in model.params.iter() {
        let fd = finite_diff_grad(
            |t: &Tensor<f64>| {
                let mut q = model.params.clone();
                *q.get_mut(name)? = t.clone();
                Ok(loss_of(&q))
            },
            theta,
            1e-6,
        )
        .map_err(|e| e.to_string())?;
        let g = grads.get(name).map_err(|e| e.to_string())?;
        let diff: f64 = g.data().iter().zip(fd.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = g.sum_sq().sqrt().max(fd.sum_sq().sqrt());
        check(scale > 0.0, format!("{name}: gradient identically zero"))?;
        let rel = diff / scale;
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    check(worst.0 < 1e-4, format!("{} relative error {:e}", worst.1, worst.0))?;
    Ok(format!("{} parameter groups, worst {} at {:.2e}", model.params.len(), worst.1, worst.0))
}

// ---------------------------------------------------------------- 3

fn sam_reference() -> Outcome {
    let store = |w: &[f64]| {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(vec![w.len()], w.to_vec()).unwrap());
        p
    };
    let mut p = store(&[1.0]);
    sam_step(&mut p, &mut Sgd { lr: 0.5 }, 0.1, |q| {
        let w = q.get("w")?.data()[0];
        Ok((0.5 * w * w, store(&[w])))
    })
    .map_err(|e| e.to_string())?;
    let w = p.get("w").unwrap().data()[0];
    // 1 + 0.1 rounds up in binary, so the result sits one ulp below the
    // double nearest 0.45
    check((w - 0.45).abs() <= 4.0 * f64::EPSILON * 0.45, format!("analytic case gave {w}"))?;

    let (a, b, lr, rho) = (0.5, 40.0, 0.01, 0.05);
    let mut p = store(&[1.5, -0.8]);
    let (mut x, mut y) = (1.5f64, -0.8f64);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        sam_step(&mut p, &mut Sgd { lr }, rho, |q| {
            let w = q.get("w")?.data();
            Ok((0.5 * (a * w[0] * w[0] + b * w[1] * w[1]), store(&[a * w[0], b * w[1]])))
        })
        .map_err(|e| e.to_string())?;
        // independent two-step reference
        let (gx, gy) = (a * x, b * y);
        let norm = (gx * gx + gy * gy).sqrt();
        let (xe, ye) = (x + rho * gx / norm, y + rho * gy / norm);
        x -= lr * a * xe;
        y -= lr * b * ye;
        let w = p.get("w").unwrap().data();
        worst = worst.max((w[0] - x).abs()).max((w[1] - y).abs());
    }
    check(worst <= 1e-10, format!("trajectory deviation {worst:e}"))?;
    Ok(format!("analytic case {w}; 20-step deviation {worst:e}"))
}

// ---------------------------------------------------------------- 4

fn segmentation_recall() -> Outcome {
    let cfg = OnsetConfig::default().with_threshold(0.5);
    let hop = 256.0;
    let (mut bursts_total, mut detected, mut false_onsets) = (0, 0, 0);
    let mut misses = Vec::new();
    for c in 0..100u64 {
        let mut rng = stream(c, "acceptance.segment", &[]);
        let n = rng.random_range(1..=3);
        let mut bursts = Vec::new();
        let mut t = 0.3;
        for _ in 0..n {
            let start = t + rng.random_range(0.0..0.5);
            let len = rng.random_range(0.15..0.4);
            bursts.push(Burst { start_s: start, len_s: len, amp: rng.random_range(0.1..0.8) });
            t = start + len + 0.4;
        }
        let clip = burst_recording(16000, t + 0.3, 0.001, &bursts, c);
        let onsets = detect_onsets(&clip, &cfg).map_err(|e| e.to_string())?;
        let mut used = vec![false; onsets.len()];
        for b in &bursts {
            bursts_total += 1;
            let truth = (b.start_s * 16000.0).round() / hop;
            match (0..onsets.len()).find(|&i| !used[i] && (onsets[i] as f64 - truth).abs() <= 3.0) {
                Some(i) => {
                    used[i] = true;
                    detected += 1;
                }
                None => misses.push(format!("clip {c} burst at frame {truth:.1}: {onsets:?}")),
            }
        }
        false_onsets += used.iter().filter(|u| !**u).count();
    }
    check(detected == bursts_total && false_onsets == 0, format!(
        "{detected}/{bursts_total} detected, {false_onsets} false; first misses {:?}",
        &misses[..misses.len().min(3)]
    ))?;
    Ok(format!("{detected}/{bursts_total} bursts within 3 frames, 0 false onsets"))
}

// ---------------------------------------------------------------- 5

fn ssl_sanity() -> Outcome {
    let cfg_model = VitConfig {
        patch_size: 8,
        embed_dim: 16,
        depth: 2,
        n_heads: 2,
        mlp_ratio: 2,
        input: InputShape { channels: 1, height: 16, width: 32 },
        n_classes: 2,
    };
    let batch: Vec<ModelInput> = (0..4)
        .map(|s| {
            let (fa, fb) = (0.3 + 0.1 * s as f32, 0.15 + 0.05 * s as f32);
            ModelInput {
                channels: 1,
                height: 16,
                width: 32,
                values: (0..512).map(|i| ((i / 32) as f32 * fa).sin() + ((i % 32) as f32 * fb).cos()).collect(),
                normalization: Normalization::PerClipStandardize,
            }
        })
        .collect();
    let cfg = SslConfig { learning_rate: 3e-3, ..Default::default() };
    let mut state = SslState::new(VitModel::new(cfg_model, 3).map_err(|e| e.to_string())?, &cfg, 3).map_err(|e| e.to_string())?;
    let mut rng = stream(3, "acceptance.ssl", &[]);
    let mut losses = Vec::new();
    for _ in 0..50 {
        losses.push(pretrain_step(&mut state, &batch, &cfg, &mut rng).map_err(|e| e.to_string())?.total);
    }
    let (first, last) = (losses[0], losses[49]);
    check(last <= 0.5 * first, format!("L_total {first:.4} -> {last:.4}"))?;

    // EMA recurrence against the scalar product tau^n, bitwise
    let mut teacher = ParamStore::<f32>::new();
    teacher.insert("w", Tensor::full(&[4], 1.0f32));
    let mut student = ParamStore::<f32>::new();
    student.insert("w", Tensor::full(&[4], 0.0f32));
    let mut teacher64 = teacher.cast::<f64>();
    let student64 = student.cast::<f64>();
    let (mut pow32, mut pow64) = (1.0f32, 1.0f64);
    for n in 1..=200 {
        ema_update(&mut teacher, &student, 0.9).map_err(|e| e.to_string())?;
        ema_update(&mut teacher64, &student64, 0.9).map_err(|e| e.to_string())?;
        pow32 *= 0.9f32;
        pow64 *= 0.9f64;
        let (a, b) = (teacher.get("w").unwrap().data(), teacher64.get("w").unwrap().data());
        check(a.iter().all(|v| v.to_bits() == pow32.to_bits()), format!("f32 step {n}: {} vs {pow32}", a[0]))?;
        check(b.iter().all(|v| v.to_bits() == pow64.to_bits()), format!("f64 step {n}: {} vs {pow64}", b[0]))?;
    }
    let mut halves = ParamStore::<f64>::new();
    halves.insert("w", Tensor::full(&[4], 1.0));
    for _ in 0..60 {
        ema_update(&mut halves, &student64, 0.5).map_err(|e| e.to_string())?;
    }
    check(halves.get("w").unwrap().data()[0] == 0.5f64.powi(60), "tau = 0.5 power mismatch")?;
    Ok(format!("L_total {first:.4} -> {last:.4} ({:.0}% lower); EMA bitwise over 200 steps", 100.0 * (1.0 - last / first)))
}

// ---------------------------------------------------------------- 6

fn separable_examples(n: usize, seed: u64) -> Vec<Example> {
    separable_logmel_set(n, 32, 32, 3.0, 2, seed)
        .into_iter()
        .enumerate()
        .map(|(i, (spec, label))| Example { id: format!("{seed}-{i}"), subject_id: format!("{seed}-{i}"), label, spec, clip: None })
        .collect()
}

fn finetune_convergence() -> Outcome {
    let model_cfg = VitConfig {
        patch_size: 8,
        embed_dim: 32,
        depth: 2,
        n_heads: 2,
        mlp_ratio: 2,
        input: InputShape { channels: 1, height: 32, width: 32 },
        n_classes: 2,
    };
    let train = separable_examples(128, 10);
    let eval = separable_examples(64, 11);
    let features = Featurizer::new(FeatureConfig { n_mels: 32, ..Default::default() }).map_err(|e| e.to_string())?;
    let augment = AugmentConfig::default();
    let run = |optimizer| -> Result<f64, String> {
        let cfg = TrainConfig { learning_rate: 1e-3, batch_size: 16, epochs: 5, optimizer, ..Default::default() };
        let mut model = VitModel::new(model_cfg.clone(), 7).map_err(|e| e.to_string())?;
        let report = finetune(&mut model, &train, &eval, &cfg, &augment, &features, 7).map_err(|e| e.to_string())?;
        Ok(report.best_auroc)
    };
    let plain = run(OptimizerKind::Adam)?;
    let sam = run(OptimizerKind::AdamSam)?;
    check(plain >= 0.95, format!("Adam reached AUROC {plain:.4}"))?;
    check(sam >= plain - 0.02, format!("SAM {sam:.4} vs Adam {plain:.4}"))?;
    Ok(format!("Adam AUROC {plain:.4}, Adam+SAM {sam:.4}"))
}

// ---------------------------------------------------------------- 7

fn reference_arithmetic() -> Outcome {
    let b = param_count(&VitConfig::vit_b()) as f64;
    let l = param_count(&VitConfig::vit_l()) as f64;
    check((b / 86e6 - 1.0).abs() <= 0.02, format!("ViT-B {b}"))?;
    check((l / 307e6 - 1.0).abs() <= 0.02, format!("ViT-L {l}"))?;
    let w = class_weight(2728, 272).map_err(|e| e.to_string())?;
    check((w - 10.03).abs() <= 0.01, format!("class weight {w}"))?;
    let p = StftParams::default();
    check(p.hop_samples(16000) == 256 && p.win_samples(16000) == 336, "framing")?;
    Ok(format!("ViT-B {:.2}M, ViT-L {:.2}M, weight {w:.4}, hop/win 256/336", b / 1e6, l / 1e6))
}

// ---------------------------------------------------------------- 8

fn pipeline_run(root: &Path, manifest: &Path) -> Result<Vec<u8>, String> {
    let config = ExperimentConfig::from_json(
        r#"{
            "segmenter": {"peak_threshold": 0.5},
            "dsp": {"n_mels": 64},
            "model": {"patch_size": 16, "embed_dim": 32, "depth": 2, "n_heads": 2, "mlp_ratio": 2,
                      "input": {"channels": 1, "height": 64, "width": 64}, "n_classes": 2},
            "train": {"learning_rate": 0.001, "batch_size": 8, "epochs": 3},
            "seed": 42
        }"#,
    )
    .map_err(|e| e.to_string())?;
    let out = root.to_path_buf();
    let step = |command, manifest: &Path| {
        run_pipeline(&RunRequest { command, config: config.clone(), manifest: Some(manifest.to_path_buf()), out_dir: out.clone() })
            .map_err(|e| format!("{command}: {e}"))
    };
    step(Command::Segment, manifest)?;
    step(Command::Featurize, &out.join("segment_manifest.csv"))?;
    step(Command::Finetune, &out.join("feature_manifest.csv"))?;
    step(Command::Evaluate, &out.join("feature_manifest.csv"))?;
    std::fs::read(out.join("report.json")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = write_demo_dataset(&tmp.path().join("data"), 16, 3).map_err(|e| e.to_string())?;
    let a = pipeline_run(&tmp.path().join("run_a"), &manifest)?;
    let b = pipeline_run(&tmp.path().join("run_b"), &manifest)?;
    check(a == b, "evaluation reports differ")?;
    let model_a = std::fs::read(tmp.path().join("run_a/model.ckpt")).map_err(|e| e.to_string())?;
    let model_b = std::fs::read(tmp.path().join("run_b/model.ckpt")).map_err(|e| e.to_string())?;
    check(model_a == model_b, "model checkpoints differ")?;
    Ok(format!("segment -> featurize -> finetune -> evaluate twice: identical {}-byte reports", a.len()))
}

// ---------------------------------------------------------------- 9

fn dsp_invariants() -> Outcome {
    // Parseval per frame against a direct time-domain sum
    let mut rng = stream(9, "acceptance.dsp", &[]);
    let samples: Vec<f32> = (0..8000).map(|_| rng.random_range(-0.5f32..0.5)).collect();
    let clip = AudioClip::new(samples.clone(), 16000, "noise").map_err(|e| e.to_string())?;
    let params = StftParams::default();
    let spec = stft_magnitude(&clip, &params).map_err(|e| e.to_string())?;
    let (hop, win, nfft) = (256, 336, 512);
    let w = hann_window(win);
    let mut worst = 0.0f64;
    for t in 0..spec.n_frames() {
        let frame = spec.frame(t);
        let half = nfft / 2;
        let one_sided: f64 = (0..=half)
            .map(|k| if k == 0 || k == half { frame[k] * frame[k] } else { 2.0 * frame[k] * frame[k] })
            .sum();
        let direct: f64 = (0..win).map(|i| (w[i] * samples[t * hop + i] as f64).powi(2)).sum::<f64>() * nfft as f64;
        worst = worst.max((one_sided - direct).abs() / direct);
    }
    check(worst < 1e-6, format!("Parseval relative error {worst:e}"))?;

    // mel projection against a naive triple loop with an independently built HTK filterbank
    let fb = mel_filterbank(40, 512, 16000, 0.0, 8000.0).map_err(|e| e.to_string())?;
    let lm = log_mel(&spec, &fb).map_err(|e| e.to_string())?;
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let pts: Vec<f64> = (0..42).map(|i| inv(mel(8000.0) * i as f64 / 41.0)).collect();
    let mut mel_worst = 0.0f64;
    for t in 0..spec.n_frames() {
        for m in 0..40 {
            let mut e = 0.0;
            for k in 0..257 {
                let f = k as f64 * 31.25;
                let up = (f - pts[m]) / (pts[m + 1] - pts[m]);
                let down = (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1]);
                let wk = up.min(down).max(0.0);
                e += wk * spec.get(t, k) * spec.get(t, k);
            }
            mel_worst = mel_worst.max((lm.get(t, m) - (e + 1e-6).ln()).abs());
        }
    }
    check(mel_worst < 1e-10, format!("log-mel deviation {mel_worst:e}"))?;

    // Butterworth: unity DC gain, impulse sum, stopband and passband
    let dc = butterworth_lowpass(&[2.5; 200], 2, 10.0 / 31.25).map_err(|e| e.to_string())?;
    check(dc.iter().all(|v| (v - 2.5).abs() < 1e-9), "DC gain")?;
    let mut imp = vec![0.0; 301];
    imp[150] = 1.0;
    let ir = butterworth_lowpass(&imp, 2, 10.0 / 31.25).map_err(|e| e.to_string())?;
    check((ir.iter().sum::<f64>() - 1.0).abs() < 1e-6, "impulse sum")?;
    let rate = 62.5;
    let x: Vec<f64> = (0..1250)
        .map(|i| {
            let t = i as f64 / rate;
            (2.0 * std::f64::consts::PI * t).sin() + (2.0 * std::f64::consts::PI * 25.0 * t).sin()
        })
        .collect();
    let y = butterworth_lowpass(&x, 2, 10.0 / (rate / 2.0)).map_err(|e| e.to_string())?;
    let amp = |s: &[f64], f: f64| {
        let (mut a, mut b) = (0.0, 0.0);
        for i in 312..937 {
            let ph = 2.0 * std::f64::consts::PI * f * i as f64 / rate;
            a += s[i] * ph.sin();
            b += s[i] * ph.cos();
        }
        2.0 * (a * a + b * b).sqrt() / 625.0
    };
    let high_db = 20.0 * (amp(&y, 25.0) / amp(&x, 25.0)).log10();
    let low_db = 20.0 * (amp(&y, 1.0) / amp(&x, 1.0)).log10();
    check(high_db <= -20.0 && low_db.abs() <= 1.0, format!("25 Hz {high_db:.2} dB, 1 Hz {low_db:.2} dB"))?;
    Ok(format!(
        "Parseval {worst:.1e}, log-mel {mel_worst:.1e}, 25 Hz {high_db:.1} dB, 1 Hz {low_db:.2} dB"
    ))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("AUROC matches brute force", Duration::from_secs(5), auroc_oracle),
        ("ViT gradients match finite differences", Duration::from_secs(60), gradient_check),
        ("SAM matches scalar reference", Duration::from_secs(1), sam_reference),
        ("segmentation recall on synthetic bursts", Duration::from_secs(30), segmentation_recall),
        ("SSL loss halves, EMA bitwise", Duration::from_secs(120), ssl_sanity),
        ("fine-tuning converges, SAM does not degrade", Duration::from_secs(300), finetune_convergence),
        ("model sizes and class weight", Duration::from_secs(1), reference_arithmetic),
        ("end-to-end determinism", Duration::from_secs(300), determinism),
        ("DSP invariants", Duration::from_secs(10), dsp_invariants),
    ];
    let mut failures = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > *budget => Err(format!("{detail}; took {elapsed:.2?}, budget {budget:?}")),
            other => other,
        };
        match result {
            Ok(detail) => println!("[PASS] criterion {}: {name} ({elapsed:.2?}) - {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("[FAIL] criterion {}: {name} ({elapsed:.2?}) - {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
