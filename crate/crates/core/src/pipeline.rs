//! Stage orchestration behind the command-line front end. Every command
//! reads a manifest, writes its artifacts under one output directory and
//! leaves a reproducibility record next to them.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio_io::{read_wav, write_wav};
use crate::config::ExperimentConfig;
use crate::dsp::{read_spec_file, to_model_input, write_spec_file, Featurizer, ModelInput};
use crate::error::{invalid, Error, Result};
use crate::eval::{multi_seed_report, score_auroc, EvalReport, RunOutcome, ScoredSample};
use crate::manifest::{parse_manifest, write_manifest, DatasetManifest, ManifestRow, Split};
use crate::model::{read_checkpoint, write_checkpoint, Checkpoint, VitConfig, VitModel};
use crate::rng::stream;
use crate::segmenter::segment_clip;
use crate::ssl::{pretrain_step, SslState};
use crate::train::{finetune, predict_scores, Example, FinetuneReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Segment,
    Featurize,
    Pretrain,
    Finetune,
    Evaluate,
    Predict,
}

impl Command {
    pub const ALL: [Command; 6] =
        [Command::Segment, Command::Featurize, Command::Pretrain, Command::Finetune, Command::Evaluate, Command::Predict];

    pub fn name(self) -> &'static str {
        match self {
            Command::Segment => "segment",
            Command::Featurize => "featurize",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Evaluate => "evaluate",
            Command::Predict => "predict",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| invalid(format!("unknown command {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct RunRequest {
    pub command: Command,
    pub config: ExperimentConfig,
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedFile {
    /// Relative to the output directory when inside it.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproRecord {
    pub command: Command,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub manifest: Option<HashedFile>,
    pub artifacts: Vec<HashedFile>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub artifacts: Vec<PathBuf>,
    pub record: PathBuf,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn hashed(path: &Path, out_dir: &Path) -> Result<HashedFile> {
    let shown = path.strip_prefix(out_dir).unwrap_or(path);
    Ok(HashedFile { path: shown.to_string_lossy().into_owned(), sha256: sha256_file(path)? })
}

/// Runs one command and writes `<command>_record.json` in the output
/// directory.
pub fn run_pipeline(req: &RunRequest) -> Result<RunSummary> {
    req.config.validate()?;
    std::fs::create_dir_all(&req.out_dir)?;
    let manifest = match &req.manifest {
        Some(p) => Some(parse_manifest(p)?),
        None => None,
    };
    let need = || manifest.as_ref().ok_or_else(|| invalid(format!("`{}` needs --manifest", req.command)));
    let ctx = Ctx { cfg: &req.config, out: &req.out_dir };
    log::info!("running {} into {}", req.command, req.out_dir.display());
    let mut artifacts = match req.command {
        Command::Segment => ctx.segment(need()?)?,
        Command::Featurize => ctx.featurize(need()?)?,
        Command::Pretrain => ctx.pretrain(need()?)?,
        Command::Finetune => ctx.finetune(need()?)?,
        Command::Evaluate => ctx.evaluate(need()?)?,
        Command::Predict => ctx.predict(need()?)?,
    };
    artifacts.sort();
    let record = ReproRecord {
        command: req.command,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: req.config.seed,
        config_hash: req.config.hash(),
        config: req.config.to_json(),
        manifest: req.manifest.as_deref().map(|p| hashed(p, &req.out_dir)).transpose()?,
        artifacts: artifacts.iter().map(|p| hashed(p, &req.out_dir)).collect::<Result<_>>()?,
    };
    let record_path = req.out_dir.join(format!("{}_record.json", req.command));
    std::fs::write(&record_path, serde_json::to_vec_pretty(&record)?)?;
    Ok(RunSummary { artifacts, record: record_path })
}

/// Reads a fine-tuned or pretrained model written by this crate.
pub fn load_model(path: &Path) -> Result<VitModel<f32>> {
    let ckpt = read_checkpoint(path)?;
    let cfg: VitConfig = serde_json::from_value(ckpt.config.get("model").cloned().unwrap_or_default())
        .map_err(|e| Error::Checkpoint(format!("{}: no usable model config: {e}", path.display())))?;
    VitModel::from_params(cfg, ckpt.params)
}

fn save_model(path: &Path, model: &VitModel<f32>, extra: serde_json::Value) -> Result<()> {
    let config = serde_json::json!({ "model": model.config, "info": extra });
    write_checkpoint(path, &Checkpoint { config, params: model.params.clone() })
}

/// File stems become artifact names, so they must be unique.
fn unique_stems<'a>(rows: impl Iterator<Item = &'a ManifestRow>) -> Result<Vec<String>> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut stems = Vec::new();
    for row in rows {
        let stem = row
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| Error::Manifest { line: row.line, message: "path has no file name".into() })?;
        if let Some(first) = seen.insert(stem.clone(), row.line) {
            return Err(Error::Manifest { line: row.line, message: format!("file name {stem:?} repeats line {first}") });
        }
        stems.push(stem);
    }
    Ok(stems)
}

/// `.spec` rows load directly; anything else is decoded as WAV and
/// featurized, keeping the waveform for augmentation.
pub fn load_examples(rows: &[&ManifestRow], features: &Featurizer) -> Result<Vec<Example>> {
    rows.par_iter()
        .map(|row| {
            let at = |e: Error| Error::Manifest { line: row.line, message: format!("{}: {e}", row.path.display()) };
            let (spec, clip) = if row.path.extension().is_some_and(|e| e == "spec") {
                (read_spec_file(&row.path).map_err(at)?, None)
            } else {
                let clip = read_wav(&row.path).map_err(at)?;
                (features.log_mel(&clip).map_err(at)?, Some(clip))
            };
            Ok(Example { id: row.raw_path.clone(), subject_id: row.subject_id.clone(), label: row.label, spec, clip })
        })
        .collect()
}

fn scored(examples: &[Example], scores: &[f64]) -> Vec<ScoredSample> {
    examples
        .iter()
        .zip(scores)
        .map(|(e, &score)| ScoredSample { subject_id: e.subject_id.clone(), score, label: e.label })
        .collect()
}

#[derive(Serialize)]
struct IndexRow<'a> {
    source_id: &'a str,
    onset_frame: usize,
    onset_time_s: f64,
    segment_path: String,
}

#[derive(Serialize, Deserialize)]
struct PredictionRow {
    path: String,
    subject_id: String,
    score: f64,
}

#[derive(Serialize)]
struct SslLogRow {
    step: usize,
    total: f64,
    global: f64,
    local: f64,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
}

impl Ctx<'_> {
    fn features(&self) -> Result<Featurizer> {
        Featurizer::new(self.cfg.dsp.clone())
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.cfg.checkpoint.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    fn segment(&self, m: &DatasetManifest) -> Result<Vec<PathBuf>> {
        let stems = unique_stems(m.rows.iter())?;
        let dir = self.out.join("segments");
        std::fs::create_dir_all(&dir)?;
        let extractions = m
            .rows
            .par_iter()
            .zip(stems.par_iter())
            .map(|(row, stem)| {
                let mut clip = read_wav(&row.path)
                    .map_err(|e| Error::Manifest { line: row.line, message: format!("{}: {e}", row.path.display()) })?;
                clip.source_id = stem.clone();
                segment_clip(&clip, &self.cfg.segmenter)
            })
            .collect::<Result<Vec<_>>>()?;
        let index_path = self.out.join("segment_index.csv");
        let mut index = csv::Writer::from_path(&index_path)?;
        let mut manifest_rows = Vec::new();
        let mut artifacts = vec![index_path.clone()];
        for (row, ex) in m.rows.iter().zip(&extractions) {
            for seg in &ex.segments {
                let name = format!("{}_onset{}.wav", seg.source_id, seg.onset_frame);
                let path = dir.join(&name);
                write_wav(&path, &seg.clip)?;
                let rel = format!("segments/{name}");
                index.serialize(IndexRow {
                    source_id: &seg.source_id,
                    onset_frame: seg.onset_frame,
                    onset_time_s: seg.onset_time_s,
                    segment_path: rel.clone(),
                })?;
                manifest_rows.push((rel, row));
                artifacts.push(path);
            }
        }
        index.flush()?;
        let manifest_path = self.out.join("segment_manifest.csv");
        write_manifest(&manifest_path, manifest_rows.iter().map(|(p, r)| (p.as_str(), r.label, r.subject_id.as_str(), r.split)))?;
        artifacts.push(manifest_path);
        log::info!("wrote {} segments from {} recordings", manifest_rows.len(), m.len());
        Ok(artifacts)
    }

    fn featurize(&self, m: &DatasetManifest) -> Result<Vec<PathBuf>> {
        let stems = unique_stems(m.rows.iter())?;
        let dir = self.out.join("features");
        std::fs::create_dir_all(&dir)?;
        let features = self.features()?;
        let rows: Vec<&ManifestRow> = m.rows.iter().collect();
        let examples = load_examples(&rows, &features)?;
        let mut artifacts = Vec::new();
        let mut manifest_rows = Vec::new();
        for ((row, ex), stem) in rows.iter().zip(&examples).zip(&stems) {
            let path = dir.join(format!("{stem}.spec"));
            write_spec_file(&path, &ex.spec)?;
            manifest_rows.push((format!("features/{stem}.spec"), *row));
            artifacts.push(path);
        }
        let manifest_path = self.out.join("feature_manifest.csv");
        write_manifest(&manifest_path, manifest_rows.iter().map(|(p, r)| (p.as_str(), r.label, r.subject_id.as_str(), r.split)))?;
        artifacts.push(manifest_path);
        Ok(artifacts)
    }

    fn pretrain(&self, m: &DatasetManifest) -> Result<Vec<PathBuf>> {
        let cfg = self.cfg;
        let rows: Vec<&ManifestRow> = m.split(Split::Train).collect();
        if rows.is_empty() {
            return Err(invalid("pretraining needs training rows"));
        }
        let features = self.features()?;
        let inputs: Vec<ModelInput> = load_examples(&rows, &features)?
            .iter()
            .map(|e| to_model_input(&e.spec, cfg.model.input, cfg.dsp.normalization))
            .collect::<Result<_>>()?;
        let mut state = SslState::new(VitModel::new(cfg.model.clone(), cfg.seed)?, &cfg.ssl, cfg.seed)?;
        let dir = self.out.join("pretrain");
        std::fs::create_dir_all(&dir)?;
        let log_path = self.out.join("pretrain_log.csv");
        let mut log = csv::Writer::from_path(&log_path)?;
        let mut artifacts = Vec::new();
        for step in 0..cfg.ssl.steps {
            let idx: Vec<usize> = if inputs.len() <= cfg.ssl.batch_size {
                (0..inputs.len()).collect()
            } else {
                sample(&mut stream(cfg.seed, "ssl.batch", &[step as u64]), inputs.len(), cfg.ssl.batch_size).into_vec()
            };
            let batch: Vec<ModelInput> = idx.iter().map(|&i| inputs[i].clone()).collect();
            let l = pretrain_step(&mut state, &batch, &cfg.ssl, &mut stream(cfg.seed, "ssl.mask", &[step as u64]))?;
            log.serialize(SslLogRow { step, total: l.total, global: l.global, local: l.local })?;
            log::info!("ssl step {step}: total {:.5} (global {:.5}, local {:.5})", l.total, l.global, l.local);
            let last = step + 1 == cfg.ssl.steps;
            if last || (cfg.ssl.checkpoint_every > 0 && (step + 1) % cfg.ssl.checkpoint_every == 0) {
                artifacts = save_ssl(&state, &dir)?;
            }
        }
        if cfg.ssl.steps == 0 {
            artifacts = save_ssl(&state, &dir)?;
        }
        log.flush()?;
        artifacts.push(log_path);
        Ok(artifacts)
    }

    /// Fresh or warm-started model fine-tuned with `seed`.
    fn train_once(&self, train: &[Example], eval: &[Example], seed: u64) -> Result<(VitModel<f32>, FinetuneReport)> {
        let cfg = self.cfg;
        let mut model = match &cfg.init_checkpoint {
            Some(path) => {
                let mut m = load_model(path)?;
                let expected = VitConfig { n_classes: cfg.model.n_classes, ..m.config.clone() };
                if expected != cfg.model {
                    return Err(Error::Config(format!("{} does not match the model config", path.display())));
                }
                m.replace_head(2, seed)?;
                m
            }
            None => VitModel::new(VitConfig { n_classes: 2, ..cfg.model.clone() }, seed)?,
        };
        let report = finetune(&mut model, train, eval, &cfg.train, &cfg.augment, &self.features()?, seed)?;
        Ok((model, report))
    }

    fn splits(&self, m: &DatasetManifest) -> Result<(Vec<Example>, Vec<Example>)> {
        let features = self.features()?;
        let train: Vec<&ManifestRow> = m.split(Split::Train).collect();
        let test: Vec<&ManifestRow> = m.split(Split::Test).collect();
        Ok((load_examples(&train, &features)?, load_examples(&test, &features)?))
    }

    fn finetune(&self, m: &DatasetManifest) -> Result<Vec<PathBuf>> {
        let (train, test) = self.splits(m)?;
        let (model, report) = self.train_once(&train, &test, self.cfg.seed)?;
        let model_path = self.out.join("model.ckpt");
        let info = serde_json::json!({
            "best_epoch": report.best_epoch,
            "best_auroc": report.best_auroc,
            "pos_weight": report.pos_weight,
            "seed": self.cfg.seed,
        });
        save_model(&model_path, &model, info)?;
        let metrics_path = self.out.join("metrics.csv");
        let mut w = csv::Writer::from_path(&metrics_path)?;
        for row in &report.metrics {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(vec![model_path, metrics_path])
    }

    fn evaluate(&self, m: &DatasetManifest) -> Result<Vec<PathBuf>> {
        let cfg = self.cfg;
        let agg = cfg.eval.aggregation;
        let checkpoint = self.checkpoint_path();
        let report: EvalReport = if let Some(scores_path) = &cfg.eval.scores_csv {
            let mut by_path = HashMap::new();
            for row in csv::Reader::from_path(scores_path)?.deserialize() {
                let row: PredictionRow = row?;
                by_path.insert(row.path, row.score);
            }
            let samples = m
                .split(Split::Test)
                .map(|row| match by_path.get(&row.raw_path) {
                    Some(&score) => Ok(ScoredSample { subject_id: row.subject_id.clone(), score, label: row.label }),
                    None => Err(Error::Manifest { line: row.line, message: format!("no score for {:?}", row.raw_path) }),
                })
                .collect::<Result<Vec<_>>>()?;
            let outcome = score_auroc(&samples, agg)?;
            multi_seed_report(|_| Ok(outcome), &[cfg.seed], agg)?
        } else if cfg.checkpoint.is_some() || checkpoint.exists() {
            let model = load_model(&checkpoint)?;
            let rows: Vec<&ManifestRow> = m.split(Split::Test).collect();
            let test = load_examples(&rows, &self.features()?)?;
            let scores = predict_scores(&model, &self.features()?, &test)?;
            let outcome = score_auroc(&scored(&test, &scores), agg)?;
            multi_seed_report(|_| Ok(outcome), &[cfg.seed], agg)?
        } else {
            let (train, test) = self.splits(m)?;
            let features = self.features()?;
            multi_seed_report(
                |seed| -> Result<RunOutcome> {
                    let (model, _) = self.train_once(&train, &test, seed)?;
                    score_auroc(&scored(&test, &predict_scores(&model, &features, &test)?), agg)
                },
                &cfg.eval.seeds,
                agg,
            )?
        };
        let report = EvalReport { config_hash: Some(cfg.hash()), ..report };
        let path = self.out.join("report.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&report)?)?;
        Ok(vec![path])
    }

    fn predict(&self, m: &DatasetManifest) -> Result<Vec<PathBuf>> {
        let checkpoint = self.checkpoint_path();
        if !checkpoint.exists() {
            return Err(Error::Config(format!("model checkpoint {} not found; run finetune first", checkpoint.display())));
        }
        let model = load_model(&checkpoint)?;
        let features = self.features()?;
        let rows: Vec<&ManifestRow> = m.rows.iter().collect();
        let examples = load_examples(&rows, &features)?;
        let scores = predict_scores(&model, &features, &examples)?;
        let path = self.out.join("predictions.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for (ex, score) in examples.iter().zip(scores) {
            w.serialize(PredictionRow { path: ex.id.clone(), subject_id: ex.subject_id.clone(), score })?;
        }
        w.flush()?;
        Ok(vec![path])
    }
}

fn save_ssl(state: &SslState, dir: &Path) -> Result<Vec<PathBuf>> {
    let info = serde_json::json!({ "step": state.step });
    let student = dir.join("student.ckpt");
    let teacher = dir.join("teacher.ckpt");
    save_model(&student, &state.student, info.clone())?;
    save_model(&teacher, &state.teacher, info.clone())?;
    let decoder = dir.join("decoder.ckpt");
    write_checkpoint(
        &decoder,
        &Checkpoint {
            config: serde_json::json!({ "depth": state.decoder.depth, "embed_dim": state.decoder.embed_dim, "info": info }),
            params: state.decoder.params.clone(),
        },
    )?;
    let mut opt = crate::autodiff::ParamStore::new();
    for (prefix, st) in [
        ("student", state.student_opt.state(&state.student.params)?),
        ("decoder", state.decoder_opt.state(&state.decoder.params)?),
    ] {
        for (name, t) in st.iter() {
            opt.insert(format!("{prefix}.{name}"), t.clone());
        }
    }
    let optimizer = dir.join("optimizer.ckpt");
    let steps = serde_json::json!({
        "student_steps": state.student_opt.steps_taken(),
        "decoder_steps": state.decoder_opt.steps_taken(),
        "info": info,
    });
    write_checkpoint(&optimizer, &Checkpoint { config: steps, params: opt })?;
    Ok(vec![student, teacher, decoder, optimizer])
}
