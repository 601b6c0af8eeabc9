//! Experiment configuration: one JSON document with a section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::dsp::FeatureConfig;
use crate::error::{Error, Result};
use crate::eval::Aggregation;
use crate::model::VitConfig;
use crate::segmenter::OnsetConfig;
use crate::ssl::SslConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Seeds for the multi-seed protocol when no model or scores are given.
    pub seeds: Vec<u64>,
    pub aggregation: Aggregation,
    /// Precomputed `path,subject_id,score` CSV; skips inference.
    pub scores_csv: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], aggregation: Aggregation::SubjectMean, scores_csv: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dsp: FeatureConfig,
    #[serde(default)]
    pub segmenter: OnsetConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub model: VitConfig,
    #[serde(default)]
    pub ssl: SslConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Encoder weights to start fine-tuning from, e.g. a pretrained student.
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    /// Fine-tuned model used by `evaluate` and `predict`; defaults to
    /// `model.ckpt` in the output directory.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every section has defaults")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.output_dir, &mut cfg.init_checkpoint, &mut cfg.checkpoint, &mut cfg.eval.scores_csv]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |r: Result<()>, section: &str| r.map_err(|e| Error::Config(format!("{section}: {e}")));
        wrap(self.segmenter.validate(), "segmenter")?;
        wrap(self.dsp.stft.validate(self.dsp.sample_rate_hz), "dsp")?;
        wrap(self.augment.validate(), "augment")?;
        wrap(self.model.validate(), "model")?;
        wrap(self.ssl.validate(), "ssl")?;
        wrap(self.train.validate(), "train")?;
        if self.dsp.n_mels == 0 {
            return Err(Error::Config("dsp: n_mels must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON serialization, ignoring where outputs go.
    pub fn hash(&self) -> String {
        let located = Self { output_dir: None, ..self.clone() };
        let bytes = serde_json::to_vec(&located).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.train.learning_rate, 2e-6);
        assert_eq!(c.ssl.mask_ratio, 0.75);
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"trian": {}}"#), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_json(r#"{"train": {"epochz": 3}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"segmenter": {"band_lo_hz": 100}}"#).is_err());
        let ok = ExperimentConfig::from_json(r#"{"segmenter": {"peak_threshold": 0.5}, "seed": 9}"#).unwrap();
        assert_eq!(ok.segmenter.peak_threshold, 0.5);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"ssl": {"mask_ratio": 1.0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"train": {"batch_size": 0}}"#).is_err());
    }

    #[test]
    fn hash_tracks_content_and_paths_resolve() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
        let moved = ExperimentConfig { output_dir: Some("elsewhere".into()), ..a.clone() };
        assert_eq!(a.hash(), moved.hash());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"output_dir": "runs/a", "checkpoint": "/abs/m.ckpt"}"#).unwrap();
        let c = ExperimentConfig::load(&p).unwrap();
        assert_eq!(c.output_dir.unwrap(), dir.path().join("runs/a"));
        assert_eq!(c.checkpoint.unwrap(), PathBuf::from("/abs/m.ckpt"));
    }
}
