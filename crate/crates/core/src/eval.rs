//! AUROC, subject-level score aggregation and multi-seed reporting.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Mann-Whitney AUROC via midranks: the fraction of positive/negative pairs
/// ordered correctly, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch { op: "auroc", left: vec![scores.len()], right: vec![labels.len()] });
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(invalid(format!("label {bad} is not 0 or 1")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("auroc scores"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(invalid("AUROC needs both positive and negative samples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // rank sums are multiples of 1/2, exact in f64 for any realistic n
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        pos_rank_sum += midrank * pos_in_group as f64;
        i = j;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub subject_id: String,
    /// Positive-class probability.
    pub score: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub subject_id: String,
    pub score: f64,
    pub label: u8,
    pub n_segments: usize,
}

/// Mean segment score per subject, in order of first appearance.
pub fn aggregate_by_subject(samples: &[ScoredSample]) -> Result<Vec<SubjectScore>> {
    let mut groups: IndexMap<&str, (f64, usize, u8)> = IndexMap::new();
    for s in samples {
        if !(s.score.is_finite() && (0.0..=1.0).contains(&s.score)) {
            return Err(invalid(format!("score {} of subject {} is outside [0, 1]", s.score, s.subject_id)));
        }
        let entry = groups.entry(&s.subject_id).or_insert((0.0, 0, s.label));
        if entry.2 != s.label {
            return Err(invalid(format!("subject {} has conflicting labels", s.subject_id)));
        }
        entry.0 += s.score;
        entry.1 += 1;
    }
    Ok(groups
        .into_iter()
        .map(|(id, (sum, n, label))| SubjectScore { subject_id: id.to_string(), score: sum / n as f64, label, n_segments: n })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    SubjectMean,
    SegmentLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub auroc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// AUROC of scored segments under the chosen aggregation.
pub fn score_auroc(samples: &[ScoredSample], aggregation: Aggregation) -> Result<RunOutcome> {
    let (scores, labels): (Vec<f64>, Vec<u8>) = match aggregation {
        Aggregation::SegmentLevel => samples.iter().map(|s| (s.score, s.label)).unzip(),
        Aggregation::SubjectMean => aggregate_by_subject(samples)?.iter().map(|s| (s.score, s.label)).unzip(),
    };
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    Ok(RunOutcome { auroc: auroc(&scores, &labels)?, n_pos, n_neg: labels.len() - n_pos })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    /// `null` where the seed's run failed.
    pub per_seed_auroc: Vec<Option<f64>>,
    /// Mean over successful seeds only.
    pub mean_auroc: Option<f64>,
    pub n_succeeded: usize,
    pub failed: Vec<SeedFailure>,
    pub n_pos: usize,
    pub n_neg: usize,
    pub aggregation: Aggregation,
    pub config_hash: Option<String>,
}

pub fn multi_seed_report(
    mut run_fn: impl FnMut(u64) -> Result<RunOutcome>,
    seeds: &[u64],
    aggregation: Aggregation,
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(invalid("at least one seed is required"));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut failed = Vec::new();
    let mut counts = None;
    for &seed in seeds {
        match run_fn(seed) {
            Ok(out) => {
                counts.get_or_insert((out.n_pos, out.n_neg));
                per_seed.push(Some(out.auroc));
            }
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                failed.push(SeedFailure { seed, error: e.to_string() });
                per_seed.push(None);
            }
        }
    }
    let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
    let mean = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
    let (n_pos, n_neg) = counts.unwrap_or((0, 0));
    Ok(EvalReport {
        seeds: seeds.to_vec(),
        per_seed_auroc: per_seed,
        mean_auroc: mean,
        n_succeeded: ok.len(),
        failed,
        n_pos,
        n_neg,
        aggregation,
        config_hash: None,
    })
}
