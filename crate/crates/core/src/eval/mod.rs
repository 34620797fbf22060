//! Dataset ingestion, correctness judging, metrics, AUROC, accuracy-recall
//! curves and calibration bins.

pub mod baselines;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::backend::{Caller, GenerationParams, Stage};
use crate::error::{Error, Result};
use crate::policy::Decision;
use crate::prompts;
use crate::questiongen::Query;
use crate::text::matches_gold;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl DatasetRecord {
    pub fn to_query(&self) -> Result<Query> {
        let golds = (!self.gold_answers.is_empty()).then(|| self.gold_answers.clone());
        Query::new(self.id.clone(), self.question.clone(), golds)
    }
}

/// Parses JSON-lines dataset text. Blank lines are skipped; `origin` labels
/// parse errors.
pub fn parse_dataset(text: &str, origin: &str) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        let rec: DatasetRecord =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if rec.id.trim().is_empty() {
            return Err(parse_err("empty id".into()));
        }
        if rec.question.trim().is_empty() {
            return Err(parse_err("empty question".into()));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

/// Lexical correctness against any gold answer.
pub fn judge_correct(answer: &str, golds: &[String]) -> bool {
    matches_gold(answer, golds)
}

/// [`judge_correct`], falling back to asking the model whether the answer
/// and each gold mean the same thing. A failed judge call counts as "no".
pub fn judge_correct_with(caller: Caller<'_>, query: &str, answer: &str, golds: &[String]) -> bool {
    if judge_correct(answer, golds) {
        return true;
    }
    golds.iter().any(|g| {
        let history = prompts::cluster_pair(query, answer, g);
        match caller.complete(Stage::Clustering, &history, &GenerationParams::greedy()) {
            Ok(reply) => prompts::parse_yes_no(&reply).unwrap_or(false),
            Err(e) => {
                warn!(error = %e, "correctness judge failed");
                false
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub decision: Decision,
    /// Absent when the decision abstains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_correct: Option<bool>,
    pub score: f64,
}

impl EvalRecord {
    pub fn new(decision: Decision, golds: &[String]) -> Self {
        let is_correct = decision.answer.as_deref().map(|a| judge_correct(a, golds));
        Self {
            query_id: decision.query_id.clone(),
            score: decision.score,
            is_correct,
            decision,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    /// Absent when every query abstains.
    pub accuracy: Option<f64>,
    pub abstention_rate: f64,
    pub correctness: f64,
    pub truthfulness: f64,
    /// Score AUROC for incorrectness over answered queries; absent when
    /// they are all correct or all wrong.
    pub auroc: Option<f64>,
}

pub fn compute_metrics(records: &[EvalRecord]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::contract("no records to evaluate"));
    }
    let n = records.len();
    let answered: Vec<&EvalRecord> = records.iter().filter(|r| r.is_correct.is_some()).collect();
    let correct = answered
        .iter()
        .filter(|r| r.is_correct == Some(true))
        .count();
    let abstained = n - answered.len();
    let nf = n as f64;
    let accuracy = (!answered.is_empty()).then(|| correct as f64 / answered.len() as f64);
    let scores: Vec<f64> = answered.iter().map(|r| r.score).collect();
    let labels: Vec<bool> = answered
        .iter()
        .map(|r| r.is_correct == Some(false))
        .collect();
    Ok(Metrics {
        n,
        accuracy,
        abstention_rate: abstained as f64 / nf,
        correctness: correct as f64 / nf,
        truthfulness: (correct + abstained) as f64 / nf,
        auroc: auroc(&scores, &labels).ok(),
    })
}

/// Rank-based AUROC of `scores` as a predictor of `labels` (true = positive,
/// here an incorrect answer). Tied scores count half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract("scores and labels differ in length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::contract("scores must be finite"));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("AUROC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average 1-based ranks over tie groups.
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l)
        .map(|(r, _)| r)
        .sum();
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// A score paired with the correctness of the answer it would give.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredOutcome {
    pub query_id: String,
    pub score: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArPoint {
    pub threshold: f64,
    pub recall: f64,
    pub accuracy: Option<f64>,
}

/// Sweeps every distinct score as a threshold, from highest to lowest,
/// abstaining on scores strictly above it.
pub fn ar_curve(outcomes: &[ScoredOutcome]) -> Result<Vec<ArPoint>> {
    if outcomes.is_empty() {
        return Err(Error::contract("no records for the AR curve"));
    }
    let mut thresholds: Vec<f64> = outcomes.iter().map(|o| o.score).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n = outcomes.len() as f64;
    Ok(thresholds
        .into_iter()
        .map(|t| {
            let kept: Vec<&ScoredOutcome> = outcomes.iter().filter(|o| o.score <= t).collect();
            let correct = kept.iter().filter(|o| o.correct).count();
            ArPoint {
                threshold: t,
                recall: kept.len() as f64 / n,
                accuracy: (!kept.is_empty()).then(|| correct as f64 / kept.len() as f64),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub bin_index: usize,
    pub count: usize,
    pub mean_score: f64,
    pub correctness: f64,
}

pub const CALIBRATION_BINS: usize = 10;

/// Ten equal-count bins over outcomes sorted by score; the remainder goes one
/// each to the leading bins.
pub fn calibration_bins(outcomes: &[ScoredOutcome]) -> Result<Vec<CalibrationBin>> {
    if outcomes.len() < CALIBRATION_BINS {
        return Err(Error::TooFewRecords {
            needed: CALIBRATION_BINS,
            got: outcomes.len(),
        });
    }
    let mut sorted: Vec<&ScoredOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let base = sorted.len() / CALIBRATION_BINS;
    let extra = sorted.len() % CALIBRATION_BINS;
    let mut bins = Vec::with_capacity(CALIBRATION_BINS);
    let mut start = 0;
    for bin_index in 0..CALIBRATION_BINS {
        let size = base + usize::from(bin_index < extra);
        let chunk = &sorted[start..start + size];
        start += size;
        let count = chunk.len();
        bins.push(CalibrationBin {
            bin_index,
            count,
            mean_score: chunk.iter().map(|o| o.score).sum::<f64>() / count as f64,
            correctness: chunk.iter().filter(|o| o.correct).count() as f64 / count as f64,
        });
    }
    Ok(bins)
}
