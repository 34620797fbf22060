//! On-disk artifacts: question sets, transcripts, scores, decisions and
//! evaluation tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backend::StageCounts;
use crate::error::{Error, Result};
use crate::eval::{ArPoint, CalibrationBin};
use crate::interaction::{AgentState, InteractionResult, RoundRecord};
use crate::questiongen::{GeneratedPools, QuestionSet};
use crate::semantics::ClusterId;

pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const CALLS_FILE: &str = "calls.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRANSCRIPT_DIR: &str = "transcripts";

/// One line of the question-set file. Exactly one of `set` and `error` is present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<QuestionSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pools: Option<GeneratedPools>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl QuestionRecord {
    pub fn validate(&self) -> Result<()> {
        match (&self.set, &self.error) {
            (Some(set), None) => {
                if set.query.id != self.query_id {
                    return Err(Error::contract(format!(
                        "question set for `{}` filed under `{}`",
                        set.query.id, self.query_id
                    )));
                }
                set.validate()
            }
            (None, Some(_)) => Ok(()),
            _ => Err(Error::contract(
                "question record needs exactly one of set and error",
            )),
        }
    }
}

/// Interaction state reached before a fatal error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialInteraction {
    pub error: String,
    pub agents: Vec<AgentState>,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub texts: Vec<String>,
    pub clusters: Vec<ClusterId>,
}

/// Everything recorded for one query during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub query_id: String,
    pub backend: String,
    pub seed: u64,
    pub question_set: QuestionSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial: Option<PartialInteraction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<SampleRecord>,
    pub calls: StageCounts,
}

/// A query that could not be completed, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub query_id: String,
    pub stage: String,
    pub error: String,
}

/// File-name-safe form of a query id.
pub fn file_stem(query_id: &str) -> String {
    let s: String = query_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        format!("_{s}")
    } else {
        s
    }
}

pub fn transcript_path(out_dir: &Path, query_id: &str) -> PathBuf {
    out_dir
        .join(TRANSCRIPT_DIR)
        .join(format!("{}.json", file_stem(query_id)))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// One JSON value per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, to_jsonl(items)?).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, &path.display().to_string())
}

/// Appends lines to an open JSON-lines file.
pub struct JsonlWriter {
    path: PathBuf,
    file: std::io::BufWriter<fs::File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        create_parent(path)?;
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file: std::io::BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, item: &T) -> Result<()> {
        let line = serde_json::to_string(item)?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Question-set file parsing with per-record validation.
pub fn parse_question_records(text: &str, origin: &str) -> Result<Vec<QuestionRecord>> {
    let records: Vec<QuestionRecord> = parse_jsonl(text, origin)?;
    let mut seen = std::collections::BTreeSet::new();
    for r in &records {
        r.validate()?;
        if !seen.insert(r.query_id.clone()) {
            return Err(Error::DuplicateId(r.query_id.clone()));
        }
    }
    Ok(records)
}

pub fn read_question_records(path: &Path) -> Result<Vec<QuestionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_question_records(&text, &path.display().to_string())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    create_parent(path)?;
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_ar_csv(path: &Path, points: &[ArPoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let res = (|| {
        w.write_record(["threshold", "recall", "accuracy"])?;
        for p in points {
            w.write_record([
                p.threshold.to_string(),
                p.recall.to_string(),
                opt(p.accuracy),
            ])?;
        }
        w.flush().map_err(csv::Error::from)
    })();
    res.map_err(|e| csv_error(path, e))
}

pub fn write_calibration_csv(path: &Path, bins: &[CalibrationBin]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let res = (|| {
        w.write_record(["bin_index", "mean_score", "correctness"])?;
        for b in bins {
            w.write_record([
                b.bin_index.to_string(),
                b.mean_score.to_string(),
                b.correctness.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)
    })();
    res.map_err(|e| csv_error(path, e))
}
