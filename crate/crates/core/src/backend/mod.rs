//! Chat-completion interface shared by every prompting stage.
//!
//! Callers never talk to a [`ChatBackend`] directly; they go through a
//! [`Caller`], which validates the history and books the call against a query
//! and a pipeline [`Stage`] in the [`CallLedger`].

pub mod remote;
pub mod sim;

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Checks the shape every backend expects: an optional leading system turn,
/// then strictly alternating user/assistant turns ending on a user turn, with
/// no empty user or assistant content.
pub fn validate_history(history: &[ChatTurn]) -> Result<()> {
    let body = match history.first() {
        Some(t) if t.role == Role::System => &history[1..],
        _ => history,
    };
    if body.is_empty() {
        return Err(Error::contract("history has no user turn"));
    }
    for (i, turn) in body.iter().enumerate() {
        let expected = if i % 2 == 0 {
            Role::User
        } else {
            Role::Assistant
        };
        if turn.role != expected {
            return Err(Error::contract(format!(
                "turn {i} after the system prompt has role {:?}, expected {expected:?}",
                turn.role
            )));
        }
        if turn.content.trim().is_empty() {
            return Err(Error::contract(format!("turn {i} has empty content")));
        }
    }
    if body.last().map(|t| t.role) != Some(Role::User) {
        return Err(Error::contract("history must end with a user turn"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 512,
            seed: None,
        }
    }
}

impl GenerationParams {
    pub fn greedy() -> Self {
        Self::default()
    }

    pub fn sampled(temperature: f64, seed: u64) -> Self {
        Self {
            temperature,
            seed: Some(seed),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::contract(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::contract("max_tokens must be positive"));
        }
        Ok(())
    }
}

/// Anything that can turn a chat history into assistant text.
///
/// Implementations must tolerate concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, history: &[ChatTurn], params: &GenerationParams) -> Result<String>;

    /// Short identifier recorded in transcripts.
    fn name(&self) -> &str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Conceptualize,
    Perspectives,
    PerspectiveQuestions,
    Filter,
    Equivalents,
    InitialAnswers,
    Interaction,
    Extraction,
    Clustering,
    Sampling,
    /// Answers, paraphrases and extractions made by baseline strategies.
    Baseline,
}

impl Stage {
    pub const ALL: [Stage; 11] = [
        Stage::Conceptualize,
        Stage::Perspectives,
        Stage::PerspectiveQuestions,
        Stage::Filter,
        Stage::Equivalents,
        Stage::InitialAnswers,
        Stage::Interaction,
        Stage::Extraction,
        Stage::Clustering,
        Stage::Sampling,
        Stage::Baseline,
    ];
}

/// Per-stage completion counts for one query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts(pub BTreeMap<Stage, u64>);

impl StageCounts {
    pub fn get(&self, stage: Stage) -> u64 {
        self.0.get(&stage).copied().unwrap_or(0)
    }

    pub fn add(&mut self, stage: Stage, n: u64) {
        if n > 0 {
            *self.0.entry(stage).or_insert(0) += n;
        }
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }
}

/// Exact accounting of backend completions, keyed by query id.
#[derive(Debug, Default)]
pub struct CallLedger {
    inner: Mutex<BTreeMap<String, StageCounts>>,
}

impl CallLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, query_id: &str, stage: Stage) {
        let mut guard = self.inner.lock().expect("ledger poisoned");
        guard.entry(query_id.to_string()).or_default().add(stage, 1);
    }

    /// Stage breakdown for one query; empty when the query made no calls.
    pub fn call_count(&self, query_id: &str) -> StageCounts {
        let guard = self.inner.lock().expect("ledger poisoned");
        guard.get(query_id).cloned().unwrap_or_default()
    }

    pub fn grand_total(&self) -> u64 {
        let guard = self.inner.lock().expect("ledger poisoned");
        guard.values().map(StageCounts::total).sum()
    }

    pub fn snapshot(&self) -> BTreeMap<String, StageCounts> {
        self.inner.lock().expect("ledger poisoned").clone()
    }
}

/// A backend bound to one query and one ledger.
#[derive(Clone, Copy)]
pub struct Caller<'a> {
    backend: &'a dyn ChatBackend,
    ledger: &'a CallLedger,
    query_id: &'a str,
}

impl<'a> Caller<'a> {
    pub fn new(backend: &'a dyn ChatBackend, ledger: &'a CallLedger, query_id: &'a str) -> Self {
        Self {
            backend,
            ledger,
            query_id,
        }
    }

    pub fn query_id(&self) -> &'a str {
        self.query_id
    }

    pub fn backend_name(&self) -> &'a str {
        self.backend.name()
    }

    pub fn complete(
        &self,
        stage: Stage,
        history: &[ChatTurn],
        params: &GenerationParams,
    ) -> Result<String> {
        validate_history(history)?;
        params.validate()?;
        self.ledger.record(self.query_id, stage);
        self.backend.complete(history, params)
    }
}

/// Inputs to the closed-form call count of one DiverseAgentEntropy run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallPlan {
    /// Perspectives returned by the aspect prompt.
    pub perspectives: usize,
    /// Perspective questions sent to the filter judge.
    pub filter_candidates: usize,
    pub n_agents: usize,
    /// Agents whose answers are pinned by a perturbation and never call the model.
    pub pinned_agents: usize,
    /// Interaction rounds actually run.
    pub rounds: usize,
    /// Original-query samples drawn for the self-consistency baselines.
    pub samples: usize,
    pub clustering_calls: usize,
}

/// Expected completions per stage. Every non-pinned agent is a listener in
/// every round that runs, since rounds only run while answers disagree.
pub fn expected_calls(plan: &CallPlan) -> StageCounts {
    let active = plan.n_agents.saturating_sub(plan.pinned_agents) as u64;
    let rounds = plan.rounds as u64;
    let mut c = StageCounts::default();
    c.add(Stage::Conceptualize, 1);
    c.add(Stage::Perspectives, 1);
    c.add(Stage::PerspectiveQuestions, plan.perspectives as u64);
    c.add(Stage::Filter, plan.filter_candidates as u64);
    c.add(Stage::Equivalents, 1);
    c.add(Stage::InitialAnswers, active);
    c.add(Stage::Interaction, rounds * active);
    c.add(Stage::Extraction, active + rounds * active);
    c.add(Stage::Sampling, plan.samples as u64);
    c.add(Stage::Clustering, plan.clustering_calls as u64);
    c
}
