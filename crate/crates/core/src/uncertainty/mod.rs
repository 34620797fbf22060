//! Scoring: entropy over answer clusters, agent weighting, and the spectral
//! self-consistency measures.

pub mod spectral;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::InteractionResult;
use crate::semantics::ClusterId;

pub use spectral::{affinity_matrix, spectral_measures, AffinityMatrix, SpectralMeasures};

const SUM_TOLERANCE: f64 = 1e-9;

/// Probability mass over answer clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "BTreeMap<ClusterId, f64>",
    into = "BTreeMap<ClusterId, f64>"
)]
pub struct Distribution {
    probs: BTreeMap<ClusterId, f64>,
}

impl TryFrom<BTreeMap<ClusterId, f64>> for Distribution {
    type Error = Error;

    fn try_from(probs: BTreeMap<ClusterId, f64>) -> Result<Self> {
        Distribution::new(probs)
    }
}

impl From<Distribution> for BTreeMap<ClusterId, f64> {
    fn from(d: Distribution) -> Self {
        d.probs
    }
}

impl Distribution {
    /// Zero-probability entries are dropped; a single surviving entry is
    /// pinned to exactly 1.
    pub fn new(probs: BTreeMap<ClusterId, f64>) -> Result<Self> {
        if probs
            .values()
            .any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0 + SUM_TOLERANCE)
        {
            return Err(Error::contract("probabilities must lie in [0, 1]"));
        }
        let sum: f64 = probs.values().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::contract(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        let mut probs: BTreeMap<ClusterId, f64> =
            probs.into_iter().filter(|(_, p)| *p > 0.0).collect();
        if probs.is_empty() {
            return Err(Error::contract("distribution has no support"));
        }
        if probs.len() == 1 {
            probs.values_mut().for_each(|p| *p = 1.0);
        }
        Ok(Self { probs })
    }

    pub fn point(id: ClusterId) -> Self {
        Self {
            probs: BTreeMap::from([(id, 1.0)]),
        }
    }

    pub fn probs(&self) -> &BTreeMap<ClusterId, f64> {
        &self.probs
    }

    pub fn prob(&self, id: ClusterId) -> f64 {
        self.probs.get(&id).copied().unwrap_or(0.0)
    }

    pub fn is_point_mass(&self) -> bool {
        self.probs.len() == 1
    }

    /// Most probable cluster; exact ties go to the lowest id.
    pub fn argmax(&self) -> ClusterId {
        let mut best = None::<(ClusterId, f64)>;
        for (&id, &p) in &self.probs {
            match best {
                Some((_, bp)) if p <= bp => {}
                _ => best = Some((id, p)),
            }
        }
        best.expect("non-empty by construction").0
    }
}

/// Natural-log Shannon entropy; zero-probability terms contribute nothing.
pub fn shannon_entropy(dist: &Distribution) -> f64 {
    if dist.is_point_mass() {
        return 0.0;
    }
    let h: f64 = dist
        .probs
        .values()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// Entropy of an explicit probability vector, validated like a [`Distribution`].
pub fn entropy_of(probs: &[f64]) -> Result<f64> {
    let map = probs
        .iter()
        .enumerate()
        .map(|(i, p)| (ClusterId(i as u32), *p))
        .collect();
    Ok(shannon_entropy(&Distribution::new(map)?))
}

fn frequency_distribution(answers: &[ClusterId]) -> Result<Distribution> {
    if answers.is_empty() {
        return Err(Error::contract("need at least one answer"));
    }
    let mut counts: BTreeMap<ClusterId, usize> = BTreeMap::new();
    for a in answers {
        *counts.entry(*a).or_insert(0) += 1;
    }
    let n = answers.len() as f64;
    Distribution::new(counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect())
}

/// One answer per varied question, each question asked once: p = count / n.
pub fn aggregate_counts_distribution(round0_answers: &[ClusterId]) -> Result<Distribution> {
    frequency_distribution(round0_answers)
}

/// Flip-based agent weights `(R - r_j + 1) / Σ_k (R - r_k + 1)`.
pub fn agent_weights(
    flip_counts: &BTreeMap<usize, u32>,
    rounds: u32,
) -> Result<BTreeMap<usize, f64>> {
    if flip_counts.is_empty() {
        return Err(Error::contract("no agents to weight"));
    }
    if let Some((agent, r)) = flip_counts.iter().find(|(_, r)| **r > rounds) {
        return Err(Error::contract(format!(
            "agent {agent} flipped {r} times in {rounds} rounds"
        )));
    }
    let raw: BTreeMap<usize, f64> = flip_counts
        .iter()
        .map(|(a, r)| (*a, f64::from(rounds - r + 1)))
        .collect();
    let total: f64 = raw.values().sum();
    Ok(raw.into_iter().map(|(a, w)| (a, w / total)).collect())
}

/// `p(y) = Σ_j w_j · 1{final_j = y}`.
pub fn weighted_distribution(
    final_answers: &BTreeMap<usize, ClusterId>,
    weights: &BTreeMap<usize, f64>,
) -> Result<Distribution> {
    if !final_answers.keys().eq(weights.keys()) {
        return Err(Error::contract("answer and weight agent sets differ"));
    }
    let total: f64 = weights.values().sum();
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::contract(format!("weights sum to {total}, not 1")));
    }
    let mut probs: BTreeMap<ClusterId, f64> = BTreeMap::new();
    for (agent, cluster) in final_answers {
        *probs.entry(*cluster).or_insert(0.0) += weights[agent];
    }
    Distribution::new(probs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "DAE")]
    Dae,
    #[serde(rename = "DAE_NoInteraction")]
    DaeNoInteraction,
    #[serde(rename = "SC_SE")]
    ScSe,
    #[serde(rename = "SC_EigV")]
    ScEigV,
    #[serde(rename = "SC_Degree")]
    ScDegree,
    #[serde(rename = "SC_Ecc")]
    ScEcc,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Dae,
        Method::DaeNoInteraction,
        Method::ScSe,
        Method::ScEigV,
        Method::ScDegree,
        Method::ScEcc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dae => "DAE",
            Method::DaeNoInteraction => "DAE_NoInteraction",
            Method::ScSe => "SC_SE",
            Method::ScEigV => "SC_EigV",
            Method::ScDegree => "SC_Degree",
            Method::ScEcc => "SC_Ecc",
        }
    }

    /// Methods whose report carries a distribution an abstention policy can act on.
    pub fn has_distribution(self) -> bool {
        matches!(self, Method::Dae | Method::DaeNoInteraction | Method::ScSe)
    }

    /// Methods that need original-query samples.
    pub fn needs_samples(self) -> bool {
        matches!(
            self,
            Method::ScSe | Method::ScEigV | Method::ScDegree | Method::ScEcc
        )
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::contract(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub query_id: String,
    pub method: Method,
    /// Nats for entropy methods; the spectral measure's own scale otherwise.
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<Distribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_answer: Option<ClusterId>,
    /// Representative text of `top_answer`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

impl UncertaintyReport {
    pub fn from_distribution(query_id: &str, method: Method, dist: Distribution) -> Self {
        Self {
            query_id: query_id.to_string(),
            method,
            score: shannon_entropy(&dist),
            top_answer: Some(dist.argmax()),
            distribution: Some(dist),
            answer: None,
        }
    }
}

/// DiverseAgentEntropy: entropy of the flip-weighted distribution over the
/// agents' final answers.
pub fn diverse_agent_entropy(result: &InteractionResult) -> Result<UncertaintyReport> {
    let weights = agent_weights(&result.flip_counts, result.rounds_run)?;
    let dist = weighted_distribution(&result.final_answers, &weights)?;
    let mut report = UncertaintyReport::from_distribution(&result.query_id, Method::Dae, dist);
    report.answer = report
        .top_answer
        .map(|c| result.representative(c).to_string());
    Ok(report)
}

/// Entropy of the pre-interaction answers, one per varied question.
pub fn no_interaction_entropy(result: &InteractionResult) -> Result<UncertaintyReport> {
    let round0: Vec<ClusterId> = result.agents.iter().map(|a| a.answer_history[0]).collect();
    let dist = aggregate_counts_distribution(&round0)?;
    let mut report =
        UncertaintyReport::from_distribution(&result.query_id, Method::DaeNoInteraction, dist);
    report.answer = report
        .top_answer
        .map(|c| result.representative(c).to_string());
    Ok(report)
}

/// Semantic entropy over repeated samples of the original query.
pub fn semantic_entropy(query_id: &str, samples: &[ClusterId]) -> Result<UncertaintyReport> {
    let dist = frequency_distribution(samples)?;
    Ok(UncertaintyReport::from_distribution(
        query_id,
        Method::ScSe,
        dist,
    ))
}
