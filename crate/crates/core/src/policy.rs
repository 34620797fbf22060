//! Answer-or-abstain decisions from uncertainty reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::{entropy_of, Method, UncertaintyReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyVariant {
    /// Abstain above the entropy of (0.6, 0.2, 0.2).
    Loose,
    /// Abstain above the entropy of (0.6, 0.4).
    Strict,
    Custom,
}

impl std::str::FromStr for PolicyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "loose" => Ok(PolicyVariant::Loose),
            "strict" => Ok(PolicyVariant::Strict),
            "custom" => Ok(PolicyVariant::Custom),
            other => Err(Error::contract(format!("unknown policy `{other}`"))),
        }
    }
}

/// Threshold in nats for the two reference majority-vote distributions.
pub fn policy_threshold(variant: PolicyVariant) -> Result<f64> {
    match variant {
        PolicyVariant::Loose => entropy_of(&[0.6, 0.2, 0.2]),
        PolicyVariant::Strict => entropy_of(&[0.6, 0.4]),
        PolicyVariant::Custom => Err(Error::contract("custom policy needs an explicit threshold")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbstentionPolicy {
    pub variant: PolicyVariant,
    pub threshold: f64,
}

impl AbstentionPolicy {
    pub fn loose() -> Self {
        Self {
            variant: PolicyVariant::Loose,
            threshold: policy_threshold(PolicyVariant::Loose).expect("constant distribution"),
        }
    }

    pub fn strict() -> Self {
        Self {
            variant: PolicyVariant::Strict,
            threshold: policy_threshold(PolicyVariant::Strict).expect("constant distribution"),
        }
    }

    pub fn custom(threshold: f64) -> Result<Self> {
        if !threshold.is_finite() || threshold < 0.0 {
            return Err(Error::contract(format!(
                "threshold {threshold} must be a finite value >= 0"
            )));
        }
        Ok(Self {
            variant: PolicyVariant::Custom,
            threshold,
        })
    }

    /// Builds a policy from a variant and an optional threshold; the
    /// threshold is required for `Custom` and rejected otherwise.
    pub fn from_parts(variant: PolicyVariant, threshold: Option<f64>) -> Result<Self> {
        match (variant, threshold) {
            (PolicyVariant::Custom, Some(t)) => Self::custom(t),
            (PolicyVariant::Custom, None) => {
                Err(Error::contract("custom policy needs an explicit threshold"))
            }
            (_, Some(_)) => Err(Error::contract(
                "--threshold only applies to the custom policy",
            )),
            (PolicyVariant::Loose, None) => Ok(Self::loose()),
            (PolicyVariant::Strict, None) => Ok(Self::strict()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Answer,
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub query_id: String,
    /// Method or baseline strategy that produced the decision.
    pub method: String,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub score: f64,
}

impl Decision {
    pub fn answer(query_id: &str, method: &str, answer: impl Into<String>, score: f64) -> Self {
        Self {
            query_id: query_id.to_string(),
            method: method.to_string(),
            outcome: Outcome::Answer,
            answer: Some(answer.into()),
            score,
        }
    }

    pub fn abstain(query_id: &str, method: &str, score: f64) -> Self {
        Self {
            query_id: query_id.to_string(),
            method: method.to_string(),
            outcome: Outcome::Abstain,
            answer: None,
            score,
        }
    }

    pub fn is_abstain(&self) -> bool {
        self.outcome == Outcome::Abstain
    }
}

/// Abstains when the score strictly exceeds the threshold or the top answer
/// is the don't-know cluster; answers with the top cluster's text otherwise.
pub fn decide(report: &UncertaintyReport, policy: &AbstentionPolicy) -> Result<Decision> {
    let dist = report.distribution.as_ref().ok_or_else(|| {
        Error::contract(format!(
            "{} report has no distribution",
            report.method.as_str()
        ))
    })?;
    let method = report.method.as_str();
    let top = dist.argmax();
    if report.score > policy.threshold || top.is_idk() {
        return Ok(Decision::abstain(&report.query_id, method, report.score));
    }
    let text = report
        .answer
        .as_deref()
        .ok_or_else(|| Error::contract("report lacks the top answer's text"))?;
    Ok(Decision::answer(
        &report.query_id,
        method,
        text,
        report.score,
    ))
}

/// Methods a policy can be applied to.
pub fn policy_bound(method: Method) -> bool {
    method.has_distribution()
}
