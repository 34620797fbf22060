//! Sampling and majority-vote baselines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Caller, GenerationParams, Stage};
use crate::error::{Error, Result};
use crate::policy::Decision;
use crate::prompts;
use crate::questiongen::{generate_equivalents_as, Query, QuestionSet};
use crate::semantics::{
    cluster_answers, extract_answer_as, is_idk, ClusterId, ClusterMap, Clusterer,
};

pub const SAMPLE_COUNT: usize = 5;
pub const SAMPLE_TEMPERATURE: f64 = 1.0;
/// Votes a cluster needs out of five.
pub const MAJORITY: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "GREEDY")]
    Greedy,
    #[serde(rename = "SC3OF5")]
    Sc3of5,
    #[serde(rename = "SEQ")]
    SeQ,
    #[serde(rename = "DIVERSEQ")]
    DiverseQ,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Greedy,
        Strategy::Sc3of5,
        Strategy::SeQ,
        Strategy::DiverseQ,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Greedy => "GREEDY",
            Strategy::Sc3of5 => "SC3OF5",
            Strategy::SeQ => "SEQ",
            Strategy::DiverseQ => "DIVERSEQ",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::contract(format!("unknown baseline `{s}`")))
    }
}

/// Five temperature samples of the original query, seeded `seed..seed + 5`.
pub fn sample_original(caller: Caller<'_>, query: &Query, seed: u64) -> Result<Vec<String>> {
    let history = prompts::answer(&query.text);
    (0..SAMPLE_COUNT as u64)
        .into_par_iter()
        .map(|i| {
            let params = GenerationParams::sampled(SAMPLE_TEMPERATURE, seed.wrapping_add(i));
            caller
                .complete(Stage::Sampling, &history, &params)
                .map(|s| s.trim().to_string())
        })
        .collect()
}

/// Cluster assignment of each sample in order.
pub fn sample_clusters(map: &ClusterMap, samples: &[String]) -> Result<Vec<ClusterId>> {
    samples
        .iter()
        .map(|s| {
            if is_idk(s) {
                Ok(ClusterId::IDK)
            } else {
                map.cluster_of(s)
                    .ok_or_else(|| Error::contract(format!("sample `{s}` was not clustered")))
            }
        })
        .collect()
}

/// Answers with the largest content cluster when it holds at least
/// [`MAJORITY`] votes. The score is one minus the winning vote share.
pub fn majority_decision(
    query_id: &str,
    strategy: Strategy,
    map: &ClusterMap,
    clusters: &[ClusterId],
) -> Decision {
    let mut counts: Vec<(ClusterId, usize)> = Vec::new();
    for c in clusters {
        match counts.iter_mut().find(|(id, _)| id == c) {
            Some(e) => e.1 += 1,
            None => counts.push((*c, 1)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let score = counts
        .first()
        .map_or(1.0, |(_, n)| 1.0 - *n as f64 / clusters.len().max(1) as f64);
    match counts.first() {
        Some((id, n)) if *n >= MAJORITY && !id.is_idk() => {
            let text = map.representative(*id).unwrap_or_default();
            Decision::answer(query_id, strategy.as_str(), text, score)
        }
        _ => Decision::abstain(query_id, strategy.as_str(), score),
    }
}

fn vote_over_questions(
    caller: Caller<'_>,
    clusterer: &Clusterer,
    query: &Query,
    strategy: Strategy,
    questions: &[String],
) -> Result<Decision> {
    let answers: Vec<String> = questions
        .par_iter()
        .map(|q| {
            let reply = caller.complete(
                Stage::Baseline,
                &prompts::answer(q),
                &GenerationParams::greedy(),
            )?;
            if reply.trim().is_empty() {
                return Ok(crate::semantics::IDK_REPRESENTATIVE.to_string());
            }
            Ok(
                extract_answer_as(caller, Stage::Baseline, &query.text, &reply)?
                    .text()
                    .to_string(),
            )
        })
        .collect::<Result<_>>()?;
    let map = cluster_answers(clusterer, caller, &query.text, &answers)?;
    let clusters = sample_clusters(&map, &answers)?;
    Ok(majority_decision(&query.id, strategy, &map, &clusters))
}

/// Inputs a baseline may reuse instead of calling the model again.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineInputs<'a> {
    /// Samples from [`sample_original`].
    pub samples: Option<&'a [String]>,
    /// The diverse question set built for the query.
    pub question_set: Option<&'a QuestionSet>,
    pub seed: u64,
}

pub fn run_baseline(
    strategy: Strategy,
    caller: Caller<'_>,
    clusterer: &Clusterer,
    query: &Query,
    inputs: BaselineInputs<'_>,
) -> Result<Decision> {
    match strategy {
        Strategy::Greedy => {
            let reply = caller.complete(
                Stage::Baseline,
                &prompts::answer(&query.text),
                &GenerationParams::greedy(),
            )?;
            let reply = reply.trim();
            Ok(if is_idk(reply) {
                Decision::abstain(&query.id, strategy.as_str(), 1.0)
            } else {
                Decision::answer(&query.id, strategy.as_str(), reply, 0.0)
            })
        }
        Strategy::Sc3of5 => {
            let owned;
            let samples = match inputs.samples {
                Some(s) => s,
                None => {
                    owned = sample_original(caller, query, inputs.seed)?;
                    &owned
                }
            };
            let map = cluster_answers(clusterer, caller, &query.text, samples)?;
            let clusters = sample_clusters(&map, samples)?;
            Ok(majority_decision(&query.id, strategy, &map, &clusters))
        }
        Strategy::SeQ => {
            let mut questions = vec![query.text.clone()];
            let paraphrases =
                generate_equivalents_as(caller, Stage::Baseline, query, SAMPLE_COUNT)?;
            questions.extend(paraphrases.into_iter().map(|q| q.text));
            questions.truncate(SAMPLE_COUNT);
            vote_over_questions(caller, clusterer, query, strategy, &questions)
        }
        Strategy::DiverseQ => {
            let set = inputs
                .question_set
                .ok_or_else(|| Error::contract("DiverseQ needs the query's question set"))?;
            let questions: Vec<String> = set.questions.iter().map(|q| q.text.clone()).collect();
            vote_over_questions(caller, clusterer, query, strategy, &questions)
        }
    }
}
