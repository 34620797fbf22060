//! Per-query orchestration: question generation, interaction, scoring,
//! baselines and decisions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{CallLedger, Caller, ChatBackend};
use crate::error::{Error, Result};
use crate::eval::baselines::{
    run_baseline, sample_clusters, sample_original, BaselineInputs, Strategy,
};
use crate::eval::DatasetRecord;
use crate::interaction::{run_interaction, InteractionConfig, InteractionResult};
use crate::persist::{Failure, PartialInteraction, QuestionRecord, SampleRecord, Transcript};
use crate::policy::{decide, AbstentionPolicy, Decision};
use crate::questiongen::{build_question_set, QuestionGenConfig, QuestionSet};
use crate::semantics::{cluster_answers, ClusterMap, Clusterer, IDK_REPRESENTATIVE};
use crate::uncertainty::{
    affinity_matrix, diverse_agent_entropy, no_interaction_entropy, semantic_entropy,
    spectral_measures, Method, UncertaintyReport,
};

/// Builds the question set for one dataset record. Failures are recorded
/// in the returned record rather than raised.
pub fn generate_for_record(
    backend: &dyn ChatBackend,
    ledger: &CallLedger,
    record: &DatasetRecord,
    config: &QuestionGenConfig,
) -> QuestionRecord {
    let built = record.to_query().and_then(|query| {
        let caller = Caller::new(backend, ledger, &record.id);
        build_question_set(caller, &query, config)
    });
    match built {
        Ok((set, pools)) => QuestionRecord {
            query_id: record.id.clone(),
            set: Some(set),
            pools: Some(pools),
            error: None,
        },
        Err(e) => QuestionRecord {
            query_id: record.id.clone(),
            set: None,
            pools: None,
            error: Some(e.to_string()),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub interaction: InteractionConfig,
    pub methods: Vec<Method>,
    pub baselines: Vec<Strategy>,
    pub policy: AbstentionPolicy,
    /// Query text to the wrong answer pinned by the persistent-wrong perturbation.
    #[serde(default)]
    pub wrong_answers: BTreeMap<String, String>,
}

impl RunSettings {
    pub fn new(
        interaction: InteractionConfig,
        methods: Vec<Method>,
        policy: AbstentionPolicy,
    ) -> Self {
        Self {
            interaction,
            methods,
            baselines: Vec::new(),
            policy,
            wrong_answers: BTreeMap::new(),
        }
    }
}

/// Everything one query produced, including failures of individual steps.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRun {
    pub query_id: String,
    pub reports: Vec<UncertaintyReport>,
    pub decisions: Vec<Decision>,
    pub transcript: Transcript,
    pub failures: Vec<Failure>,
}

struct Samples {
    texts: Vec<String>,
    map: ClusterMap,
    clusters: Vec<crate::semantics::ClusterId>,
}

fn failure(query_id: &str, stage: &str, e: impl std::fmt::Display) -> Failure {
    Failure {
        query_id: query_id.to_string(),
        stage: stage.to_string(),
        error: e.to_string(),
    }
}

fn sampled_reports(
    query_id: &str,
    methods: &[Method],
    s: &Samples,
) -> Result<Vec<UncertaintyReport>> {
    let mut se = semantic_entropy(query_id, &s.clusters)?;
    se.answer = se.top_answer.map(|c| {
        s.map
            .representative(c)
            .unwrap_or(IDK_REPRESENTATIVE)
            .to_string()
    });
    let spectral = if methods
        .iter()
        .any(|m| matches!(m, Method::ScEigV | Method::ScDegree | Method::ScEcc))
    {
        let w = affinity_matrix(&s.clusters, |a, b| if a == b { 1.0 } else { 0.0 })?;
        Some(spectral_measures(&w)?)
    } else {
        None
    };
    let mut out = Vec::new();
    for &m in methods {
        let score = match (m, &spectral) {
            (Method::ScSe, _) => {
                out.push(se.clone());
                continue;
            }
            (Method::ScEigV, Some(sp)) => sp.eigv,
            (Method::ScDegree, Some(sp)) => sp.degree,
            (Method::ScEcc, Some(sp)) => sp.ecc,
            _ => continue,
        };
        out.push(UncertaintyReport {
            query_id: query_id.to_string(),
            method: m,
            score,
            distribution: None,
            top_answer: se.top_answer,
            answer: se.answer.clone(),
        });
    }
    Ok(out)
}

fn interaction_reports(
    methods: &[Method],
    result: &InteractionResult,
) -> Result<Vec<UncertaintyReport>> {
    let mut out = Vec::new();
    for &m in methods {
        match m {
            Method::Dae => out.push(diverse_agent_entropy(result)?),
            Method::DaeNoInteraction => out.push(no_interaction_entropy(result)?),
            _ => {}
        }
    }
    Ok(out)
}

/// Runs every requested method and baseline for one question set. Reports
/// come back in the order of `settings.methods`, decisions in method order
/// followed by baselines.
pub fn run_query(
    backend: &dyn ChatBackend,
    ledger: &CallLedger,
    clusterer: &Clusterer,
    set: &QuestionSet,
    settings: &RunSettings,
) -> QueryRun {
    let query = &set.query;
    let caller = Caller::new(backend, ledger, &query.id);
    let mut failures = Vec::new();
    let mut by_method: BTreeMap<Method, UncertaintyReport> = BTreeMap::new();

    let mut interaction = None;
    let mut partial = None;
    if settings
        .methods
        .iter()
        .any(|m| matches!(m, Method::Dae | Method::DaeNoInteraction))
    {
        let mut config = settings.interaction.clone();
        if config.wrong_answer.is_none() {
            config.wrong_answer = settings.wrong_answers.get(&query.text).cloned();
        }
        match run_interaction(caller, clusterer, set, &config) {
            Ok(result) => {
                match interaction_reports(&settings.methods, &result) {
                    Ok(rs) => by_method.extend(rs.into_iter().map(|r| (r.method, r))),
                    Err(e) => failures.push(failure(&query.id, "score", e)),
                }
                interaction = Some(result);
            }
            Err(stop) => {
                failures.push(failure(&query.id, "interaction", &stop.error));
                partial = Some(PartialInteraction {
                    error: stop.error.to_string(),
                    agents: stop.partial,
                    rounds: stop.rounds,
                });
            }
        }
    }

    let wants_samples = settings.methods.iter().any(|m| m.needs_samples())
        || settings.baselines.contains(&Strategy::Sc3of5);
    let mut samples = None;
    if wants_samples {
        let drawn = sample_original(caller, query, settings.interaction.seed).and_then(|texts| {
            let map = cluster_answers(clusterer, caller, &query.text, &texts)?;
            let clusters = sample_clusters(&map, &texts)?;
            Ok(Samples {
                texts,
                map,
                clusters,
            })
        });
        match drawn {
            Ok(s) => {
                match sampled_reports(&query.id, &settings.methods, &s) {
                    Ok(rs) => by_method.extend(rs.into_iter().map(|r| (r.method, r))),
                    Err(e) => failures.push(failure(&query.id, "score", e)),
                }
                samples = Some(s);
            }
            Err(e) => failures.push(failure(&query.id, "sampling", e)),
        }
    }

    let reports: Vec<UncertaintyReport> = settings
        .methods
        .iter()
        .filter_map(|m| by_method.remove(m))
        .collect();
    let mut decisions = Vec::new();
    for r in &reports {
        if r.distribution.is_some() {
            match decide(r, &settings.policy) {
                Ok(d) => decisions.push(d),
                Err(e) => failures.push(failure(&query.id, "decide", e)),
            }
        }
    }
    for &strategy in &settings.baselines {
        let inputs = BaselineInputs {
            samples: samples.as_ref().map(|s| s.texts.as_slice()),
            question_set: Some(set),
            seed: settings.interaction.seed,
        };
        match run_baseline(strategy, caller, clusterer, query, inputs) {
            Ok(d) => decisions.push(d),
            Err(e) => failures.push(failure(&query.id, strategy.as_str(), e)),
        }
    }

    let transcript = Transcript {
        query_id: query.id.clone(),
        backend: backend.name().to_string(),
        seed: settings.interaction.seed,
        question_set: set.clone(),
        interaction,
        partial,
        samples: samples.map(|s| SampleRecord {
            texts: s.texts,
            clusters: s.clusters,
        }),
        calls: ledger.call_count(&query.id),
    };
    QueryRun {
        query_id: query.id.clone(),
        reports,
        decisions,
        transcript,
        failures,
    }
}

/// Parses a comma-separated list of score methods and baseline strategies.
pub fn parse_method_list(list: &str) -> Result<(Vec<Method>, Vec<Strategy>)> {
    let mut methods = Vec::new();
    let mut baselines = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Ok(m) = item.parse::<Method>() {
            if !methods.contains(&m) {
                methods.push(m);
            }
        } else if let Ok(s) = item.parse::<Strategy>() {
            if !baselines.contains(&s) {
                baselines.push(s);
            }
        } else {
            return Err(Error::contract(format!("unknown method `{item}`")));
        }
    }
    if methods.is_empty() && baselines.is_empty() {
        return Err(Error::contract("no methods requested"));
    }
    Ok((methods, baselines))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_lists() {
        let (m, b) = parse_method_list("DAE, SC_SE,GREEDY,dae").unwrap();
        assert_eq!(m, vec![Method::Dae, Method::ScSe]);
        assert_eq!(b, vec![Strategy::Greedy]);
        assert!(parse_method_list("DAE,nope").is_err());
        assert!(parse_method_list(" , ").is_err());
    }
}
