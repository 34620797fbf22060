#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use dae_core::backend::sim::{FlipRule, Revision, ScriptEntry, SimBackend, SimScenario};
use dae_core::backend::CallLedger;
use dae_core::eval::DatasetRecord;
use dae_core::pipeline::generate_for_record;
use dae_core::prompts::Task;
use dae_core::questiongen::{Query, QuestionGenConfig, QuestionSet, VariedQuestion};
use dae_core::semantics::Clusterer;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario(name: &str) -> SimScenario {
    SimScenario::from_path(repo_root().join("scenarios").join(format!("{name}.json"))).unwrap()
}

pub fn demo_records() -> Vec<DatasetRecord> {
    dae_core::eval::load_dataset(repo_root().join("data/demo.jsonl")).unwrap()
}

pub fn demo_record(id: &str) -> DatasetRecord {
    demo_records().into_iter().find(|r| r.id == id).unwrap()
}

pub fn exact(backend: &SimBackend) -> Clusterer {
    Clusterer::Exact(backend.scenario().alias_table())
}

/// Question set for one of the checked-in scenarios, built through the
/// scripted generation pipeline.
pub fn generated_set(name: &str) -> (SimBackend, QuestionSet) {
    let backend = SimBackend::new(scenario(name)).unwrap();
    let ledger = CallLedger::new();
    let rec = generate_for_record(
        &backend,
        &ledger,
        &demo_record(name),
        &QuestionGenConfig::default(),
    );
    let set = rec
        .set
        .unwrap_or_else(|| panic!("generation failed: {:?}", rec.error));
    (backend, set)
}

/// Hand-built case: five agents with scripted initial answers and revision rules.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: String,
    pub query: String,
    pub gold: Vec<String>,
    /// Original, paraphrase, then three perspective questions.
    pub questions: Vec<String>,
    pub round0: Vec<String>,
    pub samples: Vec<String>,
    pub rules: Vec<FlipRule>,
    pub wrong: Option<String>,
}

impl Case {
    pub fn new(id: &str, round0: &[&str], gold: &[&str]) -> Self {
        let query = format!("What is the answer to puzzle {id}?");
        let mut questions = vec![query.clone(), format!("Which answer solves puzzle {id}?")];
        for k in 0..round0.len().saturating_sub(2) {
            questions.push(format!(
                "From angle {k}, what follows from the answer to puzzle {id}?"
            ));
        }
        Self {
            id: id.to_string(),
            query,
            gold: gold.iter().map(|s| s.to_string()).collect(),
            questions,
            round0: round0.iter().map(|s| s.to_string()).collect(),
            samples: vec![round0[0].to_string(); 5],
            rules: Vec::new(),
            wrong: None,
        }
    }

    pub fn samples(mut self, samples: &[&str]) -> Self {
        self.samples = samples.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn rule(
        mut self,
        agent: usize,
        partners: &[(&str, Revision)],
        rounds: &[(u32, Revision)],
        otherwise: Revision,
    ) -> Self {
        self.rules.push(FlipRule {
            question: self.questions[agent].clone(),
            partners: partners
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            rounds: rounds.iter().cloned().collect(),
            otherwise: Some(otherwise),
        });
        self
    }

    /// Agents without a rule keep their answer.
    pub fn scenario(&self) -> SimScenario {
        let mut responses = Vec::new();
        for (i, (q, a)) in self.questions.iter().zip(&self.round0).enumerate() {
            responses.push(ScriptEntry {
                task: Task::Answer,
                prompt: q.clone(),
                round: None,
                partner: None,
                response: Some(a.clone()),
                samples: if i == 0 { self.samples.clone() } else { vec![] },
            });
        }
        let mut rules = self.rules.clone();
        for q in &self.questions {
            if !rules.iter().any(|r| &r.question == q) {
                rules.push(FlipRule {
                    question: q.clone(),
                    partners: BTreeMap::new(),
                    rounds: BTreeMap::new(),
                    otherwise: Some(Revision::Keep),
                });
            }
        }
        let mut plausible_wrong = BTreeMap::new();
        if let Some(w) = &self.wrong {
            plausible_wrong.insert(self.query.clone(), w.clone());
        }
        SimScenario {
            scenario_id: self.id.clone(),
            responses,
            flip_rules: rules,
            aliases: BTreeMap::new(),
            extract_passthrough: true,
            judge_accept_unlisted: true,
            plausible_wrong,
        }
    }

    pub fn set(&self) -> QuestionSet {
        let gold = (!self.gold.is_empty()).then(|| self.gold.clone());
        let query = Query::new(self.id.clone(), self.query.clone(), gold).unwrap();
        let mut questions = vec![
            VariedQuestion::original(&query),
            VariedQuestion::equivalent(&query, self.questions[1].clone()),
        ];
        for (k, q) in self.questions[2..].iter().enumerate() {
            questions.push(VariedQuestion::perspective(
                &query,
                format!("angle {k}"),
                q.clone(),
            ));
        }
        QuestionSet {
            query,
            questions,
            fallback_applied: false,
        }
    }
}

fn random_revision(rng: &mut impl Rng, pool: &[&str]) -> Revision {
    match rng.gen_range(0..5) {
        0 => Revision::Keep,
        1 => Revision::Adopt,
        2 => Revision::Idk,
        _ => Revision::Answer(pool[rng.gen_range(0..pool.len())].to_string()),
    }
}

/// Five agents, answers from a three-answer pool, random revision rules.
pub fn random_case(rng: &mut impl Rng, idx: usize) -> Case {
    let pool = ["alpha", "beta", "gamma"];
    let round0: Vec<&str> = (0..5).map(|_| *pool.choose(rng).unwrap()).collect();
    let mut case = Case::new(&format!("r{idx}"), &round0, &["alpha"]);
    for agent in 0..5 {
        if rng.gen_bool(0.2) {
            continue;
        }
        let mut partners: Vec<(&str, Revision)> = Vec::new();
        for p in pool {
            if rng.gen_bool(0.4) {
                partners.push((p, random_revision(rng, &pool)));
            }
        }
        let mut rounds: Vec<(u32, Revision)> = Vec::new();
        for r in 1..=4 {
            if rng.gen_bool(0.3) {
                rounds.push((r, random_revision(rng, &pool)));
            }
        }
        let otherwise = random_revision(rng, &pool);
        case = case.rule(agent, &partners, &rounds, otherwise);
    }
    case
}
