//! Deterministic scripted model for offline runs and tests.
//!
//! A scenario is a closed world: every request must resolve to exactly one
//! scripted response or the call fails with [`Error::UnknownScriptKey`].
//!
//! Lookup keys are `(task, prompt, round, partner)`. For most tasks the prompt
//! key is the fingerprint (whitespace-collapsed, case-folded) of the final user
//! turn. Interaction turns embed the partner's question and answer, so for
//! those the prompt key is the agent's own question (its first user turn), the
//! round is the agent's interaction count, and the partner is the answer it
//! was shown, normalized the same way answers are clustered.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatTurn, GenerationParams, Role};
use crate::error::{Error, Result};
use crate::prompts::{self, Task};
use crate::semantics::AliasTable;
use crate::text::fingerprint;

pub const IDK_TEXT: &str = "I don't know.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub task: Task,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<String>,
    /// Returned at temperature 0, and at any temperature when `samples` is empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Sampled responses, indexed by the request seed when temperature > 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<String>,
}

/// How an agent revises its answer during an exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Revision {
    /// Repeat its previous reply.
    Keep,
    /// Take the answer it was shown.
    Adopt,
    Idk,
    Answer(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRule {
    /// The agent's own question; `*` matches every agent.
    pub question: String,
    /// Keyed by the partner answer shown.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub partners: BTreeMap<String, Revision>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rounds: BTreeMap<u32, Revision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub otherwise: Option<Revision>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub scenario_id: String,
    #[serde(default)]
    pub responses: Vec<ScriptEntry>,
    #[serde(default)]
    pub flip_rules: Vec<FlipRule>,
    /// Answer surface form to canonical answer; used for clustering and
    /// partner matching.
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
    /// Extraction requests without a scripted entry return the response verbatim.
    #[serde(default)]
    pub extract_passthrough: bool,
    /// Filter-judge requests without a scripted entry answer "yes".
    #[serde(default)]
    pub judge_accept_unlisted: bool,
    /// Query text to the most plausible wrong answer, for the persistent-wrong
    /// perturbation.
    #[serde(default)]
    pub plausible_wrong: BTreeMap<String, String>,
}

impl SimScenario {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let scenario: SimScenario = serde_json::from_str(s)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&raw)
    }

    /// Rejects entries without a response and keys that resolve twice.
    pub fn validate(&self) -> Result<()> {
        let aliases = self.alias_table();
        let mut seen = HashMap::new();
        for (i, e) in self.responses.iter().enumerate() {
            if e.response.is_none() && e.samples.is_empty() {
                return Err(Error::Scenario(format!(
                    "entry {i} has neither response nor samples"
                )));
            }
            let key = entry_key(e, &aliases);
            if let Some(prev) = seen.insert(key, i) {
                return Err(Error::Scenario(format!(
                    "entries {prev} and {i} share the key ({}, {:?})",
                    e.task.as_str(),
                    e.prompt
                )));
            }
        }
        let mut rule_keys = HashMap::new();
        for (i, r) in self.flip_rules.iter().enumerate() {
            if let Some(prev) = rule_keys.insert(fingerprint(&r.question), i) {
                return Err(Error::Scenario(format!(
                    "flip rules {prev} and {i} both target {:?}",
                    r.question
                )));
            }
        }
        Ok(())
    }

    /// Combines several scenarios into one backend script. Flags are OR-ed;
    /// conflicting keys are rejected by validation.
    pub fn merge(scenarios: Vec<SimScenario>) -> Result<Self> {
        let mut it = scenarios.into_iter();
        let mut out = it
            .next()
            .ok_or_else(|| Error::Scenario("no scenarios to merge".into()))?;
        for s in it {
            out.scenario_id = format!("{}+{}", out.scenario_id, s.scenario_id);
            out.responses.extend(s.responses);
            out.flip_rules.extend(s.flip_rules);
            for (k, v) in s.aliases {
                if out.aliases.get(&k).is_some_and(|prev| *prev != v) {
                    return Err(Error::Scenario(format!("alias `{k}` maps to two answers")));
                }
                out.aliases.insert(k, v);
            }
            out.plausible_wrong.extend(s.plausible_wrong);
            out.extract_passthrough |= s.extract_passthrough;
            out.judge_accept_unlisted |= s.judge_accept_unlisted;
        }
        out.validate()?;
        Ok(out)
    }

    pub fn alias_table(&self) -> AliasTable {
        AliasTable::new(&self.aliases)
    }
}

type Key = (Task, String, Option<u32>, Option<String>);

fn entry_key(e: &ScriptEntry, aliases: &AliasTable) -> Key {
    (
        e.task,
        fingerprint(&e.prompt),
        e.round,
        e.partner.as_deref().map(|p| aliases.canonical_key(p)),
    )
}

#[derive(Debug, Clone)]
enum Script {
    Fixed(String),
    Samples {
        greedy: Option<String>,
        samples: Vec<String>,
    },
}

impl Script {
    fn pick(&self, params: &GenerationParams) -> String {
        match self {
            Script::Fixed(s) => s.clone(),
            Script::Samples { greedy, samples } => {
                if params.temperature == 0.0 {
                    greedy.clone().unwrap_or_else(|| samples[0].clone())
                } else {
                    let seed = params.seed.unwrap_or(0);
                    samples[(seed % samples.len() as u64) as usize].clone()
                }
            }
        }
    }
}

/// Scripted backend. A pure function of `(history, params)`.
#[derive(Debug)]
pub struct SimBackend {
    scenario: SimScenario,
    table: HashMap<Key, Script>,
    rules: HashMap<String, FlipRule>,
    aliases: AliasTable,
    calls: AtomicU64,
}

impl SimBackend {
    pub fn new(scenario: SimScenario) -> Result<Self> {
        scenario.validate()?;
        let aliases = scenario.alias_table();
        let table = scenario
            .responses
            .iter()
            .map(|e| {
                let script = if e.samples.is_empty() {
                    Script::Fixed(e.response.clone().expect("validated"))
                } else {
                    Script::Samples {
                        greedy: e.response.clone(),
                        samples: e.samples.clone(),
                    }
                };
                (entry_key(e, &aliases), script)
            })
            .collect();
        let rules = scenario
            .flip_rules
            .iter()
            .map(|r| (fingerprint(&r.question), r.clone()))
            .collect();
        Ok(Self {
            scenario,
            table,
            rules,
            aliases,
            calls: AtomicU64::new(0),
        })
    }

    pub fn scenario(&self) -> &SimScenario {
        &self.scenario
    }

    /// Completions served so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn respond(&self, history: &[ChatTurn], params: &GenerationParams) -> Result<String> {
        let task = prompts::classify(history);
        let last_user = history
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.content.as_str())
            .ok_or_else(|| Error::contract("history has no user turn"))?;
        match task {
            Task::Interact | Task::Group => {
                self.respond_interaction(task, history, last_user, params)
            }
            _ => {
                let key = fingerprint(last_user);
                if let Some(script) = self.table.get(&(task, key.clone(), None, None)) {
                    return Ok(script.pick(params));
                }
                match task {
                    Task::Extract if self.scenario.extract_passthrough => {
                        let p = prompts::parse_extract(last_user)
                            .ok_or_else(|| Error::contract("malformed extraction prompt"))?;
                        Ok(p.response.trim().to_string())
                    }
                    Task::Filter if self.scenario.judge_accept_unlisted => Ok("yes".to_string()),
                    _ => Err(Error::UnknownScriptKey {
                        task: task.as_str().to_string(),
                        key,
                        round: None,
                        partner: None,
                    }),
                }
            }
        }
    }

    fn respond_interaction(
        &self,
        task: Task,
        history: &[ChatTurn],
        last_user: &str,
        params: &GenerationParams,
    ) -> Result<String> {
        let users: Vec<&str> = history
            .iter()
            .filter(|t| t.role == Role::User)
            .map(|t| t.content.as_str())
            .collect();
        let anchor = fingerprint(users[0]);
        let round = (users.len() - 1) as u32;
        let partner_text = if task == Task::Interact {
            prompts::parse_interaction(last_user)
                .expect("classified as interaction")
                .partner_answer
        } else {
            let group = prompts::parse_group(last_user).expect("classified as group");
            self.majority_shown(&group.others)
                .ok_or_else(|| Error::contract("group prompt shows no other agents"))?
        };
        let partner = self.aliases.canonical_key(&partner_text);

        // Interaction entries are scripted under the Interact task whatever the mode.
        let lookups = [
            (Some(round), Some(partner.clone())),
            (None, Some(partner.clone())),
            (Some(round), None),
            (None, None),
        ];
        for (r, p) in lookups {
            if let Some(script) = self.table.get(&(Task::Interact, anchor.clone(), r, p)) {
                return Ok(script.pick(params));
            }
        }

        let rule = self.rules.get(&anchor).or_else(|| self.rules.get("*"));
        let revision = rule.and_then(|rule| {
            rule.partners
                .iter()
                .find(|(k, _)| self.aliases.canonical_key(k) == partner)
                .map(|(_, v)| v)
                .or_else(|| rule.rounds.get(&round))
                .or(rule.otherwise.as_ref())
        });
        match revision {
            Some(Revision::Keep) => Ok(history
                .iter()
                .rev()
                .find(|t| t.role == Role::Assistant)
                .map(|t| t.content.clone())
                .ok_or_else(|| Error::contract("keep revision without a previous reply"))?),
            Some(Revision::Adopt) => Ok(partner_text),
            Some(Revision::Idk) => Ok(IDK_TEXT.to_string()),
            Some(Revision::Answer(a)) => Ok(a.clone()),
            None => Err(Error::UnknownScriptKey {
                task: task.as_str().to_string(),
                key: anchor,
                round: Some(round),
                partner: Some(partner),
            }),
        }
    }

    /// Most common shown answer; ties go to the earliest shown.
    fn majority_shown(&self, others: &[(String, String)]) -> Option<String> {
        let mut counts: Vec<(String, usize, &str)> = Vec::new();
        for (_, a) in others {
            let k = self.aliases.canonical_key(a);
            match counts.iter_mut().find(|(key, _, _)| *key == k) {
                Some(entry) => entry.1 += 1,
                None => counts.push((k, 1, a.as_str())),
            }
        }
        let best = counts.iter().map(|c| c.1).max()?;
        counts
            .into_iter()
            .find(|c| c.1 == best)
            .map(|c| c.2.to_string())
    }
}

impl ChatBackend for SimBackend {
    fn complete(&self, history: &[ChatTurn], params: &GenerationParams) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.respond(history, params)
    }

    fn name(&self) -> &str {
        &self.scenario.scenario_id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paris() -> SimBackend {
        let scenario = SimScenario {
            scenario_id: "certain-paris".into(),
            responses: vec![ScriptEntry {
                task: Task::Answer,
                prompt: "What is the current capital of France?".into(),
                round: None,
                partner: None,
                response: Some("Paris".into()),
                samples: vec![],
            }],
            ..Default::default()
        };
        SimBackend::new(scenario).unwrap()
    }

    #[test]
    fn scripted_answer() {
        let sim = paris();
        let h = prompts::answer("What is the current   capital of FRANCE?");
        assert_eq!(
            sim.complete(&h, &GenerationParams::greedy()).unwrap(),
            "Paris"
        );
    }

    #[test]
    fn unknown_key_is_an_error() {
        let sim = paris();
        let h = prompts::answer("What is the capital of Spain?");
        let err = sim.complete(&h, &GenerationParams::greedy()).unwrap_err();
        assert!(matches!(err, Error::UnknownScriptKey { .. }), "{err}");
    }

    #[test]
    fn greedy_is_deterministic() {
        let sim = paris();
        let h = prompts::answer("What is the current capital of France?");
        let a = sim.complete(&h, &GenerationParams::greedy()).unwrap();
        let b = sim.complete(&h, &GenerationParams::greedy()).unwrap();
        assert_eq!(a, b);
        assert_eq!(sim.calls(), 2);
    }

    #[test]
    fn samples_follow_seed() {
        let scenario = SimScenario {
            scenario_id: "s".into(),
            responses: vec![ScriptEntry {
                task: Task::Answer,
                prompt: "q?".into(),
                round: None,
                partner: None,
                response: None,
                samples: vec!["A".into(), "B".into(), "C".into()],
            }],
            ..Default::default()
        };
        let sim = SimBackend::new(scenario).unwrap();
        let h = prompts::answer("q?");
        let got: Vec<String> = (0..4)
            .map(|s| {
                sim.complete(&h, &GenerationParams::sampled(1.0, s))
                    .unwrap()
            })
            .collect();
        assert_eq!(got, vec!["A", "B", "C", "A"]);
        assert_eq!(sim.complete(&h, &GenerationParams::greedy()).unwrap(), "A");
    }

    #[test]
    fn duplicate_keys_rejected() {
        let e = ScriptEntry {
            task: Task::Answer,
            prompt: "q?".into(),
            round: None,
            partner: None,
            response: Some("A".into()),
            samples: vec![],
        };
        let mut dup = e.clone();
        dup.prompt = "  Q? ".into();
        let scenario = SimScenario {
            scenario_id: "s".into(),
            responses: vec![e, dup],
            ..Default::default()
        };
        assert!(matches!(SimBackend::new(scenario), Err(Error::Scenario(_))));
    }

    #[test]
    fn flip_rules_resolve_by_partner_then_round_then_otherwise() {
        let scenario: SimScenario = serde_json::from_value(serde_json::json!({
            "scenario_id": "rules",
            "flip_rules": [{
                "question": "own?",
                "partners": {"Vegetable Oil": {"answer": "vegetable oil"}},
                "rounds": {"2": "idk"},
                "otherwise": "keep"
            }]
        }))
        .unwrap();
        let sim = SimBackend::new(scenario).unwrap();
        let mut h = prompts::answer("own?");
        h.push(ChatTurn::assistant("soybean oil"));
        let mut shown = h.clone();
        shown.push(ChatTurn::user(prompts::interaction_user(
            "p?",
            "vegetable oil.",
            "x?",
        )));
        assert_eq!(
            sim.complete(&shown, &GenerationParams::greedy()).unwrap(),
            "vegetable oil"
        );

        let mut other = h.clone();
        other.push(ChatTurn::user(prompts::interaction_user(
            "p?", "lard", "x?",
        )));
        assert_eq!(
            sim.complete(&other, &GenerationParams::greedy()).unwrap(),
            "soybean oil"
        );

        other.push(ChatTurn::assistant("soybean oil"));
        other.push(ChatTurn::user(prompts::interaction_user(
            "p?", "lard", "x?",
        )));
        assert_eq!(
            sim.complete(&other, &GenerationParams::greedy()).unwrap(),
            IDK_TEXT
        );
    }

    #[test]
    fn extraction_passthrough_only_when_declared() {
        let mut scenario = SimScenario {
            scenario_id: "x".into(),
            ..Default::default()
        };
        let h = prompts::extract(" Paris ", "q?");
        let sim = SimBackend::new(scenario.clone()).unwrap();
        assert!(sim.complete(&h, &GenerationParams::greedy()).is_err());
        scenario.extract_passthrough = true;
        let sim = SimBackend::new(scenario).unwrap();
        assert_eq!(
            sim.complete(&h, &GenerationParams::greedy()).unwrap(),
            "Paris"
        );
    }
}
