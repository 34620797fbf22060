//! Diverse question generation for one query: conceptualize, sample
//! perspectives, generate and filter per-perspective questions, generate
//! paraphrases, then pick the final question set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::backend::{Caller, GenerationParams, Stage};
use crate::error::{Error, Result};
use crate::prompts;
use crate::text::{
    contains_normalized, normalize_answer, normalize_label, parse_label_lines,
    parse_question_lines, stable_hash,
};

pub const MAX_PERSPECTIVES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answers: Option<Vec<String>>,
}

impl Query {
    /// Gold answers are deduplicated; an empty gold list is treated as unknown.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        gold_answers: Option<Vec<String>>,
    ) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::contract("query text is empty"));
        }
        let gold_answers = gold_answers.and_then(|g| {
            let mut out: Vec<String> = Vec::new();
            for a in g {
                let a = a.trim().to_string();
                if !a.is_empty() && !out.contains(&a) {
                    out.push(a);
                }
            }
            (!out.is_empty()).then_some(out)
        });
        Ok(Self {
            id: id.into(),
            text,
            gold_answers,
        })
    }

    fn leaks_gold(&self, question: &str) -> bool {
        self.gold_answers
            .iter()
            .flatten()
            .any(|g| contains_normalized(question, g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuestionKind {
    Original,
    SemanticEquivalent,
    Perspective,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariedQuestion {
    pub query_id: String,
    pub kind: QuestionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perspective_label: Option<String>,
    pub text: String,
}

impl VariedQuestion {
    pub fn original(query: &Query) -> Self {
        Self {
            query_id: query.id.clone(),
            kind: QuestionKind::Original,
            perspective_label: None,
            text: query.text.clone(),
        }
    }

    pub fn equivalent(query: &Query, text: impl Into<String>) -> Self {
        Self {
            query_id: query.id.clone(),
            kind: QuestionKind::SemanticEquivalent,
            perspective_label: None,
            text: text.into(),
        }
    }

    pub fn perspective(query: &Query, label: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            query_id: query.id.clone(),
            kind: QuestionKind::Perspective,
            perspective_label: Some(label.into()),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSet {
    pub query: Query,
    pub questions: Vec<VariedQuestion>,
    /// Set when perspectives were repeated or paraphrases filled perspective slots.
    #[serde(default)]
    pub fallback_applied: bool,
}

impl QuestionSet {
    pub fn validate(&self) -> Result<()> {
        let count = |k: QuestionKind| self.questions.iter().filter(|q| q.kind == k).count();
        if count(QuestionKind::Original) != 1 {
            return Err(Error::contract(
                "question set needs exactly one original question",
            ));
        }
        if count(QuestionKind::SemanticEquivalent) == 0 {
            return Err(Error::contract(
                "question set needs a semantically equivalent question",
            ));
        }
        for q in &self.questions {
            if (q.kind == QuestionKind::Perspective) != q.perspective_label.is_some() {
                return Err(Error::contract(
                    "perspective label present iff kind is Perspective",
                ));
            }
            if q.query_id != self.query.id {
                return Err(Error::contract("question belongs to another query"));
            }
            if q.kind != QuestionKind::Original && self.query.leaks_gold(&q.text) {
                return Err(Error::contract(format!(
                    "question leaks a gold answer: {}",
                    q.text
                )));
            }
        }
        if !self.fallback_applied {
            let mut labels: Vec<String> = self
                .questions
                .iter()
                .filter_map(|q| q.perspective_label.as_deref().map(normalize_label))
                .collect();
            let before = labels.len();
            labels.sort();
            labels.dedup();
            if labels.len() != before {
                return Err(Error::contract(
                    "perspective labels repeat without fallback",
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionGenConfig {
    /// Questions requested per perspective.
    pub m_perspective: usize,
    /// Paraphrases requested.
    pub m_equivalent: usize,
    /// Final set size, one per agent.
    pub n: usize,
    pub seed: u64,
}

impl Default for QuestionGenConfig {
    fn default() -> Self {
        Self {
            m_perspective: 5,
            m_equivalent: 5,
            n: 5,
            seed: 0,
        }
    }
}

/// Generalizes specific entities in the query; a blank reply keeps the query.
pub fn conceptualize(caller: Caller<'_>, query: &Query) -> Result<String> {
    let reply = caller.complete(
        Stage::Conceptualize,
        &prompts::conceptualize(&query.text),
        &GenerationParams::greedy(),
    )?;
    let reply = reply.trim();
    Ok(if reply.is_empty() {
        query.text.clone()
    } else {
        reply.to_string()
    })
}

/// Up to five distinct perspective labels for the (conceptualized) question.
pub fn generate_perspectives(caller: Caller<'_>, concept: &str) -> Result<Vec<String>> {
    if concept.trim().is_empty() {
        return Err(Error::contract("concept is empty"));
    }
    let reply = caller.complete(
        Stage::Perspectives,
        &prompts::aspects(concept),
        &GenerationParams::greedy(),
    )?;
    let parsed = parse_label_lines(&reply);
    if parsed.dropped > 0 {
        warn!(dropped = parsed.dropped, "unparseable perspective lines");
    }
    let mut labels: Vec<String> = Vec::new();
    for label in parsed.items {
        let label = normalize_label(&label);
        if !labels.contains(&label) {
            labels.push(label);
        }
    }
    labels.truncate(MAX_PERSPECTIVES);
    if labels.is_empty() {
        return Err(Error::GenerationEmpty {
            what: "perspective labels",
        });
    }
    Ok(labels)
}

pub fn generate_perspective_questions(
    caller: Caller<'_>,
    query: &Query,
    label: &str,
    m: usize,
) -> Result<Vec<VariedQuestion>> {
    if m == 0 {
        return Err(Error::contract("m must be at least 1"));
    }
    let reply = caller.complete(
        Stage::PerspectiveQuestions,
        &prompts::aspect_questions(&query.text, label, m),
        &GenerationParams::greedy(),
    )?;
    let parsed = parse_question_lines(&reply);
    if parsed.dropped > 0 {
        warn!(
            dropped = parsed.dropped,
            label, "unparseable question lines"
        );
    }
    let mut items = parsed.items;
    if items.len() < m {
        debug!(
            got = items.len(),
            wanted = m,
            label,
            "short perspective question list"
        );
    }
    items.truncate(m);
    Ok(items
        .into_iter()
        .map(|t| VariedQuestion::perspective(query, label, t))
        .collect())
}

/// Keeps candidates that do not contain a known gold answer and that the
/// judge says depend on the query's answer. Order is preserved.
pub fn filter_questions(
    caller: Caller<'_>,
    query: &Query,
    candidates: &[VariedQuestion],
) -> Vec<VariedQuestion> {
    let keep: Vec<bool> = candidates
        .par_iter()
        .map(|c| {
            if query.leaks_gold(&c.text) {
                return false;
            }
            let history = prompts::filter(&query.text, &c.text);
            match caller.complete(Stage::Filter, &history, &GenerationParams::greedy()) {
                Ok(reply) => prompts::parse_yes_no(&reply).unwrap_or(false),
                Err(e) => {
                    warn!(error = %e, question = %c.text, "filter judge failed; dropping candidate");
                    false
                }
            }
        })
        .collect();
    candidates
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(c, _)| c.clone())
        .collect()
}

/// Paraphrases of the query, excluding restatements of the query itself,
/// duplicates and (when golds are known) answer leaks.
pub fn generate_equivalent_questions(
    caller: Caller<'_>,
    query: &Query,
    m: usize,
) -> Result<Vec<VariedQuestion>> {
    generate_equivalents_as(caller, Stage::Equivalents, query, m)
}

pub(crate) fn generate_equivalents_as(
    caller: Caller<'_>,
    stage: Stage,
    query: &Query,
    m: usize,
) -> Result<Vec<VariedQuestion>> {
    if m == 0 {
        return Err(Error::contract("m must be at least 1"));
    }
    let reply = caller.complete(
        stage,
        &prompts::equivalents(&query.text, m),
        &GenerationParams::greedy(),
    )?;
    let parsed = parse_question_lines(&reply);
    if parsed.dropped > 0 {
        warn!(dropped = parsed.dropped, "unparseable paraphrase lines");
    }
    let mut seen = vec![normalize_answer(&query.text)];
    let mut out = Vec::new();
    for q in parsed.items {
        let key = normalize_answer(&q);
        if seen.contains(&key) || query.leaks_gold(&q) {
            continue;
        }
        seen.push(key);
        out.push(VariedQuestion::equivalent(query, q));
        if out.len() == m {
            break;
        }
    }
    Ok(out)
}

/// Perspective label with its qualified questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerspectivePool {
    pub label: String,
    pub questions: Vec<VariedQuestion>,
}

/// Picks the original query, one paraphrase and `n - 2` perspective questions
/// with distinct labels. Short of labels, further questions are drawn from
/// perspectives already used; short of those, more paraphrases fill in.
pub fn select_question_set(
    query: &Query,
    perspective_pool: &[PerspectivePool],
    equivalent_pool: &[VariedQuestion],
    n: usize,
    seed: u64,
) -> Result<QuestionSet> {
    if n < 2 {
        return Err(Error::contract("question set size must be at least 2"));
    }
    if equivalent_pool.is_empty() {
        return Err(Error::InsufficientQuestions {
            needed: n,
            available: 1 + perspective_pool
                .iter()
                .map(|p| p.questions.len())
                .sum::<usize>(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(&query.id));

    let mut equivalents: Vec<&VariedQuestion> = equivalent_pool.iter().collect();
    equivalents.shuffle(&mut rng);
    let mut labels: Vec<Vec<&VariedQuestion>> = perspective_pool
        .iter()
        .filter(|p| !p.questions.is_empty())
        .map(|p| {
            let mut qs: Vec<&VariedQuestion> = p.questions.iter().collect();
            qs.shuffle(&mut rng);
            qs
        })
        .collect();
    labels.shuffle(&mut rng);

    let mut questions = vec![VariedQuestion::original(query), equivalents[0].clone()];
    let slots = n - 2;
    let mut picked = 0;
    let mut depth = 0;
    let mut fallback_applied = false;
    // Depth 0 takes one question per label; deeper passes reuse labels.
    while picked < slots {
        let mut progressed = false;
        for qs in &labels {
            if picked == slots {
                break;
            }
            if let Some(q) = qs.get(depth) {
                questions.push((*q).clone());
                picked += 1;
                progressed = true;
                if depth > 0 {
                    fallback_applied = true;
                }
            }
        }
        if !progressed {
            break;
        }
        depth += 1;
    }
    let mut extra = equivalents[1..].iter();
    while picked < slots {
        match extra.next() {
            Some(q) => {
                questions.push((*q).clone());
                picked += 1;
                fallback_applied = true;
            }
            None => {
                return Err(Error::InsufficientQuestions {
                    needed: n,
                    available: questions.len(),
                });
            }
        }
    }
    let set = QuestionSet {
        query: query.clone(),
        questions,
        fallback_applied,
    };
    set.validate()?;
    Ok(set)
}

/// Generation pools kept alongside the selected set for inspection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedPools {
    pub concept: String,
    pub perspectives: Vec<PerspectivePool>,
    pub equivalents: Vec<VariedQuestion>,
    /// Perspective questions before filtering.
    pub candidates: usize,
}

/// Runs every generation step and selects the final set.
pub fn build_question_set(
    caller: Caller<'_>,
    query: &Query,
    config: &QuestionGenConfig,
) -> Result<(QuestionSet, GeneratedPools)> {
    let concept = conceptualize(caller, query)?;
    let labels = generate_perspectives(caller, &concept)?;
    let generated: Vec<Result<Vec<VariedQuestion>>> = labels
        .par_iter()
        .map(|label| generate_perspective_questions(caller, query, label, config.m_perspective))
        .collect();
    let mut perspectives = Vec::new();
    let mut candidates = 0;
    for (label, qs) in labels.iter().zip(generated) {
        let qs = qs?;
        candidates += qs.len();
        perspectives.push(PerspectivePool {
            label: label.clone(),
            questions: filter_questions(caller, query, &qs),
        });
    }
    let equivalents = generate_equivalent_questions(caller, query, config.m_equivalent)?;
    let set = select_question_set(query, &perspectives, &equivalents, config.n, config.seed)?;
    Ok((
        set,
        GeneratedPools {
            concept,
            perspectives,
            equivalents,
            candidates,
        },
    ))
}
