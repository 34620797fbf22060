//! Answer extraction and semantic clustering.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Caller, GenerationParams, Stage};
use crate::error::{Error, Result};
use crate::prompts;
use crate::text::normalize_answer;

/// Identifier of a semantic answer cluster within one query.
///
/// Content clusters are numbered from 0 in order of first appearance, so the
/// lowest id is the oldest cluster. [`ClusterId::IDK`] is reserved for
/// declined answers and sorts after every content cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub u32);

impl ClusterId {
    pub const IDK: ClusterId = ClusterId(u32::MAX);

    pub fn is_idk(self) -> bool {
        self == Self::IDK
    }
}

impl std::fmt::Display for ClusterId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_idk() {
            f.write_str("idk")
        } else {
            write!(f, "c{}", self.0)
        }
    }
}

pub const IDK_REPRESENTATIVE: &str = "I don't know";

const IDK_PATTERNS: [&str; 20] = [
    "i don't know",
    "i do not know",
    "i dont know",
    "don't know the answer",
    "cannot determine",
    "can't determine",
    "cannot be determined",
    "unable to determine",
    "unable to answer",
    "cannot answer",
    "can't answer",
    "i'm not sure",
    "i am not sure",
    "not enough information",
    "insufficient information",
    "no information",
    "does not provide",
    "doesn't provide",
    "does not mention",
    "doesn't mention",
];

const IDK_EXACT: [&str; 4] = ["idk", "unknown", "n a", "none"];

/// Refusal and don't-know detection over extracted answer text.
pub fn is_idk(text: &str) -> bool {
    let lowered = text.to_lowercase().replace(['\u{2019}', '`'], "'");
    let collapsed = crate::text::collapse_whitespace(&lowered);
    if collapsed.is_empty() {
        return true;
    }
    if IDK_PATTERNS.iter().any(|p| collapsed.contains(p)) {
        return true;
    }
    let norm = normalize_answer(&collapsed);
    IDK_EXACT.contains(&norm.as_str())
}

/// Answer to the original query read out of one response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extracted {
    Answer(String),
    Idk,
}

impl Extracted {
    pub fn from_text(text: &str) -> Self {
        let t = text.trim();
        if is_idk(t) {
            Extracted::Idk
        } else {
            Extracted::Answer(t.to_string())
        }
    }

    pub fn text(&self) -> &str {
        match self {
            Extracted::Answer(s) => s,
            Extracted::Idk => IDK_REPRESENTATIVE,
        }
    }
}

/// Asks the extraction prompt for the answer to `query` contained in
/// `response`, then applies don't-know detection to the result.
pub fn extract_answer(caller: Caller<'_>, query: &str, response: &str) -> Result<Extracted> {
    extract_answer_as(caller, Stage::Extraction, query, response)
}

/// [`extract_answer`] with the call attributed to `stage`.
pub fn extract_answer_as(
    caller: Caller<'_>,
    stage: Stage,
    query: &str,
    response: &str,
) -> Result<Extracted> {
    if response.trim().is_empty() {
        return Err(Error::contract("cannot extract from an empty response"));
    }
    let history = prompts::extract(response.trim(), query);
    let out = caller.complete(stage, &history, &GenerationParams::greedy())?;
    Ok(Extracted::from_text(&out))
}

/// Surface form to canonical answer, keyed by normalized surface form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    map: HashMap<String, String>,
}

impl AliasTable {
    pub fn new(aliases: &BTreeMap<String, String>) -> Self {
        Self {
            map: aliases
                .iter()
                .map(|(k, v)| (normalize_answer(k), v.clone()))
                .collect(),
        }
    }

    /// Normalized key of the canonical form of `answer`.
    pub fn canonical_key(&self, answer: &str) -> String {
        let norm = normalize_answer(answer);
        match self.map.get(&norm) {
            Some(canon) => normalize_answer(canon),
            None => norm,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMap {
    pub assignments: BTreeMap<String, ClusterId>,
    pub representatives: BTreeMap<ClusterId, String>,
}

impl ClusterMap {
    pub fn cluster_of(&self, answer: &str) -> Option<ClusterId> {
        self.assignments.get(answer).copied()
    }

    pub fn representative(&self, id: ClusterId) -> Option<&str> {
        self.representatives.get(&id).map(String::as_str)
    }

    /// Distinct answers grouped by cluster, for partition comparisons.
    pub fn partition(&self) -> Vec<Vec<String>> {
        let mut groups: BTreeMap<ClusterId, Vec<String>> = BTreeMap::new();
        for (a, id) in &self.assignments {
            groups.entry(*id).or_default().push(a.clone());
        }
        let mut out: Vec<Vec<String>> = groups.into_values().collect();
        out.sort();
        out
    }

    fn insert(&mut self, answer: &str, id: ClusterId) {
        self.assignments.insert(answer.to_string(), id);
        self.representatives.entry(id).or_insert_with(|| {
            if id.is_idk() {
                IDK_REPRESENTATIVE.to_string()
            } else {
                answer.to_string()
            }
        });
    }
}

/// How answers are judged equivalent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Clusterer {
    /// Normalized exact match after alias resolution. No model calls.
    Exact(AliasTable),
    /// Pairwise same/different verdicts from the model, closed transitively.
    /// Unparseable verdicts count as "different".
    Judge,
}

fn judge_same(caller: Caller<'_>, query: &str, a: &str, b: &str) -> Result<bool> {
    // Canonical argument order keeps verdicts independent of input order.
    let (x, y) = if a <= b { (a, b) } else { (b, a) };
    let history = prompts::cluster_pair(query, x, y);
    let reply = caller.complete(Stage::Clustering, &history, &GenerationParams::greedy())?;
    Ok(prompts::parse_yes_no(&reply).unwrap_or(false))
}

/// Batch clustering of a list of answers into a partition.
///
/// Don't-know answers go to the reserved cluster; content answers are grouped
/// by exact key or by pairwise judging with union-find closure. The resulting
/// partition does not depend on input order.
pub fn cluster_answers(
    clusterer: &Clusterer,
    caller: Caller<'_>,
    query: &str,
    answers: &[String],
) -> Result<ClusterMap> {
    if answers.is_empty() {
        return Err(Error::contract("cluster_answers needs at least one answer"));
    }
    let mut map = ClusterMap::default();
    let mut distinct: Vec<&str> = Vec::new();
    for a in answers {
        if is_idk(a) {
            map.insert(a, ClusterId::IDK);
        } else if !distinct.contains(&a.as_str()) {
            distinct.push(a);
        }
    }
    // Union-find over distinct content answers; identical normalized keys
    // are merged without asking.
    let keys: Vec<String> = match clusterer {
        Clusterer::Exact(aliases) => distinct.iter().map(|a| aliases.canonical_key(a)).collect(),
        Clusterer::Judge => distinct.iter().map(|a| normalize_answer(a)).collect(),
    };
    let mut parent: Vec<usize> = (0..distinct.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    fn union(p: &mut [usize], a: usize, b: usize) {
        let (ra, rb) = (find(p, a), find(p, b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            p[hi] = lo;
        }
    }
    for i in 0..distinct.len() {
        for j in (i + 1)..distinct.len() {
            if keys[i] == keys[j] {
                union(&mut parent, i, j);
            }
        }
    }
    if matches!(clusterer, Clusterer::Judge) {
        // One verdict per pair of key groups.
        let mut reps: Vec<usize> = Vec::new();
        for i in 0..distinct.len() {
            if find(&mut parent, i) == i {
                reps.push(i);
            }
        }
        let mut pairs = Vec::new();
        for (x, &i) in reps.iter().enumerate() {
            for &j in &reps[x + 1..] {
                pairs.push((i, j));
            }
        }
        let verdicts: Vec<Result<bool>> = pairs
            .par_iter()
            .map(|&(i, j)| judge_same(caller, query, distinct[i], distinct[j]))
            .collect();
        for (&(i, j), v) in pairs.iter().zip(verdicts) {
            if v? {
                union(&mut parent, i, j);
            }
        }
    }
    let mut ids: HashMap<usize, ClusterId> = HashMap::new();
    for (i, a) in distinct.iter().enumerate() {
        let root = find(&mut parent, i);
        let next = ClusterId(ids.len() as u32);
        let id = *ids.entry(root).or_insert(next);
        map.insert(a, id);
    }
    Ok(map)
}

/// Incremental cluster assignment across the rounds of one query, so ids stay
/// stable as new answers appear.
pub struct ClusterRegistry<'a> {
    clusterer: &'a Clusterer,
    caller: Caller<'a>,
    query: &'a str,
    map: ClusterMap,
    keys: Vec<(String, ClusterId)>,
}

impl<'a> ClusterRegistry<'a> {
    pub fn new(clusterer: &'a Clusterer, caller: Caller<'a>, query: &'a str) -> Self {
        Self {
            clusterer,
            caller,
            query,
            map: ClusterMap::default(),
            keys: Vec::new(),
        }
    }

    pub fn map(&self) -> &ClusterMap {
        &self.map
    }

    pub fn into_map(self) -> ClusterMap {
        self.map
    }

    pub fn representative(&self, id: ClusterId) -> &str {
        self.map.representative(id).unwrap_or(IDK_REPRESENTATIVE)
    }

    pub fn assign(&mut self, answer: &Extracted) -> Result<ClusterId> {
        let text = match answer {
            Extracted::Idk => {
                self.map.insert(IDK_REPRESENTATIVE, ClusterId::IDK);
                return Ok(ClusterId::IDK);
            }
            Extracted::Answer(t) => t.as_str(),
        };
        if let Some(id) = self.map.cluster_of(text) {
            return Ok(id);
        }
        let key = match self.clusterer {
            Clusterer::Exact(aliases) => aliases.canonical_key(text),
            Clusterer::Judge => normalize_answer(text),
        };
        let mut found = self.keys.iter().find(|(k, _)| *k == key).map(|(_, id)| *id);
        if found.is_none() && matches!(self.clusterer, Clusterer::Judge) {
            let reps: Vec<(ClusterId, String)> = self
                .map
                .representatives
                .iter()
                .filter(|(id, _)| !id.is_idk())
                .map(|(id, r)| (*id, r.clone()))
                .collect();
            for (id, rep) in reps {
                if judge_same(self.caller, self.query, &rep, text)? {
                    found = Some(id);
                    break;
                }
            }
        }
        let id = match found {
            Some(id) => id,
            None => {
                let id = ClusterId(
                    self.map
                        .representatives
                        .keys()
                        .filter(|c| !c.is_idk())
                        .count() as u32,
                );
                self.keys.push((key.clone(), id));
                id
            }
        };
        if !self.keys.iter().any(|(k, _)| *k == key) {
            self.keys.push((key, id));
        }
        self.map.insert(text, id);
        Ok(id)
    }
}
