//! The multi-agent interaction protocol: initial answers, round-synchronous
//! exchanges, flip tracking and termination.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::backend::sim::IDK_TEXT;
use crate::backend::{Caller, ChatTurn, GenerationParams, Stage};
use crate::error::{Error, Result};
use crate::prompts;
use crate::questiongen::{QuestionSet, VariedQuestion};
use crate::semantics::{
    extract_answer, ClusterId, ClusterMap, ClusterRegistry, Clusterer, Extracted,
};
use crate::text::{matches_gold, stable_hash};

/// Stored in place of a blank model reply so transcripts stay well formed.
pub const EMPTY_REPLY: &str = "[empty response]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    OneOnOne,
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    #[default]
    None,
    /// The last agent always gives the most plausible wrong answer.
    PersistentWrong,
    /// The last agent always declines.
    PersistentIdk,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionConfig {
    pub n_agents: usize,
    pub max_rounds: u32,
    pub mode: Mode,
    pub perturbation: Perturbation,
    pub seed: u64,
    /// Wrong answer for [`Perturbation::PersistentWrong`]. When absent, the
    /// first initial answer that fails the gold check is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrong_answer: Option<String>,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            n_agents: 5,
            max_rounds: 4,
            mode: Mode::OneOnOne,
            perturbation: Perturbation::None,
            seed: 0,
            wrong_answer: None,
        }
    }
}

impl InteractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::contract("need at least 2 agents"));
        }
        if self.max_rounds < 1 {
            return Err(Error::contract("max_rounds must be at least 1"));
        }
        Ok(())
    }

    pub fn pinned_agents(&self) -> usize {
        usize::from(self.perturbation != Perturbation::None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Unanimous,
    Stable,
    MaxRounds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    /// 1-based.
    pub agent_id: usize,
    pub question: VariedQuestion,
    pub transcript: Vec<ChatTurn>,
    /// Cluster per round, round 0 first.
    pub answer_history: Vec<ClusterId>,
    /// Extracted answer text per round, parallel to `answer_history`.
    pub answer_texts: Vec<String>,
    pub flip_count: u32,
    pub partners_met: BTreeSet<usize>,
    /// Set for a perturbation agent that never calls the model.
    #[serde(default)]
    pub pinned: bool,
}

impl AgentState {
    pub fn current(&self) -> ClusterId {
        *self
            .answer_history
            .last()
            .expect("agent has a round-0 answer")
    }

    pub fn current_text(&self) -> &str {
        self.answer_texts
            .last()
            .expect("agent has a round-0 answer")
    }

    /// Adjacent unequal pairs in the answer history.
    pub fn recount_flips(&self) -> u32 {
        self.answer_history
            .windows(2)
            .filter(|w| w[0] != w[1])
            .count() as u32
    }

    fn record(&mut self, id: ClusterId, text: &str) {
        if self.answer_history.last().is_some_and(|prev| *prev != id) {
            self.flip_count += 1;
        }
        self.answer_history.push(id);
        self.answer_texts.push(text.to_string());
    }

    fn hold(&mut self) {
        let id = self.current();
        let text = self.current_text().to_string();
        self.record(id, &text);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    /// (listener, speaker) agent ids; empty in group mode.
    pub pairs: Vec<(usize, usize)>,
    /// Agents prompted this round.
    pub listeners: Vec<usize>,
    /// Agents whose answer cluster changed this round.
    pub changed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionResult {
    pub query_id: String,
    pub query: String,
    pub config: InteractionConfig,
    pub final_answers: BTreeMap<usize, ClusterId>,
    pub rounds_run: u32,
    pub flip_counts: BTreeMap<usize, u32>,
    pub termination: Termination,
    pub agents: Vec<AgentState>,
    pub rounds: Vec<RoundRecord>,
    pub clusters: ClusterMap,
}

impl InteractionResult {
    pub fn representative(&self, id: ClusterId) -> &str {
        self.clusters
            .representative(id)
            .unwrap_or(crate::semantics::IDK_REPRESENTATIVE)
    }
}

/// A run that stopped on a fatal error, with the agent states reached so far.
#[derive(Debug)]
pub struct Interrupted {
    pub error: Error,
    pub partial: Vec<AgentState>,
    pub rounds: Vec<RoundRecord>,
}

impl std::fmt::Display for Interrupted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "interaction interrupted: {}", self.error)
    }
}

impl std::error::Error for Interrupted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Backend access and cluster bookkeeping shared by the protocol steps of one query.
pub struct Session<'a> {
    pub caller: Caller<'a>,
    pub query: &'a str,
    pub registry: ClusterRegistry<'a>,
}

impl<'a> Session<'a> {
    pub fn new(caller: Caller<'a>, clusterer: &'a Clusterer, query: &'a str) -> Self {
        Self {
            caller,
            query,
            registry: ClusterRegistry::new(clusterer, caller, query),
        }
    }
}

fn reply_turn(reply: &str) -> ChatTurn {
    if reply.trim().is_empty() {
        ChatTurn::assistant(EMPTY_REPLY)
    } else {
        ChatTurn::assistant(reply)
    }
}

/// Answers every question of the set with its own agent. Pinned agents are
/// left without a round-0 answer for [`pin_agent`] to fill.
pub fn init_agents(
    session: &mut Session<'_>,
    set: &QuestionSet,
    config: &InteractionConfig,
) -> Result<Vec<AgentState>> {
    config.validate()?;
    if set.questions.len() != config.n_agents {
        return Err(Error::contract(format!(
            "question set has {} questions for {} agents",
            set.questions.len(),
            config.n_agents
        )));
    }
    let pinned_from = config.n_agents - config.pinned_agents();
    let caller = session.caller;
    let query = session.query;
    let replies: Vec<Result<(Vec<ChatTurn>, String, Extracted)>> = set.questions[..pinned_from]
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let history = prompts::answer(&q.text);
            let reply =
                caller.complete(Stage::InitialAnswers, &history, &GenerationParams::greedy())?;
            let extracted = extract_answer(caller, query, &reply).map_err(|e| match e {
                Error::Contract(reason) => Error::Extraction {
                    agent: i + 1,
                    reason,
                },
                other => other,
            })?;
            Ok((history, reply, extracted))
        })
        .collect();

    let mut states = Vec::with_capacity(config.n_agents);
    for (i, q) in set.questions.iter().enumerate() {
        states.push(AgentState {
            agent_id: i + 1,
            question: q.clone(),
            transcript: Vec::new(),
            answer_history: Vec::new(),
            answer_texts: Vec::new(),
            flip_count: 0,
            partners_met: BTreeSet::new(),
            pinned: i >= pinned_from,
        });
    }
    for (state, r) in states.iter_mut().zip(replies) {
        let (mut history, reply, extracted) = r?;
        history.push(reply_turn(&reply));
        let id = session.registry.assign(&extracted)?;
        state.transcript = history;
        state.record(id, extracted.text());
    }
    Ok(states)
}

/// Fixes the perturbation agent's answer for every round.
pub fn pin_agent(
    session: &mut Session<'_>,
    states: &mut [AgentState],
    set: &QuestionSet,
    config: &InteractionConfig,
) -> Result<()> {
    let Some(agent) = states.iter().position(|s| s.pinned) else {
        return Ok(());
    };
    let answer = match config.perturbation {
        Perturbation::None => return Ok(()),
        Perturbation::PersistentIdk => Extracted::Idk,
        Perturbation::PersistentWrong => {
            let text = match &config.wrong_answer {
                Some(w) => w.clone(),
                None => {
                    let golds = set.query.gold_answers.as_deref().ok_or_else(|| {
                        Error::contract("persistent-wrong needs a wrong answer or gold answers")
                    })?;
                    states
                        .iter()
                        .filter(|s| !s.pinned && !s.current().is_idk())
                        .map(|s| s.current_text())
                        .find(|t| !matches_gold(t, golds))
                        .ok_or_else(|| {
                            Error::contract(format!(
                                "no plausible wrong answer for query {}",
                                set.query.id
                            ))
                        })?
                        .to_string()
                }
            };
            Extracted::from_text(&text)
        }
    };
    let id = session.registry.assign(&answer)?;
    let reply = match &answer {
        Extracted::Idk => IDK_TEXT.to_string(),
        Extracted::Answer(t) => t.clone(),
    };
    let state = &mut states[agent];
    let mut history = prompts::answer(&state.question.text);
    history.push(ChatTurn::assistant(reply));
    state.transcript = history;
    state.answer_history.clear();
    state.answer_texts.clear();
    state.record(id, answer.text());
    Ok(())
}

fn disputed(states: &[AgentState], i: usize) -> bool {
    states.iter().any(|o| o.current() != states[i].current())
}

/// Chooses a speaker for every unpinned agent that someone disagrees with:
/// uniformly among disagreeing agents not yet met, else among all disagreeing
/// agents. Agents are visited in id order so the draw sequence is fixed.
pub fn pair_agents(states: &[AgentState], rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, s) in states.iter().enumerate() {
        if s.pinned || !disputed(states, i) {
            continue;
        }
        let differing: Vec<usize> = states
            .iter()
            .filter(|o| o.current() != s.current())
            .map(|o| o.agent_id)
            .collect();
        let unmet: Vec<usize> = differing
            .iter()
            .copied()
            .filter(|id| !s.partners_met.contains(id))
            .collect();
        let pool = if unmet.is_empty() { &differing } else { &unmet };
        let speaker = pool[rng.gen_range(0..pool.len())];
        pairs.push((s.agent_id, speaker));
    }
    pairs
}

fn idx(states: &[AgentState], agent_id: usize) -> Result<usize> {
    states
        .iter()
        .position(|s| s.agent_id == agent_id)
        .ok_or_else(|| Error::contract(format!("unknown agent {agent_id}")))
}

/// Sends each listener its prompt, extracts the reply and advances every
/// agent by one round. Prompts are built from previous-round answers only.
fn exchange(
    session: &mut Session<'_>,
    states: &mut [AgentState],
    prompts_by_agent: Vec<(usize, String)>,
) -> Result<Vec<usize>> {
    let caller = session.caller;
    let query = session.query;
    let calls: Vec<(usize, Vec<ChatTurn>)> = prompts_by_agent
        .into_iter()
        .map(|(i, user)| {
            let mut h = states[i].transcript.clone();
            h.push(ChatTurn::user(user));
            (i, h)
        })
        .collect();
    let replies: Vec<Result<(String, Extracted)>> = calls
        .par_iter()
        .map(|(i, history)| {
            let reply = caller.complete(Stage::Interaction, history, &GenerationParams::greedy())?;
            let extracted = match extract_answer(caller, query, &reply) {
                Ok(x) => x,
                Err(e) if !e.is_retriable() => {
                    warn!(agent = states[*i].agent_id, error = %e, "extraction failed; recording IDK");
                    Extracted::Idk
                }
                Err(e) => return Err(e),
            };
            Ok((reply, extracted))
        })
        .collect();
    // Settle every reply before touching state so a failure leaves the
    // round unapplied.
    let replies: Vec<(String, Extracted)> = replies.into_iter().collect::<Result<_>>()?;
    let mut updates: BTreeMap<usize, (Vec<ChatTurn>, String, Extracted)> = BTreeMap::new();
    for ((i, history), (reply, extracted)) in calls.into_iter().zip(replies) {
        updates.insert(i, (history, reply, extracted));
    }
    let mut changed = Vec::new();
    for (i, state) in states.iter_mut().enumerate() {
        match updates.remove(&i) {
            Some((mut history, reply, extracted)) => {
                history.push(reply_turn(&reply));
                state.transcript = history;
                let id = session.registry.assign(&extracted)?;
                if id != state.current() {
                    changed.push(state.agent_id);
                }
                state.record(id, extracted.text());
            }
            None => state.hold(),
        }
    }
    Ok(changed)
}

/// One one-on-one round over the given (listener, speaker) pairs.
pub fn run_round(
    session: &mut Session<'_>,
    states: &mut [AgentState],
    pairs: &[(usize, usize)],
) -> Result<Vec<usize>> {
    let mut prompts_by_agent = Vec::with_capacity(pairs.len());
    let mut seen = BTreeSet::new();
    for &(listener, speaker) in pairs {
        if listener == speaker {
            return Err(Error::contract("an agent cannot pair with itself"));
        }
        if !seen.insert(listener) {
            return Err(Error::contract(format!(
                "agent {listener} listens twice in one round"
            )));
        }
        let (li, si) = (idx(states, listener)?, idx(states, speaker)?);
        if states[li].pinned {
            return Err(Error::contract("a pinned agent cannot listen"));
        }
        let user = prompts::interaction_user(
            &states[si].question.text,
            states[si].current_text(),
            session.query,
        );
        prompts_by_agent.push((li, user));
    }
    let changed = exchange(session, states, prompts_by_agent)?;
    for &(listener, speaker) in pairs {
        let li = idx(states, listener)?;
        states[li].partners_met.insert(speaker);
    }
    Ok(changed)
}

/// One group round: every disputed unpinned agent sees all other agents'
/// questions and current answers at once.
pub fn run_group_round(
    session: &mut Session<'_>,
    states: &mut [AgentState],
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut prompts_by_agent = Vec::new();
    let mut listeners = Vec::new();
    for i in 0..states.len() {
        if states[i].pinned || !disputed(states, i) {
            continue;
        }
        let others: Vec<(&str, &str)> = states
            .iter()
            .filter(|o| o.agent_id != states[i].agent_id)
            .map(|o| (o.question.text.as_str(), o.current_text()))
            .collect();
        prompts_by_agent.push((i, prompts::group_user(&others, session.query)));
        listeners.push(i);
    }
    let changed = exchange(session, states, prompts_by_agent)?;
    let ids: Vec<usize> = states.iter().map(|s| s.agent_id).collect();
    let mut listener_ids = Vec::new();
    for i in listeners {
        let me = states[i].agent_id;
        states[i]
            .partners_met
            .extend(ids.iter().copied().filter(|id| *id != me));
        listener_ids.push(me);
    }
    Ok((listener_ids, changed))
}

/// Termination check after `round` completed rounds, in precedence order
/// unanimous, stable, max rounds.
pub fn should_terminate(states: &[AgentState], round: u32, max_rounds: u32) -> Option<Termination> {
    let first = states.first()?.current();
    if states.iter().all(|s| s.current() == first) {
        return Some(Termination::Unanimous);
    }
    let k = round as usize;
    if k >= 2
        && states.iter().all(|s| {
            let h = &s.answer_history;
            h.len() > k && h[k] == h[k - 1] && h[k - 1] == h[k - 2]
        })
    {
        return Some(Termination::Stable);
    }
    (round >= max_rounds).then_some(Termination::MaxRounds)
}

/// Full protocol for one question set.
pub fn run_interaction(
    caller: Caller<'_>,
    clusterer: &Clusterer,
    set: &QuestionSet,
    config: &InteractionConfig,
) -> std::result::Result<InteractionResult, Box<Interrupted>> {
    let interrupted = |error, partial: &[AgentState], rounds: &[RoundRecord]| {
        Box::new(Interrupted {
            error,
            partial: partial.to_vec(),
            rounds: rounds.to_vec(),
        })
    };
    let mut session = Session::new(caller, clusterer, &set.query.text);
    let mut states =
        init_agents(&mut session, set, config).map_err(|e| interrupted(e, &[], &[]))?;
    pin_agent(&mut session, &mut states, set, config).map_err(|e| interrupted(e, &states, &[]))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ stable_hash(&set.query.id));
    let mut rounds = Vec::new();
    let mut round = 0u32;
    let termination = loop {
        if round == 0 {
            if let Some(Termination::Unanimous) = should_terminate(&states, 0, config.max_rounds) {
                break Termination::Unanimous;
            }
        }
        round += 1;
        let step = match config.mode {
            Mode::OneOnOne => {
                let pairs = pair_agents(&states, &mut rng);
                run_round(&mut session, &mut states, &pairs).map(|changed| RoundRecord {
                    round,
                    listeners: pairs.iter().map(|p| p.0).collect(),
                    pairs,
                    changed,
                })
            }
            Mode::Group => {
                run_group_round(&mut session, &mut states).map(|(listeners, changed)| RoundRecord {
                    round,
                    pairs: Vec::new(),
                    listeners,
                    changed,
                })
            }
        };
        match step {
            Ok(record) => {
                debug!(query = %set.query.id, round, changed = ?record.changed, "round complete");
                rounds.push(record);
            }
            Err(e) => return Err(interrupted(e, &states, &rounds)),
        }
        if let Some(t) = should_terminate(&states, round, config.max_rounds) {
            break t;
        }
    };

    Ok(InteractionResult {
        query_id: set.query.id.clone(),
        query: set.query.text.clone(),
        config: config.clone(),
        final_answers: states.iter().map(|s| (s.agent_id, s.current())).collect(),
        rounds_run: round,
        flip_counts: states.iter().map(|s| (s.agent_id, s.flip_count)).collect(),
        termination,
        agents: states,
        rounds,
        clusters: session.registry.into_map(),
    })
}
