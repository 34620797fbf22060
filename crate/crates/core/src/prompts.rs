//! Prompt templates for every model-facing stage, and the inverse parsers the
//! simulator uses to recognize them.

use crate::backend::{ChatTurn, Role};

pub const CONCEPTUALIZE_SYSTEM: &str = "Can you identify the broader category of the specific entity referenced in the question? \
If there is a specific entity, you MUST CHANGE it to a general category, e.g., a person, a item, a place, a object. \
If there is no specific entity, you MUST KEEP the original question.";

const CONCEPTUALIZE_SHOTS: [(&str, &str); 2] = [
    (
        "What is the most spoken language in the world?",
        "What is the most spoken language in the world?",
    ),
    (
        "What is Joe Biden's occupation?",
        "What is a person's occupation?",
    ),
];

pub const ASPECTS_SYSTEM: &str = "Can you identify up to 5 key conceptual perspectives that are as varied and diverse as possible, \
ensuring a comprehensive and multifaceted understanding of the question?\n\
Given ONLY the conceptual aspect name, no other words or explanation. The aspect SHOULD NOT indicate the answer to the question.\n\
Each aspect is a line <as short as possible; not a complete sentence!>";

const ASPECT_QUESTIONS_PREFIX: &str = "Generate ";
const ASPECT_QUESTIONS_MARKER: &str =
    " questions that build upon a given question based on a given aspect.";

pub const FILTER_SYSTEM: &str = "You will be shown an original question and a generated question. \
Answer \"yes\" if answering the generated question strictly requires knowing the answer to the original question \
and the generated question does not reveal that answer. Otherwise answer \"no\". Output only yes or no.";

const EQUIVALENTS_PREFIX: &str = "For the given question, provide ";
const EQUIVALENTS_MARKER: &str = " semantically equivalent questions.";

pub const ANSWER_SYSTEM: &str = "You are an AI assistant that helps people answer questions. \
Ensure your responses are concise and strictly relevant to the queries presented, avoiding any unrelated content to the question. \
Do not change your answer unless you think you are absolutely wrong.";

pub const EXTRACT_SYSTEM: &str = "You will extract the answer to the given question using ONLY the information provided in the \"Response\" section. \
You will identify the answer directly without using any additional knowledge or explanation. \
If the response includes a negation to the question, use those as the answer.";

pub const CLUSTER_SYSTEM: &str = "You will be shown a question and two answers to it. \
Answer \"yes\" if the two answers mean the same thing as answers to the question, otherwise answer \"no\". Output only yes or no.";

const INTERACT_HEAD: &str = "When I asked you in another api call that \"";
const INTERACT_MID: &str = "\" You mentioned that \"";
const INTERACT_TAIL: &str = "\". Which is your actual answer to \"";
const GROUP_HEAD: &str = "When I asked you in other api calls:\n";
const GROUP_ITEM_HEAD: &str = "- \"";
const GROUP_TAIL: &str = "Which is your actual answer to \"";
const EXTRACT_HEAD: &str = "Response: ";
const EXTRACT_TAIL: &str = "\n\nBased solely on the response, ";

pub fn aspect_questions_system(m: usize) -> String {
    format!(
        "{ASPECT_QUESTIONS_PREFIX}{m}{ASPECT_QUESTIONS_MARKER} Ensure that each question STRICTLY requires knowledge of this original question to answer \
but DO NOT INCLUDE the direct answer to the original question in your generated questions but MUST INCLUDE the exact content of the original question. \
These questions should encourage a deeper exploration of the underlying themes or concepts introduced in the original question.\n\
Given ONLY the question, no other words or explanation.\n\
For example:\n\
Q1: <the generated question should be SIMPLE and DO NOT INCLUDE the direct answer to the original question>"
    )
}

pub fn equivalents_system(m: usize) -> String {
    format!(
        "{EQUIVALENTS_PREFIX}{m}{EQUIVALENTS_MARKER} Do not answer the question.\n\
STRICTLY follow the structure that each generated question is a line."
    )
}

pub fn conceptualize(query: &str) -> Vec<ChatTurn> {
    let mut h = vec![ChatTurn::system(CONCEPTUALIZE_SYSTEM)];
    for (q, a) in CONCEPTUALIZE_SHOTS {
        h.push(ChatTurn::user(q));
        h.push(ChatTurn::assistant(a));
    }
    h.push(ChatTurn::user(query));
    h
}

pub fn aspects(concept: &str) -> Vec<ChatTurn> {
    vec![ChatTurn::system(ASPECTS_SYSTEM), ChatTurn::user(concept)]
}

pub fn aspect_questions_user(query: &str, aspect: &str) -> String {
    format!("Question: {query}\nAspect: {aspect}")
}

pub fn aspect_questions(query: &str, aspect: &str, m: usize) -> Vec<ChatTurn> {
    vec![
        ChatTurn::system(aspect_questions_system(m)),
        ChatTurn::user(aspect_questions_user(query, aspect)),
    ]
}

pub fn filter_user(query: &str, candidate: &str) -> String {
    format!("Original question: {query}\nGenerated question: {candidate}")
}

pub fn filter(query: &str, candidate: &str) -> Vec<ChatTurn> {
    vec![
        ChatTurn::system(FILTER_SYSTEM),
        ChatTurn::user(filter_user(query, candidate)),
    ]
}

pub fn equivalents(query: &str, m: usize) -> Vec<ChatTurn> {
    vec![
        ChatTurn::system(equivalents_system(m)),
        ChatTurn::user(query),
    ]
}

pub fn answer(question: &str) -> Vec<ChatTurn> {
    vec![ChatTurn::system(ANSWER_SYSTEM), ChatTurn::user(question)]
}

pub fn interaction_user(partner_question: &str, partner_answer: &str, query: &str) -> String {
    format!(
        "{INTERACT_HEAD}{partner_question}{INTERACT_MID}{partner_answer}{INTERACT_TAIL}{query}\"?"
    )
}

/// Other agents' (question, current answer) pairs, shown all at once.
pub fn group_user(others: &[(&str, &str)], query: &str) -> String {
    let mut s = String::from(GROUP_HEAD);
    for (q, a) in others {
        s.push_str(&format!("{GROUP_ITEM_HEAD}{q}{INTERACT_MID}{a}\".\n"));
    }
    s.push_str(&format!("{GROUP_TAIL}{query}\"?"));
    s
}

pub fn extract_user(response: &str, query: &str) -> String {
    format!("{EXTRACT_HEAD}{response}{EXTRACT_TAIL}{query}")
}

pub fn extract(response: &str, query: &str) -> Vec<ChatTurn> {
    vec![
        ChatTurn::system(EXTRACT_SYSTEM),
        ChatTurn::user(extract_user(response, query)),
    ]
}

pub fn cluster_user(query: &str, a: &str, b: &str) -> String {
    format!("Question: {query}\nAnswer 1: {a}\nAnswer 2: {b}")
}

pub fn cluster_pair(query: &str, a: &str, b: &str) -> Vec<ChatTurn> {
    vec![
        ChatTurn::system(CLUSTER_SYSTEM),
        ChatTurn::user(cluster_user(query, a, b)),
    ]
}

/// Reads a yes/no verdict from the first word of a judge reply.
pub fn parse_yes_no(reply: &str) -> Option<bool> {
    let first = reply
        .split(|c: char| !c.is_alphanumeric())
        .find(|w| !w.is_empty())?
        .to_lowercase();
    match first.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionPrompt {
    pub partner_question: String,
    pub partner_answer: String,
    pub query: String,
}

pub fn parse_interaction(user: &str) -> Option<InteractionPrompt> {
    let rest = user.strip_prefix(INTERACT_HEAD)?;
    let (partner_question, rest) = rest.split_once(INTERACT_MID)?;
    let (partner_answer, rest) = rest.split_once(INTERACT_TAIL)?;
    let query = rest.strip_suffix("\"?")?;
    Some(InteractionPrompt {
        partner_question: partner_question.to_string(),
        partner_answer: partner_answer.to_string(),
        query: query.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPrompt {
    /// (question, answer) per other agent, in display order.
    pub others: Vec<(String, String)>,
    pub query: String,
}

pub fn parse_group(user: &str) -> Option<GroupPrompt> {
    let rest = user.strip_prefix(GROUP_HEAD)?;
    let mut others = Vec::new();
    let mut lines = rest.split('\n');
    let mut query = None;
    for line in lines.by_ref() {
        if let Some(item) = line.strip_prefix(GROUP_ITEM_HEAD) {
            let (q, a) = item.split_once(INTERACT_MID)?;
            let a = a.strip_suffix("\".")?;
            others.push((q.to_string(), a.to_string()));
        } else {
            let q = line.strip_prefix(GROUP_TAIL)?;
            query = Some(q.strip_suffix("\"?")?.to_string());
            break;
        }
    }
    if lines.next().is_some() {
        return None;
    }
    Some(GroupPrompt {
        others,
        query: query?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractPrompt {
    pub response: String,
    pub query: String,
}

pub fn parse_extract(user: &str) -> Option<ExtractPrompt> {
    let rest = user.strip_prefix(EXTRACT_HEAD)?;
    let (response, query) = rest.rsplit_once(EXTRACT_TAIL)?;
    Some(ExtractPrompt {
        response: response.to_string(),
        query: query.to_string(),
    })
}

/// The kind of request a history represents, recovered from its system turn
/// and final user turn.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Conceptualize,
    Aspects,
    AspectQuestions,
    Filter,
    Equivalents,
    Answer,
    Interact,
    Group,
    Extract,
    Cluster,
    Chat,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Conceptualize => "conceptualize",
            Task::Aspects => "aspects",
            Task::AspectQuestions => "aspect_questions",
            Task::Filter => "filter",
            Task::Equivalents => "equivalents",
            Task::Answer => "answer",
            Task::Interact => "interact",
            Task::Group => "group",
            Task::Extract => "extract",
            Task::Cluster => "cluster",
            Task::Chat => "chat",
        }
    }
}

pub fn classify(history: &[ChatTurn]) -> Task {
    let system = history
        .first()
        .filter(|t| t.role == Role::System)
        .map(|t| t.content.as_str())
        .unwrap_or("");
    let last_user = history
        .iter()
        .rev()
        .find(|t| t.role == Role::User)
        .map(|t| t.content.as_str())
        .unwrap_or("");
    if system == CONCEPTUALIZE_SYSTEM {
        Task::Conceptualize
    } else if system == ASPECTS_SYSTEM {
        Task::Aspects
    } else if system.starts_with(ASPECT_QUESTIONS_PREFIX)
        && system.contains(ASPECT_QUESTIONS_MARKER)
    {
        Task::AspectQuestions
    } else if system == FILTER_SYSTEM {
        Task::Filter
    } else if system.starts_with(EQUIVALENTS_PREFIX) && system.contains(EQUIVALENTS_MARKER) {
        Task::Equivalents
    } else if system == EXTRACT_SYSTEM {
        Task::Extract
    } else if system == CLUSTER_SYSTEM {
        Task::Cluster
    } else if system == ANSWER_SYSTEM {
        if parse_interaction(last_user).is_some() {
            Task::Interact
        } else if parse_group(last_user).is_some() {
            Task::Group
        } else {
            Task::Answer
        }
    } else {
        Task::Chat
    }
}
