//! Black-box uncertainty estimation for question answering.
//!
//! A query is expanded into a set of diverse questions, each answered by its
//! own agent instance of the model under test. Agents then revise their
//! answers to the original query through rounds of one-on-one exchanges, and
//! the entropy of the flip-weighted distribution over their final answers is
//! the uncertainty score. Self-consistency baselines, an abstention policy and
//! an evaluation harness sit alongside.
//!
//! Every model call goes through [`backend::ChatBackend`], so the whole
//! pipeline runs unchanged against a remote chat-completion endpoint or the
//! scripted [`backend::sim::SimBackend`].

pub mod backend;
pub mod error;
pub mod eval;
pub mod interaction;
pub mod persist;
pub mod pipeline;
pub mod policy;
pub mod prompts;
pub mod questiongen;
pub mod semantics;
pub mod text;
pub mod uncertainty;

pub use error::{Error, Result};
