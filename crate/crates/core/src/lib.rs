//! Core pipeline for ingredient-driven recipe recommendation with explanations.
//!
//! The flow is detection → ranking → explanation. Explanations come from two
//! engines: a template engine backed by exact attribution and counterfactual
//! search over a transparent scorer, and an LLM engine that assembles an
//! in-context prompt. A rule-based router maps user questions to strategies.

pub mod config;
pub mod detect;
pub mod domain;
pub mod engine;
pub mod explanation;
pub mod llm;
pub mod recommend;
pub mod router;
pub mod vocab;
pub mod xai;

mod text;

pub use domain::{Corpus, ProfileDraft, Recipe, UserProfile, Violation};
pub use engine::{Engine, EngineBuilder};
pub use explanation::{Explanation, Mode};
pub use vocab::Vocabulary;
