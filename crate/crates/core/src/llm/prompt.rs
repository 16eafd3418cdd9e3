use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explanation::{ExplanationContext, MissingSlot, Slots};
use crate::router::IntentKind;
use crate::text::humanize;

/// In-context examples per intent used when assembling a prompt.
pub const DEFAULT_K_ICL: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclContext {
    pub diet: String,
    #[serde(default)]
    pub health_goals: Vec<String>,
    pub ingredients: Vec<String>,
    pub recipe_name: String,
    #[serde(default)]
    pub recipe_tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclExample {
    pub intent: IntentKind,
    pub context: IclContext,
    pub query: String,
    pub explanation: String,
}

#[derive(Debug, Error)]
pub enum ExamplesError {
    #[error("cannot read example store {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed example store: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("example store has {have} example(s) for {intent}, needs at least {need}")]
    TooFew { intent: IntentKind, have: usize, need: usize },
}

/// Ordered in-context examples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExampleStore {
    examples: Vec<IclExample>,
}

impl ExampleStore {
    pub fn embedded() -> Self {
        Self::from_json(include_str!("../../data/icl_examples.json")).expect("embedded examples are valid")
    }

    pub fn from_json(raw: &str) -> Result<Self, ExamplesError> {
        Ok(Self { examples: serde_json::from_str(raw)? })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExamplesError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|source| ExamplesError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&raw)
    }

    pub fn new(examples: Vec<IclExample>) -> Self {
        Self { examples }
    }

    /// Examples for `intent` in store order.
    pub fn for_intent(&self, intent: IntentKind) -> Vec<&IclExample> {
        self.examples.iter().filter(|e| e.intent == intent).collect()
    }

    /// Checks that every intent has at least `k` examples.
    pub fn ensure_coverage(&self, k: usize) -> Result<(), ExamplesError> {
        for intent in IntentKind::ALL {
            let have = self.for_intent(intent).len();
            if have < k {
                return Err(ExamplesError::TooFew { intent, have, need: k });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// The LLM-mode instruction with its six slots filled.
pub fn fill_llm_prompt(slots: &Slots) -> String {
    format!(
        "Please provide a concise, logical, and personalized explanation tailored to a user with a {} diet and a \
         health goal of {}. The user currently has these ingredients: {}. The suggested recipe is {}, labeled as {}. \
         Clearly address the user's query: {}.",
        slots.dietary_preference,
        slots.health_goal,
        slots.ingredient_list,
        slots.recipe_name,
        slots.recipe_tags,
        slots.user_question
    )
}

fn sorted_humanized(items: &[String], sep: &str) -> String {
    let mut v: Vec<String> = items.iter().map(|s| humanize(s)).collect();
    v.sort();
    if v.is_empty() {
        "none".to_string()
    } else {
        v.join(sep)
    }
}

/// One example as it appears in the prompt.
pub fn serialize_example(index: usize, ex: &IclExample) -> String {
    let c = &ex.context;
    format!(
        "Example {index}:\nContext: {} diet; health goal: {}; ingredients: {}; recipe: {}; tags: {}\nQuestion: {}\nExplanation: {}\n\n",
        humanize(&c.diet),
        sorted_humanized(&c.health_goals, " and "),
        sorted_humanized(&c.ingredients, ", "),
        c.recipe_name,
        sorted_humanized(&c.recipe_tags, ", "),
        ex.query,
        ex.explanation
    )
}

/// `k` examples matching the context's intent, in store order, followed by
/// the filled instruction.
pub fn assemble_prompt(ctx: &ExplanationContext, store: &ExampleStore, k: usize) -> Result<String, MissingSlot> {
    let slots = ctx.slots()?;
    let mut out = String::new();
    for (i, ex) in store.for_intent(ctx.intent).into_iter().take(k).enumerate() {
        out.push_str(&serialize_example(i + 1, ex));
    }
    out.push_str(&fill_llm_prompt(&slots));
    Ok(out)
}
