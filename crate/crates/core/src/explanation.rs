//! Explanation records and the context object every explanation engine reads.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::UserProfile;
use crate::llm::LlmError;
use crate::recommend::{Outcome, RankResult};
use crate::router::{IntentKind, UnknownStrategy};
use crate::text::humanize;
use crate::xai::counterfactual::CounterfactualError;
use crate::xai::{Materials, XaiError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Template,
    Llm,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Template => "template",
            Mode::Llm => "llm",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "template" => Ok(Mode::Template),
            "llm" => Ok(Mode::Llm),
            other => Err(format!("unknown mode: {other} (expected template or llm)")),
        }
    }
}

/// Facets an explanation may address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    What,
    Who,
    Where,
    How,
    When,
}

/// What caused an explanation to be produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    #[default]
    Query,
    /// A new recommendation result, explained without being asked.
    Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeSummary {
    pub id: String,
    pub name: String,
    pub tags: Vec<String>,
    pub calories: f64,
    pub ingredients: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub diet: String,
    pub health_goals: Vec<String>,
}

/// The bundle handed to an explanation engine. Built as an owned copy, so
/// later changes to the session do not affect it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationContext {
    pub detected: BTreeSet<String>,
    pub recipe: RecipeSummary,
    pub profile: ProfileSummary,
    pub query: String,
    pub intent: IntentKind,
    /// How the recipe fared in the recommendation, including any exclusion reason.
    pub status: Outcome,
}

/// The last recommendation of a session: its inputs and result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationSnapshot {
    pub profile: UserProfile,
    pub detected: BTreeSet<String>,
    pub result: RankResult,
}

#[derive(Debug, Error, PartialEq)]
#[error("missing slot {0}")]
pub struct MissingSlot(pub &'static str);

/// Prompt slot values rendered from a context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slots {
    pub recipe_name: String,
    pub dietary_preference: String,
    pub health_goal: String,
    pub ingredient_list: String,
    pub recipe_tags: String,
    pub user_question: String,
}

impl ExplanationContext {
    /// Renders the prompt slots. Ingredients are sorted by id; goals and tags
    /// are sorted; an empty goal or tag set renders as `none`.
    pub fn slots(&self) -> Result<Slots, MissingSlot> {
        if self.recipe.name.trim().is_empty() {
            return Err(MissingSlot("<recipe name>"));
        }
        if self.profile.diet.trim().is_empty() {
            return Err(MissingSlot("<dietary preference>"));
        }
        if self.detected.is_empty() {
            return Err(MissingSlot("<ingredient list>"));
        }
        if self.query.trim().is_empty() {
            return Err(MissingSlot("<user question>"));
        }
        let mut goals: Vec<&String> = self.profile.health_goals.iter().collect();
        goals.sort();
        let mut tags: Vec<&String> = self.recipe.tags.iter().collect();
        tags.sort();
        let or_none = |s: String| if s.is_empty() { "none".to_string() } else { s };
        Ok(Slots {
            recipe_name: self.recipe.name.clone(),
            dietary_preference: humanize(&self.profile.diet),
            health_goal: or_none(goals.iter().map(|g| humanize(g)).collect::<Vec<_>>().join(" and ")),
            ingredient_list: self.detected.iter().map(|i| humanize(i)).collect::<Vec<_>>().join(", "),
            recipe_tags: or_none(tags.iter().map(|t| humanize(t)).collect::<Vec<_>>().join(", ")),
            user_question: self.query.trim().to_string(),
        })
    }
}

/// Builds the context for `recipe_id` from a recommendation snapshot. The
/// recipe may be ranked, passed over or excluded.
pub fn build_context(
    snapshot: &RecommendationSnapshot,
    recipe_id: &str,
    query: &str,
    intent: IntentKind,
) -> Result<ExplanationContext, ExplainError> {
    let scored =
        snapshot.result.find(recipe_id).ok_or_else(|| ExplainError::UnknownRecipeInSession(recipe_id.to_string()))?;
    let status = snapshot
        .result
        .outcome(recipe_id)
        .ok_or_else(|| ExplainError::UnknownRecipeInSession(recipe_id.to_string()))?;
    let recipe = &scored.recipe;
    Ok(ExplanationContext {
        detected: snapshot.detected.clone(),
        recipe: RecipeSummary {
            id: recipe.id.clone(),
            name: recipe.title.clone(),
            tags: recipe.tags.iter().cloned().collect(),
            calories: recipe.calories_per_serving,
            ingredients: recipe.ingredients.clone(),
        },
        profile: ProfileSummary {
            diet: snapshot.profile.diet.clone(),
            health_goals: snapshot.profile.health_goals.iter().cloned().collect(),
        },
        query: query.to_string(),
        intent,
        status,
    })
}

/// A delivered explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub recipe_id: String,
    pub query: String,
    /// `None` for event-triggered notices.
    pub intent: Option<IntentKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_rule: Option<String>,
    pub mode: Mode,
    pub strategy: String,
    pub text: String,
    pub dimensions: BTreeSet<Dimension>,
    /// Groundedness warnings; empty when the text passed every check.
    pub flags: Vec<String>,
    pub materials: Materials,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("unknown recipe in session: {0}")]
    UnknownRecipeInSession(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error(transparent)]
    MissingSlot(#[from] MissingSlot),
    #[error("strategy {strategy} has no materials for a {intent} question")]
    MaterialsMissing { intent: IntentKind, strategy: String },
    #[error(transparent)]
    UnknownStrategy(#[from] UnknownStrategy),
    #[error(transparent)]
    Xai(#[from] XaiError),
    #[error(transparent)]
    Counterfactual(#[from] CounterfactualError),
    #[error("{0}; template mode is available as a fallback")]
    Llm(#[from] LlmError),
}

impl ExplainError {
    /// Suggested alternative the caller can offer the user.
    pub fn fallback_hint(&self) -> Option<&'static str> {
        match self {
            ExplainError::Llm(_) => Some("retry with mode=template"),
            _ => None,
        }
    }
}
