//! Query routing: intent classification, strategy selection and dimension tags.

pub mod classify;
pub mod dimensions;
pub mod strategy;

pub use classify::{ClassifyError, Intent, IntentKind, RuleSet, RulesError};
pub use dimensions::tag_dimensions;
pub use strategy::{ExplanationStrategy, StrategyInput, StrategyOutput, StrategyRegistry, UnknownStrategy};

use crate::explanation::{build_context, ExplainError, Explanation, Mode, RecommendationSnapshot, Trigger};
use crate::text::{humanize, join_natural};
use crate::vocab::Vocabulary;
use crate::xai::Materials;

/// Strategy used for an intent in a mode. LLM mode sends every intent to
/// the same strategy.
pub fn route(intent: IntentKind, mode: Mode) -> &'static str {
    match (mode, intent) {
        (Mode::Llm, _) => "llm_icl",
        (Mode::Template, IntentKind::Why | IntentKind::FreeForm) => "shapley",
        (Mode::Template, IntentKind::WhyNot | IntentKind::WhatIf) => "counterfactual",
        (Mode::Template, IntentKind::HowTo) => "contrastive",
    }
}

/// Runs the routed strategy and wraps its output as an [`Explanation`].
pub fn dispatch(
    registry: &StrategyRegistry,
    intent: &Intent,
    mode: Mode,
    input: &StrategyInput<'_>,
    strategy_override: Option<&str>,
) -> Result<Explanation, ExplainError> {
    let strategy = registry.get(strategy_override.unwrap_or_else(|| route(intent.kind, mode)))?;
    let out = strategy.explain(input)?;
    let dimensions = tag_dimensions(&out.text, input.ctx, strategy.method_name(), Trigger::Query, input.ranker.vocab);
    Ok(Explanation {
        recipe_id: input.ctx.recipe.id.clone(),
        query: input.ctx.query.clone(),
        intent: Some(intent.kind),
        matched_rule: intent.matched_pattern.clone(),
        mode: strategy.mode(),
        strategy: strategy.name().to_string(),
        text: out.text,
        dimensions,
        flags: out.flags,
        materials: out.materials,
        note: out.note,
        latency_ms: None,
    })
}

/// Unprompted notice announcing a new recommendation result. `None` when
/// nothing was ranked.
pub fn recommendation_notice(snapshot: &RecommendationSnapshot, vocab: &Vocabulary) -> Option<Explanation> {
    let top = snapshot.result.top()?;
    let titles: Vec<String> = snapshot.result.ranked.iter().map(|s| s.recipe.title.clone()).collect();
    let ingredients: Vec<String> = snapshot.detected.iter().map(|i| humanize(i)).collect();
    let text = format!(
        "New recommendations for your {} diet using {}: {}.",
        humanize(&snapshot.profile.diet),
        if ingredients.is_empty() { "no detected ingredients".to_string() } else { join_natural(&ingredients) },
        join_natural(&titles)
    );
    let query = String::new();
    let ctx = build_context(snapshot, &top.recipe.id, &query, IntentKind::FreeForm).ok()?;
    let dimensions = tag_dimensions(&text, &ctx, "notice", Trigger::Event, vocab);
    Some(Explanation {
        recipe_id: top.recipe.id.clone(),
        query,
        intent: None,
        matched_rule: None,
        mode: Mode::Template,
        strategy: "notice".to_string(),
        text,
        dimensions,
        flags: Vec::new(),
        materials: Materials::Notice { ranked: snapshot.result.ranked.iter().map(|s| s.recipe.id.clone()).collect() },
        note: None,
        latency_ms: None,
    })
}
