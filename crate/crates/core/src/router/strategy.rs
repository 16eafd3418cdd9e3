//! Explanation strategies behind one trait, registered by name.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::explanation::{ExplainError, ExplanationContext, Mode, RecommendationSnapshot};
use crate::llm::prompt::DEFAULT_K_ICL;
use crate::llm::{assemble_prompt, generate, groundedness_check, ExampleStore, GenerationParams, LlmClient};
use crate::recommend::{Outcome, Ranker, ScoredRecipe};
use crate::router::IntentKind;
use crate::text::humanize;
use crate::xai::contrastive::contrastive;
use crate::xai::counterfactual::{
    diverse_counterfactuals, edits_from_query, what_if, CounterfactualError, CounterfactualTarget, EditSpace, Instance,
    SearchParams,
};
use crate::xai::realize::{
    realize_template, RealizeError, FREE_FORM_NOTE, METHOD_CONTRASTIVE, METHOD_COUNTERFACTUAL, METHOD_PDP,
    METHOD_SHAPLEY,
};
use crate::xai::{partial_dependence, shapley, Attribution, LinearScorer, Materials};

#[derive(Debug, Error, PartialEq)]
#[error("unknown strategy: {0}")]
pub struct UnknownStrategy(pub String);

/// Everything a strategy may read.
pub struct StrategyInput<'a> {
    pub ctx: &'a ExplanationContext,
    pub snapshot: &'a RecommendationSnapshot,
    pub ranker: Ranker<'a>,
}

impl StrategyInput<'_> {
    fn scored(&self) -> Result<&ScoredRecipe, ExplainError> {
        self.snapshot
            .result
            .find(&self.ctx.recipe.id)
            .ok_or_else(|| ExplainError::UnknownRecipeInSession(self.ctx.recipe.id.clone()))
    }

    fn attributions(&self) -> Result<Vec<Attribution>, ExplainError> {
        let x = self.scored()?.features.as_array();
        Ok(shapley(&LinearScorer::new(self.ranker.weights), &x, &[0.0; 4])?)
    }

    fn instance(&self) -> Instance<'_> {
        Instance { profile: &self.snapshot.profile, detected: &self.snapshot.detected, recipe_id: &self.ctx.recipe.id }
    }

    fn title_of(&self, recipe_id: &str) -> String {
        self.ranker.corpus.get(recipe_id).map(|r| r.title.clone()).unwrap_or_else(|| recipe_id.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyOutput {
    pub text: String,
    pub materials: Materials,
    pub flags: Vec<String>,
    pub note: Option<String>,
}

pub trait ExplanationStrategy: Send + Sync {
    /// Registry key, reported as the `strategy` of an explanation.
    fn name(&self) -> &'static str;

    fn mode(&self) -> Mode;

    /// How the method is named inside explanation text.
    fn method_name(&self) -> &'static str;

    fn explain(&self, input: &StrategyInput<'_>) -> Result<StrategyOutput, ExplainError>;
}

fn realize(
    intent: IntentKind,
    materials: Materials,
    input: &StrategyInput<'_>,
    strategy: &str,
) -> Result<StrategyOutput, ExplainError> {
    let text = realize_template(intent, &materials, input.ctx, input.ranker.vocab).map_err(|e| match e {
        RealizeError::MaterialsMissing { intent, .. } => {
            ExplainError::MaterialsMissing { intent, strategy: strategy.to_string() }
        }
        RealizeError::MissingSlot(s) => ExplainError::MissingSlot(s),
    })?;
    Ok(StrategyOutput {
        text,
        materials,
        flags: Vec::new(),
        note: (intent == IntentKind::FreeForm).then(|| FREE_FORM_NOTE.to_string()),
    })
}

pub struct ShapleyStrategy;

impl ExplanationStrategy for ShapleyStrategy {
    fn name(&self) -> &'static str {
        "shapley"
    }

    fn mode(&self) -> Mode {
        Mode::Template
    }

    fn method_name(&self) -> &'static str {
        METHOD_SHAPLEY
    }

    fn explain(&self, input: &StrategyInput<'_>) -> Result<StrategyOutput, ExplainError> {
        let attributions = input.attributions()?;
        realize(input.ctx.intent, Materials::Attributions { attributions }, input, self.name())
    }
}

/// Sweeps one feature over an evenly spaced grid on [0, 1].
pub struct PdpStrategy {
    pub feature: &'static str,
    pub points: usize,
}

impl Default for PdpStrategy {
    fn default() -> Self {
        Self { feature: "calorie_fit", points: 11 }
    }
}

impl ExplanationStrategy for PdpStrategy {
    fn name(&self) -> &'static str {
        "pdp"
    }

    fn mode(&self) -> Mode {
        Mode::Template
    }

    fn method_name(&self) -> &'static str {
        METHOD_PDP
    }

    fn explain(&self, input: &StrategyInput<'_>) -> Result<StrategyOutput, ExplainError> {
        let x = input.scored()?.features.as_array();
        let steps = self.points.max(2) - 1;
        let grid: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
        let curve = partial_dependence(&LinearScorer::new(input.ranker.weights), &x, self.feature, &grid)?;
        realize(
            IntentKind::Why,
            Materials::PartialDependence { feature: self.feature.to_string(), curve },
            input,
            self.name(),
        )
    }
}

pub struct CounterfactualStrategy {
    pub count: usize,
    pub max_edits: u32,
    /// `None` searches the whole vocabulary.
    pub space: Option<EditSpace>,
}

impl Default for CounterfactualStrategy {
    fn default() -> Self {
        let d = SearchParams::default();
        Self { count: d.count, max_edits: d.max_edits, space: None }
    }
}

impl ExplanationStrategy for CounterfactualStrategy {
    fn name(&self) -> &'static str {
        "counterfactual"
    }

    fn mode(&self) -> Mode {
        Mode::Template
    }

    fn method_name(&self) -> &'static str {
        METHOD_COUNTERFACTUAL
    }

    fn explain(&self, input: &StrategyInput<'_>) -> Result<StrategyOutput, ExplainError> {
        let intent = input.ctx.intent;
        let top_k = input.snapshot.result.k.max(1);
        let inst = input.instance();

        if intent == IntentKind::WhatIf {
            let edits = edits_from_query(&input.ctx.query, inst.profile, inst.detected, input.ranker.vocab);
            if !edits.is_empty() {
                let (counterfactual, new_top) = what_if(&input.ranker, inst, edits, top_k)?;
                let new_top = new_top.map(|id| input.title_of(&id));
                return realize(intent, Materials::WhatIf { counterfactual, new_top }, input, self.name());
            }
        }

        let target = match (&input.ctx.status, intent) {
            (Outcome::Ranked { .. }, IntentKind::WhatIf) => CounterfactualTarget::Exclude,
            (Outcome::Ranked { rank }, IntentKind::HowTo) if *rank > 1 => CounterfactualTarget::ReachRank(rank - 1),
            _ => CounterfactualTarget::Include,
        };
        let params = SearchParams { top_k, count: self.count, max_edits: self.max_edits };
        let owned;
        let space = match &self.space {
            Some(s) => s,
            None => {
                owned = EditSpace::from_vocab(input.ranker.vocab);
                &owned
            }
        };
        let mut found = diverse_counterfactuals(&input.ranker, inst, target, params, space);
        if matches!(found, Err(CounterfactualError::NoCounterfactualWithinBudget { .. }))
            && matches!(input.ctx.status, Outcome::Excluded { .. })
        {
            found = diverse_counterfactuals(&input.ranker, inst, CounterfactualTarget::PassFilters, params, space);
        }
        let counterfactuals = match found {
            Ok(found) => found,
            Err(CounterfactualError::NoCounterfactualWithinBudget { .. }) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        realize(intent, Materials::Counterfactuals { counterfactuals, max_edits: self.max_edits }, input, self.name())
    }
}

/// Pertinent positives/negatives plus better-fitting alternatives from the
/// current recommendation.
pub struct ContrastiveStrategy {
    pub alternatives: usize,
}

impl Default for ContrastiveStrategy {
    fn default() -> Self {
        Self { alternatives: 3 }
    }
}

impl ContrastiveStrategy {
    fn alternatives(&self, input: &StrategyInput<'_>) -> Vec<String> {
        let profile = &input.snapshot.profile;
        let any_diet = input.ranker.vocab.diet(&profile.diet).is_some_and(|d| d.matches_all);
        let fits = |s: &&ScoredRecipe| {
            s.recipe.id != input.ctx.recipe.id
                && (any_diet || s.recipe.tags.contains(&profile.diet))
                && (profile.health_goals.is_empty() || profile.health_goals.iter().any(|g| s.recipe.tags.contains(g)))
        };
        input
            .snapshot
            .result
            .ranked
            .iter()
            .filter(fits)
            .take(self.alternatives)
            .map(|s| s.recipe.title.clone())
            .collect()
    }
}

impl ExplanationStrategy for ContrastiveStrategy {
    fn name(&self) -> &'static str {
        "contrastive"
    }

    fn mode(&self) -> Mode {
        Mode::Template
    }

    fn method_name(&self) -> &'static str {
        METHOD_CONTRASTIVE
    }

    fn explain(&self, input: &StrategyInput<'_>) -> Result<StrategyOutput, ExplainError> {
        let recipe = &input.scored()?.recipe;
        let c = contrastive(
            &input.ranker,
            recipe,
            &input.snapshot.profile,
            &input.snapshot.detected,
            input.snapshot.result.k.max(1),
        );
        realize(
            IntentKind::HowTo,
            Materials::Contrastive { contrastive: c, alternatives: self.alternatives(input) },
            input,
            self.name(),
        )
    }
}

/// In-context prompt → LLM → groundedness check.
pub struct LlmIclStrategy {
    pub client: Arc<dyn LlmClient>,
    pub examples: Arc<ExampleStore>,
    pub params: GenerationParams,
    pub k: usize,
}

impl LlmIclStrategy {
    pub fn new(client: Arc<dyn LlmClient>, examples: Arc<ExampleStore>, params: GenerationParams) -> Self {
        Self { client, examples, params, k: DEFAULT_K_ICL }
    }

    /// System message: task framing plus the facts the answer must respect.
    pub fn system_message(input: &StrategyInput<'_>) -> Result<String, ExplainError> {
        let ctx = input.ctx;
        let attributions = input.attributions()?;
        let top = attributions
            .iter()
            .filter(|a| a.phi > 0.0)
            .max_by(|a, b| a.phi.total_cmp(&b.phi).then_with(|| b.feature.cmp(&a.feature)))
            .map(|a| humanize(&a.feature))
            .unwrap_or_else(|| "none".to_string());
        let status = match &ctx.status {
            Outcome::Ranked { rank } => format!("recommended at rank {rank}"),
            Outcome::PassedOver { position } => format!("not recommended, ranked at position {position}"),
            Outcome::Excluded { reason } => format!("excluded, {reason}"),
        };
        Ok(format!(
            "You explain recipe recommendations to a home cook. Answer in a few sentences, address the user directly, \
             and only mention ingredients that appear in the context.\nIntent: {}\nRecipe: {}\nStatus: {}\nTop signal: {}",
            ctx.intent, ctx.recipe.name, status, top
        ))
    }
}

impl ExplanationStrategy for LlmIclStrategy {
    fn name(&self) -> &'static str {
        "llm_icl"
    }

    fn mode(&self) -> Mode {
        Mode::Llm
    }

    fn method_name(&self) -> &'static str {
        "in-context learning"
    }

    fn explain(&self, input: &StrategyInput<'_>) -> Result<StrategyOutput, ExplainError> {
        let prompt = assemble_prompt(input.ctx, &self.examples, self.k)?;
        let system = Self::system_message(input)?;
        let text = generate(self.client.as_ref(), &system, &prompt, &self.params)?;
        let flags = groundedness_check(&text, input.ctx, input.ranker.vocab);
        Ok(StrategyOutput {
            text,
            materials: Materials::Llm { prompt_chars: prompt.chars().count() },
            flags,
            note: None,
        })
    }
}

/// Strategies keyed by name.
#[derive(Default, Clone)]
pub struct StrategyRegistry {
    strategies: BTreeMap<&'static str, Arc<dyn ExplanationStrategy>>,
}

impl StrategyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The template strategies plus `llm_icl` over `client`.
    pub fn with_defaults(
        client: Arc<dyn LlmClient>,
        examples: Arc<ExampleStore>,
        params: GenerationParams,
        k_icl: usize,
    ) -> Self {
        let mut r = Self::new();
        r.register(Arc::new(ShapleyStrategy));
        r.register(Arc::new(PdpStrategy::default()));
        r.register(Arc::new(CounterfactualStrategy::default()));
        r.register(Arc::new(ContrastiveStrategy::default()));
        let mut llm = LlmIclStrategy::new(client, examples, params);
        llm.k = k_icl;
        r.register(Arc::new(llm));
        r
    }

    /// Adds or replaces the strategy under its own name.
    pub fn register(&mut self, strategy: Arc<dyn ExplanationStrategy>) {
        self.strategies.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ExplanationStrategy>, UnknownStrategy> {
        self.strategies.get(name).cloned().ok_or_else(|| UnknownStrategy(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.keys().copied().collect()
    }
}

impl std::fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StrategyRegistry").field("strategies", &self.names()).finish()
    }
}
