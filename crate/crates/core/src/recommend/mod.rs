//! Transparent recipe scoring and ranking.
//!
//! Recipes first pass hard filters (allergens, diet conflicts). Survivors get
//! a four-component feature vector and a linear score; the top `k` by score
//! form the recommendation. Because the scorer is a known linear function,
//! attributions and counterfactuals computed against it are exact.

mod remote;
mod store;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Corpus, Recipe, UserProfile};
use crate::vocab::Vocabulary;

pub use remote::RemoteRecommender;
pub use store::{CorpusStore, LocalRecommender};

pub const FEATURE_NAMES: [&str; 4] = ["ingredient_coverage", "diet_compatibility", "goal_alignment", "calorie_fit"];

#[derive(Debug, Error, PartialEq)]
pub enum WeightsError {
    #[error("weight {name} is negative or not finite ({value})")]
    Negative { name: &'static str, value: f64 },
    #[error("weights must sum to 1 (got {0})")]
    BadSum(f64),
}

/// Non-negative weights for `(match, diet, goal, calorie)` summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct ScoringWeights {
    w_match: f64,
    w_diet: f64,
    w_goal: f64,
    w_cal: f64,
}

impl ScoringWeights {
    pub fn new(w_match: f64, w_diet: f64, w_goal: f64, w_cal: f64) -> Result<Self, WeightsError> {
        let arr = [w_match, w_diet, w_goal, w_cal];
        for (name, value) in ["w_match", "w_diet", "w_goal", "w_cal"].into_iter().zip(arr) {
            if !(value.is_finite() && value >= 0.0) {
                return Err(WeightsError::Negative { name, value });
            }
        }
        let sum: f64 = arr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(WeightsError::BadSum(sum));
        }
        Ok(Self { w_match, w_diet, w_goal, w_cal })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w_match, self.w_diet, self.w_goal, self.w_cal]
    }
}

impl Default for ScoringWeights {
    fn default() -> Self {
        Self { w_match: 0.4, w_diet: 0.25, w_goal: 0.2, w_cal: 0.15 }
    }
}

impl TryFrom<[f64; 4]> for ScoringWeights {
    type Error = WeightsError;

    fn try_from(a: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<ScoringWeights> for [f64; 4] {
    fn from(w: ScoringWeights) -> Self {
        w.as_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub ingredient_coverage: f64,
    pub diet_compatibility: f64,
    pub goal_alignment: f64,
    pub calorie_fit: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 4] {
        [self.ingredient_coverage, self.diet_compatibility, self.goal_alignment, self.calorie_fit]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { ingredient_coverage: a[0], diet_compatibility: a[1], goal_alignment: a[2], calorie_fit: a[3] }
    }
}

/// Why a recipe failed the hard filters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExclusionReason {
    /// `allergen` is the profile entry; `via` the recipe ingredient or tag that hit it.
    Allergen { allergen: String, via: String },
    /// `tag` on the recipe or one of its ingredients conflicts with `diet`.
    DietConflict { tag: String, diet: String, ingredient: Option<String> },
}

impl ExclusionReason {
    /// The recipe element (ingredient id or recipe tag) that caused the exclusion.
    pub fn cause(&self) -> &str {
        match self {
            ExclusionReason::Allergen { via, .. } => via,
            ExclusionReason::DietConflict { ingredient, tag, .. } => ingredient.as_deref().unwrap_or(tag),
        }
    }
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExclusionReason::Allergen { allergen, via } if allergen == via => {
                write!(f, "contains allergen {allergen}")
            }
            ExclusionReason::Allergen { allergen, via } => write!(f, "contains allergen {allergen} ({via})"),
            ExclusionReason::DietConflict { tag, diet, .. } => write!(f, "{tag} conflicts with {diet}"),
        }
    }
}

/// Applies allergen and diet constraints. Allergens are checked first.
pub fn hard_filter(recipe: &Recipe, profile: &UserProfile, vocab: &Vocabulary) -> Result<(), ExclusionReason> {
    for allergen in &profile.allergens {
        if recipe.ingredients.iter().any(|i| i == allergen) {
            return Err(ExclusionReason::Allergen { allergen: allergen.clone(), via: allergen.clone() });
        }
        if recipe.tags.contains(allergen) {
            return Err(ExclusionReason::Allergen { allergen: allergen.clone(), via: allergen.clone() });
        }
        if let Some(ing) = recipe.ingredients.iter().find(|i| vocab.ingredient_tags(i).any(|t| t == allergen)) {
            return Err(ExclusionReason::Allergen { allergen: allergen.clone(), via: ing.clone() });
        }
    }
    if let Some(diet) = vocab.diet(&profile.diet) {
        for conflict in &diet.conflicts {
            if recipe.tags.contains(conflict) {
                return Err(ExclusionReason::DietConflict {
                    tag: conflict.clone(),
                    diet: diet.id.clone(),
                    ingredient: None,
                });
            }
            if let Some(ing) = recipe.ingredients.iter().find(|i| vocab.ingredient_tags(i).any(|t| t == conflict)) {
                return Err(ExclusionReason::DietConflict {
                    tag: conflict.clone(),
                    diet: diet.id.clone(),
                    ingredient: Some(ing.clone()),
                });
            }
        }
    }
    Ok(())
}

pub fn feature_vector(
    recipe: &Recipe,
    profile: &UserProfile,
    detected: &BTreeSet<String>,
    vocab: &Vocabulary,
) -> FeatureVector {
    let n = recipe.ingredients.len().max(1) as f64;
    let matched = recipe.ingredients.iter().filter(|i| detected.contains(*i)).count() as f64;
    let diet_ok = vocab.diet(&profile.diet).is_some_and(|d| d.matches_all) || recipe.tags.contains(&profile.diet);
    let goals_hit = profile.health_goals.iter().filter(|g| recipe.tags.contains(*g)).count() as f64;
    let target = profile.calorie_target.max(1) as f64;
    FeatureVector {
        ingredient_coverage: matched / n,
        diet_compatibility: if diet_ok { 1.0 } else { 0.0 },
        goal_alignment: goals_hit / profile.health_goals.len().max(1) as f64,
        calorie_fit: (1.0 - (recipe.calories_per_serving - target).abs() / target).max(0.0),
    }
}

pub fn score(features: &FeatureVector, weights: &ScoringWeights) -> f64 {
    features.as_array().iter().zip(weights.as_array()).map(|(f, w)| f * w).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecipe {
    pub recipe: Recipe,
    pub features: FeatureVector,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded: Option<ExclusionReason>,
}

/// Where one recipe landed in a ranking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ranked {
        rank: u32,
    },
    /// Passed the filters but scored below the top-k cut. `position` is the
    /// 1-based position it would hold in an unbounded ranking.
    PassedOver {
        position: u32,
    },
    Excluded {
        reason: ExclusionReason,
    },
}

impl Outcome {
    pub fn is_ranked(&self) -> bool {
        matches!(self, Outcome::Ranked { .. })
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Ranked { rank } => write!(f, "recommended at rank {rank}"),
            Outcome::PassedOver { position } => write!(f, "not in the top list (position {position})"),
            Outcome::Excluded { reason } => write!(f, "excluded ({reason})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub k: usize,
    /// Top-k, ranks 1..=len.
    pub ranked: Vec<ScoredRecipe>,
    /// Passed the filters but fell below the cut, in ranking order.
    #[serde(default)]
    pub passed_over: Vec<ScoredRecipe>,
    /// Failed a hard filter, in corpus order.
    pub excluded: Vec<ScoredRecipe>,
}

impl RankResult {
    pub fn find(&self, recipe_id: &str) -> Option<&ScoredRecipe> {
        self.ranked.iter().chain(&self.passed_over).chain(&self.excluded).find(|s| s.recipe.id == recipe_id)
    }

    pub fn outcome(&self, recipe_id: &str) -> Option<Outcome> {
        if let Some(s) = self.ranked.iter().find(|s| s.recipe.id == recipe_id) {
            return Some(Outcome::Ranked { rank: s.rank.unwrap_or(0) });
        }
        if let Some(pos) = self.passed_over.iter().position(|s| s.recipe.id == recipe_id) {
            return Some(Outcome::PassedOver { position: (self.ranked.len() + pos + 1) as u32 });
        }
        self.excluded
            .iter()
            .find(|s| s.recipe.id == recipe_id)
            .and_then(|s| s.excluded.clone())
            .map(|reason| Outcome::Excluded { reason })
    }

    pub fn top(&self) -> Option<&ScoredRecipe> {
        self.ranked.first()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("k must be at least 1")]
    ZeroK,
}

/// Descending score, then higher coverage, then ascending id.
pub fn ranking_order(a: &ScoredRecipe, b: &ScoredRecipe) -> Ordering {
    compare_keys(
        (a.score, a.features.ingredient_coverage, &a.recipe.id),
        (b.score, b.features.ingredient_coverage, &b.recipe.id),
    )
}

fn compare_keys(a: (f64, f64, &str), b: (f64, f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| b.1.total_cmp(&a.1)).then_with(|| a.2.cmp(b.2))
}

/// Scores a whole corpus for one profile and ingredient set.
#[derive(Debug, Clone, Copy)]
pub struct Ranker<'a> {
    pub corpus: &'a Corpus,
    pub vocab: &'a Vocabulary,
    pub weights: ScoringWeights,
}

impl<'a> Ranker<'a> {
    pub fn new(corpus: &'a Corpus, vocab: &'a Vocabulary, weights: ScoringWeights) -> Self {
        Self { corpus, vocab, weights }
    }

    pub fn score_recipe(&self, recipe: &Recipe, profile: &UserProfile, detected: &BTreeSet<String>) -> ScoredRecipe {
        let features = feature_vector(recipe, profile, detected, self.vocab);
        ScoredRecipe {
            recipe: recipe.clone(),
            features,
            score: score(&features, &self.weights),
            rank: None,
            excluded: hard_filter(recipe, profile, self.vocab).err(),
        }
    }

    pub fn rank(&self, profile: &UserProfile, detected: &BTreeSet<String>, k: usize) -> Result<RankResult, RankError> {
        if self.corpus.is_empty() {
            return Err(RankError::EmptyCorpus);
        }
        if k == 0 {
            return Err(RankError::ZeroK);
        }
        let (mut passing, excluded): (Vec<_>, Vec<_>) = self
            .corpus
            .recipes()
            .iter()
            .map(|r| self.score_recipe(r, profile, detected))
            .partition(|s| s.excluded.is_none());
        passing.sort_by(ranking_order);
        let passed_over = passing.split_off(k.min(passing.len()));
        for (i, s) in passing.iter_mut().enumerate() {
            s.rank = Some(i as u32 + 1);
        }
        Ok(RankResult { k, ranked: passing, passed_over, excluded })
    }

    /// Outcome of a single recipe without sorting the corpus. Agrees with
    /// [`Ranker::rank`] followed by [`RankResult::outcome`].
    pub fn outcome_of(
        &self,
        recipe_id: &str,
        profile: &UserProfile,
        detected: &BTreeSet<String>,
        k: usize,
    ) -> Option<Outcome> {
        let target = self.corpus.get(recipe_id)?;
        if let Err(reason) = hard_filter(target, profile, self.vocab) {
            return Some(Outcome::Excluded { reason });
        }
        let tf = feature_vector(target, profile, detected, self.vocab);
        self.outcome_with_features(target, tf, profile, detected, k)
    }

    /// Passing recipes that rank ahead of `target` scored with `features`.
    /// Counting stops once `cap` is reached.
    pub fn competitors_ahead(
        &self,
        target: &Recipe,
        features: FeatureVector,
        profile: &UserProfile,
        detected: &BTreeSet<String>,
        cap: u32,
    ) -> u32 {
        let key = (score(&features, &self.weights), features.ingredient_coverage, target.id.as_str());
        let mut ahead = 0u32;
        for r in self.corpus.recipes() {
            if ahead >= cap {
                break;
            }
            if r.id == target.id || hard_filter(r, profile, self.vocab).is_err() {
                continue;
            }
            let f = feature_vector(r, profile, detected, self.vocab);
            if compare_keys((score(&f, &self.weights), f.ingredient_coverage, &r.id), key) == Ordering::Less {
                ahead += 1;
            }
        }
        ahead
    }

    /// Position of `target` if its features were `features`, competitors scored normally.
    pub fn outcome_with_features(
        &self,
        target: &Recipe,
        features: FeatureVector,
        profile: &UserProfile,
        detected: &BTreeSet<String>,
        k: usize,
    ) -> Option<Outcome> {
        let position = self.competitors_ahead(target, features, profile, detected, u32::MAX) + 1;
        Some(if (position as usize) <= k {
            Outcome::Ranked { rank: position }
        } else {
            Outcome::PassedOver { position }
        })
    }
}

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("remote recommender unavailable: {0}")]
    Unavailable(String),
    #[error("remote recommender returned an unusable response: {0}")]
    BadResponse(String),
}

/// A source of ranked recipes for a profile and ingredient set.
pub trait Recommender: Send + Sync {
    fn name(&self) -> &'static str;

    fn rank(&self, profile: &UserProfile, detected: &BTreeSet<String>, k: usize) -> Result<RankResult, RecommendError>;
}
