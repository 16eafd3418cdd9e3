//! Domain types shared by every stage: ingredients, user profiles, recipes
//! and the recipe corpus.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ingredient {
    pub id: String,
    pub display_name: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

/// A validated user profile. Build one through [`validate_profile`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: String,
    pub diet: String,
    pub health_goals: BTreeSet<String>,
    pub allergens: BTreeSet<String>,
    pub calorie_target: u32,
}

/// Unvalidated profile input as it arrives from a request or file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileDraft {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub diet: String,
    #[serde(default)]
    pub health_goals: Vec<String>,
    #[serde(default)]
    pub allergens: Vec<String>,
    #[serde(default)]
    pub calorie_target: i64,
}

impl From<&UserProfile> for ProfileDraft {
    fn from(p: &UserProfile) -> Self {
        Self {
            id: p.id.clone(),
            diet: p.diet.clone(),
            health_goals: p.health_goals.iter().cloned().collect(),
            allergens: p.allergens.iter().cloned().collect(),
            calorie_target: p.calorie_target as i64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Checks every profile invariant and reports all violations, not just the first.
pub fn validate_profile(draft: &ProfileDraft, vocab: &Vocabulary) -> Result<UserProfile, Vec<Violation>> {
    let mut violations = Vec::new();

    if draft.id.trim().is_empty() {
        violations.push(Violation::new("id", "id must be non-empty"));
    }
    if vocab.diet(&draft.diet).is_none() {
        violations.push(Violation::new("diet", format!("unknown diet: {:?}", draft.diet)));
    }
    for goal in &draft.health_goals {
        if !vocab.is_goal(goal) {
            violations.push(Violation::new("health_goals", format!("unknown health goal: {goal}")));
        }
    }
    for allergen in &draft.allergens {
        if !vocab.is_ingredient(allergen) && !vocab.is_tag(allergen) {
            violations.push(Violation::new("allergens", format!("unknown allergen: {allergen}")));
        }
    }
    let calorie_target = match u32::try_from(draft.calorie_target) {
        Ok(c) if c > 0 => c,
        _ => {
            violations.push(Violation::new("calorie_target", "calorie_target must be > 0"));
            0
        }
    };

    if !violations.is_empty() {
        return Err(violations);
    }
    Ok(UserProfile {
        id: draft.id.trim().to_string(),
        diet: draft.diet.clone(),
        health_goals: draft.health_goals.iter().cloned().collect(),
        allergens: draft.allergens.iter().cloned().collect(),
        calorie_target,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub id: String,
    pub title: String,
    pub ingredients: Vec<String>,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    pub calories_per_serving: f64,
    #[serde(default)]
    pub steps: Vec<String>,
}

impl Recipe {
    /// The recipe's own tags plus every tag carried by its ingredients.
    pub fn effective_tags<'a>(&'a self, vocab: &'a Vocabulary) -> BTreeSet<&'a str> {
        self.tags
            .iter()
            .map(String::as_str)
            .chain(self.ingredients.iter().flat_map(|i| vocab.ingredient_tags(i)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeViolation {
    pub recipe_id: String,
    pub message: String,
}

impl fmt::Display for RecipeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.recipe_id, self.message)
    }
}

/// Checks each recipe invariant plus corpus-level id uniqueness.
pub fn validate_recipes(recipes: &[Recipe], vocab: &Vocabulary) -> Vec<RecipeViolation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for r in recipes {
        let mut push = |message: String| out.push(RecipeViolation { recipe_id: r.id.clone(), message });
        if r.id.is_empty() || !r.id.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') {
            push(format!("id {:?} must match [a-z0-9_]+", r.id));
        }
        if !seen.insert(r.id.as_str()) {
            push("duplicate recipe id".to_string());
        }
        if r.title.trim().is_empty() {
            push("title must be non-empty".to_string());
        }
        if r.ingredients.is_empty() {
            push("ingredients must be non-empty".to_string());
        }
        let mut ing_seen = BTreeSet::new();
        for ing in &r.ingredients {
            if !vocab.is_ingredient(ing) {
                push(format!("unknown ingredient: {ing}"));
            }
            if !ing_seen.insert(ing.as_str()) {
                push(format!("ingredient listed twice: {ing}"));
            }
        }
        if !(r.calories_per_serving.is_finite() && r.calories_per_serving > 0.0) {
            push(format!("calories_per_serving must be > 0 (got {})", r.calories_per_serving));
        }
        for tag in &r.tags {
            if !vocab.is_tag(tag) {
                push(format!("unknown tag: {tag}"));
            }
        }
        // A diet label on the recipe must not contradict its ingredients.
        for tag in &r.tags {
            if let Some(diet) = vocab.diet(tag) {
                for ing in &r.ingredients {
                    if let Some(bad) = vocab.ingredient_tags(ing).find(|t| diet.conflicts.iter().any(|c| c == t)) {
                        push(format!("tagged {tag} but {ing} is {bad}"));
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing corpus: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("corpus has {} violation(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<RecipeViolation>),
}

/// Immutable, validated recipe collection with id lookup.
#[derive(Debug, Clone)]
pub struct Corpus {
    recipes: Vec<Recipe>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(recipes: Vec<Recipe>, vocab: &Vocabulary) -> Result<Self, CorpusError> {
        let violations = validate_recipes(&recipes, vocab);
        if !violations.is_empty() {
            return Err(CorpusError::Invalid(violations));
        }
        let index = recipes.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        Ok(Self { recipes, index })
    }

    pub fn from_json(raw: &str, vocab: &Vocabulary) -> Result<Self, CorpusError> {
        Self::new(serde_json::from_str(raw)?, vocab)
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&raw, vocab)
    }

    pub fn embedded(vocab: &Vocabulary) -> Self {
        Self::from_json(include_str!("../data/corpus.json"), vocab).expect("embedded corpus is valid")
    }

    pub fn recipes(&self) -> &[Recipe] {
        &self.recipes
    }

    pub fn get(&self, id: &str) -> Option<&Recipe> {
        self.index.get(id).map(|&i| &self.recipes[i])
    }

    pub fn len(&self) -> usize {
        self.recipes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recipes.is_empty()
    }
}
