//! Closed vocabularies: diets, goal tags, recipe/ingredient tags, the
//! ingredient universe and the detector-label synonym table.
//!
//! The vocabulary ships as a versioned JSON file. A copy is embedded so the
//! library works without a data directory; deployments can point at a newer
//! file without rebuilding.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Ingredient;

const EMBEDDED_VOCAB: &str = include_str!("../data/vocab.json");

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("reading vocabulary {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing vocabulary: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid vocabulary: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NormalizeError {
    #[error("ingredient name is empty")]
    EmptyInput,
}

/// Result of mapping a free-text label onto the ingredient universe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "id", rename_all = "snake_case")]
pub enum Normalized {
    Known(String),
    /// Normalized token that matched nothing. Never a corpus id.
    Unknown(String),
}

impl Normalized {
    pub fn known(&self) -> Option<&str> {
        match self {
            Normalized::Known(id) => Some(id),
            Normalized::Unknown(_) => None,
        }
    }

    pub fn token(&self) -> &str {
        match self {
            Normalized::Known(t) | Normalized::Unknown(t) => t,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DietDef {
    pub id: String,
    /// Ingredient or recipe tags the diet cannot accept.
    #[serde(default)]
    pub conflicts: Vec<String>,
    /// Every recipe counts as diet-compatible (omnivore).
    #[serde(default)]
    pub matches_all: bool,
}

#[derive(Debug, Deserialize)]
struct VocabFile {
    version: String,
    diets: Vec<DietDef>,
    goals: Vec<String>,
    tags: Vec<String>,
    ingredients: Vec<Ingredient>,
    synonyms: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    version: String,
    diets: Vec<DietDef>,
    goals: BTreeSet<String>,
    tags: BTreeSet<String>,
    ingredients: BTreeMap<String, Ingredient>,
    /// Keys are stored in normalized token form.
    synonyms: BTreeMap<String, String>,
}

fn is_id(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Lowercase, trim, collapse whitespace, map spaces and hyphens to `_`.
fn tokenize(raw: &str) -> String {
    let lowered = raw.trim().to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_sep = false;
    for ch in lowered.chars() {
        if ch.is_whitespace() || ch == '-' || ch == '_' {
            pending_sep = !out.is_empty();
        } else {
            if pending_sep {
                out.push('_');
                pending_sep = false;
            }
            out.push(ch);
        }
    }
    out
}

impl Vocabulary {
    /// The vocabulary compiled into the binary.
    pub fn embedded() -> Self {
        Self::from_json(EMBEDDED_VOCAB).expect("embedded vocabulary is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|source| VocabError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&raw)
    }

    pub fn from_json(raw: &str) -> Result<Self, VocabError> {
        let file: VocabFile = serde_json::from_str(raw)?;
        let tags: BTreeSet<String> = file.tags.into_iter().collect();

        let mut ingredients = BTreeMap::new();
        for ing in file.ingredients {
            if !is_id(&ing.id) {
                return Err(VocabError::Invalid(format!("ingredient id {:?} must match [a-z0-9_]+", ing.id)));
            }
            if let Some(tag) = ing.tags.iter().find(|t| !tags.contains(*t)) {
                return Err(VocabError::Invalid(format!("ingredient {} uses unknown tag {tag}", ing.id)));
            }
            let id = ing.id.clone();
            if ingredients.insert(id.clone(), ing).is_some() {
                return Err(VocabError::Invalid(format!("duplicate ingredient id {id}")));
            }
        }

        let mut seen_diets = BTreeSet::new();
        for diet in &file.diets {
            if !is_id(&diet.id) || !seen_diets.insert(diet.id.clone()) {
                return Err(VocabError::Invalid(format!("bad or duplicate diet {:?}", diet.id)));
            }
            if let Some(t) = diet.conflicts.iter().find(|t| !tags.contains(*t)) {
                return Err(VocabError::Invalid(format!("diet {} conflicts with unknown tag {t}", diet.id)));
            }
        }

        let goals: BTreeSet<String> = file.goals.into_iter().collect();
        if let Some(g) = goals.iter().find(|g| !tags.contains(*g)) {
            return Err(VocabError::Invalid(format!("goal {g} is not a known tag")));
        }

        let mut synonyms = BTreeMap::new();
        for (raw, id) in file.synonyms {
            if !ingredients.contains_key(&id) {
                return Err(VocabError::Invalid(format!("synonym {raw:?} points at unknown ingredient {id}")));
            }
            synonyms.insert(tokenize(&raw), id);
        }

        Ok(Self { version: file.version, diets: file.diets, goals, tags, ingredients, synonyms })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Maps a detector label or user-typed name onto an ingredient id.
    ///
    /// Idempotent: feeding the returned token back in yields the same outcome.
    pub fn normalize_ingredient_name(&self, raw: &str) -> Result<Normalized, NormalizeError> {
        let token = tokenize(raw);
        if token.is_empty() {
            return Err(NormalizeError::EmptyInput);
        }
        if self.ingredients.contains_key(&token) {
            return Ok(Normalized::Known(token));
        }
        match self.synonyms.get(&token) {
            Some(id) => Ok(Normalized::Known(id.clone())),
            None => Ok(Normalized::Unknown(token)),
        }
    }

    pub fn ingredient(&self, id: &str) -> Option<&Ingredient> {
        self.ingredients.get(id)
    }

    pub fn ingredients(&self) -> impl Iterator<Item = &Ingredient> {
        self.ingredients.values()
    }

    pub fn ingredient_ids(&self) -> impl Iterator<Item = &str> {
        self.ingredients.keys().map(String::as_str)
    }

    pub fn is_ingredient(&self, id: &str) -> bool {
        self.ingredients.contains_key(id)
    }

    /// Lowercase display form used inside sentences (`bell pepper`).
    pub fn ingredient_display(&self, id: &str) -> String {
        self.ingredients.get(id).map(|i| i.display_name.to_lowercase()).unwrap_or_else(|| crate::text::humanize(id))
    }

    pub fn ingredient_tags(&self, id: &str) -> impl Iterator<Item = &str> {
        self.ingredients.get(id).into_iter().flat_map(|i| i.tags.iter().map(String::as_str))
    }

    pub fn diets(&self) -> &[DietDef] {
        &self.diets
    }

    pub fn diet(&self, id: &str) -> Option<&DietDef> {
        self.diets.iter().find(|d| d.id == id)
    }

    pub fn goals(&self) -> impl Iterator<Item = &str> {
        self.goals.iter().map(String::as_str)
    }

    pub fn is_goal(&self, tag: &str) -> bool {
        self.goals.contains(tag)
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(String::as_str)
    }

    pub fn is_tag(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }

    /// Tags carried by at least one ingredient (`meat`, `dairy`, ...).
    pub fn ingredient_tag_set(&self) -> BTreeSet<&str> {
        self.ingredients.values().flat_map(|i| i.tags.iter().map(String::as_str)).collect()
    }

    /// All raw strings that should be read as a mention of `id` in free text:
    /// the id, its display name and any synonyms, in matching-normalized form.
    pub fn mention_forms(&self, id: &str) -> Vec<String> {
        let mut forms = BTreeSet::new();
        forms.insert(crate::text::normalize_for_matching(&crate::text::humanize(id)));
        if let Some(ing) = self.ingredients.get(id) {
            forms.insert(crate::text::normalize_for_matching(&ing.display_name));
        }
        for (syn, target) in &self.synonyms {
            if target == id {
                forms.insert(crate::text::normalize_for_matching(&crate::text::humanize(syn)));
            }
        }
        forms.into_iter().filter(|f| !f.is_empty()).collect()
    }
}
