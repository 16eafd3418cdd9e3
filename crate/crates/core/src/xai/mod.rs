//! Template explanation engine: attribution, partial dependence,
//! counterfactual search, contrastive sets and sentence realization.

pub mod contrastive;
pub mod counterfactual;
pub mod pdp;
pub mod realize;
pub mod shapley;

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recommend::{score, FeatureVector, ScoringWeights, FEATURE_NAMES};

pub use contrastive::{ContrastElement, ContrastiveExplanation};
pub use counterfactual::{Counterfactual, CounterfactualTarget, Edit, EditSpace};
pub use pdp::partial_dependence;
pub use shapley::{shapley, shapley_values, Attribution};

#[derive(Debug, Error, PartialEq)]
pub enum XaiError {
    #[error("exact Shapley enumeration supports at most 16 features, got {0}")]
    TooManyFeatures(usize),
    #[error("expected {expected} feature values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown feature: {0}")]
    UnknownFeature(String),
    #[error("partial dependence grid is empty")]
    EmptyGrid,
    #[error("grid value {value} outside the domain of {feature}")]
    OutOfDomain { feature: String, value: f64 },
}

/// A black-box scoring function over named real-valued features.
pub trait FeatureModel {
    fn feature_names(&self) -> Vec<String>;

    fn predict(&self, x: &[f64]) -> f64;

    fn domain(&self, _feature: usize) -> RangeInclusive<f64> {
        0.0..=1.0
    }
}

/// The recommender's linear scorer seen as a [`FeatureModel`].
#[derive(Debug, Clone, Copy)]
pub struct LinearScorer {
    weights: ScoringWeights,
}

impl LinearScorer {
    pub fn new(weights: ScoringWeights) -> Self {
        Self { weights }
    }
}

impl FeatureModel for LinearScorer {
    fn feature_names(&self) -> Vec<String> {
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let mut a = [0.0; 4];
        a.copy_from_slice(&x[..4]);
        score(&FeatureVector::from_array(a), &self.weights)
    }
}

/// Wraps a closure as a [`FeatureModel`] with unbounded domains.
pub struct FnModel<F> {
    names: Vec<String>,
    f: F,
}

impl<F: Fn(&[f64]) -> f64> FnModel<F> {
    pub fn new(names: Vec<String>, f: F) -> Self {
        Self { names, f }
    }
}

impl<F: Fn(&[f64]) -> f64> FeatureModel for FnModel<F> {
    fn feature_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn domain(&self, _feature: usize) -> RangeInclusive<f64> {
        f64::NEG_INFINITY..=f64::INFINITY
    }
}

/// Inputs a template sentence is built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Materials {
    Attributions {
        attributions: Vec<Attribution>,
    },
    PartialDependence {
        feature: String,
        curve: Vec<(f64, f64)>,
    },
    Counterfactuals {
        counterfactuals: Vec<Counterfactual>,
        /// Edit budget searched when `counterfactuals` is empty.
        max_edits: u32,
    },
    WhatIf {
        counterfactual: Counterfactual,
        new_top: Option<String>,
    },
    Contrastive {
        contrastive: ContrastiveExplanation,
        /// Titles of recipes closer to the profile's diet and goals.
        alternatives: Vec<String>,
    },
    Llm {
        prompt_chars: usize,
    },
    /// Recipe ids announced by an event-triggered notice, in rank order.
    Notice {
        ranked: Vec<String>,
    },
}
