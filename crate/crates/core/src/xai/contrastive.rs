//! Pertinent positives and negatives.
//!
//! Positives come from backward elimination: starting from everything
//! present, drop elements one at a time while the decision holds, repeating
//! until no single removal is possible. Negatives come from a forward search
//! over absent elements of up to [`MAX_ADDITIONS`] at a time.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{Recipe, UserProfile};
use crate::recommend::{hard_filter, FeatureVector, Ranker, FEATURE_NAMES};

pub const MAX_ADDITIONS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContrastElement {
    Feature { name: String },
    Ingredient { id: String },
    Tag { tag: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Included,
    NotIncluded,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveExplanation {
    pub decision: Decision,
    pub pertinent_positives: Vec<ContrastElement>,
    pub pertinent_negatives: Vec<ContrastElement>,
}

/// Generic search over element indices. `decide(on)` evaluates the decision
/// with exactly the elements in `on` switched on.
///
/// Returns `(positives, negatives)` as indices into `present` and `absent`.
pub fn pertinent_sets(
    present: &[usize],
    absent: &[usize],
    decide: impl Fn(&BTreeSet<usize>) -> bool,
    max_additions: usize,
) -> (Vec<usize>, Vec<usize>) {
    let full: BTreeSet<usize> = present.iter().copied().collect();
    let actual = decide(&full);

    let mut kept = full.clone();
    loop {
        let mut changed = false;
        for &e in present {
            if !kept.contains(&e) {
                continue;
            }
            let mut trial = kept.clone();
            trial.remove(&e);
            if decide(&trial) == actual {
                kept = trial;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut negatives = Vec::new();
    'size: for size in 1..=max_additions.min(absent.len()) {
        for combo in combinations(absent.len(), size) {
            let mut trial = full.clone();
            trial.extend(combo.iter().map(|&i| absent[i]));
            if decide(&trial) != actual {
                negatives = combo.iter().map(|&i| absent[i]).collect();
                break 'size;
            }
        }
    }

    (kept.into_iter().collect(), negatives)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Contrastive explanation of whether `recipe` makes the top-`k`.
///
/// Excluded recipes are explained at the level of their ingredients and
/// tags (which elements trigger the hard filter); other recipes at the level
/// of the four scoring features, where an absent feature is switched on at
/// its maximum of 1.
pub fn contrastive(
    ranker: &Ranker<'_>,
    recipe: &Recipe,
    profile: &UserProfile,
    detected: &BTreeSet<String>,
    k: usize,
) -> ContrastiveExplanation {
    if hard_filter(recipe, profile, ranker.vocab).is_err() {
        return exclusion_contrast(ranker, recipe, profile);
    }

    let actual = crate::recommend::feature_vector(recipe, profile, detected, ranker.vocab).as_array();
    let present: Vec<usize> = (0..4).filter(|&i| actual[i] != 0.0).collect();
    let absent: Vec<usize> = (0..4).filter(|&i| actual[i] == 0.0).collect();
    let decide = |on: &BTreeSet<usize>| {
        let mut x = [0.0; 4];
        for &i in on {
            x[i] = if actual[i] != 0.0 { actual[i] } else { 1.0 };
        }
        ranker
            .outcome_with_features(recipe, FeatureVector::from_array(x), profile, detected, k)
            .is_some_and(|o| o.is_ranked())
    };
    let included = decide(&present.iter().copied().collect());
    let (pos, neg) = pertinent_sets(&present, &absent, decide, MAX_ADDITIONS);
    let feature = |i: usize| ContrastElement::Feature { name: FEATURE_NAMES[i].to_string() };
    ContrastiveExplanation {
        decision: if included { Decision::Included } else { Decision::NotIncluded },
        pertinent_positives: pos.into_iter().map(feature).collect(),
        pertinent_negatives: neg.into_iter().map(feature).collect(),
    }
}

fn exclusion_contrast(ranker: &Ranker<'_>, recipe: &Recipe, profile: &UserProfile) -> ContrastiveExplanation {
    let mut elements: Vec<ContrastElement> =
        recipe.ingredients.iter().map(|id| ContrastElement::Ingredient { id: id.clone() }).collect();
    elements.extend(recipe.tags.iter().map(|t| ContrastElement::Tag { tag: t.clone() }));
    let present: Vec<usize> = (0..elements.len()).collect();
    let decide = |on: &BTreeSet<usize>| {
        let mut partial = Recipe { ingredients: Vec::new(), tags: BTreeSet::new(), ..recipe.clone() };
        for &i in on {
            match &elements[i] {
                ContrastElement::Ingredient { id } => partial.ingredients.push(id.clone()),
                ContrastElement::Tag { tag } => {
                    partial.tags.insert(tag.clone());
                }
                ContrastElement::Feature { .. } => {}
            }
        }
        hard_filter(&partial, profile, ranker.vocab).is_err()
    };
    let (pos, _) = pertinent_sets(&present, &[], decide, 0);
    ContrastiveExplanation {
        decision: Decision::Excluded,
        pertinent_positives: pos.into_iter().map(|i| elements[i].clone()).collect(),
        pertinent_negatives: Vec::new(),
    }
}
