//! Diverse counterfactual search over the recommendation inputs.
//!
//! An edit toggles one detected ingredient, changes the diet, toggles one
//! goal tag or allergen, or moves the calorie target in ±25% steps. Edit sets
//! are enumerated in increasing total cost (each step of calorie movement
//! costs one), so the first valid set found has minimum edit distance. Later
//! results must differ from every accepted one (Jaccard similarity of edited
//! targets at most 0.5) and may not contain a smaller valid set.

use std::collections::BTreeSet;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::UserProfile;
use crate::recommend::{feature_vector, hard_filter, Outcome, Ranker};
use crate::text::{contains_phrase, humanize, normalize_for_matching};
use crate::vocab::Vocabulary;

pub const DIVERSITY_THRESHOLD: f64 = 0.5;
pub const CALORIE_STEP: f64 = 0.25;

#[derive(Debug, Error, PartialEq)]
pub enum CounterfactualError {
    #[error("no counterfactual within {max_edits} edit(s)")]
    NoCounterfactualWithinBudget { max_edits: u32 },
    #[error("recipe {0} is not in the corpus")]
    UnknownRecipe(String),
    #[error("count and max_edits must both be at least 1")]
    BadParams,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    AddIngredient { ingredient: String },
    RemoveIngredient { ingredient: String },
    SetDiet { from: String, to: String },
    AddGoal { goal: String },
    RemoveGoal { goal: String },
    AddAllergen { allergen: String },
    RemoveAllergen { allergen: String },
    ShiftCalorieTarget { steps: i32, from: u32, to: u32 },
}

impl Edit {
    pub fn cost(&self) -> u32 {
        match self {
            Edit::ShiftCalorieTarget { steps, .. } => steps.unsigned_abs(),
            _ => 1,
        }
    }

    /// The input this edit touches; used as the diversity key.
    pub fn target(&self) -> String {
        match self {
            Edit::AddIngredient { ingredient } | Edit::RemoveIngredient { ingredient } => {
                format!("detected:{ingredient}")
            }
            Edit::SetDiet { .. } => "profile.diet".to_string(),
            Edit::AddGoal { goal } | Edit::RemoveGoal { goal } => format!("profile.health_goals:{goal}"),
            Edit::AddAllergen { allergen } | Edit::RemoveAllergen { allergen } => {
                format!("profile.allergens:{allergen}")
            }
            Edit::ShiftCalorieTarget { .. } => "profile.calorie_target".to_string(),
        }
    }

    /// Second-person phrase completing "if you ...".
    pub fn describe(&self, vocab: &Vocabulary) -> String {
        let label = |s: &str| {
            if vocab.is_ingredient(s) {
                vocab.ingredient_display(s)
            } else {
                humanize(s)
            }
        };
        match self {
            Edit::AddIngredient { ingredient } => format!("had {}", label(ingredient)),
            Edit::RemoveIngredient { ingredient } => format!("no longer had {}", label(ingredient)),
            Edit::SetDiet { from, to } => format!("switched your diet from {} to {}", humanize(from), humanize(to)),
            Edit::AddGoal { goal } => format!("added the goal {}", humanize(goal)),
            Edit::RemoveGoal { goal } => format!("dropped the goal {}", humanize(goal)),
            Edit::AddAllergen { allergen } => format!("listed {} as an allergen", label(allergen)),
            Edit::RemoveAllergen { allergen } => format!("removed {} from your allergens", label(allergen)),
            Edit::ShiftCalorieTarget { from, to, .. } => {
                format!("changed your calorie target from {from} to {to} kcal")
            }
        }
    }

    pub fn apply(&self, profile: &mut UserProfile, detected: &mut BTreeSet<String>) {
        match self {
            Edit::AddIngredient { ingredient } => {
                detected.insert(ingredient.clone());
            }
            Edit::RemoveIngredient { ingredient } => {
                detected.remove(ingredient);
            }
            Edit::SetDiet { to, .. } => profile.diet = to.clone(),
            Edit::AddGoal { goal } => {
                profile.health_goals.insert(goal.clone());
            }
            Edit::RemoveGoal { goal } => {
                profile.health_goals.remove(goal);
            }
            Edit::AddAllergen { allergen } => {
                profile.allergens.insert(allergen.clone());
            }
            Edit::RemoveAllergen { allergen } => {
                profile.allergens.remove(allergen);
            }
            Edit::ShiftCalorieTarget { to, .. } => profile.calorie_target = *to,
        }
    }
}

/// Calorie target after `steps` quarter-steps from `original`.
pub fn shifted_calories(original: u32, steps: i32) -> Option<u32> {
    let v = (original as f64 * (1.0 + CALORIE_STEP * steps as f64)).round();
    (v >= 1.0 && v <= u32::MAX as f64).then_some(v as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "goal", content = "rank", rename_all = "snake_case")]
pub enum CounterfactualTarget {
    /// Recipe appears in the top-k.
    Include,
    /// Recipe is not in the top-k (filtered out or ranked below the cut).
    Exclude,
    /// Recipe ranks at or above the given position.
    ReachRank(u32),
    /// Recipe passes the hard filters, wherever it then ranks.
    PassFilters,
}

impl CounterfactualTarget {
    pub fn satisfied_by(&self, outcome: &Outcome) -> bool {
        match (self, outcome) {
            (CounterfactualTarget::Include, o) => o.is_ranked(),
            (CounterfactualTarget::Exclude, o) => !o.is_ranked(),
            (CounterfactualTarget::ReachRank(r), Outcome::Ranked { rank }) => rank <= r,
            (CounterfactualTarget::ReachRank(_), _) => false,
            (CounterfactualTarget::PassFilters, o) => !matches!(o, Outcome::Excluded { .. }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub edits: Vec<Edit>,
    pub edit_distance: u32,
    pub resulting_outcome: Outcome,
    pub diversity_key: BTreeSet<String>,
}

/// The inputs a counterfactual may touch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSpace {
    pub ingredients: Vec<String>,
    pub diets: Vec<String>,
    pub goals: Vec<String>,
    pub allergens: Vec<String>,
    pub max_calorie_steps: u32,
}

impl EditSpace {
    /// Everything the vocabulary allows: all ingredients, diets and goals;
    /// allergens drawn from ingredient ids and ingredient tags.
    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        let mut allergens: BTreeSet<String> = vocab.ingredient_ids().map(String::from).collect();
        allergens.extend(vocab.ingredient_tag_set().into_iter().map(String::from));
        Self {
            ingredients: vocab.ingredient_ids().map(String::from).collect(),
            diets: vocab.diets().iter().map(|d| d.id.clone()).collect(),
            goals: vocab.goals().map(String::from).collect(),
            allergens: allergens.into_iter().collect(),
            max_calorie_steps: 2,
        }
    }

    /// Mutually exclusive edit alternatives per input, in canonical order.
    fn slots(&self, profile: &UserProfile, detected: &BTreeSet<String>) -> Vec<Vec<Edit>> {
        let mut slots = Vec::new();

        let ingredients: BTreeSet<&String> = self.ingredients.iter().chain(detected).collect();
        for ing in ingredients {
            let edit = if detected.contains(ing) {
                Edit::RemoveIngredient { ingredient: ing.clone() }
            } else {
                Edit::AddIngredient { ingredient: ing.clone() }
            };
            slots.push(vec![edit]);
        }

        let diets: Vec<Edit> = self
            .diets
            .iter()
            .filter(|d| **d != profile.diet)
            .map(|d| Edit::SetDiet { from: profile.diet.clone(), to: d.clone() })
            .collect();
        if !diets.is_empty() {
            slots.push(diets);
        }

        let goals: BTreeSet<&String> = self.goals.iter().chain(&profile.health_goals).collect();
        for g in goals {
            slots.push(vec![if profile.health_goals.contains(g) {
                Edit::RemoveGoal { goal: g.clone() }
            } else {
                Edit::AddGoal { goal: g.clone() }
            }]);
        }

        let allergens: BTreeSet<&String> = self.allergens.iter().chain(&profile.allergens).collect();
        for a in allergens {
            slots.push(vec![if profile.allergens.contains(a) {
                Edit::RemoveAllergen { allergen: a.clone() }
            } else {
                Edit::AddAllergen { allergen: a.clone() }
            }]);
        }

        let mut calories = Vec::new();
        for magnitude in 1..=self.max_calorie_steps as i32 {
            for steps in [-magnitude, magnitude] {
                if let Some(to) = shifted_calories(profile.calorie_target, steps) {
                    if to != profile.calorie_target {
                        calories.push(Edit::ShiftCalorieTarget { steps, from: profile.calorie_target, to });
                    }
                }
            }
        }
        if !calories.is_empty() {
            slots.push(calories);
        }
        slots
    }
}

/// The situation a counterfactual is computed for.
#[derive(Debug, Clone, Copy)]
pub struct Instance<'a> {
    pub profile: &'a UserProfile,
    pub detected: &'a BTreeSet<String>,
    pub recipe_id: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Size of the recommendation list (`k` passed to ranking).
    pub top_k: usize,
    /// Maximum number of counterfactuals returned.
    pub count: usize,
    pub max_edits: u32,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self { top_k: 5, count: 3, max_edits: 2 }
    }
}

pub fn apply_edits(
    profile: &UserProfile,
    detected: &BTreeSet<String>,
    edits: &[Edit],
) -> (UserProfile, BTreeSet<String>) {
    let mut p = profile.clone();
    let mut d = detected.clone();
    for e in edits {
        e.apply(&mut p, &mut d);
    }
    (p, d)
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Re-applies the edits, runs a full ranking and compares the outcome.
pub fn verify(ranker: &Ranker<'_>, inst: Instance<'_>, cf: &Counterfactual, top_k: usize) -> bool {
    let (p, d) = apply_edits(inst.profile, inst.detected, &cf.edits);
    match ranker.rank(&p, &d, top_k) {
        Ok(result) => result.outcome(inst.recipe_id).as_ref() == Some(&cf.resulting_outcome),
        Err(_) => false,
    }
}

fn make(edits: Vec<Edit>, outcome: Outcome) -> Counterfactual {
    Counterfactual {
        edit_distance: edits.iter().map(Edit::cost).sum(),
        diversity_key: edits.iter().map(Edit::target).collect(),
        edits,
        resulting_outcome: outcome,
    }
}

type Visitor<'a> = dyn FnMut(&[(usize, usize)]) -> ControlFlow<()> + 'a;

/// Visits every choice of at most one edit per slot whose costs sum to exactly `budget`.
fn for_each_combo(slots: &[Vec<Edit>], budget: u32, visit: &mut Visitor<'_>) -> ControlFlow<()> {
    fn go(
        slots: &[Vec<Edit>],
        start: usize,
        remaining: u32,
        chosen: &mut Vec<(usize, usize)>,
        visit: &mut Visitor<'_>,
    ) -> ControlFlow<()> {
        if remaining == 0 {
            return visit(chosen);
        }
        for s in start..slots.len() {
            for (a, edit) in slots[s].iter().enumerate() {
                let c = edit.cost();
                if c <= remaining {
                    chosen.push((s, a));
                    let flow = go(slots, s + 1, remaining - c, chosen, visit);
                    chosen.pop();
                    flow?;
                }
            }
        }
        ControlFlow::Continue(())
    }
    go(slots, 0, budget, &mut Vec::new(), visit)
}

/// Whether `target` holds, counting competitors only as far as needed.
fn quick_check(
    ranker: &Ranker<'_>,
    recipe_id: &str,
    target: CounterfactualTarget,
    profile: &UserProfile,
    detected: &BTreeSet<String>,
    top_k: usize,
) -> bool {
    let Some(recipe) = ranker.corpus.get(recipe_id) else {
        return false;
    };
    let passes = hard_filter(recipe, profile, ranker.vocab).is_ok();
    let cap = match target {
        CounterfactualTarget::PassFilters => return passes,
        CounterfactualTarget::Include | CounterfactualTarget::Exclude => top_k as u32,
        CounterfactualTarget::ReachRank(r) => r.min(top_k as u32),
    };
    if !passes {
        return target == CounterfactualTarget::Exclude;
    }
    let features = feature_vector(recipe, profile, detected, ranker.vocab);
    let within = ranker.competitors_ahead(recipe, features, profile, detected, cap) < cap;
    match target {
        CounterfactualTarget::Exclude => !within,
        _ => within,
    }
}

/// Up to `params.count` verified, mutually diverse counterfactuals ordered
/// by edit distance.
pub fn diverse_counterfactuals(
    ranker: &Ranker<'_>,
    inst: Instance<'_>,
    target: CounterfactualTarget,
    params: SearchParams,
    space: &EditSpace,
) -> Result<Vec<Counterfactual>, CounterfactualError> {
    if params.count == 0 || params.max_edits == 0 || params.top_k == 0 {
        return Err(CounterfactualError::BadParams);
    }
    let current = ranker
        .outcome_of(inst.recipe_id, inst.profile, inst.detected, params.top_k)
        .ok_or_else(|| CounterfactualError::UnknownRecipe(inst.recipe_id.to_string()))?;
    if target.satisfied_by(&current) {
        return Ok(vec![make(Vec::new(), current)]);
    }

    let slots = space.slots(inst.profile, inst.detected);
    let mut valid: Vec<BTreeSet<(usize, usize)>> = Vec::new();
    let mut accepted: Vec<Counterfactual> = Vec::new();

    for budget in 1..=params.max_edits {
        let _ = for_each_combo(&slots, budget, &mut |combo| {
            let chosen: BTreeSet<(usize, usize)> = combo.iter().copied().collect();
            if valid.iter().any(|v| v.is_subset(&chosen)) {
                return ControlFlow::Continue(());
            }
            let edits: Vec<Edit> = combo.iter().map(|&(s, a)| slots[s][a].clone()).collect();
            let (p, d) = apply_edits(inst.profile, inst.detected, &edits);
            if !quick_check(ranker, inst.recipe_id, target, &p, &d, params.top_k) {
                return ControlFlow::Continue(());
            }
            let Some(outcome) = ranker.outcome_of(inst.recipe_id, &p, &d, params.top_k) else {
                return ControlFlow::Continue(());
            };
            if !target.satisfied_by(&outcome) {
                return ControlFlow::Continue(());
            }
            valid.push(chosen);
            let cf = make(edits, outcome);
            let diverse = accepted.iter().all(|a| jaccard(&a.diversity_key, &cf.diversity_key) <= DIVERSITY_THRESHOLD);
            if diverse && verify(ranker, inst, &cf, params.top_k) {
                accepted.push(cf);
                if accepted.len() >= params.count {
                    return ControlFlow::Break(());
                }
            }
            ControlFlow::Continue(())
        });
        if accepted.len() >= params.count {
            break;
        }
    }

    if accepted.is_empty() {
        return Err(CounterfactualError::NoCounterfactualWithinBudget { max_edits: params.max_edits });
    }
    Ok(accepted)
}

/// Applies user-specified edits and reports the recipe's new outcome plus
/// the new top recipe id.
pub fn what_if(
    ranker: &Ranker<'_>,
    inst: Instance<'_>,
    edits: Vec<Edit>,
    top_k: usize,
) -> Result<(Counterfactual, Option<String>), CounterfactualError> {
    let (p, d) = apply_edits(inst.profile, inst.detected, &edits);
    let result = ranker
        .rank(&p, &d, top_k.max(1))
        .map_err(|_| CounterfactualError::UnknownRecipe(inst.recipe_id.to_string()))?;
    let outcome =
        result.outcome(inst.recipe_id).ok_or_else(|| CounterfactualError::UnknownRecipe(inst.recipe_id.to_string()))?;
    Ok((make(edits, outcome), result.top().map(|s| s.recipe.id.clone())))
}

/// Reads hypothetical changes out of a "what if" question: diets, goals,
/// ingredients, allergies and calorie direction mentioned in the text.
pub fn edits_from_query(
    query: &str,
    profile: &UserProfile,
    detected: &BTreeSet<String>,
    vocab: &Vocabulary,
) -> Vec<Edit> {
    let q = normalize_for_matching(query);
    let mut edits = Vec::new();

    for diet in vocab.diets() {
        if diet.id != profile.diet && contains_phrase(&q, &normalize_for_matching(&humanize(&diet.id))) {
            edits.push(Edit::SetDiet { from: profile.diet.clone(), to: diet.id.clone() });
            break;
        }
    }
    for goal in vocab.goals() {
        if !profile.health_goals.contains(goal) && contains_phrase(&q, &normalize_for_matching(&humanize(goal))) {
            edits.push(Edit::AddGoal { goal: goal.to_string() });
        }
    }
    for ing in vocab.ingredient_ids() {
        let forms = vocab.mention_forms(ing);
        let mentioned = |prefix: &str| forms.iter().any(|f| contains_phrase(&q, format!("{prefix}{f}").trim_start()));
        if !mentioned("") {
            continue;
        }
        if mentioned("allergic to ") {
            if mentioned("not allergic to ") {
                if profile.allergens.contains(ing) {
                    edits.push(Edit::RemoveAllergen { allergen: ing.to_string() });
                }
            } else if !profile.allergens.contains(ing) {
                edits.push(Edit::AddAllergen { allergen: ing.to_string() });
            }
        } else if detected.contains(ing) {
            if mentioned("without ") || mentioned("no ") || mentioned("ran out of ") {
                edits.push(Edit::RemoveIngredient { ingredient: ing.to_string() });
            }
        } else {
            edits.push(Edit::AddIngredient { ingredient: ing.to_string() });
        }
    }
    let up = [
        "more calories",
        "higher calorie",
        "raised my calorie",
        "raise my calorie",
        "increase my calorie",
        "bigger portion",
    ];
    let down = [
        "fewer calories",
        "less calories",
        "lower calorie",
        "lowered my calorie",
        "lower my calorie",
        "reduce my calorie",
    ];
    let steps = if up.iter().any(|p| contains_phrase(&q, p)) {
        1
    } else if down.iter().any(|p| contains_phrase(&q, p)) {
        -1
    } else {
        0
    };
    if steps != 0 {
        if let Some(to) = shifted_calories(profile.calorie_target, steps) {
            edits.push(Edit::ShiftCalorieTarget { steps, from: profile.calorie_target, to });
        }
    }
    edits
}
