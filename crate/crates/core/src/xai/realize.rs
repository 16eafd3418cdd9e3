//! Deterministic sentence realization for template-mode explanations.

use thiserror::Error;

use super::contrastive::{ContrastElement, Decision};
use super::counterfactual::Counterfactual;
use super::{Attribution, Materials};
use crate::explanation::{ExplanationContext, MissingSlot, Slots};
use crate::recommend::{ExclusionReason, Outcome};
use crate::router::IntentKind;
use crate::text::{humanize, join_natural};
use crate::vocab::Vocabulary;

pub const METHOD_SHAPLEY: &str = "Shapley attribution";
pub const METHOD_PDP: &str = "partial dependence";
pub const METHOD_COUNTERFACTUAL: &str = "counterfactual search";
pub const METHOD_CONTRASTIVE: &str = "contrastive analysis";

pub const FREE_FORM_NOTE: &str = "Template mode can only answer open questions with the fixed feature \
attributions above; switch to LLM mode for a fuller answer.";

#[derive(Debug, Error, PartialEq)]
pub enum RealizeError {
    #[error("{intent} questions cannot be answered from {got} materials")]
    MaterialsMissing { intent: IntentKind, got: &'static str },
    #[error(transparent)]
    MissingSlot(#[from] MissingSlot),
}

/// The template-mode instruction with its four slots filled.
pub fn fill_template_prompt(slots: &Slots) -> String {
    format!(
        "Explain briefly why the recipe {} was recommended to a user with a {} diet and a health goal of {}, \
         considering available ingredients: {}. Provide the key reason(s) based on matching dietary and \
         nutritional features.",
        slots.recipe_name, slots.dietary_preference, slots.health_goal, slots.ingredient_list
    )
}

fn materials_kind(m: &Materials) -> &'static str {
    match m {
        Materials::Attributions { .. } => "attribution",
        Materials::PartialDependence { .. } => "partial dependence",
        Materials::Counterfactuals { .. } => "counterfactual",
        Materials::WhatIf { .. } => "what-if",
        Materials::Contrastive { .. } => "contrastive",
        Materials::Llm { .. } => "llm",
        Materials::Notice { .. } => "notice",
    }
}

/// Renders an explanation from materials. Pure: identical inputs give
/// byte-identical text.
pub fn realize_template(
    intent: IntentKind,
    materials: &Materials,
    ctx: &ExplanationContext,
    vocab: &Vocabulary,
) -> Result<String, RealizeError> {
    let accepted = matches!(
        (intent, materials),
        (IntentKind::Why, Materials::Attributions { .. } | Materials::PartialDependence { .. })
            | (IntentKind::WhyNot, Materials::Counterfactuals { .. })
            | (IntentKind::WhatIf, Materials::Counterfactuals { .. } | Materials::WhatIf { .. })
            | (IntentKind::HowTo, Materials::Counterfactuals { .. } | Materials::Contrastive { .. })
            | (IntentKind::FreeForm, Materials::Attributions { .. })
    );
    if !accepted {
        return Err(RealizeError::MaterialsMissing { intent, got: materials_kind(materials) });
    }

    let slots = ctx.slots()?;
    let r = Renderer { ctx, vocab };
    let mut out = vec![header(&slots, &ctx.status)];
    match materials {
        Materials::Attributions { attributions } => {
            if let Outcome::Excluded { reason } = &ctx.status {
                out.push(format!("It was excluded because {}.", r.reason(reason)));
            }
            out.push(r.attribution_sentence(attributions));
            out.push(format!("(Method: {METHOD_SHAPLEY} over ingredient coverage, diet compatibility, goal alignment and calorie fit.)"));
            if intent == IntentKind::FreeForm {
                out.push(FREE_FORM_NOTE.to_string());
            }
        }
        Materials::PartialDependence { feature, curve } => {
            let (first, last) = (curve.first(), curve.last());
            if let (Some(a), Some(b)) = (first, last) {
                out.push(format!(
                    "Moving {} from {:.2} to {:.2} changes its score from {:.3} to {:.3}.",
                    humanize(feature),
                    a.0,
                    b.0,
                    a.1,
                    b.1
                ));
            }
            out.push(format!("(Method: {METHOD_PDP}.)"));
        }
        Materials::Counterfactuals { counterfactuals, max_edits } => {
            out.push(r.status_sentence());
            out.extend(r.counterfactual_sentences(counterfactuals, *max_edits));
            out.push(format!("(Method: {METHOD_COUNTERFACTUAL}.)"));
        }
        Materials::WhatIf { counterfactual, new_top } => {
            if counterfactual.edits.is_empty() {
                out.push(format!(
                    "Your question names no change to your ingredients or profile that can be tested; it is currently {}.",
                    r.outcome(&ctx.status)
                ));
            } else {
                out.push(format!(
                    "If you {}, {} would be {}.",
                    r.edits(counterfactual),
                    slots.recipe_name,
                    r.outcome(&counterfactual.resulting_outcome)
                ));
                out.push(match new_top {
                    Some(title) => format!("The top recommendation would then be {title}."),
                    None => "No recipe would be recommended.".to_string(),
                });
            }
            out.push(format!("(Method: {METHOD_COUNTERFACTUAL}.)"));
        }
        Materials::Contrastive { contrastive, alternatives } => {
            match contrastive.decision {
                Decision::Excluded => {
                    let items: Vec<String> = contrastive.pertinent_positives.iter().map(|e| r.element(e)).collect();
                    if let Outcome::Excluded { reason } = &ctx.status {
                        out.push(format!(
                            "To make it fit your profile, substitute or remove {}, since {}.",
                            join_natural(&items),
                            r.reason(reason)
                        ));
                    }
                }
                Decision::Included => {
                    let items: Vec<String> =
                        contrastive.pertinent_positives.iter().map(|e| r.present_feature(e)).collect();
                    out.push(if items.is_empty() {
                        "No single feature is essential to its place in the list.".to_string()
                    } else {
                        format!("It stays recommended as long as it keeps {}.", join_natural(&items))
                    });
                    let missing = r.missing_ingredients();
                    if !missing.is_empty() {
                        out.push(format!(
                            "Adding {} would raise its ingredient match further.",
                            join_natural(&missing)
                        ));
                    }
                }
                Decision::NotIncluded => {
                    let items: Vec<String> =
                        contrastive.pertinent_negatives.iter().map(|e| r.absent_feature(e)).collect();
                    out.push(if items.is_empty() {
                        "No change of one or two scoring features would bring it into the recommendations.".to_string()
                    } else {
                        format!("It would make the recommendations with {}.", join_natural(&items))
                    });
                }
            }
            if !alternatives.is_empty() {
                let goal = if slots.health_goal == "none" {
                    String::new()
                } else {
                    format!(" and {} goal", slots.health_goal)
                };
                out.push(format!(
                    "Recipes that already fit your {} diet{goal}: {}.",
                    slots.dietary_preference,
                    join_natural(alternatives)
                ));
            }
            out.push(format!("(Method: {METHOD_CONTRASTIVE}.)"));
        }
        Materials::Llm { .. } | Materials::Notice { .. } => unreachable!("rejected above"),
    }
    Ok(out.join(" "))
}

fn header(slots: &Slots, status: &Outcome) -> String {
    format!(
        "{} was {}recommended to a user with a {} diet and a health goal of {}, considering available ingredients: {}.",
        slots.recipe_name,
        if status.is_ranked() { "" } else { "not " },
        slots.dietary_preference,
        slots.health_goal,
        slots.ingredient_list
    )
}

struct Renderer<'a> {
    ctx: &'a ExplanationContext,
    vocab: &'a Vocabulary,
}

impl Renderer<'_> {
    fn label(&self, id: &str) -> String {
        if self.vocab.is_ingredient(id) {
            self.vocab.ingredient_display(id)
        } else {
            humanize(id)
        }
    }

    fn matched(&self) -> (usize, usize) {
        let ing = &self.ctx.recipe.ingredients;
        (ing.iter().filter(|i| self.ctx.detected.contains(*i)).count(), ing.len())
    }

    fn matched_goals(&self) -> Vec<String> {
        self.ctx.profile.health_goals.iter().filter(|g| self.ctx.recipe.tags.contains(g)).map(|g| humanize(g)).collect()
    }

    fn missing_ingredients(&self) -> Vec<String> {
        self.ctx.recipe.ingredients.iter().filter(|i| !self.ctx.detected.contains(*i)).map(|i| self.label(i)).collect()
    }

    fn diet_matches_all(&self) -> bool {
        self.vocab.diet(&self.ctx.profile.diet).is_some_and(|d| d.matches_all)
    }

    fn reason(&self, reason: &ExclusionReason) -> String {
        match reason {
            ExclusionReason::Allergen { allergen, via } if allergen == via => {
                format!("it contains {}, which is listed in your allergens", self.label(allergen))
            }
            ExclusionReason::Allergen { allergen, via } => {
                format!("it contains {}, which matches {} in your allergens", self.label(via), self.label(allergen))
            }
            ExclusionReason::DietConflict { tag, diet, ingredient: Some(ing) } => {
                format!("{} is {}, which conflicts with your {} diet", self.label(ing), humanize(tag), humanize(diet))
            }
            ExclusionReason::DietConflict { tag, diet, ingredient: None } => {
                format!("it is tagged {}, which conflicts with your {} diet", humanize(tag), humanize(diet))
            }
        }
    }

    fn outcome(&self, outcome: &Outcome) -> String {
        match outcome {
            Outcome::Ranked { rank } => format!("recommended at rank {rank}"),
            Outcome::PassedOver { position } => {
                format!("ranked at position {position}, below the recommendation cut")
            }
            Outcome::Excluded { reason } => format!("excluded because {}", self.reason(reason)),
        }
    }

    fn status_sentence(&self) -> String {
        match &self.ctx.status {
            Outcome::Ranked { rank } => format!("It was in fact recommended at rank {rank}."),
            Outcome::PassedOver { position } => {
                format!("It passed your filters but ranked at position {position}, below the recommendation cut.")
            }
            Outcome::Excluded { reason } => format!("It was excluded because {}.", self.reason(reason)),
        }
    }

    fn edits(&self, cf: &Counterfactual) -> String {
        let parts: Vec<String> = cf.edits.iter().map(|e| e.describe(self.vocab)).collect();
        join_natural(&parts)
    }

    fn counterfactual_sentences(&self, cfs: &[Counterfactual], max_edits: u32) -> Vec<String> {
        let Some(best) = cfs.first() else {
            return vec![format!(
                "No change of up to {max_edits} edit{} to your ingredients or profile would bring it into the recommendations.",
                if max_edits == 1 { "" } else { "s" }
            )];
        };
        if best.edits.is_empty() {
            return vec!["It is already recommended; no changes are needed.".to_string()];
        }
        let mut out =
            vec![format!("It would be {} if you {}.", self.outcome(&best.resulting_outcome), self.edits(best))];
        for cf in &cfs[1..] {
            out.push(format!(
                "Alternatively, it would be {} if you {}.",
                self.outcome(&cf.resulting_outcome),
                self.edits(cf)
            ));
        }
        out
    }

    fn feature_reason(&self, feature: &str) -> String {
        match feature {
            "ingredient_coverage" => {
                let (m, n) = self.matched();
                format!("{m} of {n} ingredients match what you have")
            }
            "diet_compatibility" if self.diet_matches_all() => {
                format!("it suits your {} diet", humanize(&self.ctx.profile.diet))
            }
            "diet_compatibility" => format!("it is labeled {}, matching your diet", humanize(&self.ctx.profile.diet)),
            "goal_alignment" => {
                format!("it is tagged {}, matching your health goal", join_natural(&self.matched_goals()))
            }
            "calorie_fit" => {
                format!("its {:.0} kcal per serving is close to your calorie target", self.ctx.recipe.calories)
            }
            other => humanize(other),
        }
    }

    fn attribution_sentence(&self, attributions: &[Attribution]) -> String {
        let mut order: Vec<&Attribution> = attributions.iter().filter(|a| a.phi > 0.0).collect();
        order.sort_by(|a, b| b.phi.total_cmp(&a.phi));
        let parts: Vec<String> =
            order.iter().take(2).map(|a| format!("{} ({:+.3})", self.feature_reason(&a.feature), a.phi)).collect();
        let verb = if self.ctx.status.is_ranked() {
            "It was recommended because"
        } else {
            "Its score comes mainly from the fact that"
        };
        if parts.is_empty() {
            "None of its features raised its score above the no-match baseline.".to_string()
        } else {
            format!("{verb} {}.", join_natural(&parts))
        }
    }

    fn present_feature(&self, e: &ContrastElement) -> String {
        match e {
            ContrastElement::Feature { name } => match name.as_str() {
                "ingredient_coverage" => {
                    let (m, n) = self.matched();
                    format!("the {m} of {n} ingredients you have")
                }
                "diet_compatibility" => format!("its {} label", humanize(&self.ctx.profile.diet)),
                "goal_alignment" => format!("its {} tags", join_natural(&self.matched_goals())),
                "calorie_fit" => "a calorie level near your target".to_string(),
                other => humanize(other),
            },
            other => self.element(other),
        }
    }

    fn absent_feature(&self, e: &ContrastElement) -> String {
        match e {
            ContrastElement::Feature { name } => match name.as_str() {
                "ingredient_coverage" => {
                    let missing = self.missing_ingredients();
                    format!("{} on hand", join_natural(&missing))
                }
                "diet_compatibility" => format!("a version labeled {}", humanize(&self.ctx.profile.diet)),
                "goal_alignment" => "ingredients that serve your health goal".to_string(),
                "calorie_fit" => "a portion closer to your calorie target".to_string(),
                other => humanize(other),
            },
            other => self.element(other),
        }
    }

    fn element(&self, e: &ContrastElement) -> String {
        match e {
            ContrastElement::Ingredient { id } => self.label(id),
            ContrastElement::Tag { tag } => format!("the {} label", humanize(tag)),
            ContrastElement::Feature { name } => humanize(name),
        }
    }
}
