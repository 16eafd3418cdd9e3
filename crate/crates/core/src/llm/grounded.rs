use std::collections::BTreeSet;

use crate::explanation::ExplanationContext;
use crate::recommend::{ExclusionReason, Outcome};
use crate::text::{contains_phrase, humanize, normalize_for_matching};
use crate::vocab::Vocabulary;

pub const FLAG_RECIPE_MISSING: &str = "recipe name missing";
pub const FLAG_CONTRADICTS_EXCLUSION: &str = "contradicts exclusion";

const COMPATIBILITY_CLAIMS: &[&str] = &[
    "fits your {}",
    "suits your {}",
    "compatible with your {}",
    "matches your {}",
    "good for your {}",
    "perfect for your {}",
    "aligns with your {}",
    "is {}",
    "is {} friendly",
    "{} friendly",
];

/// Flags statements in `text` that contradict the context. An empty result
/// means the text passed.
pub fn groundedness_check(text: &str, ctx: &ExplanationContext, vocab: &Vocabulary) -> Vec<String> {
    let mut flags = Vec::new();
    let t = normalize_for_matching(text);
    let name = normalize_for_matching(&ctx.recipe.name);
    if !contains_phrase(&t, &name) {
        flags.push(FLAG_RECIPE_MISSING.to_string());
    }

    // The recipe name may contain ingredient-like words; do not read those as claims.
    let body = if name.is_empty() { t.clone() } else { format!(" {t} ").replace(&format!(" {name} "), " | ") };
    let grounded: BTreeSet<&str> = ctx.recipe.ingredients.iter().chain(&ctx.detected).map(String::as_str).collect();
    for id in vocab.ingredient_ids() {
        if grounded.contains(id) {
            continue;
        }
        if vocab.mention_forms(id).iter().any(|f| contains_phrase(body.trim(), f)) {
            flags.push(format!("ungrounded ingredient: {}", humanize(id)));
        }
    }

    if let Outcome::Excluded { reason: ExclusionReason::DietConflict { diet, .. } } = &ctx.status {
        let diet = normalize_for_matching(&humanize(diet));
        let claims = COMPATIBILITY_CLAIMS
            .iter()
            .flat_map(|c| [c.replace("{}", &diet), c.replace("{}", &format!("{diet} diet"))]);
        let generic = ["fits your diet", "suits your diet", "compatible with your diet", "matches your diet"];
        if claims.into_iter().any(|c| contains_phrase(&t, &c)) || generic.iter().any(|c| contains_phrase(&t, c)) {
            flags.push(FLAG_CONTRADICTS_EXCLUSION.to_string());
        }
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explanation::{ProfileSummary, RecipeSummary};
    use crate::router::IntentKind;

    fn ctx(status: Outcome) -> ExplanationContext {
        ExplanationContext {
            detected: ["tomato".to_string(), "onion".to_string()].into(),
            recipe: RecipeSummary {
                id: "beef_stew".into(),
                name: "Beef Stew".into(),
                tags: vec!["high_protein".into()],
                calories: 650.0,
                ingredients: vec!["beef".into(), "potato".into(), "carrot".into(), "onion".into()],
            },
            profile: ProfileSummary { diet: "vegetarian".into(), health_goals: vec![] },
            query: "Why wasn't this recipe recommended?".into(),
            intent: IntentKind::WhyNot,
            status,
        }
    }

    fn excluded() -> Outcome {
        Outcome::Excluded {
            reason: ExclusionReason::DietConflict {
                tag: "meat".into(),
                diet: "vegetarian".into(),
                ingredient: Some("beef".into()),
            },
        }
    }

    #[test]
    fn grounded_text_passes() {
        let v = Vocabulary::embedded();
        let text = "Beef Stew was left out because beef is meat; you do have onions and tomatoes.";
        assert!(groundedness_check(text, &ctx(excluded()), &v).is_empty());
    }

    #[test]
    fn ungrounded_ingredient() {
        let v = Vocabulary::embedded();
        let text = "Beef Stew pairs well with chicken.";
        assert_eq!(groundedness_check(text, &ctx(excluded()), &v), vec!["ungrounded ingredient: chicken"]);
    }

    #[test]
    fn missing_recipe_name() {
        let v = Vocabulary::embedded();
        assert_eq!(
            groundedness_check("It has onion.", &ctx(Outcome::Ranked { rank: 1 }), &v),
            vec![FLAG_RECIPE_MISSING]
        );
    }

    #[test]
    fn adversarial_diet_claim_on_excluded_recipe() {
        let v = Vocabulary::embedded();
        for text in [
            "Beef Stew fits your vegetarian diet perfectly.",
            "Good news: Beef Stew is vegetarian friendly.",
            "Beef Stew is compatible with your vegetarian diet.",
        ] {
            assert_eq!(groundedness_check(text, &ctx(excluded()), &v), vec![FLAG_CONTRADICTS_EXCLUSION], "{text}");
        }
        // Same claim about a recipe that was not excluded is not a contradiction.
        assert!(groundedness_check("Beef Stew fits your vegetarian diet.", &ctx(Outcome::Ranked { rank: 1 }), &v)
            .is_empty());
    }

    #[test]
    fn ingredient_words_inside_the_recipe_name_are_ignored() {
        let v = Vocabulary::embedded();
        let mut c = ctx(Outcome::Ranked { rank: 1 });
        c.recipe.name = "Chicken-Style Beef Stew".into();
        assert!(groundedness_check("Chicken-Style Beef Stew uses your onion.", &c, &v).is_empty());
    }
}
