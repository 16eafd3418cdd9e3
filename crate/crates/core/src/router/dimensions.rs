use std::collections::BTreeSet;

use crate::explanation::{Dimension, ExplanationContext, Trigger};
use crate::text::{contains_phrase, humanize, normalize_for_matching};
use crate::vocab::Vocabulary;

const PROFILE_PHRASES: &[&str] = &[
    "your diet",
    "your profile",
    "your allergens",
    "your allergen",
    "your calorie target",
    "your goal",
    "your goals",
    "your health goal",
];

/// Rule-based dimension tags for a delivered explanation text.
///
/// `what` is always present; `who` when the text refers to the profile;
/// `where` when it names a detected ingredient; `how` when it names the
/// method that produced it; `when` for event-triggered explanations.
pub fn tag_dimensions(
    text: &str,
    ctx: &ExplanationContext,
    method_name: &str,
    trigger: Trigger,
    vocab: &Vocabulary,
) -> BTreeSet<Dimension> {
    let t = normalize_for_matching(text);
    let mut tags = BTreeSet::from([Dimension::What]);

    let profile_terms = std::iter::once(&ctx.profile.diet)
        .chain(&ctx.profile.health_goals)
        .map(|s| normalize_for_matching(&humanize(s)));
    let who = profile_terms.into_iter().any(|p| contains_phrase(&t, &p))
        || PROFILE_PHRASES.iter().any(|p| contains_phrase(&t, p));
    if who {
        tags.insert(Dimension::Who);
    }

    let where_ = ctx.detected.iter().any(|id| {
        let mut forms = vocab.mention_forms(id);
        if forms.is_empty() {
            forms.push(normalize_for_matching(&humanize(id)));
        }
        forms.iter().any(|f| contains_phrase(&t, f))
    });
    if where_ {
        tags.insert(Dimension::Where);
    }

    let method = normalize_for_matching(method_name);
    if !method.is_empty() && contains_phrase(&t, &method) {
        tags.insert(Dimension::How);
    }

    if trigger == Trigger::Event {
        tags.insert(Dimension::When);
    }
    tags
}
