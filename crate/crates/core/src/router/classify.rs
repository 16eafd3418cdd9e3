use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_for_matching;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IntentKind {
    Why,
    WhyNot,
    WhatIf,
    HowTo,
    FreeForm,
}

impl IntentKind {
    pub const ALL: [IntentKind; 5] =
        [IntentKind::Why, IntentKind::WhyNot, IntentKind::WhatIf, IntentKind::HowTo, IntentKind::FreeForm];

    pub fn as_str(&self) -> &'static str {
        match self {
            IntentKind::Why => "WHY",
            IntentKind::WhyNot => "WHY_NOT",
            IntentKind::WhatIf => "WHAT_IF",
            IntentKind::HowTo => "HOW_TO",
            IntentKind::FreeForm => "FREE_FORM",
        }
    }
}

impl fmt::Display for IntentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for IntentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IntentKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown intent: {s}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub kind: IntentKind,
    /// Id of the rule that fired; `None` for FREE_FORM.
    pub matched_pattern: Option<String>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClassifyError {
    #[error("query is empty")]
    EmptyQuery,
}

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("cannot read rule file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed rule file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid rule set: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub intent: IntentKind,
    /// Whole-word phrases. `...` inside a pattern matches any run of words,
    /// so `why ... not` matches "why was it not shown".
    pub patterns: Vec<String>,
}

/// A pattern split at its `...` gaps, each part normalized.
fn compile(pattern: &str) -> Vec<String> {
    let parts: Vec<String> = pattern.split("...").map(normalize_for_matching).collect();
    if parts.iter().any(String::is_empty) {
        return Vec::new();
    }
    parts
}

/// Every part occurs as a whole-word phrase, in order, without overlap.
fn matches(query: &str, parts: &[String]) -> bool {
    let mut rest = query;
    for part in parts {
        let Some(end) = phrase_end(rest, part) else {
            return false;
        };
        rest = &rest[end..];
    }
    true
}

fn phrase_end(haystack: &str, phrase: &str) -> Option<usize> {
    let mut start = 0;
    while let Some(pos) = haystack[start..].find(phrase) {
        let begin = start + pos;
        let end = begin + phrase.len();
        if (begin == 0 || haystack.as_bytes()[begin - 1] == b' ')
            && (end == haystack.len() || haystack.as_bytes()[end] == b' ')
        {
            return Some(end);
        }
        start = begin + 1;
        while !haystack.is_char_boundary(start) {
            start += 1;
        }
    }
    None
}

/// Ordered intent rules; the first rule with a matching pattern wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub version: String,
    pub rules: Vec<Rule>,
    #[serde(skip)]
    compiled: Vec<Vec<Vec<String>>>,
}

impl RuleSet {
    pub fn embedded() -> Self {
        Self::from_json(include_str!("../../data/rules.json")).expect("embedded rule set is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RulesError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|source| RulesError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&raw)
    }

    pub fn from_json(raw: &str) -> Result<Self, RulesError> {
        let mut set: RuleSet = serde_json::from_str(raw)?;
        if set.rules.iter().any(|r| r.intent == IntentKind::FreeForm) {
            return Err(RulesError::Invalid("FREE_FORM is the fallback and cannot have rules".into()));
        }
        set.compiled = set
            .rules
            .iter()
            .map(|r| r.patterns.iter().map(|p| compile(p)).filter(|p| !p.is_empty()).collect())
            .collect();
        if let Some(r) = set.rules.iter().zip(&set.compiled).find(|(_, c)| c.is_empty()) {
            return Err(RulesError::Invalid(format!("rule {} has no patterns", r.0.id)));
        }
        Ok(set)
    }

    pub fn classify(&self, query: &str) -> Result<Intent, ClassifyError> {
        let q = normalize_for_matching(query);
        if q.is_empty() {
            return Err(ClassifyError::EmptyQuery);
        }
        for (rule, patterns) in self.rules.iter().zip(&self.compiled) {
            if patterns.iter().any(|p| matches(&q, p)) {
                return Ok(Intent { kind: rule.intent, matched_pattern: Some(rule.id.clone()) });
            }
        }
        Ok(Intent { kind: IntentKind::FreeForm, matched_pattern: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kind(q: &str) -> IntentKind {
        RuleSet::embedded().classify(q).unwrap().kind
    }

    #[test]
    fn task_queries() {
        assert_eq!(kind("Why was this recipe recommended?"), IntentKind::Why);
        assert_eq!(kind("Why wasn't this recipe recommended?"), IntentKind::WhyNot);
        assert_eq!(
            kind("How can I modify this recipe to better suit my dietary restrictions or preferences?"),
            IntentKind::HowTo
        );
        assert_eq!(kind("What are the health benefits of this recipe?"), IntentKind::FreeForm);
        assert_eq!(kind("How does this align with my long-term diet goals?"), IntentKind::FreeForm);
    }

    #[test]
    fn other_phrasings() {
        assert_eq!(kind("Why wasn't a vegetarian suggested?"), IntentKind::WhyNot);
        assert_eq!(kind("What if I want a gluten-free alternative?"), IntentKind::WhatIf);
        assert_eq!(kind("How can I get recommendations for healthier options?"), IntentKind::HowTo);
        assert_eq!(kind("Why is this recipe recommended?"), IntentKind::Why);
        assert_eq!(kind("WHY NOT the beef?"), IntentKind::WhyNot);
        assert_eq!(kind("why wasn\u{2019}t it shown"), IntentKind::WhyNot);
        assert_eq!(kind("Why was the beef stew not recommended?"), IntentKind::WhyNot);
        assert_eq!(kind("why was it excluded"), IntentKind::WhyNot);
        assert_eq!(kind("why is nothing vegan"), IntentKind::Why);
    }

    #[test]
    fn gapped_patterns_match_in_order() {
        let parts = compile("why ... not");
        assert_eq!(parts, vec!["why".to_string(), "not".to_string()]);
        assert!(matches("why was it not shown", &parts));
        assert!(!matches("not sure why", &parts));
        assert!(!matches("why is it nothing", &parts));
        assert!(compile("why ...").is_empty());
    }

    #[test]
    fn matched_pattern_names_the_rule() {
        let i = RuleSet::embedded().classify("why not?").unwrap();
        assert_eq!(i.matched_pattern.as_deref(), Some("why_not"));
        let i = RuleSet::embedded().classify("tell me more").unwrap();
        assert_eq!(i.matched_pattern, None);
    }

    #[test]
    fn empty_query() {
        assert_eq!(RuleSet::embedded().classify("  ?! "), Err(ClassifyError::EmptyQuery));
    }

    #[test]
    fn free_form_rules_are_rejected() {
        let raw = r#"{"version":"x","rules":[{"id":"a","intent":"FREE_FORM","patterns":["x"]}]}"#;
        assert!(RuleSet::from_json(raw).is_err());
    }

    const WHY_NOT_OPENERS: &[&str] = &[
        "why not",
        "Why wasn't",
        "why WASN'T",
        "Why isn\u{2019}t",
        "why weren't",
        "why didn't",
        "Why was not",
        "why is not",
        "why aren't",
    ];

    proptest! {
        #[test]
        fn why_not_family_never_classifies_as_why(
            opener in proptest::sample::select(WHY_NOT_OPENERS),
            subject in proptest::sample::select(&["this recipe", "the beef stew", "a vegetarian option", "it", "pasta"][..]),
            tail in proptest::sample::select(&["recommended", "suggested", "shown", "in my list", ""][..]),
            punct in proptest::sample::select(&["?", "", "!?", " ?"][..]),
            lead in proptest::sample::select(&["", "  ", "so, ", "Hmm. "][..]),
        ) {
            let q = format!("{lead}{opener} {subject} {tail}{punct}");
            prop_assert_eq!(kind(&q), IntentKind::WhyNot, "{}", q);
        }

        #[test]
        fn classify_is_total_and_deterministic(q in "\\PC{1,60}") {
            let rules = RuleSet::embedded();
            let a = rules.classify(&q);
            let b = rules.classify(&q);
            prop_assert_eq!(a.clone(), b);
            if let Ok(i) = a {
                prop_assert_eq!(i.kind == IntentKind::FreeForm, i.matched_pattern.is_none());
            }
        }
    }
}
