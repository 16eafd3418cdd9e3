use std::collections::BTreeSet;
use std::time::Duration;

use serde::Deserialize;

use super::{hard_filter, RankResult, RecommendError, Recommender, ScoredRecipe, ScoringWeights};
use crate::domain::{Recipe, UserProfile};
use crate::vocab::{Normalized, Vocabulary};

/// Client for an Edamam-shaped recipe search API.
///
/// Sends `GET <endpoint>?ingredients=a,b&diet=..&health=..&calories=..` and
/// maps `hits[].recipe` onto local [`Recipe`]s. The service's order is kept as
/// the ranking; hard filters are still applied locally.
pub struct RemoteRecommender {
    endpoint: String,
    app_key: Option<String>,
    agent: ureq::Agent,
    vocab: Vocabulary,
    weights: ScoringWeights,
}

#[derive(Debug, Deserialize)]
struct SearchResponse {
    #[serde(default)]
    hits: Vec<Hit>,
}

#[derive(Debug, Deserialize)]
struct Hit {
    recipe: RemoteRecipe,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RemoteRecipe {
    #[serde(default)]
    uri: String,
    label: String,
    #[serde(default)]
    ingredients: Vec<RemoteIngredient>,
    #[serde(default)]
    diet_labels: Vec<String>,
    #[serde(default)]
    health_labels: Vec<String>,
    calories: f64,
    #[serde(default = "one", rename = "yield")]
    servings: f64,
}

#[derive(Debug, Deserialize)]
struct RemoteIngredient {
    food: String,
}

fn one() -> f64 {
    1.0
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for ch in s.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('_') && !out.is_empty() {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_string()
}

impl RemoteRecommender {
    pub fn new(
        endpoint: impl Into<String>,
        app_key: Option<String>,
        timeout: Duration,
        vocab: Vocabulary,
        weights: ScoringWeights,
    ) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { endpoint: endpoint.into(), app_key, agent, vocab, weights }
    }

    /// Query parameters sent for a profile and ingredient set, in wire order.
    pub fn query_params(profile: &UserProfile, detected: &BTreeSet<String>) -> Vec<(&'static str, String)> {
        let mut params = vec![
            ("ingredients", detected.iter().cloned().collect::<Vec<_>>().join(",")),
            ("diet", profile.diet.clone()),
        ];
        if !profile.health_goals.is_empty() {
            params.push(("health", profile.health_goals.iter().cloned().collect::<Vec<_>>().join(",")));
        }
        params.push(("calories", profile.calorie_target.to_string()));
        params
    }

    fn to_recipe(&self, remote: RemoteRecipe) -> Option<Recipe> {
        let mut ingredients = Vec::new();
        for ing in &remote.ingredients {
            if let Ok(Normalized::Known(id)) = self.vocab.normalize_ingredient_name(&ing.food) {
                if !ingredients.contains(&id) {
                    ingredients.push(id);
                }
            }
        }
        if ingredients.is_empty() {
            return None;
        }
        let tags = remote
            .diet_labels
            .iter()
            .chain(&remote.health_labels)
            .map(|l| slug(l))
            .filter(|t| self.vocab.is_tag(t))
            .collect();
        let id = remote
            .uri
            .rsplit_once("#recipe_")
            .map(|(_, id)| slug(id))
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| slug(&remote.label));
        Some(Recipe {
            id,
            title: remote.label,
            ingredients,
            tags,
            calories_per_serving: remote.calories / remote.servings.max(1.0),
            steps: vec![],
        })
    }

    fn parse(
        &self,
        body: &str,
        profile: &UserProfile,
        detected: &BTreeSet<String>,
        k: usize,
    ) -> Result<RankResult, RecommendError> {
        let resp: SearchResponse =
            serde_json::from_str(body).map_err(|e| RecommendError::BadResponse(e.to_string()))?;
        let mut ranked = Vec::new();
        let mut passed_over = Vec::new();
        let mut excluded = Vec::new();
        let mut seen = BTreeSet::new();
        for hit in resp.hits {
            let Some(recipe) = self.to_recipe(hit.recipe) else { continue };
            if !seen.insert(recipe.id.clone()) {
                continue;
            }
            let features = super::feature_vector(&recipe, profile, detected, &self.vocab);
            let mut scored = ScoredRecipe {
                score: super::score(&features, &self.weights),
                features,
                excluded: hard_filter(&recipe, profile, &self.vocab).err(),
                rank: None,
                recipe,
            };
            if scored.excluded.is_some() {
                excluded.push(scored);
            } else if ranked.len() < k {
                scored.rank = Some(ranked.len() as u32 + 1);
                ranked.push(scored);
            } else {
                passed_over.push(scored);
            }
        }
        Ok(RankResult { k, ranked, passed_over, excluded })
    }
}

impl Recommender for RemoteRecommender {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn rank(&self, profile: &UserProfile, detected: &BTreeSet<String>, k: usize) -> Result<RankResult, RecommendError> {
        if k == 0 {
            return Err(super::RankError::ZeroK.into());
        }
        let mut req = self.agent.get(&self.endpoint);
        for (key, value) in Self::query_params(profile, detected) {
            req = req.query(key, value);
        }
        if let Some(key) = &self.app_key {
            req = req.query("app_key", key);
        }
        let mut resp = req.call().map_err(|e| RecommendError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(RecommendError::Unavailable(format!("status {status}")));
        }
        let body = resp.body_mut().read_to_string().map_err(|e| RecommendError::BadResponse(e.to_string()))?;
        self.parse(&body, profile, detected, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn client() -> RemoteRecommender {
        RemoteRecommender::new(
            "http://127.0.0.1:9",
            None,
            Duration::from_millis(200),
            Vocabulary::embedded(),
            ScoringWeights::default(),
        )
    }

    fn profile() -> UserProfile {
        UserProfile {
            id: "p".into(),
            diet: "vegetarian".into(),
            health_goals: ["high_fiber".to_string()].into(),
            allergens: ["peanut".to_string()].into(),
            calorie_target: 500,
        }
    }

    #[test]
    fn query_params_mirror_the_profile() {
        let detected: BTreeSet<String> = ["tomato", "onion"].iter().map(|s| s.to_string()).collect();
        let params = RemoteRecommender::query_params(&profile(), &detected);
        assert_eq!(
            params,
            vec![
                ("ingredients", "onion,tomato".to_string()),
                ("diet", "vegetarian".to_string()),
                ("health", "high_fiber".to_string()),
                ("calories", "500".to_string()),
            ]
        );
    }

    #[test]
    fn parses_search_hits_and_keeps_hard_filters() {
        let body = r#"{"hits":[
            {"recipe":{"uri":"x#recipe_abc1","label":"Beef Chili","ingredients":[{"food":"beef"},{"food":"tomatoes"}],"dietLabels":[],"healthLabels":["Gluten-Free"],"calories":2400,"yield":4}},
            {"recipe":{"uri":"x#recipe_def2","label":"Tomato Soup","ingredients":[{"food":"tomato"},{"food":"onion"}],"dietLabels":["Low-Fat"],"healthLabels":["Vegetarian","Vegan"],"calories":880,"yield":4}},
            {"recipe":{"label":"Mystery","ingredients":[{"food":"unobtainium"}],"calories":100}}
        ]}"#;
        let detected: BTreeSet<String> = ["tomato".to_string()].into();
        let out = client().parse(body, &profile(), &detected, 3).unwrap();
        assert_eq!(out.ranked.len(), 1);
        assert_eq!(out.ranked[0].recipe.id, "def2");
        assert_eq!(out.ranked[0].recipe.calories_per_serving, 220.0);
        assert!(out.ranked[0].recipe.tags.contains("vegan"));
        assert!(out.ranked[0].recipe.tags.contains("low_fat"));
        assert_eq!(out.excluded.len(), 1);
        assert_eq!(out.excluded[0].excluded.as_ref().unwrap().cause(), "beef");
    }

    #[test]
    fn unreachable_endpoint_is_reported() {
        let err = client().rank(&profile(), &BTreeSet::new(), 3).unwrap_err();
        assert!(matches!(err, RecommendError::Unavailable(_)));
    }
}
