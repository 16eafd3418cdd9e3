//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use pilar_cli::bench::{self, Clock, TaskScript};
use pilar_core::config::{Config, LlmProvider};
use pilar_core::explanation::{ExplanationContext, ProfileSummary, RecipeSummary};
use pilar_core::llm::client::FailOnContact;
use pilar_core::llm::prompt::fill_llm_prompt;
use pilar_core::recommend::{Outcome, Ranker, ScoringWeights};
use pilar_core::router::IntentKind;
use pilar_core::xai::counterfactual::{diverse_counterfactuals, CounterfactualError, Instance, SearchParams};
use pilar_core::xai::realize::fill_template_prompt;
use pilar_core::xai::{shapley, CounterfactualTarget, Edit, EditSpace, FnModel};
use pilar_core::{Corpus, Engine, Mode, Recipe, UserProfile, Vocabulary};
use pilar_service::persist::replay;
use pilar_service::state::HistoryEntry;
use pilar_service::{AppState, BackgroundServer, Event, EventLog, Store};
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("shapley axioms", shapley_axioms),
        ("shapley oracle equivalence", shapley_oracle),
        ("counterfactual validity", counterfactual_validity),
        ("counterfactual minimality", counterfactual_minimality),
        ("allergen safety", allergen_safety),
        ("router fidelity", router_fidelity),
        ("prompt golden files", prompt_goldens),
        ("offline determinism", offline_determinism),
        ("latency", latency),
        ("persistence round-trip", persistence),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail} ({secs:.2}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

/// Random smooth function of `n` inputs with interactions up to order three.
fn random_function(rng: &mut StdRng, n: usize) -> impl Fn(&[f64]) -> f64 {
    let terms: Vec<(f64, Vec<usize>)> = (0..rng.random_range(1..=2 * n + 2))
        .map(|_| {
            let order = rng.random_range(1..=3.min(n));
            let mut vars: Vec<usize> = (0..n).collect();
            vars.shuffle(rng);
            vars.truncate(order);
            (rng.random_range(-2.0..2.0), vars)
        })
        .collect();
    let wave = (rng.random_range(-1.0..1.0), rng.random_range(0..n));
    move |x: &[f64]| {
        terms.iter().map(|(c, v)| c * v.iter().map(|&i| x[i]).product::<f64>()).sum::<f64>() + wave.0 * x[wave.1].sin()
    }
}

fn random_point(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn shapley_axioms() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(1);
    let started = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=12);
        let f = random_function(&mut rng, n);
        let (x, b) = (random_point(&mut rng, n), random_point(&mut rng, n));
        let gap = f(&x) - f(&b);
        let model = FnModel::new(names(n), f);
        let phi = shapley(&model, &x, &b).map_err(|e| e.to_string())?;
        let err = (phi.iter().map(|a| a.phi).sum::<f64>() - gap).abs();
        worst = worst.max(err);
        ensure!(err < 1e-9, "efficiency error {err:e} at n={n}");
    }
    for _ in 0..100 {
        let n = rng.random_range(2..=12);
        let (i, j) = {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            (idx[0], idx[1])
        };
        let m = random_function(&mut rng, n);
        let f = move |x: &[f64]| {
            let mut swapped = x.to_vec();
            swapped.swap(i, j);
            m(x) + m(&swapped)
        };
        let (mut x, mut b) = (random_point(&mut rng, n), random_point(&mut rng, n));
        x[j] = x[i];
        b[j] = b[i];
        let phi = shapley(&FnModel::new(names(n), f), &x, &b).map_err(|e| e.to_string())?;
        let err = (phi[i].phi - phi[j].phi).abs();
        worst = worst.max(err);
        ensure!(err < 1e-9, "symmetry error {err:e} at n={n}");
    }
    for _ in 0..100 {
        let n = rng.random_range(1..=12);
        let dummy = rng.random_range(0..n);
        let m = random_function(&mut rng, n);
        let f = move |x: &[f64]| {
            let mut y = x.to_vec();
            y[dummy] = 0.0;
            m(&y)
        };
        let (x, b) = (random_point(&mut rng, n), random_point(&mut rng, n));
        let phi = shapley(&FnModel::new(names(n), f), &x, &b).map_err(|e| e.to_string())?;
        let err = phi[dummy].phi.abs();
        worst = worst.max(err);
        ensure!(err < 1e-9, "dummy feature got {err:e} at n={n}");
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2}s");
    Ok(format!("3x100 instances, max error {worst:.1e}"))
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (k, &first) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(k);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

fn shapley_oracle() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(2);
    let perms = permutations(&[0, 1, 2, 3]);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let f = random_function(&mut rng, 4);
        let (x, b) = (random_point(&mut rng, 4), random_point(&mut rng, 4));
        let worth = |members: &BTreeSet<usize>| {
            let p: Vec<f64> = (0..4).map(|i| if members.contains(&i) { x[i] } else { b[i] }).collect();
            f(&p)
        };
        let mut oracle = [0.0; 4];
        for perm in &perms {
            let mut members = BTreeSet::new();
            for &i in perm {
                let before = worth(&members);
                members.insert(i);
                oracle[i] += (worth(&members) - before) / perms.len() as f64;
            }
        }
        let phi = shapley(&FnModel::new(names(4), &f), &x, &b).map_err(|e| e.to_string())?;
        for i in 0..4 {
            let err = (phi[i].phi - oracle[i]).abs();
            worst = worst.max(err);
            ensure!(err < 1e-9, "feature {i} differs by {err:e}");
        }
    }
    Ok(format!("50 functions x 24 permutations, max error {worst:.1e}"))
}

fn vocab() -> Vocabulary {
    Vocabulary::embedded()
}

/// Valid random recipes drawn from `pool`. Diet labels are only attached
/// when no ingredient conflicts with them.
fn random_recipes(rng: &mut StdRng, vocab: &Vocabulary, pool: &[String], n: usize) -> Vec<Recipe> {
    let goals: Vec<String> = vocab.goals().map(String::from).collect();
    let categories: Vec<String> = vocab.ingredient_tag_set().into_iter().map(String::from).collect();
    (0..n)
        .map(|i| {
            let count = rng.random_range(2..=6.min(pool.len()));
            let ingredients: Vec<String> = pool.choose_multiple(rng, count).cloned().collect();
            let mut tags: BTreeSet<String> = pick(rng, &goals, 0..=2);
            let diet = vocab.diets().choose(rng).unwrap();
            let compatible = ingredients
                .iter()
                .all(|ing| vocab.ingredient_tags(ing).all(|t| !diet.conflicts.iter().any(|c| c == t)));
            if compatible && !diet.matches_all && rng.random_bool(0.6) {
                tags.insert(diet.id.clone());
            } else if rng.random_bool(0.2) {
                tags.insert(categories.choose(rng).unwrap().clone());
            }
            Recipe {
                id: format!("r{i:04}"),
                title: format!("Recipe {i}"),
                ingredients,
                tags,
                calories_per_serving: rng.random_range(150..900) as f64,
                steps: vec!["Cook.".into()],
            }
        })
        .collect()
}

/// A random subset of `items` whose size is drawn from `size`.
fn pick(rng: &mut StdRng, items: &[String], size: std::ops::RangeInclusive<usize>) -> BTreeSet<String> {
    let n = rng.random_range(size);
    items.choose_multiple(rng, n).cloned().collect()
}

fn random_profile(rng: &mut StdRng, vocab: &Vocabulary, allergen_pool: &[String]) -> UserProfile {
    let goals: Vec<String> = vocab.goals().map(String::from).collect();
    UserProfile {
        id: "fuzz".into(),
        diet: vocab.diets().choose(rng).unwrap().id.clone(),
        health_goals: pick(rng, &goals, 0..=2),
        allergens: pick(rng, allergen_pool, 0..=3),
        calorie_target: rng.random_range(250..1000),
    }
}

fn ingredient_pool(vocab: &Vocabulary) -> Vec<String> {
    vocab.ingredient_ids().map(String::from).collect()
}

fn allergen_pool(vocab: &Vocabulary) -> Vec<String> {
    let mut pool = ingredient_pool(vocab);
    pool.extend(vocab.ingredient_tag_set().into_iter().map(String::from));
    pool
}

fn apply(profile: &UserProfile, detected: &BTreeSet<String>, edits: &[Edit]) -> (UserProfile, BTreeSet<String>) {
    let (mut p, mut d) = (profile.clone(), detected.clone());
    for e in edits {
        match e {
            Edit::AddIngredient { ingredient } => {
                d.insert(ingredient.clone());
            }
            Edit::RemoveIngredient { ingredient } => {
                d.remove(ingredient);
            }
            Edit::SetDiet { to, .. } => p.diet = to.clone(),
            Edit::AddGoal { goal } => {
                p.health_goals.insert(goal.clone());
            }
            Edit::RemoveGoal { goal } => {
                p.health_goals.remove(goal);
            }
            Edit::AddAllergen { allergen } => {
                p.allergens.insert(allergen.clone());
            }
            Edit::RemoveAllergen { allergen } => {
                p.allergens.remove(allergen);
            }
            Edit::ShiftCalorieTarget { to, .. } => p.calorie_target = *to,
        }
    }
    (p, d)
}

fn target_holds(target: CounterfactualTarget, outcome: &Outcome) -> bool {
    match (target, outcome) {
        (CounterfactualTarget::Include, Outcome::Ranked { .. }) => true,
        (CounterfactualTarget::Include, _) => false,
        (CounterfactualTarget::Exclude, o) => !matches!(o, Outcome::Ranked { .. }),
        (CounterfactualTarget::ReachRank(r), Outcome::Ranked { rank }) => *rank <= r,
        (CounterfactualTarget::ReachRank(_), _) => false,
        (CounterfactualTarget::PassFilters, o) => !matches!(o, Outcome::Excluded { .. }),
    }
}

/// Outcome of `recipe` in a full re-ranking of the whole corpus.
fn full_outcome(
    ranker: &Ranker<'_>,
    profile: &UserProfile,
    detected: &BTreeSet<String>,
    recipe: &str,
    k: usize,
) -> Option<Outcome> {
    ranker.rank(profile, detected, k).ok()?.outcome(recipe)
}

/// A target the recipe does not meet yet.
fn unmet_target(rng: &mut StdRng, outcome: &Outcome) -> CounterfactualTarget {
    match outcome {
        Outcome::Ranked { rank } if *rank > 1 && rng.random_bool(0.5) => CounterfactualTarget::ReachRank(rank - 1),
        Outcome::Ranked { .. } => CounterfactualTarget::Exclude,
        Outcome::PassedOver { .. } => CounterfactualTarget::Include,
        Outcome::Excluded { .. } if rng.random_bool(0.5) => CounterfactualTarget::PassFilters,
        Outcome::Excluded { .. } => CounterfactualTarget::Include,
    }
}

fn counterfactual_validity() -> Result<String, String> {
    let v = vocab();
    let pool = ingredient_pool(&v);
    let allergens = allergen_pool(&v);
    let space = EditSpace::from_vocab(&v);
    let mut rng = StdRng::seed_from_u64(3);
    let (mut returned, mut instances_with_results, mut no_solution) = (0, 0, 0);
    for case in 0..200 {
        let corpus = Corpus::new(random_recipes(&mut rng, &v, &pool, 12), &v).map_err(|e| e.to_string())?;
        let ranker = Ranker::new(&corpus, &v, ScoringWeights::default());
        let profile = random_profile(&mut rng, &v, &allergens);
        let detected: BTreeSet<String> = pick(&mut rng, &pool, 1..=5);
        let k = 3;
        let recipe = corpus.recipes().choose(&mut rng).unwrap().id.clone();
        let current = full_outcome(&ranker, &profile, &detected, &recipe, k).ok_or("ranking failed")?;
        let target = unmet_target(&mut rng, &current);
        let inst = Instance { profile: &profile, detected: &detected, recipe_id: &recipe };
        let params = SearchParams { top_k: k, count: 3, max_edits: 2 };
        let found = match diverse_counterfactuals(&ranker, inst, target, params, &space) {
            Ok(found) => found,
            Err(CounterfactualError::NoCounterfactualWithinBudget { .. }) => {
                no_solution += 1;
                continue;
            }
            Err(e) => return Err(format!("case {case}: {e}")),
        };
        instances_with_results += 1;
        for cf in &found {
            returned += 1;
            let (p, d) = apply(&profile, &detected, &cf.edits);
            let outcome = full_outcome(&ranker, &p, &d, &recipe, k).ok_or("re-ranking failed")?;
            ensure!(
                outcome == cf.resulting_outcome && target_holds(target, &outcome),
                "case {case}: {:?} claims {:?} for {target:?}, re-rank gives {outcome:?}",
                cf.edits,
                cf.resulting_outcome
            );
            let cost: u32 = cf.edits.iter().map(Edit::cost).sum();
            ensure!(cost == cf.edit_distance && cost <= 2, "case {case}: bad edit distance {}", cf.edit_distance);
        }
    }
    ensure!(instances_with_results >= 100, "only {instances_with_results} instances had a counterfactual");
    Ok(format!(
        "{returned} counterfactuals over 200 instances ({instances_with_results} solved, {no_solution} beyond budget), 0 invalid"
    ))
}

fn shift(original: u32, steps: i32) -> Option<u32> {
    let v = (original as f64 * (1.0 + 0.25 * steps as f64)).round();
    (v >= 1.0 && v as u32 != original).then_some(v as u32)
}

/// Cheapest edit set over every reachable input state, found by brute force.
fn exhaustive_optimum(
    ranker: &Ranker<'_>,
    space: &EditSpace,
    profile: &UserProfile,
    detected: &BTreeSet<String>,
    recipe: &str,
    target: CounterfactualTarget,
    k: usize,
) -> (Option<u32>, usize) {
    let ingredients: Vec<String> =
        space.ingredients.iter().chain(detected).cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let goals: Vec<String> =
        space.goals.iter().chain(&profile.health_goals).cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let allergens: Vec<String> =
        space.allergens.iter().chain(&profile.allergens).cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let mut diets: Vec<(String, u32)> = vec![(profile.diet.clone(), 0)];
    diets.extend(space.diets.iter().filter(|d| **d != profile.diet).map(|d| (d.clone(), 1)));
    let mut calories = vec![(profile.calorie_target, 0u32)];
    for s in 1..=space.max_calorie_steps as i32 {
        for steps in [-s, s] {
            if let Some(c) = shift(profile.calorie_target, steps) {
                calories.push((c, s as u32));
            }
        }
    }
    let toggles = ingredients.len() + goals.len() + allergens.len();
    let mut best: Option<u32> = None;
    let mut states = 0;
    for mask in 0u32..(1 << toggles) {
        for (diet, diet_cost) in &diets {
            for (cal, cal_cost) in &calories {
                states += 1;
                let mut p = profile.clone();
                let mut d = detected.clone();
                let flip = |set: &mut BTreeSet<String>, item: &String| {
                    if !set.remove(item) {
                        set.insert(item.clone());
                    }
                };
                for (bit, item) in ingredients.iter().chain(&goals).chain(&allergens).enumerate() {
                    if mask & (1 << bit) == 0 {
                        continue;
                    }
                    if bit < ingredients.len() {
                        flip(&mut d, item);
                    } else if bit < ingredients.len() + goals.len() {
                        flip(&mut p.health_goals, item);
                    } else {
                        flip(&mut p.allergens, item);
                    }
                }
                p.diet = diet.clone();
                p.calorie_target = *cal;
                let cost = mask.count_ones() + diet_cost + cal_cost;
                if best.is_some_and(|b| cost >= b) {
                    continue;
                }
                if full_outcome(ranker, &p, &d, recipe, k).is_some_and(|o| target_holds(target, &o)) {
                    best = Some(cost);
                }
            }
        }
    }
    (best, states)
}

fn counterfactual_minimality() -> Result<String, String> {
    let v = vocab();
    let all = ingredient_pool(&v);
    let all_goals: Vec<String> = v.goals().map(String::from).collect();
    let all_diets: Vec<String> = v.diets().iter().map(|d| d.id.clone()).collect();
    let allergens = allergen_pool(&v);
    let mut rng = StdRng::seed_from_u64(4);
    let max_edits = 5;
    let (mut nonzero, mut beyond, mut max_states) = (0, 0, 0);
    for case in 0..50 {
        let space = EditSpace {
            ingredients: all.choose_multiple(&mut rng, 4).cloned().collect(),
            diets: all_diets.choose_multiple(&mut rng, 3).cloned().collect(),
            goals: all_goals.choose_multiple(&mut rng, 2).cloned().collect(),
            allergens: allergens.choose_multiple(&mut rng, 3).cloned().collect(),
            max_calorie_steps: 2,
        };
        let mut pool: BTreeSet<String> = space.ingredients.iter().cloned().collect();
        pool.extend(all.choose_multiple(&mut rng, 3).cloned());
        let pool: Vec<String> = pool.into_iter().collect();
        let corpus = Corpus::new(random_recipes(&mut rng, &v, &pool, 8), &v).map_err(|e| e.to_string())?;
        let ranker = Ranker::new(&corpus, &v, ScoringWeights::default());
        let profile = UserProfile {
            id: "m".into(),
            diet: space.diets[0].clone(),
            health_goals: pick(&mut rng, &space.goals, 0..=1),
            allergens: pick(&mut rng, &space.allergens, 0..=2),
            calorie_target: rng.random_range(250..1000),
        };
        let detected: BTreeSet<String> = pick(&mut rng, &space.ingredients, 1..=3);
        let k = 2;
        let recipe = corpus.recipes().choose(&mut rng).unwrap().id.clone();
        let current = full_outcome(&ranker, &profile, &detected, &recipe, k).ok_or("ranking failed")?;
        let target = unmet_target(&mut rng, &current);

        let (optimum, states) = exhaustive_optimum(&ranker, &space, &profile, &detected, &recipe, target, k);
        ensure!(states <= 10_000, "case {case}: {states} states");
        max_states = max_states.max(states);
        let inst = Instance { profile: &profile, detected: &detected, recipe_id: &recipe };
        let params = SearchParams { top_k: k, count: 1, max_edits };
        let found = diverse_counterfactuals(&ranker, inst, target, params, &space);
        match (optimum.filter(|&o| o <= max_edits), found) {
            (Some(o), Ok(found)) => {
                ensure!(found[0].edit_distance == o, "case {case}: search {} vs optimum {o}", found[0].edit_distance);
                nonzero += usize::from(o > 0);
            }
            (None, Err(CounterfactualError::NoCounterfactualWithinBudget { .. })) => beyond += 1,
            (o, f) => return Err(format!("case {case}: optimum {o:?}, search {f:?}")),
        }
    }
    ensure!(nonzero >= 25, "only {nonzero} cases needed edits");
    Ok(format!(
        "50 cases matched the exhaustive optimum ({nonzero} needing edits, {beyond} beyond {max_edits} edits), at most {max_states} states"
    ))
}

fn allergen_safety() -> Result<String, String> {
    let v = vocab();
    let pool = ingredient_pool(&v);
    let allergens = allergen_pool(&v);
    let mut rng = StdRng::seed_from_u64(5);
    let (mut ranked, mut excluded) = (0, 0);
    for case in 0..1000 {
        let n = rng.random_range(5..=30);
        let corpus = Corpus::new(random_recipes(&mut rng, &v, &pool, n), &v).map_err(|e| e.to_string())?;
        let profile = random_profile(&mut rng, &v, &allergens);
        let detected: BTreeSet<String> = pick(&mut rng, &pool, 1..=6);
        let result = Ranker::new(&corpus, &v, ScoringWeights::default())
            .rank(&profile, &detected, rng.random_range(1..=10))
            .map_err(|e| e.to_string())?;
        for s in result.ranked.iter().chain(&result.passed_over) {
            let r = &s.recipe;
            for a in &profile.allergens {
                let hit =
                    r.tags.contains(a) || r.ingredients.iter().any(|i| i == a || v.ingredient_tags(i).any(|t| t == a));
                ensure!(!hit, "case {case}: {} contains allergen {a}", r.id);
            }
            ranked += 1;
        }
        for s in &result.excluded {
            let reason =
                s.excluded.as_ref().ok_or(format!("case {case}: {} excluded without a reason", s.recipe.id))?;
            let cause = reason.cause();
            let present = s.recipe.ingredients.iter().any(|i| i == cause) || s.recipe.tags.contains(cause);
            ensure!(!cause.is_empty() && present, "case {case}: {} names cause {cause:?}", s.recipe.id);
            excluded += 1;
        }
    }
    Ok(format!("1000 pairs, {ranked} ranked recipes allergen-free, {excluded} exclusions name a cause"))
}

fn router_fidelity() -> Result<String, String> {
    let engine = Engine::offline();
    let kind = |q: &str| engine.classify(q).map(|i| i.kind).map_err(|e| e.to_string());
    let tasks = [
        ("Why was this recipe recommended?", IntentKind::Why),
        ("Why wasn't this recipe recommended?", IntentKind::WhyNot),
        ("How can I modify this recipe to better suit my dietary restrictions or preferences?", IntentKind::HowTo),
        ("What are the health benefits of this recipe?", IntentKind::FreeForm),
        ("How does this align with my long-term diet goals?", IntentKind::FreeForm),
    ];
    for (q, want) in tasks {
        let got = kind(q)?;
        ensure!(got == want, "{q:?} -> {got}, expected {want}");
    }
    let openers = ["why", "Why", "WHY", "so why", "But why", "ok, why"];
    let templates = [
        "{o} not {r}?",
        "{o} wasn't {r} recommended?",
        "{o} was {r} not recommended?",
        "{o} didn't you suggest {r}?",
        "{o} isn't {r} on my list?",
        "{o} is {r} not in my list?",
        "{o} was {r} excluded?",
        "{o} doesn't {r} show up?",
        "{o} don't I see {r}?",
        "{o} did {r} get left out?",
        "{o} no {r}?",
        "{o} never {r}?",
        "{o} weren't any {r} dishes suggested",
        "{o} can't I get {r}?",
        "{o} won't it recommend {r}?",
        "{o} couldn't I have {r}?",
        "{o} is {r} missing",
        "{o} was {r} filtered out",
        "{o} did not {r} make the cut",
        "{o} does the list not include {r}?",
    ];
    let recipes = ["this recipe", "beef stew", "the Beef Stew", "a vegetarian option", "it", "pasta"];
    let mut count = 0;
    for o in openers {
        for t in templates {
            for r in recipes {
                let q = t.replace("{o}", o).replace("{r}", r);
                for q in [q.clone(), q.replace('\'', "\u{2019}")] {
                    let got = kind(&q)?;
                    ensure!(got != IntentKind::Why, "{q:?} classified as WHY");
                    count += 1;
                }
            }
        }
    }
    Ok(format!("{} task queries routed, {count} why-not phrasings never WHY", tasks.len()))
}

fn golden(name: &str) -> Result<String, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn fixed_context() -> ExplanationContext {
    ExplanationContext {
        detected: ["tomato", "onion", "cheese"].iter().map(|s| s.to_string()).collect(),
        recipe: RecipeSummary {
            id: "vegetable_pasta".into(),
            name: "Vegetable Pasta".into(),
            tags: vec!["vegetarian".into(), "high_fiber".into()],
            calories: 520.0,
            ingredients: vec!["pasta".into(), "tomato".into(), "onion".into(), "cheese".into()],
        },
        profile: ProfileSummary { diet: "vegetarian".into(), health_goals: vec!["high_fiber".into()] },
        query: "Why was this recipe recommended?".into(),
        intent: IntentKind::Why,
        status: Outcome::Ranked { rank: 1 },
    }
}

/// One-shot chat-completions stub; hands back the request body it received.
fn capture_one_request() -> Result<(String, std::thread::JoinHandle<Option<Value>>), String> {
    let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().map_err(|e| e.to_string())?);
    let handle = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().ok()?;
        let mut reader = BufReader::new(stream.try_clone().ok()?);
        let mut length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).ok()?;
            if line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some((name, value)) = line.split_once(':') {
                if name.eq_ignore_ascii_case("content-length") {
                    length = value.trim().parse().ok()?;
                }
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).ok()?;
        let reply = json!({"choices": [{"message": {"role": "assistant", "content": "Vegetable Pasta fits your vegetarian diet."}}]}).to_string();
        let _ = write!(
            stream,
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
            reply.len()
        );
        serde_json::from_slice(&body).ok()
    });
    Ok((url, handle))
}

fn prompt_goldens() -> Result<String, String> {
    let slots = fixed_context().slots().map_err(|e| e.to_string())?;
    let template = fill_template_prompt(&slots) + "\n";
    ensure!(template == golden("prompt_template.txt")?, "template prompt differs from golden:\n{template}");
    let llm = fill_llm_prompt(&slots) + "\n";
    ensure!(llm == golden("prompt_llm.txt")?, "LLM prompt differs from golden:\n{llm}");

    let (url, handle) = capture_one_request()?;
    let mut config = Config::default();
    config.llm.provider = LlmProvider::Http;
    config.llm.endpoint = Some(url);
    let engine = Engine::builder(config).build().map_err(|e| e.to_string())?;
    let profile = UserProfile {
        id: "g".into(),
        diet: "vegetarian".into(),
        health_goals: ["high_fiber".to_string()].into(),
        allergens: BTreeSet::new(),
        calorie_target: 500,
    };
    let snap = engine.recommend(&profile, &fixed_context().detected, None).map_err(|e| e.to_string())?;
    engine
        .explain(&snap, "vegetable_pasta", "Why was this recipe recommended?", Mode::Llm, None)
        .map_err(|e| e.to_string())?;
    let body = handle.join().map_err(|_| "stub panicked")?.ok_or("no request captured")?;
    ensure!(body["temperature"] == json!(0.2), "temperature {}", body["temperature"]);
    ensure!(body["max_tokens"] == json!(1000), "max_tokens {}", body["max_tokens"]);
    let user = body["messages"]
        .as_array()
        .and_then(|m| m.iter().find(|m| m["role"] == "user"))
        .and_then(|m| m["content"].as_str())
        .ok_or("no user message")?;
    let snap_ctx = ExplanationContext {
        recipe: RecipeSummary {
            tags: snap.result.find("vegetable_pasta").unwrap().recipe.tags.iter().cloned().collect(),
            ..fixed_context().recipe
        },
        ..fixed_context()
    };
    let expected = fill_llm_prompt(&snap_ctx.slots().map_err(|e| e.to_string())?);
    ensure!(user.contains(&expected), "request prompt lacks the filled LLM instruction");
    Ok("both templates byte-identical; request body has temperature 0.2, max_tokens 1000".into())
}

/// Listener that counts connection attempts without ever answering.
fn counting_endpoint() -> Result<(String, Arc<AtomicUsize>), String> {
    let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let url = format!("http://{}", listener.local_addr().map_err(|e| e.to_string())?);
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for conn in listener.incoming() {
            counter.fetch_add(1, Ordering::SeqCst);
            drop(conn);
        }
    });
    Ok((url, hits))
}

fn offline_determinism() -> Result<String, String> {
    let script = TaskScript::builtin();
    let report = |engine: &Engine, mode: Mode| -> Result<String, String> {
        let r = bench::run(engine, &script, mode, 1, Clock::Fixed).map_err(|e| e.to_string())?;
        serde_json::to_string_pretty(&r).map_err(|e| e.to_string())
    };

    let fail = Arc::new(FailOnContact::default());
    let template_engine =
        Engine::builder(Config::default()).llm_client(fail.clone()).build().map_err(|e| e.to_string())?;
    let a = report(&template_engine, Mode::Template)?;
    ensure!(a == report(&template_engine, Mode::Template)?, "template reports differ");
    ensure!(fail.contacts() == 0, "template mode contacted the LLM {} time(s)", fail.contacts());

    let (url, hits) = counting_endpoint()?;
    let mut config = Config::default();
    config.llm.provider = LlmProvider::Mock;
    config.llm.endpoint = Some(url.clone());
    config.detection.endpoint = Some(url);
    let mock_engine = Engine::builder(config).build().map_err(|e| e.to_string())?;
    ensure!(mock_engine.llm_name() == "mock", "llm client is {}", mock_engine.llm_name());
    let b = report(&mock_engine, Mode::Llm)?;
    ensure!(b == report(&mock_engine, Mode::Llm)?, "mock-llm reports differ");
    ensure!(a == report(&mock_engine, Mode::Template)?, "template report depends on the LLM client");
    std::thread::sleep(Duration::from_millis(50));
    let contacts = hits.load(Ordering::SeqCst);
    ensure!(contacts == 0, "{contacts} network connection(s) attempted");
    Ok(format!(
        "template and mock-llm reports byte-identical across runs ({} / {} bytes), 0 contacts",
        a.len(),
        b.len()
    ))
}

struct Http {
    server: BackgroundServer,
    agent: ureq::Agent,
}

impl Http {
    fn post(&self, path: &str, body: Value) -> Result<Value, String> {
        let mut resp = self
            .agent
            .post(self.server.url(path))
            .header("Content-Type", "application/json")
            .send(body.to_string().as_bytes())
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let value: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        ensure!((200..300).contains(&status), "{path}: {status} {value}");
        Ok(value)
    }
}

fn latency() -> Result<String, String> {
    let v = vocab();
    let mut rng = StdRng::seed_from_u64(6);
    let corpus =
        Corpus::new(random_recipes(&mut rng, &v, &ingredient_pool(&v), 1000), &v).map_err(|e| e.to_string())?;
    let engine = Engine::builder(Config::default()).corpus(corpus).build().map_err(|e| e.to_string())?;
    let state = AppState::new(Arc::new(engine), Store::in_memory());
    let http = Http {
        server: BackgroundServer::start(state).map_err(|e| e.to_string())?,
        agent: ureq::Agent::config_builder().http_status_as_error(false).build().into(),
    };
    http.post(
        "/v1/profiles",
        json!({"id": "u1", "diet": "vegetarian", "health_goals": ["high_fiber"], "allergens": ["peanut"], "calorie_target": 500}),
    )?;
    let sid = http.post("/v1/sessions", json!({"profile_id": "u1"}))?["session_id"]
        .as_str()
        .ok_or("no session id")?
        .to_string();
    http.post(&format!("/v1/sessions/{sid}/detect"), json!({"fixture_id": "fridge_01"}))?;

    let mut samples = Vec::new();
    for i in 0..120 {
        let started = Instant::now();
        let rec = http.post(&format!("/v1/sessions/{sid}/recommend"), json!({"k": 5}))?;
        let top = rec["result"]["ranked"][0]["recipe"]["id"].as_str().ok_or("empty ranking")?.to_string();
        let e = http.post(
            &format!("/v1/sessions/{sid}/explain"),
            json!({"recipe_id": top, "query": "Why was this recipe recommended?", "mode": "template"}),
        )?;
        ensure!(e["intent"] == "WHY", "explain returned {e}");
        if i >= 20 {
            samples.push(started.elapsed().as_secs_f64() * 1000.0);
        }
    }
    samples.sort_by(f64::total_cmp);
    let p95 = samples[(samples.len() as f64 * 0.95).ceil() as usize - 1];
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    ensure!(p95 < 100.0, "p95 {p95:.1} ms");
    Ok(format!("1000 recipes, {} round trips, mean {mean:.1} ms, p95 {p95:.1} ms", samples.len()))
}

fn persistence() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("events.jsonl");
    let engine = Engine::offline();
    let open = |every: u64| -> Result<Store, String> {
        let (log, state, _) = EventLog::open(&path, every, &engine).map_err(|e| e.to_string())?;
        Ok(Store { state, log })
    };

    let mut store = open(25)?;
    let commit = |store: &mut Store, event: Event| store.commit(event, &engine).map_err(|e| e.to_string());
    commit(
        &mut store,
        Event::ProfileUpsert {
            profile: UserProfile {
                id: "u1".into(),
                diet: "vegetarian".into(),
                health_goals: ["high_fiber".to_string()].into(),
                allergens: ["peanut".to_string()].into(),
                calorie_target: 500,
            },
        },
    )?;
    let detected = engine.detect_fixture("fridge_01", None).map_err(|e| e.to_string())?.ingredients;
    let queries = ["Why was this recipe recommended?", "Why wasn't this recipe recommended?", "What if I were vegan?"];
    for s in 0..4 {
        let sid = format!("s{s}");
        commit(&mut store, Event::SessionCreate { session_id: sid.clone(), profile_id: "u1".into() })?;
        commit(
            &mut store,
            Event::Detect {
                session_id: sid.clone(),
                source: "fixture:fridge_01".into(),
                ingredients: detected.clone(),
            },
        )?;
        commit(&mut store, Event::Recommend { session_id: sid.clone(), k: 5, ingredients: None })?;
        for i in 0..25 {
            let snap = store.state.sessions[&sid].recommendation.clone().ok_or("no recommendation")?;
            let recipe = if i % 2 == 0 { snap.result.ranked[0].recipe.id.clone() } else { "beef_stew".to_string() };
            let query = queries[i % queries.len()];
            let e = engine.explain(&snap, &recipe, query, Mode::Template, None).map_err(|e| e.to_string())?;
            let seq = store.log.next_seq();
            commit(
                &mut store,
                Event::Explain {
                    session_id: sid.clone(),
                    entry: Box::new(HistoryEntry {
                        seq,
                        recipe_id: recipe,
                        query: query.into(),
                        intent: e.intent,
                        mode: Mode::Template,
                        explanation: e,
                    }),
                },
            )?;
        }
    }
    let before = store.state.clone();
    drop(store);
    ensure!(before.last_seq >= 100, "only {} events", before.last_seq);

    let restarted = open(25)?.state;
    ensure!(restarted == before, "state differs after restart");
    let events = before.last_seq;

    std::fs::remove_file(pilar_service::persist::snapshot_path(&path)).map_err(|e| e.to_string())?;
    let full = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let last_start = full.trim_end().rfind('\n').ok_or("single-line log")? + 1;
    std::fs::write(&path, &full[..last_start + 15]).map_err(|e| e.to_string())?;
    let (state, parsed) = replay(&path, &engine).map_err(|e| e.to_string())?;
    ensure!(state.last_seq == events - 1, "replayed to seq {}", state.last_seq);
    ensure!(parsed.warnings.len() == 1, "warnings: {:?}", parsed.warnings);
    let mut resumed = open(0)?;
    commit(&mut resumed, Event::SessionCreate { session_id: "late".into(), profile_id: "u1".into() })?;
    let again = open(0)?.state;
    ensure!(again == resumed.state && again.last_seq == events, "state after truncated-tail recovery differs");
    let sessions: BTreeMap<_, _> = again.sessions.iter().map(|(k, s)| (k.clone(), s.history.len())).collect();
    Ok(format!(
        "{events} events replayed to an equal state; truncated tail dropped with one warning; sessions {sessions:?}"
    ))
}
