//! Scripted task benchmark: replays a task script against the engine and
//! reports per-step and per-task latency, intent accuracy, dimension
//! coverage and groundedness flags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use pilar_core::domain::validate_profile;
use pilar_core::explanation::{Dimension, RecommendationSnapshot};
use pilar_core::router::IntentKind;
use pilar_core::{Engine, Mode, ProfileDraft, UserProfile};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SCRIPT: &str = include_str!("../data/bench_t1_t4.json");

/// Recipe placeholder for the current top-ranked recipe.
pub const TOP: &str = "@top";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScript {
    pub name: String,
    pub profile: ProfileDraft,
    pub tasks: Vec<Task>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Step {
    SetProfile {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profile: Option<ProfileDraft>,
    },
    DetectFixture {
        fixture: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
    },
    Recommend {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
    },
    Explain {
        recipe: String,
        query: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expect_intent: Option<IntentKind>,
    },
}

impl Step {
    pub fn action(&self) -> &'static str {
        match self {
            Step::SetProfile { .. } => "set_profile",
            Step::DetectFixture { .. } => "detect_fixture",
            Step::Recommend { .. } => "recommend",
            Step::Explain { .. } => "explain",
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read script {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed script: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("step {index} ({action}) in task {task:?}: {missing} required first")]
    PipelineOrder { index: usize, task: String, action: &'static str, missing: &'static str },
    #[error("step {index} in task {task:?}: {message}")]
    Step { index: usize, task: String, message: String },
    #[error("repeat must be at least 1")]
    ZeroRepeat,
}

impl TaskScript {
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_SCRIPT).expect("built-in script is valid")
    }

    pub fn from_json(raw: &str) -> Result<Self, BenchError> {
        let script: TaskScript = serde_json::from_str(raw)?;
        script.check_order()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|source| BenchError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&raw)
    }

    /// Steps must follow set_profile, detect_fixture, recommend, explain.
    /// Indices count steps across the whole script, from 0.
    pub fn check_order(&self) -> Result<(), BenchError> {
        let (mut profile, mut detected, mut recommended) = (false, false, false);
        for (index, task, step) in self.indexed_steps() {
            let missing = match step {
                Step::SetProfile { .. } => {
                    profile = true;
                    recommended = false;
                    None
                }
                Step::DetectFixture { .. } => {
                    detected = true;
                    recommended = false;
                    None
                }
                Step::Recommend { .. } if !profile => Some("set_profile"),
                Step::Recommend { .. } if !detected => Some("detect_fixture"),
                Step::Recommend { .. } => {
                    recommended = true;
                    None
                }
                Step::Explain { .. } if !recommended => Some("recommend"),
                Step::Explain { .. } => None,
            };
            if let Some(missing) = missing {
                return Err(BenchError::PipelineOrder {
                    index,
                    task: task.name.clone(),
                    action: step.action(),
                    missing,
                });
            }
        }
        Ok(())
    }

    fn indexed_steps(&self) -> impl Iterator<Item = (usize, &Task, &Step)> {
        self.tasks.iter().flat_map(|t| t.steps.iter().map(move |s| (t, s))).enumerate().map(|(i, (t, s))| (i, t, s))
    }
}

/// Source of elapsed times. `Fixed` reports zero for every measurement so
/// reports are byte-for-byte reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    System,
    Fixed,
}

impl Clock {
    fn time<T>(self, f: impl FnOnce() -> T) -> (T, f64) {
        let start = Instant::now();
        let out = f();
        let ms = match self {
            Clock::System => start.elapsed().as_secs_f64() * 1000.0,
            Clock::Fixed => 0.0,
        };
        (out, ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
}

/// Nearest-rank 95th percentile and friends. Panics on an empty sample.
pub fn stats(samples: &[f64]) -> Stats {
    assert!(!samples.is_empty(), "stats of an empty sample");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Stats {
        n,
        mean: round3(sorted.iter().sum::<f64>() / n as f64),
        p95: round3(sorted[rank - 1]),
        min: round3(sorted[0]),
        max: round3(sorted[n - 1]),
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainOutcome {
    pub recipe_id: String,
    pub query: String,
    pub intent: Option<IntentKind>,
    pub expected_intent: Option<IntentKind>,
    pub intent_ok: bool,
    pub strategy: String,
    pub dimensions: BTreeSet<Dimension>,
    /// Share of the five dimensions the explanation covers.
    pub dimension_coverage: f64,
    pub groundedness_flags: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub index: usize,
    pub action: String,
    pub latency_ms: Stats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explain: Option<ExplainOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub name: String,
    pub latency_ms: Stats,
    pub steps: Vec<StepReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub explanations: usize,
    pub intent_matches: usize,
    pub groundedness_flags: usize,
    /// Per dimension, the share of explanations tagged with it.
    pub dimension_coverage: BTreeMap<Dimension, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub script: String,
    pub mode: Mode,
    pub llm: String,
    pub repeat: usize,
    pub clock: Clock,
    pub tasks: Vec<TaskReport>,
    pub summary: Summary,
}

const ALL_DIMENSIONS: [Dimension; 5] =
    [Dimension::What, Dimension::Who, Dimension::Where, Dimension::How, Dimension::When];

struct Run {
    /// Per step, in script order.
    step_ms: Vec<f64>,
    explains: Vec<Option<ExplainOutcome>>,
}

fn run_once(engine: &Engine, script: &TaskScript, mode: Mode, clock: Clock) -> Result<Run, BenchError> {
    let mut profile: Option<UserProfile> = None;
    let mut detected: Option<BTreeSet<String>> = None;
    let mut snapshot: Option<RecommendationSnapshot> = None;
    let mut run = Run { step_ms: Vec::new(), explains: Vec::new() };
    for (index, task, step) in script.indexed_steps() {
        let fail = |message: String| BenchError::Step { index, task: task.name.clone(), message };
        let (result, ms) = clock.time(|| -> Result<Option<ExplainOutcome>, BenchError> {
            match step {
                Step::SetProfile { profile: p } => {
                    let draft = p.as_ref().unwrap_or(&script.profile);
                    let valid = validate_profile(draft, engine.vocab())
                        .map_err(|v| fail(v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")))?;
                    profile = Some(valid);
                    snapshot = None;
                }
                Step::DetectFixture { fixture, threshold } => {
                    let d = engine.detect_fixture(fixture, *threshold).map_err(|e| fail(e.to_string()))?;
                    detected = Some(d.ingredients);
                    snapshot = None;
                }
                Step::Recommend { k } => {
                    let (p, d) = (profile.as_ref().expect("ordered"), detected.as_ref().expect("ordered"));
                    snapshot = Some(engine.recommend(p, d, *k).map_err(|e| fail(e.to_string()))?);
                }
                Step::Explain { recipe, query, expect_intent } => {
                    let snap = snapshot.as_ref().expect("ordered");
                    let recipe_id = if recipe == TOP {
                        snap.result
                            .top()
                            .map(|s| s.recipe.id.clone())
                            .ok_or_else(|| fail("no recipe was ranked".into()))?
                    } else {
                        recipe.clone()
                    };
                    let e = engine.explain(snap, &recipe_id, query, mode, None).map_err(|e| fail(e.to_string()))?;
                    return Ok(Some(ExplainOutcome {
                        recipe_id,
                        query: query.clone(),
                        intent: e.intent,
                        expected_intent: *expect_intent,
                        intent_ok: expect_intent.is_none_or(|x| e.intent == Some(x)),
                        strategy: e.strategy,
                        dimension_coverage: round3(e.dimensions.len() as f64 / ALL_DIMENSIONS.len() as f64),
                        dimensions: e.dimensions,
                        groundedness_flags: e.flags.len(),
                        text: e.text,
                    }));
                }
            }
            Ok(None)
        });
        run.explains.push(result?);
        run.step_ms.push(ms);
    }
    Ok(run)
}

/// Runs `script` `repeat` times. Explanation content comes from the first
/// run; the engine is deterministic, so later runs only add timings.
pub fn run(
    engine: &Engine,
    script: &TaskScript,
    mode: Mode,
    repeat: usize,
    clock: Clock,
) -> Result<BenchReport, BenchError> {
    if repeat == 0 {
        return Err(BenchError::ZeroRepeat);
    }
    script.check_order()?;
    let runs = (0..repeat).map(|_| run_once(engine, script, mode, clock)).collect::<Result<Vec<_>, _>>()?;

    let mut tasks = Vec::new();
    let mut index = 0;
    for task in &script.tasks {
        let range = index..index + task.steps.len();
        let steps = range
            .clone()
            .zip(&task.steps)
            .map(|(i, step)| StepReport {
                index: i,
                action: step.action().to_string(),
                latency_ms: stats(&runs.iter().map(|r| r.step_ms[i]).collect::<Vec<_>>()),
                explain: runs[0].explains[i].clone(),
            })
            .collect();
        let totals: Vec<f64> = runs.iter().map(|r| r.step_ms[range.clone()].iter().sum()).collect();
        tasks.push(TaskReport {
            name: task.name.clone(),
            latency_ms: if totals.is_empty() { stats(&[0.0]) } else { stats(&totals) },
            steps,
        });
        index = range.end;
    }

    let explains: Vec<&ExplainOutcome> = runs[0].explains.iter().flatten().collect();
    let n = explains.len().max(1) as f64;
    let summary = Summary {
        explanations: explains.len(),
        intent_matches: explains.iter().filter(|e| e.intent_ok).count(),
        groundedness_flags: explains.iter().map(|e| e.groundedness_flags).sum(),
        dimension_coverage: ALL_DIMENSIONS
            .iter()
            .map(|d| (*d, round3(explains.iter().filter(|e| e.dimensions.contains(d)).count() as f64 / n)))
            .collect(),
    };
    Ok(BenchReport {
        script: script.name.clone(),
        mode,
        llm: match mode {
            Mode::Template => "none".to_string(),
            Mode::Llm => engine.llm_name().to_string(),
        },
        repeat,
        clock,
        tasks,
        summary,
    })
}

/// Plain-text rendering of a report.
pub fn render_table(report: &BenchReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "bench {} | mode {} | llm {} | repeat {} | clock {}",
        report.script,
        report.mode,
        report.llm,
        report.repeat,
        serde_json::to_value(report.clock).unwrap().as_str().unwrap_or("")
    );
    let _ = writeln!(
        out,
        "{:<4} {:<28} {:<15} {:>10} {:>10}  {:<10} {:<15} {:<22} {:>5}",
        "step", "task", "action", "mean ms", "p95 ms", "intent", "strategy", "dimensions", "flags"
    );
    for task in &report.tasks {
        for s in &task.steps {
            let (intent, strategy, dims, flags) = match &s.explain {
                Some(e) => (
                    format!(
                        "{}{}",
                        e.intent.map_or("-".to_string(), |i| i.to_string()),
                        if e.intent_ok { "" } else { "!" }
                    ),
                    e.strategy.clone(),
                    e.dimensions
                        .iter()
                        .map(|d| serde_json::to_value(d).unwrap().as_str().unwrap_or("").to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                    e.groundedness_flags.to_string(),
                ),
                None => ("".into(), "".into(), "".into(), "".into()),
            };
            let _ = writeln!(
                out,
                "{:<4} {:<28} {:<15} {:>10.3} {:>10.3}  {:<10} {:<15} {:<22} {:>5}",
                s.index, task.name, s.action, s.latency_ms.mean, s.latency_ms.p95, intent, strategy, dims, flags
            );
        }
        let _ = writeln!(
            out,
            "     {:<28} {:<15} {:>10.3} {:>10.3}",
            task.name, "task total", task.latency_ms.mean, task.latency_ms.p95
        );
    }
    let _ = writeln!(
        out,
        "explanations {} | intents matched {} | groundedness flags {}",
        report.summary.explanations, report.summary.intent_matches, report.summary.groundedness_flags
    );
    out
}
