//! `pilar` command-line tool: corpus checks, one-shot recommend/explain,
//! the task benchmark and the HTTP service.

pub mod bench;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pilar_core::config::{self, Config, ConfigError, LlmProvider};
use pilar_core::domain::{validate_profile, validate_recipes, RecipeViolation};
use pilar_core::engine::EngineError;
use pilar_core::explanation::ExplainError;
use pilar_core::vocab::{Normalized, Vocabulary};
use pilar_core::{Engine, EngineBuilder, Mode, ProfileDraft, Recipe, UserProfile, Violation};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::bench::{BenchError, Clock, TaskScript};

#[derive(Debug, Parser)]
#[command(name = "pilar", version, about = "Ingredient-driven recipe recommendation with explanations")]
pub struct Cli {
    /// TOML config file; overrides PILAR_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Data directory with vocabulary, corpus, rules, examples and fixtures.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus maintenance.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Detection fixtures.
    #[command(subcommand)]
    Fixtures(FixturesCommand),
    /// Rank recipes for a profile and ingredient list.
    Recommend(RecommendArgs),
    /// Explain one recipe for a profile and ingredient list.
    Explain(ExplainArgs),
    /// Benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Check every recipe invariant. Exit 0 only if the file is clean.
    Validate {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
}

#[derive(Debug, Subcommand)]
pub enum FixturesCommand {
    /// List fixture scene ids.
    List,
    /// Run the fixture detector on a scene.
    Detect {
        id: String,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Profile JSON file.
    #[arg(long)]
    pub profile: PathBuf,
    /// Comma-separated ingredient names.
    #[arg(long, value_delimiter = ',', required_unless_present = "fixture", conflicts_with = "fixture")]
    pub ingredients: Vec<String>,
    /// Use the ingredients detected in a fixture scene instead.
    #[arg(long)]
    pub fixture: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[command(flatten)]
    pub inputs: Inputs,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long)]
    pub recipe: String,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value = "template")]
    pub mode: Mode,
    /// Use the offline mock LLM.
    #[arg(long)]
    pub mock: bool,
    /// Force a strategy instead of routing.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Include latency_ms in the output.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Replay a task script and report latency and coverage.
    Tasks(BenchArgs),
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Task script; defaults to the built-in T1-T4 script.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long, default_value = "template")]
    pub mode: Mode,
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    /// Use the offline mock LLM.
    #[arg(long)]
    pub mock: bool,
    /// Report zero for every timing so output is reproducible.
    #[arg(long)]
    pub fixed_clock: bool,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bind: Option<String>,
    /// Event log file.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input or a domain rule violation (exit 1).
    #[error("{message}")]
    Domain { code: &'static str, message: String, violations: Vec<Violation> },
    /// File, config or environment problem (exit 2).
    #[error("{message}")]
    Environment { code: &'static str, message: String },
}

impl CliError {
    fn domain(code: &'static str, message: impl Into<String>) -> Self {
        CliError::Domain { code, message: message.into(), violations: Vec::new() }
    }

    fn env(code: &'static str, message: impl Into<String>) -> Self {
        CliError::Environment { code, message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain { .. } => 1,
            CliError::Environment { .. } => 2,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Domain { code, message, violations } => {
                let mut v = json!({"error": code, "message": message});
                if !violations.is_empty() {
                    v["violations"] = serde_json::to_value(violations).unwrap();
                }
                v
            }
            CliError::Environment { code, message } => json!({"error": code, "message": message}),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::env("config", e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        CliError::env("data", e.to_string())
    }
}

impl From<ExplainError> for CliError {
    fn from(e: ExplainError) -> Self {
        match &e {
            ExplainError::UnknownRecipeInSession(_) => CliError::domain("unknown recipe", e.to_string()),
            ExplainError::Llm(_) => CliError::env("llm_unavailable", e.to_string()),
            _ => CliError::domain("explain", e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Io { .. } | BenchError::Parse(_) => CliError::env("script", e.to_string()),
            _ => CliError::domain("bench", e.to_string()),
        }
    }
}

/// Command output: JSON or text for stdout, plus the exit status.
pub struct Output {
    pub stdout: String,
    pub code: u8,
}

impl Output {
    fn json(value: &impl Serialize) -> Self {
        Self { stdout: serde_json::to_string_pretty(value).expect("serializable") + "\n", code: 0 }
    }
}

pub fn effective_config(cli: &Cli) -> Result<Config, CliError> {
    let file = cli.config.clone().or_else(|| std::env::var_os(config::ENV_CONFIG).map(PathBuf::from));
    let mut cfg = config::load_from(file.as_deref(), |k| std::env::var(k).ok())?;
    if let Some(dir) = &cli.data_dir {
        cfg.data_dir = Some(dir.clone());
    }
    Ok(cfg)
}

/// Runs a parsed command against `config`.
pub fn execute(command: &Command, config: Config) -> Result<Output, CliError> {
    match command {
        Command::Corpus(CorpusCommand::Validate { file, format }) => corpus_validate(file, *format, &config),
        Command::Fixtures(cmd) => {
            let engine = EngineBuilder::new(config).build()?;
            match cmd {
                FixturesCommand::List => Ok(Output::json(&engine.fixtures().fixture_ids())),
                FixturesCommand::Detect { id, threshold } => engine
                    .detect_fixture(id, *threshold)
                    .map(|d| Output::json(&d))
                    .map_err(|e| CliError::domain("detect", e.to_string())),
            }
        }
        Command::Recommend(args) => {
            let engine = EngineBuilder::new(config).build()?;
            let snapshot = recommend(&engine, &args.inputs)?;
            Ok(Output::json(&snapshot))
        }
        Command::Explain(args) => explain(args, config),
        Command::Bench(BenchCommand::Tasks(args)) => bench_tasks(args, config),
        Command::Serve(_) => Err(CliError::env("serve", "serve runs through `run`")),
    }
}

/// Parses, executes and prints. Errors go to stdout as JSON.
pub fn run(cli: Cli) -> ExitCode {
    let result = effective_config(&cli).and_then(|cfg| match &cli.command {
        Command::Serve(args) => serve(args, cfg).map(|()| Output { stdout: String::new(), code: 0 }),
        cmd => execute(cmd, cfg),
    });
    let (text, code) = match result {
        Ok(out) => (out.stdout, out.code),
        Err(e) => (serde_json::to_string_pretty(&e.to_json()).unwrap() + "\n", e.exit_code()),
    };
    let _ = std::io::stdout().write_all(text.as_bytes());
    ExitCode::from(code)
}

#[derive(Debug, Serialize)]
pub struct ValidationReport {
    pub file: String,
    pub recipes: usize,
    pub clean: bool,
    pub violations: Vec<RecipeViolation>,
}

fn corpus_validate(file: &Path, format: Format, config: &Config) -> Result<Output, CliError> {
    let raw = std::fs::read_to_string(file)
        .map_err(|e| CliError::env("io", format!("cannot read {}: {e}", file.display())))?;
    let recipes: Vec<Recipe> = serde_json::from_str(&raw)
        .map_err(|e| CliError::env("parse", format!("{} is not a recipe list: {e}", file.display())))?;
    let vocab = match config.data_dir.as_ref().map(|d| d.join("vocab.json")).filter(|p| p.is_file()) {
        Some(p) => Vocabulary::load(p).map_err(|e| CliError::env("data", e.to_string()))?,
        None => Vocabulary::embedded(),
    };
    let violations = validate_recipes(&recipes, &vocab);
    let report = ValidationReport {
        file: file.display().to_string(),
        recipes: recipes.len(),
        clean: violations.is_empty(),
        violations,
    };
    let mut out = match format {
        Format::Json => Output::json(&report),
        Format::Text => {
            let mut s =
                format!("{}: {} recipes, {} violations\n", report.file, report.recipes, report.violations.len());
            for v in &report.violations {
                s.push_str(&format!("  {v}\n"));
            }
            Output { stdout: s, code: 0 }
        }
    };
    out.code = if report.clean { 0 } else { 1 };
    Ok(out)
}

fn load_profile(path: &Path, vocab: &Vocabulary) -> Result<UserProfile, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::env("io", format!("cannot read {}: {e}", path.display())))?;
    let draft: ProfileDraft = serde_json::from_str(&raw)
        .map_err(|e| CliError::env("parse", format!("{} is not a profile: {e}", path.display())))?;
    validate_profile(&draft, vocab).map_err(|violations| CliError::Domain {
        code: "invalid profile",
        message: "profile failed validation".into(),
        violations,
    })
}

fn ingredient_ids(raw: &[String], vocab: &Vocabulary) -> Result<BTreeSet<String>, CliError> {
    let mut ids = BTreeSet::new();
    let mut unknown = Vec::new();
    for name in raw.iter().filter(|n| !n.trim().is_empty()) {
        match vocab.normalize_ingredient_name(name) {
            Ok(Normalized::Known(id)) => {
                ids.insert(id);
            }
            _ => unknown.push(name.trim().to_string()),
        }
    }
    if !unknown.is_empty() {
        return Err(CliError::domain("unknown ingredient", unknown.join(", ")));
    }
    Ok(ids)
}

fn recommend(engine: &Engine, inputs: &Inputs) -> Result<pilar_core::explanation::RecommendationSnapshot, CliError> {
    let profile = load_profile(&inputs.profile, engine.vocab())?;
    let detected = match &inputs.fixture {
        Some(f) => engine.detect_fixture(f, None).map_err(|e| CliError::domain("detect", e.to_string()))?.ingredients,
        None => ingredient_ids(&inputs.ingredients, engine.vocab())?,
    };
    engine.recommend(&profile, &detected, inputs.k).map_err(|e| CliError::domain("recommend", e.to_string()))
}

fn llm_config(mut config: Config, mode: Mode, mock: bool) -> Result<Config, CliError> {
    if mock {
        config.llm.provider = LlmProvider::Mock;
    } else if mode == Mode::Llm && config.llm.provider != LlmProvider::Mock && config.llm.endpoint.is_none() {
        return Err(CliError::env(
            "config",
            format!("llm mode needs an endpoint (set {}) or --mock", config::ENV_LLM_ENDPOINT),
        ));
    }
    Ok(config)
}

fn explain(args: &ExplainArgs, config: Config) -> Result<Output, CliError> {
    let engine = EngineBuilder::new(llm_config(config, args.mode, args.mock)?).build()?;
    let snapshot = recommend(&engine, &args.inputs)?;
    let mut e = engine.explain(&snapshot, &args.recipe, &args.query, args.mode, args.strategy.as_deref())?;
    if !args.timing {
        e.latency_ms = None;
    }
    Ok(Output::json(&e))
}

fn bench_tasks(args: &BenchArgs, config: Config) -> Result<Output, CliError> {
    let engine = EngineBuilder::new(llm_config(config, args.mode, args.mock)?).build()?;
    let script = match &args.script {
        Some(p) => TaskScript::load(p)?,
        None => TaskScript::builtin(),
    };
    let clock = if args.fixed_clock { Clock::Fixed } else { Clock::System };
    let report = bench::run(&engine, &script, args.mode, args.repeat, clock)?;
    let json = serde_json::to_string_pretty(&report).expect("serializable") + "\n";
    if let Some(path) = &args.out {
        std::fs::write(path, &json)
            .map_err(|e| CliError::env("io", format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(Output {
        stdout: match args.format {
            Format::Json => json,
            Format::Text => bench::render_table(&report),
        },
        code: 0,
    })
}

fn serve(args: &ServeArgs, mut config: Config) -> Result<(), CliError> {
    if let Some(bind) = &args.bind {
        config.service.bind = bind.clone();
    }
    if let Some(log) = &args.log {
        config.service.log_path = Some(log.clone());
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::env("runtime", e.to_string()))?;
    rt.block_on(pilar_service::serve(config)).map_err(|e| CliError::env("serve", e.to_string()))
}
