//! Assembled pipeline: detection, ranking and explanation behind one handle.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, LlmProvider};
use crate::detect::{
    consolidate, fixture_detector_for, DetectError, DetectionFrame, Detector, FixtureDetector, FrameDetections,
    FrameSource, RemoteDetector,
};
use crate::domain::{Corpus, CorpusError, UserProfile};
use crate::explanation::{build_context, ExplainError, Explanation, Mode, RecommendationSnapshot};
use crate::llm::client::{GenerationParams, HttpLlm, LlmClient, MockLlm};
use crate::llm::prompt::{ExampleStore, ExamplesError};
use crate::recommend::{CorpusStore, RankError, Ranker, ScoringWeights};
use crate::router::strategy::CounterfactualStrategy;
use crate::router::{
    dispatch, recommendation_notice, ClassifyError, ExplanationStrategy, Intent, RuleSet, RulesError, StrategyInput,
    StrategyRegistry,
};
use crate::vocab::{VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error(transparent)]
    Examples(#[from] ExamplesError),
}

/// Per-frame detections plus the consolidated ingredient set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub frames: Vec<FrameDetections>,
    pub ingredients: BTreeSet<String>,
}

pub struct EngineBuilder {
    config: Config,
    llm: Option<Arc<dyn LlmClient>>,
    extra: Vec<Arc<dyn ExplanationStrategy>>,
    corpus: Option<Corpus>,
}

impl EngineBuilder {
    pub fn new(config: Config) -> Self {
        Self { config, llm: None, extra: Vec::new(), corpus: None }
    }

    /// Replaces the client chosen from the configuration.
    pub fn llm_client(mut self, client: Arc<dyn LlmClient>) -> Self {
        self.llm = Some(client);
        self
    }

    /// Registers an additional strategy, replacing any with the same name.
    pub fn strategy(mut self, strategy: Arc<dyn ExplanationStrategy>) -> Self {
        self.extra.push(strategy);
        self
    }

    /// Uses `corpus` instead of loading one from the data directory.
    pub fn corpus(mut self, corpus: Corpus) -> Self {
        self.corpus = Some(corpus);
        self
    }

    pub fn build(self) -> Result<Engine, EngineError> {
        let cfg = self.config;
        let dir = cfg.data_dir.as_deref();
        let vocab = match data_file(dir, "vocab.json") {
            Some(p) => Vocabulary::load(p)?,
            None => Vocabulary::embedded(),
        };
        let corpus = match (self.corpus, data_file(dir, "corpus.json")) {
            (Some(c), _) => c,
            (None, Some(p)) => Corpus::load(p, &vocab)?,
            (None, None) => Corpus::embedded(&vocab),
        };
        let rules = match data_file(dir, "rules.json") {
            Some(p) => RuleSet::load(p)?,
            None => RuleSet::embedded(),
        };
        let examples = match data_file(dir, "icl_examples.json") {
            Some(p) => ExampleStore::load(p)?,
            None => ExampleStore::embedded(),
        };
        examples.ensure_coverage(cfg.llm.k_icl)?;

        let llm: Arc<dyn LlmClient> = match self.llm {
            Some(c) => c,
            None => match (cfg.llm.effective_provider(), &cfg.llm.endpoint) {
                (LlmProvider::Http, Some(endpoint)) => Arc::new(HttpLlm::new(
                    endpoint.clone(),
                    cfg.llm.api_key.clone(),
                    Duration::from_millis(cfg.llm.timeout_ms),
                )),
                _ => Arc::new(MockLlm),
            },
        };
        let params = GenerationParams {
            temperature: cfg.llm.temperature,
            max_tokens: cfg.llm.max_tokens,
            model_id: cfg.llm.model.clone(),
        };
        let mut registry = StrategyRegistry::with_defaults(llm.clone(), Arc::new(examples), params, cfg.llm.k_icl);
        registry.register(Arc::new(CounterfactualStrategy {
            count: cfg.counterfactual.count,
            max_edits: cfg.counterfactual.max_edits,
            space: None,
        }));
        for s in self.extra {
            registry.register(s);
        }

        let remote =
            cfg.detection.endpoint.as_ref().map(|e| {
                RemoteDetector::new(e.clone(), Duration::from_millis(cfg.detection.timeout_ms), vocab.clone())
            });
        Ok(Engine {
            fixtures: fixture_detector_for(dir, vocab.clone()),
            remote,
            corpus: Arc::new(CorpusStore::new(corpus)),
            weights: cfg.weights(),
            rules,
            registry,
            llm,
            vocab,
            config: cfg,
        })
    }
}

fn data_file(dir: Option<&Path>, name: &str) -> Option<PathBuf> {
    dir.map(|d| d.join(name)).filter(|p| p.is_file())
}

pub struct Engine {
    config: Config,
    vocab: Vocabulary,
    corpus: Arc<CorpusStore>,
    weights: ScoringWeights,
    rules: RuleSet,
    registry: StrategyRegistry,
    llm: Arc<dyn LlmClient>,
    fixtures: FixtureDetector,
    remote: Option<RemoteDetector>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("strategies", &self.registry.names())
            .field("llm", &self.llm.name())
            .field("recipes", &self.corpus.snapshot().len())
            .finish()
    }
}

impl Engine {
    pub fn builder(config: Config) -> EngineBuilder {
        EngineBuilder::new(config)
    }

    /// Engine over the built-in data with default settings.
    pub fn offline() -> Self {
        EngineBuilder::new(Config::default()).build().expect("built-in data is valid")
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn corpus(&self) -> Arc<Corpus> {
        self.corpus.snapshot()
    }

    pub fn corpus_store(&self) -> &Arc<CorpusStore> {
        &self.corpus
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn registry(&self) -> &StrategyRegistry {
        &self.registry
    }

    pub fn llm_name(&self) -> &'static str {
        self.llm.name()
    }

    pub fn fixtures(&self) -> &FixtureDetector {
        &self.fixtures
    }

    pub fn default_k(&self) -> usize {
        self.config.scoring.k
    }

    pub fn default_threshold(&self) -> f64 {
        self.config.detection.threshold
    }

    pub fn detect_fixture(&self, fixture_id: &str, threshold: Option<f64>) -> Result<DetectionResult, DetectError> {
        let frames = self.fixtures.detect_all(fixture_id, threshold.unwrap_or(self.config.detection.threshold))?;
        Ok(self.consolidated(frames))
    }

    /// Sends image frames to the configured detector server.
    pub fn detect_images(
        &self,
        images: Vec<(String, Vec<u8>)>,
        threshold: Option<f64>,
    ) -> Result<DetectionResult, DetectError> {
        let Some(remote) = &self.remote else {
            return Err(DetectError::RemoteDetectorUnavailable {
                reason: "no detector endpoint configured".into(),
                retry_after_ms: 0,
            });
        };
        let threshold = threshold.unwrap_or(self.config.detection.threshold);
        let frames = images
            .into_iter()
            .enumerate()
            .map(|(i, (reference, bytes))| {
                let frame = DetectionFrame {
                    frame_id: format!("f{i}"),
                    source: FrameSource::Image { reference, bytes },
                    timestamp_ms: i as u64,
                };
                remote.detect(&frame, threshold)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.consolidated(frames))
    }

    fn consolidated(&self, frames: Vec<FrameDetections>) -> DetectionResult {
        let ingredients = consolidate(&frames, self.config.detection.window);
        DetectionResult { frames, ingredients }
    }

    pub fn recommend(
        &self,
        profile: &UserProfile,
        detected: &BTreeSet<String>,
        k: Option<usize>,
    ) -> Result<RecommendationSnapshot, RankError> {
        let corpus = self.corpus.snapshot();
        let result = Ranker::new(&corpus, &self.vocab, self.weights).rank(
            profile,
            detected,
            k.unwrap_or(self.config.scoring.k),
        )?;
        Ok(RecommendationSnapshot { profile: profile.clone(), detected: detected.clone(), result })
    }

    pub fn notice(&self, snapshot: &RecommendationSnapshot) -> Option<Explanation> {
        recommendation_notice(snapshot, &self.vocab)
    }

    pub fn classify(&self, query: &str) -> Result<Intent, ClassifyError> {
        self.rules.classify(query)
    }

    /// Classifies `query`, routes it and explains `recipe_id` against the
    /// stored recommendation. `latency_ms` covers the whole call.
    pub fn explain(
        &self,
        snapshot: &RecommendationSnapshot,
        recipe_id: &str,
        query: &str,
        mode: Mode,
        strategy: Option<&str>,
    ) -> Result<Explanation, ExplainError> {
        let started = Instant::now();
        let intent = self.classify(query).map_err(|ClassifyError::EmptyQuery| ExplainError::EmptyQuery)?;
        let ctx = build_context(snapshot, recipe_id, query, intent.kind)?;
        let corpus = self.corpus.snapshot();
        let input = StrategyInput { ctx: &ctx, snapshot, ranker: Ranker::new(&corpus, &self.vocab, self.weights) };
        let mut explanation = dispatch(&self.registry, &intent, mode, &input, strategy)?;
        explanation.latency_ms = Some(started.elapsed().as_secs_f64() * 1000.0);
        tracing::debug!(
            recipe = recipe_id,
            intent = %intent.kind,
            strategy = %explanation.strategy,
            latency_ms = explanation.latency_ms,
            "explained"
        );
        Ok(explanation)
    }
}
