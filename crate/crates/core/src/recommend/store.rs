use std::collections::BTreeSet;
use std::sync::{Arc, RwLock};

use super::{RankResult, Ranker, RecommendError, Recommender, ScoringWeights};
use crate::domain::{Corpus, UserProfile};
use crate::vocab::Vocabulary;

/// Read-mostly corpus holder. Readers clone the current `Arc`; a reload swaps
/// the whole snapshot so in-flight rankings keep the corpus they started with.
#[derive(Debug)]
pub struct CorpusStore {
    current: RwLock<Arc<Corpus>>,
}

impl CorpusStore {
    pub fn new(corpus: Corpus) -> Self {
        Self { current: RwLock::new(Arc::new(corpus)) }
    }

    pub fn snapshot(&self) -> Arc<Corpus> {
        self.current.read().expect("corpus lock poisoned").clone()
    }

    pub fn replace(&self, corpus: Corpus) -> Arc<Corpus> {
        let next = Arc::new(corpus);
        *self.current.write().expect("corpus lock poisoned") = next.clone();
        next
    }
}

/// Ranks against a local corpus with the transparent scorer.
pub struct LocalRecommender {
    store: Arc<CorpusStore>,
    vocab: Vocabulary,
    weights: ScoringWeights,
}

impl LocalRecommender {
    pub fn new(store: Arc<CorpusStore>, vocab: Vocabulary, weights: ScoringWeights) -> Self {
        Self { store, vocab, weights }
    }
}

impl Recommender for LocalRecommender {
    fn name(&self) -> &'static str {
        "local"
    }

    fn rank(&self, profile: &UserProfile, detected: &BTreeSet<String>, k: usize) -> Result<RankResult, RecommendError> {
        let corpus = self.store.snapshot();
        Ok(Ranker::new(&corpus, &self.vocab, self.weights).rank(profile, detected, k)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reload_swaps_snapshot_without_disturbing_readers() {
        let vocab = Vocabulary::embedded();
        let store = CorpusStore::new(Corpus::embedded(&vocab));
        let before = store.snapshot();
        let small = Corpus::new(before.recipes()[..3].to_vec(), &vocab).unwrap();
        store.replace(small);
        assert_eq!(before.len(), Corpus::embedded(&vocab).len());
        assert_eq!(store.snapshot().len(), 3);
    }

    #[test]
    fn concurrent_readers_see_a_whole_corpus() {
        let vocab = Vocabulary::embedded();
        let full = Corpus::embedded(&vocab);
        let n_full = full.len();
        let store = Arc::new(CorpusStore::new(full));
        let small = Corpus::new(store.snapshot().recipes()[..5].to_vec(), &vocab).unwrap();
        std::thread::scope(|s| {
            for _ in 0..4 {
                let store = store.clone();
                s.spawn(move || {
                    for _ in 0..200 {
                        let n = store.snapshot().len();
                        assert!(n == n_full || n == 5);
                    }
                });
            }
            store.replace(small);
        });
    }
}
