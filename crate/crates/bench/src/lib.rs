//! Fixtures for the kernel benchmarks: realistic event text and embedded
//! sequences drawn from the synthetic benchmark's first source system.

use logmeta_core::experiment::Embedder;
use logmeta_core::model::LabeledSeq;
use logmeta_core::represent::HashingProvider;
use logmeta_core::synth::{generate_corpus, make_benchmark, BENCHMARK_SEED};
use logmeta_core::tasks::SplitRange;
use logmeta_core::LogSplit;
use std::sync::Arc;

pub fn corpus(n_events: usize) -> LogSplit {
    let profile = &make_benchmark(BENCHMARK_SEED)[0].profile;
    generate_corpus(profile, n_events).expect("benchmark profile is valid")
}

/// Raw event texts, in corpus order.
pub fn event_texts(n_events: usize) -> Vec<String> {
    corpus(n_events).events.into_iter().map(|e| e.text).collect()
}

/// The first `n_events` events, embedded with the hashing provider.
pub fn embedded(n_events: usize, dim: usize) -> LabeledSeq {
    let split = corpus(n_events);
    let mut e = Embedder::new(Arc::new(HashingProvider::new(dim, 0)));
    e.embed_range(&split, SplitRange { start: 0, len: n_events })
        .expect("hashing never misses")
}
