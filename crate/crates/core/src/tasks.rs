//! Sampling of non-overlapping, consecutive log splits with bounded anomaly
//! fractions, and assembly of meta-training / meta-testing task layouts.
//!
//! A sampler draws a start offset uniformly from the positions where a
//! split of the requested length fits without touching a reserved range,
//! then accepts it only if its anomalous fraction lies in the inclusive
//! `[anomaly_min, anomaly_max]` interval. Accepted splits are reserved.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::LogSplit;
use crate::seed::{rng_for, Stream};

pub const DEFAULT_MAX_ATTEMPTS: usize = 10_000;

// Whole-task retries when the second split of a pair cannot be placed.
const PAIR_RETRIES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error(
        "no split of length {length} with anomaly fraction in [{min}, {max}] after {attempts} attempts \
         ({below} below, {above} above; observed {observed_min:.5}..{observed_max:.5})"
    )]
    ExhaustedAttempts {
        length: usize,
        min: f64,
        max: f64,
        attempts: usize,
        below: usize,
        above: usize,
        observed_min: f64,
        observed_max: f64,
    },
    #[error("no free room for a split of length {length} in a corpus of {corpus_len} events")]
    NoRoom { length: usize, corpus_len: usize },
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub length: usize,
    pub anomaly_min: f64,
    pub anomaly_max: f64,
}

impl SplitSpec {
    pub fn new(length: usize, anomaly_min: f64, anomaly_max: f64) -> Self {
        SplitSpec {
            length,
            anomaly_min,
            anomaly_max,
        }
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        if self.length < 1 {
            return Err(SampleError::InvalidSpec("length must be at least 1".into()));
        }
        if !(0.0 <= self.anomaly_min && self.anomaly_min <= self.anomaly_max && self.anomaly_max <= 1.0) {
            return Err(SampleError::InvalidSpec(format!(
                "need 0 <= min <= max <= 1, got [{}, {}]",
                self.anomaly_min, self.anomaly_max
            )));
        }
        Ok(())
    }

    pub fn accepts(&self, anomalies: usize) -> bool {
        let f = anomalies as f64 / self.length as f64;
        self.anomaly_min <= f && f <= self.anomaly_max
    }
}

/// Named support/query presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitProfile {
    /// Meta-training splits: 10,000 events, 0.01%-0.5% anomalous.
    Source,
    /// Low-anomaly target: support 2,000 @ 0.2%-0.5%, query 10,000 @ 0.01%-0.5%.
    Tbird,
    /// High-anomaly target: support 2,000 @ 0.2%-0.7%, query 10,000 @ 0.01%-0.7%.
    Spirit,
}

impl SplitProfile {
    /// (support, query) specs.
    pub fn specs(&self) -> (SplitSpec, SplitSpec) {
        match self {
            SplitProfile::Source => (SplitSpec::new(10_000, 0.0001, 0.005), SplitSpec::new(10_000, 0.0001, 0.005)),
            SplitProfile::Tbird => (SplitSpec::new(2_000, 0.002, 0.005), SplitSpec::new(10_000, 0.0001, 0.005)),
            SplitProfile::Spirit => (SplitSpec::new(2_000, 0.002, 0.007), SplitSpec::new(10_000, 0.0001, 0.007)),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "source" => Some(SplitProfile::Source),
            "tbird" => Some(SplitProfile::Tbird),
            "spirit" => Some(SplitProfile::Spirit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub seed: u64,
    pub max_attempts: usize,
    /// Half-open `[start, end)` position ranges that must not be used.
    pub reserved_ranges: Vec<(u64, u64)>,
}

impl SamplerConfig {
    pub fn new(seed: u64) -> Self {
        SamplerConfig {
            seed,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            reserved_ranges: Vec::new(),
        }
    }
}

/// `[start, start + len)` by corpus position. Serialized as `[start, len]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u64; 2]", into = "[u64; 2]")]
pub struct SplitRange {
    pub start: usize,
    pub len: usize,
}

impl SplitRange {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn overlaps(&self, other: &SplitRange) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}

impl From<[u64; 2]> for SplitRange {
    fn from(v: [u64; 2]) -> Self {
        SplitRange {
            start: v[0] as usize,
            len: v[1] as usize,
        }
    }
}

impl From<SplitRange> for [u64; 2] {
    fn from(r: SplitRange) -> Self {
        [r.start as u64, r.len as u64]
    }
}

/// Stateful sampler over one corpus's labels.
#[derive(Debug, Clone)]
pub struct SplitSampler {
    /// `prefix[i]` = anomalies among the first `i` events.
    prefix: Vec<u32>,
    /// Sorted, non-overlapping reserved ranges.
    reserved: Vec<(usize, usize)>,
    rng: ChaCha8Rng,
    max_attempts: usize,
}

impl SplitSampler {
    pub fn new(labels: &[bool], rng: ChaCha8Rng, max_attempts: usize) -> Self {
        let mut prefix = Vec::with_capacity(labels.len() + 1);
        prefix.push(0u32);
        let mut acc = 0u32;
        for &l in labels {
            acc += l as u32;
            prefix.push(acc);
        }
        SplitSampler {
            prefix,
            reserved: Vec::new(),
            rng,
            max_attempts: max_attempts.max(1),
        }
    }

    pub fn corpus_len(&self) -> usize {
        self.prefix.len() - 1
    }

    pub fn anomalies_in(&self, r: SplitRange) -> usize {
        (self.prefix[r.end()] - self.prefix[r.start]) as usize
    }

    pub fn reserve(&mut self, start: usize, end: usize) {
        let end = end.min(self.corpus_len());
        if start >= end {
            return;
        }
        self.reserved.push((start, end));
        self.reserved.sort_unstable();
        let mut merged: Vec<(usize, usize)> = Vec::with_capacity(self.reserved.len());
        for &(s, e) in &self.reserved {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        self.reserved = merged;
    }

    fn release(&mut self, r: SplitRange) {
        // Only ever called right after reserving `r` on its own, so it is
        // a sub-range of exactly one merged interval.
        let idx = self
            .reserved
            .iter()
            .position(|&(s, e)| s <= r.start && r.end() <= e)
            .expect("released range was reserved");
        let (s, e) = self.reserved.remove(idx);
        if s < r.start {
            self.reserved.push((s, r.start));
        }
        if r.end() < e {
            self.reserved.push((r.end(), e));
        }
        self.reserved.sort_unstable();
    }

    pub fn reserved(&self) -> &[(usize, usize)] {
        &self.reserved
    }

    fn free_gaps(&self) -> Vec<(usize, usize)> {
        let mut gaps = Vec::new();
        let mut cursor = 0;
        for &(s, e) in &self.reserved {
            if s > cursor {
                gaps.push((cursor, s));
            }
            cursor = cursor.max(e);
        }
        if cursor < self.corpus_len() {
            gaps.push((cursor, self.corpus_len()));
        }
        gaps
    }

    /// Inclusive intervals of admissible start offsets: the split fits in a
    /// free gap inside `window` and leaves a free gap of at least
    /// `partner_len` somewhere in `window`.
    fn candidate_starts(&self, len: usize, partner_len: usize, window: (usize, usize)) -> Vec<(usize, usize)> {
        let gaps: Vec<(usize, usize)> = self
            .free_gaps()
            .into_iter()
            .map(|(a, b)| (a.max(window.0), b.min(window.1)))
            .filter(|(a, b)| a < b)
            .collect();
        let roomy = gaps.iter().filter(|(a, b)| b - a >= partner_len).count();
        let mut out = Vec::new();
        for &(a, b) in &gaps {
            if b - a < len {
                continue;
            }
            let own_roomy = b - a >= partner_len;
            let unconstrained = partner_len == 0 || roomy > own_roomy as usize;
            let mut pieces = Vec::with_capacity(2);
            if unconstrained {
                pieces.push((a, b - len));
            } else {
                if b - a >= len + partner_len {
                    pieces.push((a, b - len - partner_len));
                    pieces.push((a + partner_len, b - len));
                }
            }
            out.extend(pieces.into_iter().filter(|(lo, hi)| lo <= hi));
        }
        // The two pieces of one gap may overlap; merge so draws stay uniform.
        out.sort_unstable();
        let mut merged: Vec<(usize, usize)> = Vec::with_capacity(out.len());
        for (lo, hi) in out {
            match merged.last_mut() {
                Some(last) if lo <= last.1 + 1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        merged
    }

    /// Draws and reserves one split.
    ///
    /// `window` confines the split to `[window.0, window.1)`; `partner_len`
    /// keeps a free gap of that size available there afterwards.
    pub fn sample(
        &mut self,
        spec: &SplitSpec,
        window: Option<(usize, usize)>,
        partner_len: usize,
    ) -> Result<SplitRange, SampleError> {
        spec.validate()?;
        let window = window.unwrap_or((0, self.corpus_len()));
        let candidates = self.candidate_starts(spec.length, partner_len, window);
        let total: usize = candidates.iter().map(|(lo, hi)| hi - lo + 1).sum();
        if total == 0 {
            return Err(SampleError::NoRoom {
                length: spec.length,
                corpus_len: self.corpus_len(),
            });
        }

        let (mut below, mut above) = (0, 0);
        let (mut seen_min, mut seen_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..self.max_attempts {
            let mut k = self.rng.gen_range(0..total);
            let mut start = 0;
            for &(lo, hi) in &candidates {
                let n = hi - lo + 1;
                if k < n {
                    start = lo + k;
                    break;
                }
                k -= n;
            }
            let r = SplitRange { start, len: spec.length };
            let a = self.anomalies_in(r);
            let f = a as f64 / spec.length as f64;
            seen_min = seen_min.min(f);
            seen_max = seen_max.max(f);
            if spec.accepts(a) {
                self.reserve(r.start, r.end());
                return Ok(r);
            } else if f < spec.anomaly_min {
                below += 1;
            } else {
                above += 1;
            }
        }
        Err(SampleError::ExhaustedAttempts {
            length: spec.length,
            min: spec.anomaly_min,
            max: spec.anomaly_max,
            attempts: self.max_attempts,
            below,
            above,
            observed_min: seen_min,
            observed_max: seen_max,
        })
    }

    /// Support then query, retrying the pair if the query cannot be placed
    /// after the support was accepted.
    fn sample_pair(
        &mut self,
        support: &SplitSpec,
        query: &SplitSpec,
        window: Option<(usize, usize)>,
    ) -> Result<(SplitRange, SplitRange), SampleError> {
        let mut last_err = None;
        for _ in 0..PAIR_RETRIES {
            let s = self.sample(support, window, query.length)?;
            let q = match window {
                Some(_) => self.sample(query, window, 0).or_else(|_| self.sample(query, None, 0)),
                None => self.sample(query, None, 0),
            };
            match q {
                Ok(q) => return Ok((s, q)),
                Err(e) => {
                    self.release(s);
                    last_err = Some(e);
                }
            }
        }
        Err(last_err.expect("at least one attempt"))
    }
}

/// Draws one split from `corpus`, returning it with the updated reserved
/// ranges (in `seq` units).
pub fn sample_split(
    corpus: &LogSplit,
    spec: &SplitSpec,
    config: &SamplerConfig,
) -> Result<(LogSplit, Vec<(u64, u64)>), SampleError> {
    let mut sampler = SplitSampler::new(&corpus.labels(), rng_for(config.seed, Stream::Sampler, 0), config.max_attempts);
    let base = corpus.start_seq;
    for &(s, e) in &config.reserved_ranges {
        sampler.reserve(s.saturating_sub(base) as usize, e.saturating_sub(base) as usize);
    }
    let r = sampler.sample(spec, None, 0)?;
    let reserved = sampler
        .reserved()
        .iter()
        .map(|&(s, e)| (s as u64 + base, e as u64 + base))
        .collect();
    Ok((corpus.slice(r.start, r.len), reserved))
}

/// Position ranges of one task's support and query splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskLayout {
    pub task_id: String,
    pub system_id: String,
    pub support: SplitRange,
    pub query: SplitRange,
    pub seed: u64,
}

/// Everything needed to rebuild a task set from canonical corpora.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub seed: u64,
    pub tasks: Vec<TaskLayout>,
}

/// A corpus's identity and labels, which is all the sampler needs.
#[derive(Debug, Clone, Copy)]
pub struct CorpusLabels<'a> {
    pub system_id: &'a str,
    pub labels: &'a [bool],
}

/// One task per source corpus, support and query both drawn with `spec`.
pub fn build_meta_training_tasks(
    sources: &[CorpusLabels<'_>],
    spec: &SplitSpec,
    config: &SamplerConfig,
) -> Result<Vec<TaskLayout>, SampleError> {
    sources
        .iter()
        .enumerate()
        .map(|(i, src)| {
            let seed = config.seed;
            let mut sampler = SplitSampler::new(src.labels, rng_for(seed, Stream::Sampler, i as u64), config.max_attempts);
            for &(s, e) in &config.reserved_ranges {
                sampler.reserve(s as usize, e as usize);
            }
            let (support, query) = sampler.sample_pair(spec, spec, None)?;
            Ok(TaskLayout {
                task_id: format!("{}-train-{i:02}", src.system_id),
                system_id: src.system_id.to_string(),
                support,
                query,
                seed,
            })
        })
        .collect()
}

/// `count` tasks from one target corpus with starts spread over `count`
/// equal-width strata (falling back to the whole corpus when a stratum has
/// no admissible split).
pub fn build_meta_testing_tasks(
    target: CorpusLabels<'_>,
    count: usize,
    support_spec: &SplitSpec,
    query_spec: &SplitSpec,
    config: &SamplerConfig,
) -> Result<Vec<TaskLayout>, SampleError> {
    let n = target.labels.len();
    let mut sampler = SplitSampler::new(target.labels, rng_for(config.seed, Stream::Sampler, 1 << 32), config.max_attempts);
    for &(s, e) in &config.reserved_ranges {
        sampler.reserve(s as usize, e as usize);
    }
    let mut tasks = Vec::with_capacity(count);
    for j in 0..count {
        let window = (j * n / count, (j + 1) * n / count);
        let (support, query) = sampler
            .sample_pair(support_spec, query_spec, Some(window))
            .or_else(|_| sampler.sample_pair(support_spec, query_spec, None))?;
        tasks.push(TaskLayout {
            task_id: format!("{}-test-{j:02}", target.system_id),
            system_id: target.system_id.to_string(),
            support,
            query,
            seed: config.seed,
        });
    }
    Ok(tasks)
}

/// Stratum index of each query start for `count` equal-width strata.
pub fn query_strata(tasks: &[TaskLayout], corpus_len: usize) -> Vec<usize> {
    let count = tasks.len().max(1);
    tasks
        .iter()
        .map(|t| (t.query.start * count / corpus_len.max(1)).min(count - 1))
        .collect()
}
