//! Brute-force reference implementations shared by the property tests and
//! the acceptance suite.

#![allow(dead_code)]

use logmeta_core::model::{
    backward, forward, loss, make_windows, ClassWeights, Features, LabeledSeq, LstmParams, ModelShape,
};
use logmeta_core::represent::CONTINUATION_PREFIX;
use logmeta_core::tasks::{SplitRange, SplitSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const UNK: &str = "[UNK]";

/// Every way of cutting `word` into contiguous non-empty pieces.
pub fn compositions(word: &[char]) -> Vec<Vec<String>> {
    let n = word.len();
    (0u32..1 << (n - 1))
        .map(|mask| {
            let mut pieces = Vec::new();
            let mut start = 0;
            for i in 1..=n {
                if i == n || mask & (1 << (i - 1)) != 0 {
                    pieces.push(word[start..i].iter().collect::<String>());
                    start = i;
                }
            }
            pieces
        })
        .collect()
}

fn vocab_key(piece: &str, first: bool) -> String {
    if first {
        piece.to_string()
    } else {
        format!("{CONTINUATION_PREFIX}{piece}")
    }
}

/// The greedy segmentation is the composition in which every piece is in
/// the vocabulary and no longer vocabulary piece starts at the same
/// offset. Found by exhaustive search; none means the word is unknown.
pub fn reference_wordpiece(text: &str, vocab: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut found = None;
        for comp in compositions(&chars) {
            let mut offset = 0;
            let ok = comp.iter().enumerate().all(|(i, piece)| {
                let key = vocab_key(piece, i == 0);
                let rest: String = chars[offset..].iter().collect();
                let plen = piece.chars().count();
                offset += plen;
                vocab.contains(&key)
                    && !vocab.iter().any(|v| {
                        let body = if i == 0 {
                            (!v.starts_with(CONTINUATION_PREFIX)).then_some(v.as_str())
                        } else {
                            v.strip_prefix(CONTINUATION_PREFIX)
                        };
                        body.is_some_and(|b| b.chars().count() > plen && rest.starts_with(b))
                    })
            });
            if ok {
                found = Some(comp.iter().enumerate().map(|(i, p)| vocab_key(p, i == 0)).collect::<Vec<_>>());
                break;
            }
        }
        match found {
            Some(toks) => out.extend(toks),
            None => out.push(UNK.to_string()),
        }
    }
    out
}

/// Random vocabulary of 1-3 letter pieces over `{a, b, c}`, some marked as
/// continuations.
pub fn random_toy_vocab(rng: &mut impl Rng) -> Vec<String> {
    let mut v: Vec<String> = (0..rng.gen_range(1..14))
        .map(|_| {
            let body: String = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(b'a'..=b'c') as char).collect();
            if rng.gen_bool(0.5) {
                format!("{CONTINUATION_PREFIX}{body}")
            } else {
                body
            }
        })
        .collect();
    v.sort();
    v.dedup();
    v
}

pub fn random_toy_text(rng: &mut impl Rng) -> String {
    (0..rng.gen_range(1..=3))
        .map(|_| (0..rng.gen_range(1..=7)).map(|_| rng.gen_range(b'a'..=b'c') as char).collect::<String>())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Precision, recall and F1 from explicit counting; `None` where a
/// denominator is zero or F1 has no true positives.
pub fn counted_metrics(pred: &[bool], truth: &[bool]) -> (Option<f64>, Option<f64>, Option<f64>) {
    let count = |p: bool, t: bool| pred.iter().zip(truth).filter(|&(&a, &b)| a == p && b == t).count() as f64;
    let (tp, fp, fn_) = (count(true, true), count(true, false), count(false, true));
    let p = (tp + fp > 0.0).then(|| tp / (tp + fp));
    let r = (tp + fn_ > 0.0).then(|| tp / (tp + fn_));
    let f = (tp > 0.0).then(|| 2.0 * tp / (2.0 * tp + fp + fn_));
    (p, r, f)
}

pub fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

/// Checks one sampled split by scanning the labels and a taken-position
/// mask, marking the split's positions as taken.
pub fn check_split(labels: &[bool], spec: &SplitSpec, r: SplitRange, taken: &mut [bool]) -> Result<(), String> {
    if r.len != spec.length {
        return Err(format!("{r:?}: length {} != {}", r.len, spec.length));
    }
    if r.start + r.len > labels.len() {
        return Err(format!("{r:?}: past the corpus end {}", labels.len()));
    }
    let anomalies = labels[r.start..r.start + r.len].iter().filter(|&&b| b).count();
    let f = anomalies as f64 / spec.length as f64;
    if !(spec.anomaly_min <= f && f <= spec.anomaly_max) {
        return Err(format!("{r:?}: fraction {f} outside [{}, {}]", spec.anomaly_min, spec.anomaly_max));
    }
    for (i, t) in taken[r.start..r.start + r.len].iter_mut().enumerate() {
        if *t {
            return Err(format!("{r:?}: position {} already used", r.start + i));
        }
        *t = true;
    }
    Ok(())
}

pub const FD_EPS: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn random_seq(rng: &mut ChaCha8Rng, n: usize, dim: usize, density: f64) -> LabeledSeq {
    LabeledSeq {
        start_seq: 0,
        inputs: (0..n)
            .map(|_| {
                let v: Vec<f32> = (0..dim)
                    .map(|_| if rng.gen_bool(density) { rng.gen_range(-1.0f32..1.0) } else { 0.0 })
                    .collect();
                Features::from_dense(&v)
            })
            .collect(),
        labels: (0..n).map(|_| rng.gen_bool(0.4)).collect(),
    }
}

fn window_loss(params: &LstmParams, seq: &LabeledSeq, weights: ClassWeights) -> f64 {
    let w = make_windows(seq, seq.len()).unwrap();
    let (pred, _) = forward(params, &w[0]).unwrap();
    loss(&pred, w[0].labels, weights)
}

/// Worst relative error between the analytic gradient of one random
/// window (length 1..=`max_len`) and central differences, over every
/// parameter.
pub fn gradient_check(seed: u64, shape: ModelShape, max_len: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.gen_range(1..=max_len);
    let seq = random_seq(&mut rng, len, shape.embedding_dim, 0.7);
    let mut params = LstmParams::init(shape, &mut rng);
    // Non-trivial biases so every gate path is exercised.
    for v in params.as_mut_slice().iter_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
    let weights = ClassWeights {
        normal: rng.gen_range(0.5..2.0),
        anomalous: rng.gen_range(0.5..4.0),
    };
    let windows = make_windows(&seq, len).unwrap();
    let (_, cache) = forward(&params, &windows[0]).unwrap();
    let grads = backward(&params, &windows[0], &cache, weights).unwrap();

    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = params.as_slice()[i];
        params.as_mut_slice()[i] = orig + FD_EPS;
        let up = window_loss(&params, &seq, weights);
        params.as_mut_slice()[i] = orig - FD_EPS;
        let down = window_loss(&params, &seq, weights);
        params.as_mut_slice()[i] = orig;
        worst = worst.max(rel_err(grads.as_slice()[i], (up - down) / (2.0 * FD_EPS)));
    }
    worst
}
