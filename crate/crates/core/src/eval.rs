//! Event-level confusion counting, precision/recall/F1, aggregation over
//! tasks and train/test timing.
//!
//! The anomalous class is the positive class. A metric whose denominator is
//! zero is `None` (serialized as JSON `null`), never a number.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction/label length mismatch: {pred} vs {truth}")]
    LengthMismatch { pred: usize, truth: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&self, other: &Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

pub fn confusion(pred: &[bool], truth: &[bool]) -> Result<Confusion, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let mut c = Confusion::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Precision = TP/(TP+FP), Recall = TP/(TP+FN), F1 = 2PR/(P+R). F1 is
/// defined only when both P and R are defined and nonzero.
pub fn metrics(c: &Confusion) -> Metrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p > 0.0 && r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Metrics { precision, recall, f1 }
}

/// Outcome of adapting to and evaluating one task.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub task_id: String,
    pub predictions: Vec<bool>,
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub train_time_s: f64,
    pub test_time_s: f64,
}

impl DetectionReport {
    pub fn new(task_id: impl Into<String>, predictions: Vec<bool>, truth: &[bool]) -> Result<Self, EvalError> {
        let confusion = confusion(&predictions, truth)?;
        Ok(DetectionReport {
            task_id: task_id.into(),
            predictions,
            confusion,
            metrics: metrics(&confusion),
            train_time_s: 0.0,
            test_time_s: 0.0,
        })
    }

    pub fn to_file(&self, with_timings: bool) -> ReportFile {
        ReportFile {
            task_id: self.task_id.clone(),
            confusion: self.confusion,
            precision: self.metrics.precision,
            recall: self.metrics.recall,
            f1: self.metrics.f1,
            train_time_s: with_timings.then_some(self.train_time_s),
            test_time_s: with_timings.then_some(self.test_time_s),
        }
    }
}

/// Serialized per-task report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub task_id: String,
    pub confusion: Confusion,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub train_time_s: Option<f64>,
    pub test_time_s: Option<f64>,
}

/// A metric as a percentage rounded to two decimals.
pub fn pct(v: Option<f64>) -> Option<f64> {
    v.map(|x| (x * 10_000.0).round() / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroSummary {
    pub confusion: Confusion,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub precision_pct: Option<f64>,
    pub recall_pct: Option<f64>,
    pub f1_pct: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedCounts {
    pub precision: usize,
    pub recall: usize,
    pub f1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSummary {
    /// Means over tasks where the metric is defined.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub precision_pct: Option<f64>,
    pub recall_pct: Option<f64>,
    pub f1_pct: Option<f64>,
    /// Tasks excluded from each mean.
    pub undefined: UndefinedCounts,
    /// Mean F1 with undefined tasks scored as 0; the stricter figure used
    /// when comparing runs.
    pub f1_undefined_as_zero: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub train_total_s: f64,
    pub test_total_s: f64,
    pub train_mean_s: f64,
    pub test_mean_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tasks: usize,
    pub micro: MicroSummary,
    #[serde(rename = "macro")]
    pub macro_: MacroSummary,
    pub timing: Option<TimingSummary>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut undefined = 0usize;
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => undefined += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), undefined)
}

/// Micro (pooled confusion) and macro (mean of defined per-task metrics)
/// aggregates plus timings. Panics on an empty slice.
pub fn aggregate(reports: &[DetectionReport]) -> Summary {
    assert!(!reports.is_empty(), "aggregate needs at least one report");
    let pooled = reports.iter().fold(Confusion::default(), |acc, r| acc.merge(&r.confusion));
    let micro = metrics(&pooled);
    let (p, up) = mean_defined(reports.iter().map(|r| r.metrics.precision));
    let (r, ur) = mean_defined(reports.iter().map(|r| r.metrics.recall));
    let (f, uf) = mean_defined(reports.iter().map(|r| r.metrics.f1));
    let n = reports.len() as f64;
    let f1_zero = reports.iter().map(|r| r.metrics.f1.unwrap_or(0.0)).sum::<f64>() / n;
    let train_total: f64 = reports.iter().map(|r| r.train_time_s).sum();
    let test_total: f64 = reports.iter().map(|r| r.test_time_s).sum();
    Summary {
        tasks: reports.len(),
        micro: MicroSummary {
            confusion: pooled,
            precision: micro.precision,
            recall: micro.recall,
            f1: micro.f1,
            precision_pct: pct(micro.precision),
            recall_pct: pct(micro.recall),
            f1_pct: pct(micro.f1),
        },
        macro_: MacroSummary {
            precision: p,
            recall: r,
            f1: f,
            precision_pct: pct(p),
            recall_pct: pct(r),
            f1_pct: pct(f),
            undefined: UndefinedCounts {
                precision: up,
                recall: ur,
                f1: uf,
            },
            f1_undefined_as_zero: f1_zero,
        },
        timing: Some(TimingSummary {
            train_total_s: train_total,
            test_total_s: test_total,
            train_mean_s: train_total / n,
            test_mean_s: test_total / n,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    /// Building event representations; never counted as training time.
    Represent,
    Train,
    Test,
}

/// Wall time of `f` on the monotonic clock.
pub fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Accumulated time per section.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    pub represent_s: f64,
    pub train_s: f64,
    pub test_s: f64,
}

impl Timings {
    pub fn timed<R>(&mut self, section: Section, f: impl FnOnce() -> R) -> R {
        let (out, secs) = timed(f);
        self.add(section, secs);
        out
    }

    pub fn add(&mut self, section: Section, secs: f64) {
        match section {
            Section::Represent => self.represent_s += secs,
            Section::Train => self.train_s += secs,
            Section::Test => self.test_s += secs,
        }
    }

    /// Training time with representation construction excluded.
    pub fn train_time_s(&self) -> f64 {
        self.train_s
    }

    pub fn test_time_s(&self) -> f64 {
        self.test_s
    }
}
