//! First-order MAML over source-system tasks and few-shot adaptation to
//! target-system tasks.
//!
//! Each meta-training epoch adapts a copy of the shared parameters to every
//! task's support split with plain gradient descent, takes the query-split
//! gradient at the adapted parameters, sums those gradients over tasks and
//! applies the sum to the shared parameters. The query gradient is used as
//! is (first-order): no derivative flows back through the inner steps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{DetectionReport, EvalError, Section, Timings};
use crate::model::{
    batch_loss, batch_loss_and_grad, batch_probabilities, make_windows, AdamWConfig, ClassWeighting, Gradients,
    LabeledSeq, LstmParams, ModelError, Optimizer, OptimizerKind, sgd_step_in_place,
};

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("meta-training needs at least one task")]
    NoTasks,
    #[error("task {0}: support and query must both be non-empty")]
    EmptySplit(String),
    #[error("invalid meta config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A (support, query) pair of embedded, labeled splits from one system.
#[derive(Debug, Clone)]
pub struct Task {
    pub task_id: String,
    pub system_id: String,
    pub support: LabeledSeq,
    pub query: LabeledSeq,
}

impl Task {
    fn check(&self) -> Result<(), MetaError> {
        if self.support.is_empty() || self.query.is_empty() {
            return Err(MetaError::EmptySplit(self.task_id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// Task-level (inner) learning rate.
    pub alpha: f64,
    /// Meta (outer) learning rate.
    pub beta: f64,
    /// Inner gradient steps during meta-training.
    pub inner_steps: usize,
    /// Fine-tuning steps on a target support split during meta-testing.
    pub test_inner_steps: usize,
    pub meta_epochs: usize,
    /// Window size.
    pub k: usize,
    /// Root seed; taken from the run rather than the config file.
    #[serde(skip)]
    pub seed: u64,
    pub weighting: ClassWeighting,
    /// Rule for the outer update.
    pub outer_optimizer: OptimizerKind,
    /// Rule for meta-testing fine-tuning.
    pub fine_tune_optimizer: OptimizerKind,
    pub adamw: AdamWConfig,
    pub threshold: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            alpha: 0.01,
            beta: 0.001,
            inner_steps: 5,
            test_inner_steps: 5,
            meta_epochs: 30,
            k: 100,
            seed: 0,
            weighting: ClassWeighting::InverseFrequency,
            outer_optimizer: OptimizerKind::AdamW,
            fine_tune_optimizer: OptimizerKind::Sgd,
            adamw: AdamWConfig::default(),
            threshold: 0.5,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        let bad = |m: String| Err(MetaError::InvalidConfig(m));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be finite and positive, got {}", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad(format!("beta must be finite and positive, got {}", self.beta));
        }
        if self.meta_epochs < 1 {
            return bad("meta_epochs must be at least 1".into());
        }
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        Ok(())
    }
}

/// Mean weighted loss and gradient over a whole split.
pub fn split_loss_and_grad(
    params: &LstmParams,
    split: &LabeledSeq,
    k: usize,
    weighting: ClassWeighting,
) -> Result<(f64, Gradients), ModelError> {
    let windows = make_windows(split, k)?;
    batch_loss_and_grad(params, &windows, weighting.weights(&split.labels))
}

pub fn split_loss(params: &LstmParams, split: &LabeledSeq, k: usize, weighting: ClassWeighting) -> Result<f64, ModelError> {
    let windows = make_windows(split, k)?;
    batch_loss(params, &windows, weighting.weights(&split.labels))
}

/// `steps` full-batch updates on `split` starting from a copy of `theta`.
pub fn fine_tune(
    theta: &LstmParams,
    split: &LabeledSeq,
    steps: usize,
    lr: f64,
    optimizer: OptimizerKind,
    config: &MetaConfig,
) -> Result<LstmParams, ModelError> {
    let mut params = theta.clone();
    let mut opt = Optimizer::new(optimizer, config.adamw, &params);
    for _ in 0..steps {
        let (_, g) = split_loss_and_grad(&params, split, config.k, config.weighting)?;
        opt.step(&mut params, &g, lr);
    }
    Ok(params)
}

/// Task-adapted parameters: `inner_steps` plain gradient-descent steps of
/// size `alpha` on the support split. `theta` is left untouched.
pub fn inner_adapt(theta: &LstmParams, support: &LabeledSeq, config: &MetaConfig) -> Result<LstmParams, ModelError> {
    inner_adapt_traced(theta, support, config).map(|(p, _)| p)
}

/// [`inner_adapt`] that also returns the support loss at `theta` when at
/// least one step was taken.
pub fn inner_adapt_traced(
    theta: &LstmParams,
    support: &LabeledSeq,
    config: &MetaConfig,
) -> Result<(LstmParams, Option<f64>), ModelError> {
    let windows = make_windows(support, config.k)?;
    let weights = config.weighting.weights(&support.labels);
    let mut params = theta.clone();
    let mut first = None;
    for _ in 0..config.inner_steps {
        let (l, g) = batch_loss_and_grad(&params, &windows, weights)?;
        first.get_or_insert(l);
        sgd_step_in_place(&mut params, &g, config.alpha);
    }
    Ok((params, first))
}

/// Per-task outcome of one meta-gradient evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskStep {
    pub support_loss: f64,
    pub query_loss: f64,
}

/// Sum over tasks of the query-split gradient at each task's adapted
/// parameters, in task order.
pub fn meta_gradient(
    theta: &LstmParams,
    tasks: &[Task],
    config: &MetaConfig,
) -> Result<(Gradients, Vec<TaskStep>), MetaError> {
    let per_task = tasks
        .par_iter()
        .map(|task| task_query_gradient(theta, task, config))
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = Gradients::zeros(theta.shape());
    let mut steps = Vec::with_capacity(per_task.len());
    for (g, s) in &per_task {
        total.add_assign(g);
        steps.push(*s);
    }
    Ok((total, steps))
}

/// First-order contribution of one task.
pub fn task_query_gradient(
    theta: &LstmParams,
    task: &Task,
    config: &MetaConfig,
) -> Result<(Gradients, TaskStep), MetaError> {
    task.check()?;
    let (adapted, first_loss) = inner_adapt_traced(theta, &task.support, config)?;
    let support_loss = match first_loss {
        Some(l) => l,
        None => split_loss(theta, &task.support, config.k, config.weighting)?,
    };
    let (query_loss, g) = split_loss_and_grad(&adapted, &task.query, config.k, config.weighting)?;
    Ok((g, TaskStep { support_loss, query_loss }))
}

/// Telemetry for one outer update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Sum over tasks of the query loss at adapted parameters.
    pub meta_loss: f64,
    pub tasks: Vec<TaskStep>,
    pub grad_norm: f64,
}

/// Runs `meta_epochs` outer updates and returns the meta-trained
/// parameters. `on_epoch` sees the stats of every epoch.
pub fn meta_train(
    theta0: &LstmParams,
    tasks: &[Task],
    config: &MetaConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<LstmParams, MetaError> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(MetaError::NoTasks);
    }
    let mut theta = theta0.clone();
    let mut opt = Optimizer::new(config.outer_optimizer, config.adamw, &theta);
    for epoch in 0..config.meta_epochs {
        let (g, steps) = meta_gradient(&theta, tasks, config)?;
        opt.step(&mut theta, &g, config.beta);
        on_epoch(&EpochStats {
            epoch,
            meta_loss: steps.iter().map(|s| s.query_loss).sum(),
            grad_norm: g.l2_norm(),
            tasks: steps,
        });
    }
    Ok(theta)
}

/// Pooled supervised training: each epoch sums the split gradients at the
/// current parameters and applies one outer update.
pub fn supervised_train(theta0: &LstmParams, splits: &[&LabeledSeq], config: &MetaConfig) -> Result<LstmParams, MetaError> {
    config.validate()?;
    let mut theta = theta0.clone();
    let mut opt = Optimizer::new(config.outer_optimizer, config.adamw, &theta);
    for _ in 0..config.meta_epochs {
        let grads = splits
            .par_iter()
            .map(|s| split_loss_and_grad(&theta, s, config.k, config.weighting).map(|(_, g)| g))
            .collect::<Result<Vec<_>, _>>()?;
        let mut total = Gradients::zeros(theta.shape());
        for g in &grads {
            total.add_assign(g);
        }
        opt.step(&mut theta, &total, config.beta);
    }
    Ok(theta)
}

/// Fine-tunes a copy of `theta_star` on the task's support split, then
/// predicts every query event. Representation time is not part of either
/// reported timing since the task arrives already embedded.
pub fn meta_test(theta_star: &LstmParams, task: &Task, config: &MetaConfig) -> Result<DetectionReport, MetaError> {
    config.validate()?;
    task.check()?;
    let mut timings = Timings::default();
    let adapted = timings.timed(Section::Train, || {
        fine_tune(
            theta_star,
            &task.support,
            config.test_inner_steps,
            config.alpha,
            config.fine_tune_optimizer,
            config,
        )
    })?;
    let probs = timings.timed(Section::Test, || {
        make_windows(&task.query, config.k).and_then(|w| batch_probabilities(&adapted, &w))
    })?;
    let predictions = probs.iter().map(|&p| p >= config.threshold).collect();
    let mut report = DetectionReport::new(task.task_id.clone(), predictions, &task.query.labels)?;
    report.train_time_s = timings.train_time_s();
    report.test_time_s = timings.test_time_s();
    Ok(report)
}
