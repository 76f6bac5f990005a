//! Fixed-window LSTM with a two-class softmax head, and its exact gradient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::{Gradients, LstmParams, ModelShape, CLASSES};
use super::ModelError;
use crate::represent::EventEmbedding;

/// Sparse copy of an event embedding; zero coordinates are skipped by the
/// input projection and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    dim: usize,
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl Features {
    pub fn from_dense(values: &[f32]) -> Self {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for (i, &v) in values.iter().enumerate() {
            if v != 0.0 {
                idx.push(i as u32);
                val.push(v as f64);
            }
        }
        Features {
            dim: values.len(),
            idx,
            val,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx.iter().map(|&i| i as usize).zip(self.val.iter().copied())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.nonzeros() {
            out[i] = v;
        }
        out
    }
}

impl From<&EventEmbedding> for Features {
    fn from(e: &EventEmbedding) -> Self {
        Features::from_dense(&e.values)
    }
}

/// Embedded, labeled run of consecutive events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSeq {
    pub start_seq: u64,
    pub inputs: Vec<Features>,
    pub labels: Vec<bool>,
}

impl LabeledSeq {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }
}

/// Up to `k` consecutive events; recurrence starts from zero state.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub inputs: &'a [Features],
    pub labels: &'a [bool],
    pub start_seq: u64,
}

impl Window<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Non-overlapping windows of `k` events in order; the last one may be
/// shorter.
pub fn make_windows(seq: &LabeledSeq, k: usize) -> Result<Vec<Window<'_>>, ModelError> {
    if k < 1 {
        return Err(ModelError::InvalidK(k));
    }
    assert_eq!(seq.inputs.len(), seq.labels.len(), "inputs and labels must align");
    Ok(seq
        .inputs
        .chunks(k)
        .zip(seq.labels.chunks(k))
        .enumerate()
        .map(|(j, (inputs, labels))| Window {
            inputs,
            labels,
            start_seq: seq.start_seq + (j * k) as u64,
        })
        .collect())
}

/// Per-event class probabilities for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub prob_anomalous: Vec<f64>,
}

impl Prediction {
    pub fn prob_normal(&self, i: usize) -> f64 {
        1.0 - self.prob_anomalous[i]
    }

    /// Anomalous iff `prob_anomalous >= threshold`.
    pub fn predicted(&self, threshold: f64) -> Vec<bool> {
        self.prob_anomalous.iter().map(|&p| p >= threshold).collect()
    }
}

/// Loss weights per true class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub normal: f64,
    pub anomalous: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights {
        normal: 1.0,
        anomalous: 1.0,
    };

    /// `n / (2 * count_c)` per class, each count floored at 1.
    pub fn inverse_frequency(labels: &[bool]) -> Self {
        let n = labels.len().max(1) as f64;
        let anomalous = labels.iter().filter(|l| **l).count();
        let normal = labels.len() - anomalous;
        ClassWeights {
            normal: n / (2.0 * normal.max(1) as f64),
            anomalous: n / (2.0 * anomalous.max(1) as f64),
        }
    }

    pub fn for_label(&self, anomalous: bool) -> f64 {
        if anomalous {
            self.anomalous
        } else {
            self.normal
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassWeighting {
    Uniform,
    #[default]
    InverseFrequency,
}

impl ClassWeighting {
    pub fn weights(&self, labels: &[bool]) -> ClassWeights {
        match self {
            ClassWeighting::Uniform => ClassWeights::UNIT,
            ClassWeighting::InverseFrequency => ClassWeights::inverse_frequency(labels),
        }
    }
}

/// Activations kept from [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Activated gates per step, `[i | f | g | o]`, each `H` wide.
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    hidden: Vec<f64>,
    /// Log-probabilities `[normal, anomalous]` per step.
    log_probs: Vec<[f64; CLASSES]>,
}

impl ForwardCache {
    /// Per-event log-probabilities `[normal, anomalous]`.
    pub fn log_probs(&self) -> &[[f64; CLASSES]] {
        &self.log_probs
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_shape(shape: ModelShape, window: &Window<'_>) -> Result<(), ModelError> {
    if window.inputs.len() != window.labels.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} inputs vs {} labels",
            window.inputs.len(),
            window.labels.len()
        )));
    }
    if let Some(bad) = window.inputs.iter().find(|f| f.dim() != shape.embedding_dim) {
        return Err(ModelError::ShapeMismatch(format!(
            "event embedding dim {} vs model dim {}",
            bad.dim(),
            shape.embedding_dim
        )));
    }
    Ok(())
}

/// Runs the recurrence over one window from zero hidden and cell state.
pub fn forward(params: &LstmParams, window: &Window<'_>) -> Result<(Prediction, ForwardCache), ModelError> {
    let shape = params.shape();
    check_shape(shape, window)?;
    let h = shape.hidden_dim;
    let g4 = shape.gate_width();
    let n = window.len();
    let w_in = params.input_weights();
    let w_rec = params.recurrent_weights();
    let bias = params.gate_bias();
    let head_w = params.head_weights();
    let head_b = params.head_bias();

    let mut cache = ForwardCache {
        gates: vec![0.0; n * g4],
        cells: vec![0.0; n * h],
        tanh_cells: vec![0.0; n * h],
        hidden: vec![0.0; n * h],
        log_probs: Vec::with_capacity(n),
    };
    let mut prob_anomalous = Vec::with_capacity(n);
    let mut z = vec![0.0; g4];
    let zeros = vec![0.0; h];

    for t in 0..n {
        z.copy_from_slice(bias);
        for (j, x) in window.inputs[t].nonzeros() {
            let row = &w_in[j * g4..(j + 1) * g4];
            for (zm, w) in z.iter_mut().zip(row) {
                *zm += x * w;
            }
        }
        if t > 0 {
            let h_prev = &cache.hidden[(t - 1) * h..t * h];
            for (k, &hk) in h_prev.iter().enumerate() {
                let row = &w_rec[k * g4..(k + 1) * g4];
                for (zm, w) in z.iter_mut().zip(row) {
                    *zm += hk * w;
                }
            }
        }

        let gates = &mut cache.gates[t * g4..(t + 1) * g4];
        for m in 0..h {
            gates[m] = sigmoid(z[m]);
            gates[h + m] = sigmoid(z[h + m]);
            gates[2 * h + m] = z[2 * h + m].tanh();
            gates[3 * h + m] = sigmoid(z[3 * h + m]);
        }
        let c_prev: &[f64] = if t > 0 {
            &cache.cells[(t - 1) * h..t * h]
        } else {
            &zeros
        };
        let mut c_new = vec![0.0; h];
        for m in 0..h {
            c_new[m] = gates[h + m] * c_prev[m] + gates[m] * gates[2 * h + m];
        }
        for m in 0..h {
            let tc = c_new[m].tanh();
            cache.tanh_cells[t * h + m] = tc;
            cache.hidden[t * h + m] = gates[3 * h + m] * tc;
        }
        cache.cells[t * h..(t + 1) * h].copy_from_slice(&c_new);

        let ht = &cache.hidden[t * h..(t + 1) * h];
        let mut logits = [0.0; CLASSES];
        for (c, l) in logits.iter_mut().enumerate() {
            *l = head_b[c] + head_w[c * h..(c + 1) * h].iter().zip(ht).map(|(w, x)| w * x).sum::<f64>();
        }
        let mx = logits[0].max(logits[1]);
        let lse = mx + ((logits[0] - mx).exp() + (logits[1] - mx).exp()).ln();
        let lp = [logits[0] - lse, logits[1] - lse];
        cache.log_probs.push(lp);
        prob_anomalous.push(lp[1].exp());
    }

    Ok((Prediction { prob_anomalous }, cache))
}

/// Mean over events of `weight(label) * -ln p(label)`.
pub fn loss(pred: &Prediction, labels: &[bool], weights: ClassWeights) -> f64 {
    assert_eq!(pred.prob_anomalous.len(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let total: f64 = pred
        .prob_anomalous
        .iter()
        .zip(labels)
        .map(|(&pa, &y)| {
            let p = if y { pa } else { 1.0 - pa };
            weights.for_label(y) * -p.max(f64::MIN_POSITIVE).ln()
        })
        .sum();
    total / labels.len() as f64
}

fn window_loss_sum(cache: &ForwardCache, labels: &[bool], weights: ClassWeights) -> f64 {
    cache
        .log_probs
        .iter()
        .zip(labels)
        .map(|(lp, &y)| weights.for_label(y) * -lp[y as usize])
        .sum()
}

/// Accumulates `scale * d(sum of weighted event losses)/d(params)` into `grads`.
fn accumulate_grad(
    params: &LstmParams,
    window: &Window<'_>,
    cache: &ForwardCache,
    weights: ClassWeights,
    scale: f64,
    grads: &mut Gradients,
) {
    let shape = params.shape();
    let h = shape.hidden_dim;
    let g4 = shape.gate_width();
    let n = window.len();
    let w_rec = params.recurrent_weights();
    let head_w = params.head_weights();
    let [gw_in, gw_rec, gbias, ghead_w, ghead_b] = grads.blocks_mut();

    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; g4];
    let zeros = vec![0.0; h];

    for t in (0..n).rev() {
        let y = window.labels[t] as usize;
        let w = scale * weights.for_label(window.labels[t]);
        let lp = cache.log_probs[t];
        let mut dlogit = [w * lp[0].exp(), w * lp[1].exp()];
        dlogit[y] -= w;

        let ht = &cache.hidden[t * h..(t + 1) * h];
        let mut dh = dh_next.clone();
        for c in 0..CLASSES {
            ghead_b[c] += dlogit[c];
            let row = &mut ghead_w[c * h..(c + 1) * h];
            for m in 0..h {
                row[m] += dlogit[c] * ht[m];
                dh[m] += head_w[c * h + m] * dlogit[c];
            }
        }

        let gates = &cache.gates[t * g4..(t + 1) * g4];
        let tc = &cache.tanh_cells[t * h..(t + 1) * h];
        let c_prev: &[f64] = if t > 0 {
            &cache.cells[(t - 1) * h..t * h]
        } else {
            &zeros
        };
        for m in 0..h {
            let (i, f, g, o) = (gates[m], gates[h + m], gates[2 * h + m], gates[3 * h + m]);
            let dc = dh[m] * o * (1.0 - tc[m] * tc[m]) + dc_next[m];
            dz[m] = dc * g * i * (1.0 - i);
            dz[h + m] = dc * c_prev[m] * f * (1.0 - f);
            dz[2 * h + m] = dc * i * (1.0 - g * g);
            dz[3 * h + m] = dh[m] * tc[m] * o * (1.0 - o);
            dc_next[m] = dc * f;
        }

        for (b, d) in gbias.iter_mut().zip(&dz) {
            *b += d;
        }
        for (j, x) in window.inputs[t].nonzeros() {
            let row = &mut gw_in[j * g4..(j + 1) * g4];
            for (r, d) in row.iter_mut().zip(&dz) {
                *r += x * d;
            }
        }
        if t > 0 {
            let h_prev = &cache.hidden[(t - 1) * h..t * h];
            for k in 0..h {
                let hk = h_prev[k];
                let wrow = &w_rec[k * g4..(k + 1) * g4];
                let grow = &mut gw_rec[k * g4..(k + 1) * g4];
                let mut acc = 0.0;
                for m in 0..g4 {
                    grow[m] += hk * dz[m];
                    acc += wrow[m] * dz[m];
                }
                dh_next[k] = acc;
            }
        }
    }
}

/// Gradient of the window's mean weighted loss with respect to every
/// parameter.
pub fn backward(
    params: &LstmParams,
    window: &Window<'_>,
    cache: &ForwardCache,
    weights: ClassWeights,
) -> Result<Gradients, ModelError> {
    check_shape(params.shape(), window)?;
    if cache.log_probs.len() != window.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "cache covers {} events, window has {}",
            cache.log_probs.len(),
            window.len()
        )));
    }
    let mut grads = Gradients::zeros(params.shape());
    if !window.is_empty() {
        accumulate_grad(params, window, cache, weights, 1.0 / window.len() as f64, &mut grads);
    }
    Ok(grads)
}

/// Per-event anomaly decisions for a window.
pub fn predict(params: &LstmParams, window: &Window<'_>, threshold: f64) -> Result<Vec<bool>, ModelError> {
    Ok(forward(params, window)?.0.predicted(threshold))
}

// Windows per parallel work unit. Fixed so the reduction order, and hence
// the floating-point result, does not depend on the thread count.
const WINDOWS_PER_CHUNK: usize = 32;

/// Mean weighted loss over every event of every window.
pub fn batch_loss(params: &LstmParams, windows: &[Window<'_>], weights: ClassWeights) -> Result<f64, ModelError> {
    let events: usize = windows.iter().map(|w| w.len()).sum();
    if events == 0 {
        return Ok(0.0);
    }
    let sums = windows
        .par_chunks(WINDOWS_PER_CHUNK)
        .map(|chunk| {
            chunk.iter().try_fold(0.0, |acc, w| {
                let (_, cache) = forward(params, w)?;
                Ok::<_, ModelError>(acc + window_loss_sum(&cache, w.labels, weights))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(sums.into_iter().sum::<f64>() / events as f64)
}

/// Mean weighted loss over all events and its gradient (full batch).
pub fn batch_loss_and_grad(
    params: &LstmParams,
    windows: &[Window<'_>],
    weights: ClassWeights,
) -> Result<(f64, Gradients), ModelError> {
    let events: usize = windows.iter().map(|w| w.len()).sum();
    let mut total = Gradients::zeros(params.shape());
    if events == 0 {
        return Ok((0.0, total));
    }
    let scale = 1.0 / events as f64;
    let parts = windows
        .par_chunks(WINDOWS_PER_CHUNK)
        .map(|chunk| {
            let mut g = Gradients::zeros(params.shape());
            let mut l = 0.0;
            for w in chunk {
                let (_, cache) = forward(params, w)?;
                l += window_loss_sum(&cache, w.labels, weights);
                accumulate_grad(params, w, &cache, weights, scale, &mut g);
            }
            Ok::<_, ModelError>((l, g))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut loss_sum = 0.0;
    for (l, g) in &parts {
        loss_sum += l;
        total.add_assign(g);
    }
    Ok((loss_sum * scale, total))
}

/// Anomaly probabilities for every event, in window order.
pub fn batch_probabilities(params: &LstmParams, windows: &[Window<'_>]) -> Result<Vec<f64>, ModelError> {
    let per_window = windows
        .par_iter()
        .map(|w| forward(params, w).map(|(p, _)| p.prob_anomalous))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_window.into_iter().flatten().collect())
}
