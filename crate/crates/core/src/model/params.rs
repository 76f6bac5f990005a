use rand::Rng;
use serde::{Deserialize, Serialize};

/// Gate order inside every `4 * hidden_dim` row.
pub const GATE_ORDER: [&str; 4] = ["input", "forget", "cell", "output"];

/// Number of output classes (normal, anomalous).
pub const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
}

impl ModelShape {
    pub fn new(embedding_dim: usize, hidden_dim: usize) -> Self {
        ModelShape {
            embedding_dim,
            hidden_dim,
        }
    }

    pub fn gate_width(&self) -> usize {
        4 * self.hidden_dim
    }

    /// Offsets of (input weights, recurrent weights, gate bias, head
    /// weights, head bias, end).
    pub(crate) fn offsets(&self) -> [usize; 6] {
        let g = self.gate_width();
        let w_in = 0;
        let w_rec = w_in + self.embedding_dim * g;
        let bias = w_rec + self.hidden_dim * g;
        let head_w = bias + g;
        let head_b = head_w + CLASSES * self.hidden_dim;
        let end = head_b + CLASSES;
        [w_in, w_rec, bias, head_w, head_b, end]
    }

    pub fn param_count(&self) -> usize {
        self.offsets()[5]
    }
}

/// All trainable parameters of the base model, stored flat.
///
/// Block order (also the checkpoint order):
/// 1. input weights, `embedding_dim x 4H`, row per input feature;
/// 2. recurrent weights, `H x 4H`, row per previous-hidden unit;
/// 3. gate bias, `4H`;
/// 4. head weights, `2 x H`, row per class (normal, anomalous);
/// 5. head bias, `2`.
///
/// Each `4H` row is laid out gate-major in [`GATE_ORDER`]. The same type
/// carries gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    shape: ModelShape,
    data: Vec<f64>,
}

pub type Gradients = LstmParams;

impl LstmParams {
    pub fn zeros(shape: ModelShape) -> Self {
        LstmParams {
            shape,
            data: vec![0.0; shape.param_count()],
        }
    }

    pub fn from_vec(shape: ModelShape, data: Vec<f64>) -> Option<Self> {
        (data.len() == shape.param_count()).then_some(LstmParams { shape, data })
    }

    /// Uniform in `±1/sqrt(hidden_dim)` for every weight matrix, zero biases
    /// except the forget gate bias, which starts at 1.
    pub fn init<R: Rng>(shape: ModelShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let bound = 1.0 / (shape.hidden_dim as f64).sqrt();
        let [w_in, _, bias, head_w, head_b, _] = shape.offsets();
        for v in &mut p.data[w_in..bias] {
            *v = rng.gen_range(-bound..bound);
        }
        for v in &mut p.data[head_w..head_b] {
            *v = rng.gen_range(-bound..bound);
        }
        let h = shape.hidden_dim;
        for v in &mut p.data[bias + h..bias + 2 * h] {
            *v = 1.0;
        }
        p
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn block(&self, i: usize) -> &[f64] {
        let o = self.shape.offsets();
        &self.data[o[i]..o[i + 1]]
    }

    pub fn input_weights(&self) -> &[f64] {
        self.block(0)
    }

    pub fn recurrent_weights(&self) -> &[f64] {
        self.block(1)
    }

    pub fn gate_bias(&self) -> &[f64] {
        self.block(2)
    }

    pub fn head_weights(&self) -> &[f64] {
        self.block(3)
    }

    pub fn head_bias(&self) -> &[f64] {
        self.block(4)
    }

    /// Mutable views of all five blocks at once.
    pub(crate) fn blocks_mut(&mut self) -> [&mut [f64]; 5] {
        let o = self.shape.offsets();
        let (w_in, rest) = self.data.split_at_mut(o[1]);
        let (w_rec, rest) = rest.split_at_mut(o[2] - o[1]);
        let (bias, rest) = rest.split_at_mut(o[3] - o[2]);
        let (head_w, head_b) = rest.split_at_mut(o[4] - o[3]);
        [w_in, w_rec, bias, head_w, head_b]
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &LstmParams) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn add_assign(&mut self, other: &LstmParams) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &LstmParams) -> bool {
        self.shape == other.shape && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
