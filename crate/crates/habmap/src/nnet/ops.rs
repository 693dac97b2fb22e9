//! Classification head math: stable softmax, cross-entropy over hard or
//! soft targets, and the Adam update rule.

use super::tensor::{Element, Tensor};
use super::NnetError;

/// Numerically stable softmax of one logit row (max subtraction).
pub fn softmax<E: Element>(logits: &[E]) -> Result<Vec<E>, NnetError> {
    if logits.iter().any(|&v| v.to_f64().is_nan()) {
        return Err(NnetError::NanInput("softmax"));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked<E: Element>(logits: &[E]) -> Vec<E> {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64()));
    let exps: Vec<f64> = logits.iter().map(|&v| (v.to_f64() - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| E::from_f64(e / sum)).collect()
}

/// Log-softmax of one row, for loss evaluation without underflow.
fn log_softmax_row<E: Element>(logits: &[E]) -> Vec<f64> {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64()));
    let log_sum = logits
        .iter()
        .map(|&v| (v.to_f64() - max).exp())
        .sum::<f64>()
        .ln();
    logits.iter().map(|&v| v.to_f64() - max - log_sum).collect()
}

/// Classification targets: class indices or soft distributions.
#[derive(Debug, Clone)]
pub enum Targets<'a, E> {
    Hard(&'a [usize]),
    Soft(&'a [Vec<E>]),
}

impl<E: Element> Targets<'_, E> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Hard(t) => t.len(),
            Targets::Soft(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn weight(&self, row: usize, class: usize) -> f64 {
        match self {
            Targets::Hard(t) => {
                if t[row] == class {
                    1.0
                } else {
                    0.0
                }
            }
            Targets::Soft(t) => t[row][class].to_f64(),
        }
    }

    fn validate(&self, batch: usize, k: usize) -> Result<(), NnetError> {
        if self.len() != batch {
            return Err(NnetError::BatchMismatch { logits: batch, targets: self.len() });
        }
        match self {
            Targets::Hard(t) => {
                for &c in *t {
                    if c >= k {
                        return Err(NnetError::ClassOutOfRange { class: c, n_classes: k });
                    }
                }
            }
            Targets::Soft(t) => {
                for (i, row) in t.iter().enumerate() {
                    if row.len() != k {
                        return Err(NnetError::SoftTargetWidth { row: i, got: row.len(), expected: k });
                    }
                    let sum: f64 = row.iter().map(|&v| v.to_f64()).sum();
                    if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&v| v.to_f64() < -1e-9) {
                        return Err(NnetError::SoftTargetNotDistribution { row: i, sum });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Mean over the batch of −Σ target·log softmax(logits).
pub fn cross_entropy<E: Element>(
    logits: &Tensor<E>,
    targets: &Targets<'_, E>,
) -> Result<f64, NnetError> {
    let [b, k] = logits.shape() else {
        return Err(NnetError::LogitsShape(logits.shape().to_vec()));
    };
    let (b, k) = (*b, *k);
    targets.validate(b, k)?;
    let mut total = 0.0f64;
    for bi in 0..b {
        let row = &logits.data()[bi * k..(bi + 1) * k];
        let ls = log_softmax_row(row);
        let mut loss = 0.0f64;
        for (c, &l) in ls.iter().enumerate() {
            let w = targets.weight(bi, c);
            if w != 0.0 {
                loss -= w * l;
            }
        }
        total += loss;
    }
    Ok(total / b as f64)
}

/// Gradient of [`cross_entropy`] with respect to the logits:
/// (softmax − target) / B.
pub fn cross_entropy_grad<E: Element>(
    logits: &Tensor<E>,
    targets: &Targets<'_, E>,
) -> Result<Tensor<E>, NnetError> {
    let [b, k] = logits.shape() else {
        return Err(NnetError::LogitsShape(logits.shape().to_vec()));
    };
    let (b, k) = (*b, *k);
    targets.validate(b, k)?;
    let mut grad = Tensor::zeros(vec![b, k]);
    let scale = 1.0 / b as f64;
    for bi in 0..b {
        let row = &logits.data()[bi * k..(bi + 1) * k];
        let p = softmax_unchecked(row);
        for c in 0..k {
            let g = (p[c].to_f64() - targets.weight(bi, c)) * scale;
            let i = grad.idx2(bi, c);
            grad.data_mut()[i] = E::from_f64(g);
        }
    }
    Ok(grad)
}

// ── Adam ────────────────────────────────────────────────────────────────

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamSlot {
    pub fn new(numel: usize) -> Self {
        Self { m: vec![0.0; numel], v: vec![0.0; numel] }
    }
}

/// Optimizer state: one slot per parameter tensor plus the shared step
/// counter (bias correction uses the post-increment step).
#[derive(Debug, Clone)]
pub struct AdamState {
    pub slots: Vec<AdamSlot>,
    pub step: u64,
}

impl AdamState {
    pub fn new(param_sizes: &[usize]) -> Self {
        Self {
            slots: param_sizes.iter().map(|&n| AdamSlot::new(n)).collect(),
            step: 0,
        }
    }

    /// Advance the shared step counter; call once per optimization step
    /// before updating the slots.
    pub fn begin_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }
}

/// Standard bias-corrected Adam update of one parameter tensor in place.
pub fn adam_update<E: Element>(
    values: &mut [E],
    grads: &[E],
    slot: &mut AdamSlot,
    step: u64,
    lr: f64,
) {
    let b1t = 1.0 - ADAM_BETA1.powi(step as i32);
    let b2t = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..values.len() {
        let g = grads[i].to_f64();
        slot.m[i] = ADAM_BETA1 * slot.m[i] + (1.0 - ADAM_BETA1) * g;
        slot.v[i] = ADAM_BETA2 * slot.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = slot.m[i] / b1t;
        let v_hat = slot.v[i] / b2t;
        let delta = lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        values[i] = E::from_f64(values[i].to_f64() - delta);
    }
}
