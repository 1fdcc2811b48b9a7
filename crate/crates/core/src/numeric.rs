//! Numeric primitives shared by every stage of the pipeline: cosine similarity,
//! tempered softmax, cross-entropy and L2 normalization.
//!
//! All functions are pure and operate on plain `f64` slices, so they can be
//! called from any number of threads.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to predicted probabilities before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Tolerance on `|sum - 1|` accepted for a probability vector.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// A length-K vector of nonnegative entries that sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates `values` as a probability distribution.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("probability vector must be nonempty"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0 + PROB_SUM_TOLERANCE) {
            return Err(Error::domain("probability entries must lie in [0, 1]"));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::domain(format!("probability vector sums to {sum}")));
        }
        audit::record(sum);
        Ok(ProbVector(values))
    }

    /// Wraps a vector already normalized by construction. The sum is still
    /// reported to the audit recorder when one is active.
    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        audit::record(values.iter().sum());
        ProbVector(values)
    }

    pub fn uniform(k: usize) -> Self {
        Self::from_normalized(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(class: usize, k: usize) -> Self {
        let mut v = vec![0.0; k];
        v[class] = 1.0;
        Self::from_normalized(v)
    }

    /// Largest entry (the confidence of the distribution).
    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::domain(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::domain("cosine similarity of a zero-norm vector"));
    }
    if !na.is_finite() || !nb.is_finite() {
        return Err(Error::domain("non-finite embedding"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity of `f` against each anchor, in anchor order.
pub fn anchor_similarities<A: AsRef<[f64]>>(f: &[f64], anchors: &[A]) -> Result<Vec<f64>> {
    anchors
        .iter()
        .map(|t| cosine_similarity(f, t.as_ref()))
        .collect()
}

/// `exp(s_k/τ) / Σ_j exp(s_j/τ)` over the class axis, max-subtracted.
pub fn softmax_temp(scores: &[f64], tau: f64) -> Result<ProbVector> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::domain(format!("temperature must be positive, got {tau}")));
    }
    if scores.is_empty() {
        return Err(Error::domain("softmax of an empty score vector"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::domain("non-finite score"));
    }
    Ok(ProbVector::from_normalized(softmax_raw(scores, tau)))
}

/// Unchecked tempered softmax used on hot paths whose inputs are already
/// validated.
pub(crate) fn softmax_raw(scores: &[f64], tau: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// `−Σ_k target_k · log(max(pred_k, 1e-12))`. Soft targets are allowed.
pub fn cross_entropy(target: &[f64], pred: &[f64]) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(Error::domain(format!(
            "dimension mismatch: {} vs {}",
            target.len(),
            pred.len()
        )));
    }
    if target.iter().chain(pred).any(|v| v.is_nan()) {
        return Err(Error::domain("NaN in cross-entropy input"));
    }
    Ok(target
        .iter()
        .zip(pred)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, p)| -t * p.max(LOG_CLAMP).ln())
        .sum())
}

/// Unit-norm copy of `v`.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::domain("cannot normalize a zero or non-finite vector"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Thread-local recorder of every probability vector constructed while a
/// recording session is open. Used to audit normalization across a whole run.
pub mod audit {
    use std::cell::RefCell;

    use super::PROB_SUM_TOLERANCE;

    #[derive(Debug, Clone, Copy, Default, PartialEq)]
    pub struct AuditStats {
        pub count: u64,
        pub max_deviation: f64,
        pub violations: u64,
    }

    thread_local! {
        static ACTIVE: RefCell<Option<AuditStats>> = const { RefCell::new(None) };
    }

    /// Opens a recording session on the current thread, discarding any previous one.
    pub fn start() {
        ACTIVE.with(|a| *a.borrow_mut() = Some(AuditStats::default()));
    }

    /// Closes the session and returns what it recorded.
    pub fn finish() -> Option<AuditStats> {
        ACTIVE.with(|a| a.borrow_mut().take())
    }

    pub(crate) fn record(sum: f64) {
        ACTIVE.with(|a| {
            if let Some(stats) = a.borrow_mut().as_mut() {
                let dev = (sum - 1.0).abs();
                stats.count += 1;
                if dev.is_nan() || dev > PROB_SUM_TOLERANCE {
                    stats.violations += 1;
                }
                if dev.is_nan() || dev > stats.max_deviation {
                    stats.max_deviation = dev;
                }
            }
        });
    }
}
