//! Three-level pseudo-label generation.
//!
//! A pseudo-label for an unlabeled sample is the average of up to three class
//! distributions computed from its weak view: the classifier head output, a
//! tempered softmax over cosine similarities to the per-class text anchors, and
//! the renormalized class-wise maximum of its similarity to the instance
//! buffer. The average is then passed through distribution alignment, and the
//! aligned confidence is compared against the loss mask threshold `α` and the
//! buffer admission threshold `γ`.

use serde::{Deserialize, Serialize};

use crate::buffer::InstanceMemoryBuffer;
use crate::error::{Error, Result};
use crate::numeric::{anchor_similarities, cross_entropy, l2_normalize, softmax_temp, ProbVector};

/// Floor applied to the running average before it is used as a divisor.
pub const ALIGN_FLOOR: f64 = 1e-8;

pub fn text_probability<A: AsRef<[f64]>>(q_w: &[f64], anchors: &[A], tau: f64) -> Result<ProbVector> {
    softmax_temp(&anchor_similarities(q_w, anchors)?, tau)
}

/// Class-wise maximum of the instance similarities, before renormalization.
pub fn instance_class_scores(z_w: &[f64], buffer: &InstanceMemoryBuffer, tau: f64) -> Result<Vec<f64>> {
    let sims = buffer.instance_similarities(z_w, tau)?;
    buffer.classwise_max(&sims)
}

/// Instance-level class distribution: class-wise max renormalized to sum 1.
/// Classes absent from the buffer receive probability 0.
pub fn instance_probability(z_w: &[f64], buffer: &InstanceMemoryBuffer, tau: f64) -> Result<ProbVector> {
    let scores = instance_class_scores(z_w, buffer, tau)?;
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) {
        return Err(Error::State("instance scores vanished".into()));
    }
    Ok(ProbVector::from_normalized(scores.into_iter().map(|s| s / total).collect()))
}

/// Averages the given class vectors and renormalizes the result to sum 1.
pub fn fuse_levels(levels: &[&[f64]]) -> Result<ProbVector> {
    let Some(first) = levels.first() else {
        return Err(Error::domain("fusion needs at least one level"));
    };
    let k = first.len();
    if k == 0 || levels.iter().any(|l| l.len() != k) {
        return Err(Error::domain("fused levels must share a nonzero length"));
    }
    let n = levels.len() as f64;
    let mean: Vec<f64> = (0..k)
        .map(|c| levels.iter().map(|l| l[c]).sum::<f64>() / n)
        .collect();
    let total: f64 = mean.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::domain("fused levels have no probability mass"));
    }
    Ok(ProbVector::from_normalized(mean.into_iter().map(|v| v / total).collect()))
}

/// `(p_sem + p_text + p_ins) / 3`.
pub fn fuse(p_sem: &ProbVector, p_text: &ProbVector, p_ins: &ProbVector) -> Result<ProbVector> {
    fuse_levels(&[p_sem, p_text, p_ins])
}

/// How the alignment target marginal is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// No alignment; `align` is the identity and keeps no statistics.
    Off,
    /// Align toward the uniform class marginal.
    Uniform,
    /// Align toward the class marginal of the labeled set.
    LabeledMarginal,
}

/// Distribution alignment: `Normalize(p̂ · target / running_avg)` with a
/// moving average of the raw pseudo-labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionAligner {
    running_avg: Vec<f64>,
    target: Vec<f64>,
    decay: f64,
    warmup: u64,
    observed: u64,
    enabled: bool,
}

impl DistributionAligner {
    /// `warmup` is counted in `align` calls; the running average is updated
    /// during warmup but the output is the unmodified input.
    pub fn new(target: ProbVector, decay: f64, warmup: u64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::config(format!("aligner decay must be in (0, 1), got {decay}")));
        }
        let k = target.len();
        Ok(DistributionAligner {
            running_avg: vec![1.0 / k as f64; k],
            target: target.into_inner(),
            decay,
            warmup,
            observed: 0,
            enabled: true,
        })
    }

    /// An aligner whose `align` is always the identity.
    pub fn disabled(k: usize) -> Self {
        DistributionAligner {
            running_avg: vec![1.0 / k as f64; k],
            target: vec![1.0 / k as f64; k],
            decay: 0.5,
            warmup: 0,
            observed: 0,
            enabled: false,
        }
    }

    /// Overrides the running average; used to freeze a known state in tests
    /// and diagnostics.
    pub fn with_running_avg(mut self, running_avg: ProbVector) -> Self {
        self.running_avg = running_avg.into_inner();
        self
    }

    pub fn running_avg(&self) -> &[f64] {
        &self.running_avg
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn observed(&self) -> u64 {
        self.observed
    }

    pub fn is_warm(&self) -> bool {
        self.enabled && self.observed >= self.warmup
    }

    /// Applies alignment using the current state without updating it.
    pub fn apply(&self, p_hat: &ProbVector) -> Result<ProbVector> {
        if p_hat.len() != self.target.len() {
            return Err(Error::domain("pseudo-label length does not match the aligner"));
        }
        if !self.is_warm() {
            return Ok(p_hat.clone());
        }
        let scaled: Vec<f64> = p_hat
            .iter()
            .zip(&self.target)
            .zip(&self.running_avg)
            .map(|((p, t), a)| p * t / a.max(ALIGN_FLOOR))
            .collect();
        let total: f64 = scaled.iter().sum();
        if !(total > 0.0) {
            // target has no mass where p̂ does; fall back to the raw label
            return Ok(p_hat.clone());
        }
        Ok(ProbVector::from_normalized(scaled.into_iter().map(|v| v / total).collect()))
    }

    /// Folds a raw pseudo-label into the running average.
    pub fn observe(&mut self, p_hat: &ProbVector) {
        if !self.enabled {
            return;
        }
        let d = self.decay;
        for (a, p) in self.running_avg.iter_mut().zip(p_hat.iter()) {
            *a = d * *a + (1.0 - d) * p;
        }
        let total: f64 = self.running_avg.iter().sum();
        self.running_avg.iter_mut().for_each(|a| *a /= total);
        self.observed += 1;
    }

    /// Aligns with the pre-update state, then updates the running average.
    pub fn align(&mut self, p_hat: &ProbVector) -> Result<ProbVector> {
        let out = self.apply(p_hat)?;
        self.observe(p_hat);
        Ok(out)
    }
}

/// `(1/μB) Σ_b 1[max(aligned_b) > α] · CE(aligned_b, p_s_b)`; zero for an empty batch.
pub fn unsup_loss(aligned: &[ProbVector], p_s: &[ProbVector], alpha: f64) -> Result<f64> {
    if aligned.len() != p_s.len() {
        return Err(Error::domain("pseudo-label and prediction batches differ in size"));
    }
    if aligned.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (t, p) in aligned.iter().zip(p_s) {
        if t.max() > alpha {
            total += cross_entropy(t, p)?;
        }
    }
    Ok(total / aligned.len() as f64)
}

/// Which levels contribute to the fused pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelConfig {
    pub tau: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub use_text: bool,
    pub use_instance: bool,
    /// Fuse the un-renormalized class-wise maxima instead of a distribution.
    pub literal_instance: bool,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        PseudoLabelConfig {
            tau: 0.8,
            alpha: 0.8,
            gamma: 0.86,
            use_text: true,
            use_instance: true,
            literal_instance: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedPseudoLabel {
    pub raw: ProbVector,
    pub aligned: ProbVector,
    pub confidence: f64,
    pub passes_alpha: bool,
    pub passes_gamma: bool,
}

/// Every intermediate of one pseudo-label, for diagnostics.
#[derive(Debug, Clone)]
pub struct PseudoLabelTrace {
    pub p_sem: ProbVector,
    pub p_text: Option<ProbVector>,
    pub p_ins: Option<Vec<f64>>,
    pub label: FusedPseudoLabel,
}

/// Raw fused pseudo-label (before alignment) plus its components.
pub fn fuse_raw<A: AsRef<[f64]>>(
    q_w: &[f64],
    p_sem: &ProbVector,
    anchors: &[A],
    buffer: &InstanceMemoryBuffer,
    cfg: &PseudoLabelConfig,
) -> Result<(ProbVector, Option<ProbVector>, Option<Vec<f64>>)> {
    let p_text = if cfg.use_text {
        Some(text_probability(q_w, anchors, cfg.tau)?)
    } else {
        None
    };
    let p_ins = if cfg.use_instance {
        let z_w = l2_normalize(q_w)?;
        Some(if cfg.literal_instance {
            instance_class_scores(&z_w, buffer, cfg.tau)?
        } else {
            instance_probability(&z_w, buffer, cfg.tau)?.into_inner()
        })
    } else {
        None
    };
    let mut levels: Vec<&[f64]> = vec![p_sem];
    if let Some(p) = &p_text {
        levels.push(p);
    }
    if let Some(p) = &p_ins {
        levels.push(p);
    }
    Ok((fuse_levels(&levels)?, p_text, p_ins))
}

pub fn label_from_aligned(raw: ProbVector, aligned: ProbVector, cfg: &PseudoLabelConfig) -> FusedPseudoLabel {
    let confidence = aligned.max();
    FusedPseudoLabel {
        raw,
        aligned,
        confidence,
        passes_alpha: confidence > cfg.alpha,
        passes_gamma: confidence > cfg.gamma,
    }
}

/// Full pipeline for one sample: text and instance levels, fusion, alignment
/// (which updates the aligner) and threshold flags.
pub fn generate<A: AsRef<[f64]>>(
    q_w: &[f64],
    p_sem: &ProbVector,
    anchors: &[A],
    buffer: &InstanceMemoryBuffer,
    aligner: &mut DistributionAligner,
    cfg: &PseudoLabelConfig,
) -> Result<FusedPseudoLabel> {
    Ok(generate_traced(q_w, p_sem, anchors, buffer, aligner, cfg)?.label)
}

pub fn generate_traced<A: AsRef<[f64]>>(
    q_w: &[f64],
    p_sem: &ProbVector,
    anchors: &[A],
    buffer: &InstanceMemoryBuffer,
    aligner: &mut DistributionAligner,
    cfg: &PseudoLabelConfig,
) -> Result<PseudoLabelTrace> {
    let (raw, p_text, p_ins) = fuse_raw(q_w, p_sem, anchors, buffer, cfg)?;
    let aligned = aligner.align(&raw)?;
    Ok(PseudoLabelTrace {
        p_sem: p_sem.clone(),
        p_text,
        p_ins,
        label: label_from_aligned(raw, aligned, cfg),
    })
}
