//! Supervised, text-anchor and unsupervised losses with hand-derived gradients.
//!
//! Pseudo-label targets are constants: nothing flows back through them, the
//! weak views they came from, or the buffer. Text anchors are frozen.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{cross_entropy, dot, norm, softmax_raw, ProbVector, LOG_CLAMP};

use super::ModelParams;

/// How the text loss is reduced over the labeled batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextReduction {
    #[default]
    Sum,
    Mean,
}

/// Axis over which the text-similarity softmax normalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextAxis {
    #[default]
    Class,
    /// Normalize each class column over the batch instead.
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub use_text_loss: bool,
    pub text_reduction: TextReduction,
    pub text_axis: TextAxis,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 0.6,
            lambda2: 0.3,
            tau: 0.8,
            use_text_loss: true,
            text_reduction: TextReduction::Sum,
            text_axis: TextAxis::Class,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_s: f64,
    pub l_t: f64,
    pub l_u: f64,
    pub total: f64,
    /// Effective weights (λ1 is zero when the text loss is disabled).
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossBreakdown {
    pub fn new(l_s: f64, l_t: f64, l_u: f64, lambda1: f64, lambda2: f64) -> Self {
        LossBreakdown {
            l_s,
            l_t,
            l_u,
            total: total_loss(l_s, l_t, l_u, lambda1, lambda2),
            lambda1,
            lambda2,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_s, self.l_t, self.l_u, self.total].iter().all(|v| v.is_finite())
    }
}

/// Labeled weak views with their class indices.
#[derive(Debug, Clone, Default)]
pub struct LabeledBatch<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub labels: Vec<usize>,
}

/// Unlabeled strong views with detached pseudo-label targets and α masks.
#[derive(Debug, Clone, Default)]
pub struct UnlabeledBatch<'a> {
    pub strong_inputs: Vec<&'a [f64]>,
    pub targets: Vec<ProbVector>,
    pub masks: Vec<bool>,
}

/// `(1/B) Σ CE(y_b, p_b)`.
pub fn supervised_loss(p_batch: &[ProbVector], y_batch: &[usize]) -> Result<f64> {
    if p_batch.is_empty() {
        return Err(Error::config("labeled batch must contain at least one sample"));
    }
    if p_batch.len() != y_batch.len() {
        return Err(Error::domain("prediction and label batches differ in size"));
    }
    let mut total = 0.0;
    for (p, &y) in p_batch.iter().zip(y_batch) {
        if y >= p.len() {
            return Err(Error::domain(format!("label {y} out of range")));
        }
        total += -p[y].max(LOG_CLAMP).ln();
    }
    Ok(total / p_batch.len() as f64)
}

fn unit_anchors<A: AsRef<[f64]>>(anchors: &[A]) -> Result<Vec<Vec<f64>>> {
    anchors
        .iter()
        .map(|t| {
            let t = t.as_ref();
            let n = norm(t);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::domain("zero-norm text anchor"));
            }
            Ok(t.iter().map(|v| v / n).collect())
        })
        .collect()
}

/// Cosine similarity of each feature against each anchor (`B × K`).
fn similarity_matrix(f_batch: &[Vec<f64>], anchors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    f_batch
        .iter()
        .map(|f| {
            if anchors.iter().any(|t| t.len() != f.len()) {
                return Err(Error::domain("feature and anchor dimensions differ"));
            }
            let n = norm(f);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::domain("zero-norm feature in text loss"));
            }
            Ok(anchors.iter().map(|t| dot(f, t) / n).collect())
        })
        .collect()
}

/// Text-anchor probabilities `P[b][k]` along the configured axis.
fn text_probs(sims: &[Vec<f64>], tau: f64, axis: TextAxis) -> Vec<Vec<f64>> {
    match axis {
        TextAxis::Class => sims.iter().map(|s| softmax_raw(s, tau)).collect(),
        TextAxis::Batch => {
            let k = sims.first().map_or(0, |s| s.len());
            let mut out = vec![vec![0.0; k]; sims.len()];
            for c in 0..k {
                let col: Vec<f64> = sims.iter().map(|s| s[c]).collect();
                for (b, v) in softmax_raw(&col, tau).into_iter().enumerate() {
                    out[b][c] = v;
                }
            }
            out
        }
    }
}

/// `−Σ_b log softmax_τ(cos(f_b, t))[y_b]`, summed or averaged over the batch.
pub fn text_loss<A: AsRef<[f64]>>(
    f_batch: &[Vec<f64>],
    anchors: &[A],
    y_batch: &[usize],
    tau: f64,
    reduction: TextReduction,
    axis: TextAxis,
) -> Result<f64> {
    if f_batch.is_empty() {
        return Err(Error::config("text loss needs a nonempty batch"));
    }
    if f_batch.len() != y_batch.len() {
        return Err(Error::domain("feature and label batches differ in size"));
    }
    if !(tau > 0.0) {
        return Err(Error::domain(format!("temperature must be positive, got {tau}")));
    }
    let anchors = unit_anchors(anchors)?;
    let sims = similarity_matrix(f_batch, &anchors)?;
    let probs = text_probs(&sims, tau, axis);
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(y_batch) {
        if y >= p.len() {
            return Err(Error::domain(format!("label {y} out of range")));
        }
        total += -p[y].max(LOG_CLAMP).ln();
    }
    Ok(match reduction {
        TextReduction::Sum => total,
        TextReduction::Mean => total / f_batch.len() as f64,
    })
}

/// `l_s + λ1·l_t + λ2·l_u`.
pub fn total_loss(l_s: f64, l_t: f64, l_u: f64, lambda1: f64, lambda2: f64) -> f64 {
    l_s + lambda1 * l_t + lambda2 * l_u
}

/// Accumulates `g ⊗ v` into a row-major matrix.
fn add_outer(m: &mut [f64], g: &[f64], v: &[f64]) {
    for (row, gi) in m.chunks_exact_mut(v.len()).zip(g) {
        if *gi == 0.0 {
            continue;
        }
        for (w, x) in row.iter_mut().zip(v) {
            *w += gi * x;
        }
    }
}

/// `Hᵀ·g` for a row-major `k × d` head.
fn head_transpose(params: &ModelParams, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; params.d];
    for (row, gi) in params.head_w.chunks_exact(params.d).zip(g) {
        for (o, w) in out.iter_mut().zip(row) {
            *o += gi * w;
        }
    }
    out
}

/// Backpropagates a logit gradient through the head into `grads`, returning
/// the gradient with respect to the feature.
fn backprop_head(params: &ModelParams, grads: &mut ModelParams, f: &[f64], dlogits: &[f64]) -> Vec<f64> {
    add_outer(&mut grads.head_w, dlogits, f);
    for (b, g) in grads.head_b.iter_mut().zip(dlogits) {
        *b += g;
    }
    head_transpose(params, dlogits)
}

fn backprop_adapter(grads: &mut ModelParams, x: &[f64], df: &[f64]) {
    add_outer(&mut grads.adapter_w, df, x);
    for (b, g) in grads.adapter_b.iter_mut().zip(df) {
        *b += g;
    }
}

/// Losses and exact gradients of the total objective with respect to every
/// adapter and head parameter.
///
/// Samples are accumulated in batch order, so the result is bitwise
/// reproducible.
pub fn loss_and_gradients<A: AsRef<[f64]>>(
    params: &ModelParams,
    labeled: &LabeledBatch<'_>,
    unlabeled: &UnlabeledBatch<'_>,
    anchors: &[A],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, ModelParams)> {
    let b = labeled.inputs.len();
    if b == 0 {
        return Err(Error::config("labeled batch must contain at least one sample"));
    }
    if labeled.labels.len() != b {
        return Err(Error::domain("labeled inputs and labels differ in size"));
    }
    let mu_b = unlabeled.strong_inputs.len();
    if unlabeled.targets.len() != mu_b || unlabeled.masks.len() != mu_b {
        return Err(Error::domain("unlabeled inputs, targets and masks differ in size"));
    }
    if anchors.len() != params.k {
        return Err(Error::domain(format!(
            "{} anchors for {} classes",
            anchors.len(),
            params.k
        )));
    }

    let mut grads = ModelParams::zeros(params.d_in, params.d, params.k);
    let k = params.k;

    // labeled forward
    let mut feats = Vec::with_capacity(b);
    let mut dfeats = Vec::with_capacity(b);
    let mut l_s = 0.0;
    for (x, &y) in labeled.inputs.iter().zip(&labeled.labels) {
        if y >= k {
            return Err(Error::domain(format!("label {y} out of range")));
        }
        let fw = params.forward(x)?;
        l_s += -fw.p[y].max(LOG_CLAMP).ln();
        let mut dlogits: Vec<f64> = fw.p.iter().map(|p| p / b as f64).collect();
        dlogits[y] -= 1.0 / b as f64;
        let df = backprop_head(params, &mut grads, &fw.f, &dlogits);
        feats.push(fw.f);
        dfeats.push(df);
    }
    l_s /= b as f64;

    // text loss on the labeled features
    let lambda1 = if cfg.use_text_loss { cfg.lambda1 } else { 0.0 };
    let anchors_unit = unit_anchors(anchors)?;
    let sims = similarity_matrix(&feats, &anchors_unit)?;
    if !(cfg.tau > 0.0) {
        return Err(Error::domain(format!("temperature must be positive, got {}", cfg.tau)));
    }
    let probs = text_probs(&sims, cfg.tau, cfg.text_axis);
    let mut l_t: f64 = probs
        .iter()
        .zip(&labeled.labels)
        .map(|(p, &y)| -p[y].max(LOG_CLAMP).ln())
        .sum();
    let scale = match cfg.text_reduction {
        TextReduction::Sum => 1.0,
        TextReduction::Mean => 1.0 / b as f64,
    };
    l_t *= scale;
    if lambda1 != 0.0 {
        // dL/dS[b][c]
        let dsims: Vec<Vec<f64>> = match cfg.text_axis {
            TextAxis::Class => probs
                .iter()
                .zip(&labeled.labels)
                .map(|(p, &y)| {
                    let mut d: Vec<f64> = p.clone();
                    d[y] -= 1.0;
                    d
                })
                .collect(),
            TextAxis::Batch => {
                let mut counts = vec![0.0; k];
                labeled.labels.iter().for_each(|&y| counts[y] += 1.0);
                probs
                    .iter()
                    .zip(&labeled.labels)
                    .map(|(p, &y)| {
                        let mut d: Vec<f64> = p.iter().zip(&counts).map(|(p, n)| n * p).collect();
                        d[y] -= 1.0;
                        d
                    })
                    .collect()
            }
        };
        let w = lambda1 * scale / cfg.tau;
        for ((f, ds), df) in feats.iter().zip(&dsims).zip(dfeats.iter_mut()) {
            let n = norm(f);
            for (c, t) in anchors_unit.iter().enumerate() {
                let g = w * ds[c];
                if g == 0.0 {
                    continue;
                }
                let cos = dot(f, t) / n;
                // ∂cos/∂f = t̂/‖f‖ − cos·f/‖f‖²
                for ((o, ti), fi) in df.iter_mut().zip(t).zip(f) {
                    *o += g * (ti / n - cos * fi / (n * n));
                }
            }
        }
    }
    for (x, df) in labeled.inputs.iter().zip(&dfeats) {
        backprop_adapter(&mut grads, x, df);
    }

    // unlabeled consistency on strong views
    let mut l_u = 0.0;
    if mu_b > 0 {
        let w = cfg.lambda2 / mu_b as f64;
        for ((x, t), &mask) in unlabeled
            .strong_inputs
            .iter()
            .zip(&unlabeled.targets)
            .zip(&unlabeled.masks)
        {
            if !mask {
                continue;
            }
            if t.len() != k {
                return Err(Error::domain("pseudo-label length does not match the class count"));
            }
            let fw = params.forward(x)?;
            l_u += cross_entropy(t, &fw.p)?;
            if w == 0.0 {
                continue;
            }
            let t_mass: f64 = t.iter().sum();
            let dlogits: Vec<f64> = fw
                .p
                .iter()
                .zip(t.iter())
                .map(|(p, t)| w * (p * t_mass - t))
                .collect();
            let df = backprop_head(params, &mut grads, &fw.f, &dlogits);
            backprop_adapter(&mut grads, x, &df);
        }
        l_u /= mu_b as f64;
    }

    Ok((LossBreakdown::new(l_s, l_t, l_u, lambda1, cfg.lambda2), grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(dim: usize, axis: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    #[test]
    fn supervised_loss_cases() {
        let p = vec![ProbVector::one_hot(1, 3), ProbVector::one_hot(0, 3)];
        assert_eq!(supervised_loss(&p, &[1, 0]).unwrap(), 0.0);
        let u = vec![ProbVector::uniform(7); 4];
        assert!((supervised_loss(&u, &[0, 1, 2, 3]).unwrap() - 7f64.ln()).abs() < 1e-12);
        assert!(matches!(supervised_loss(&[], &[]), Err(Error::Config(_))));

        let p = vec![
            ProbVector::new(vec![0.2, 0.5, 0.3]).unwrap(),
            ProbVector::new(vec![0.6, 0.1, 0.3]).unwrap(),
            ProbVector::new(vec![0.25, 0.25, 0.5]).unwrap(),
        ];
        let expect = -(0.5f64.ln() + 0.6f64.ln() + 0.5f64.ln()) / 3.0;
        assert!((supervised_loss(&p, &[1, 0, 2]).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn text_loss_cases() {
        let anchors: Vec<Vec<f64>> = (0..4).map(|c| basis(4, c)).collect();
        let l = text_loss(&[basis(4, 2)], &anchors, &[2], 0.001, TextReduction::Sum, TextAxis::Class).unwrap();
        assert!(l < 1e-12);

        let same = vec![vec![0.3, -0.1, 0.7, 0.2]; 4];
        let f = vec![vec![0.9, 0.1, -0.4, 2.0], vec![-1.0, 0.5, 0.5, 0.0]];
        let l = text_loss(&f, &same, &[1, 3], 0.8, TextReduction::Sum, TextAxis::Class).unwrap();
        assert!((l - 2.0 * 4f64.ln()).abs() < 1e-12);

        // composed oracle for a random pair
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let anchors: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let f: Vec<Vec<f64>> = (0..2).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y = [2, 0];
        let mut expect = 0.0;
        for (fb, &yb) in f.iter().zip(&y) {
            let s: Vec<f64> = anchors
                .iter()
                .map(|t| crate::numeric::cosine_similarity(fb, t).unwrap())
                .collect();
            let p = crate::numeric::softmax_temp(&s, 0.8).unwrap();
            expect -= p[yb].ln();
        }
        let l = text_loss(&f, &anchors, &y, 0.8, TextReduction::Sum, TextAxis::Class).unwrap();
        assert!((l - expect).abs() < 1e-12);
        let m = text_loss(&f, &anchors, &y, 0.8, TextReduction::Mean, TextAxis::Class).unwrap();
        assert!((m - expect / 2.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(total_loss(1.3, 5.0, 7.0, 0.0, 0.0), 1.3);
        assert!((total_loss(1.0, 1.0, 1.0, 0.6, 0.3) - 1.9).abs() < 1e-15);
        assert!((total_loss(0.25, 2.0, 4.0, 0.5, 0.125) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn plain_softmax_ce_head_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = ModelParams::init(4, 4, 3, &mut rng);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels = vec![0, 2, 1];
        let labeled = LabeledBatch { inputs: xs.iter().map(|x| x.as_slice()).collect(), labels: labels.clone() };
        let anchors: Vec<Vec<f64>> = (0..3).map(|c| basis(4, c)).collect();
        let cfg = LossConfig { lambda1: 0.0, lambda2: 0.0, ..Default::default() };
        let (_, g) = loss_and_gradients(&params, &labeled, &UnlabeledBatch::default(), &anchors, &cfg).unwrap();
        let mut expect = vec![0.0; 12];
        for (x, &y) in xs.iter().zip(&labels) {
            let fw = params.forward(x).unwrap();
            for c in 0..3 {
                let d = (fw.p[c] - if c == y { 1.0 } else { 0.0 }) / 3.0;
                for j in 0..4 {
                    expect[c * 4 + j] += d * fw.f[j];
                }
            }
        }
        for (a, b) in g.head_w.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn masked_unlabeled_contributes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ModelParams::init(3, 3, 2, &mut rng);
        let x = vec![0.5, -0.5, 1.0];
        let labeled = LabeledBatch { inputs: vec![&x], labels: vec![1] };
        let anchors = vec![basis(3, 0), basis(3, 1)];
        let cfg = LossConfig::default();
        let (l0, g0) = loss_and_gradients(&params, &labeled, &UnlabeledBatch::default(), &anchors, &cfg).unwrap();
        let s1 = vec![1.0, 2.0, 3.0];
        let s2 = vec![-1.0, 0.0, 0.5];
        for target in [ProbVector::one_hot(0, 2), ProbVector::new(vec![0.3, 0.7]).unwrap()] {
            let un = UnlabeledBatch {
                strong_inputs: vec![&s1, &s2],
                targets: vec![target.clone(), target],
                masks: vec![false, false],
            };
            let (l1, g1) = loss_and_gradients(&params, &labeled, &un, &anchors, &cfg).unwrap();
            assert_eq!(g0, g1);
            assert_eq!(l1.l_u, 0.0);
            assert_eq!(l0.total, l1.total);
        }
    }

    #[test]
    fn breakdown_identity() {
        let l = LossBreakdown::new(0.7, 3.2, 0.4, 0.6, 0.3);
        assert!((l.total - (0.7 + 0.6 * 3.2 + 0.3 * 0.4)).abs() < 1e-12);
    }
}
