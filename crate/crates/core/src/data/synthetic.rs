//! Seeded Gaussian-mixture benchmark with controllable class confusability.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, l2_normalize, norm};

use super::{Dataset, LabeledSample, UnlabeledSample};

/// Two classes whose means are pulled together to a target cosine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusablePair {
    pub a: usize,
    pub b: usize,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub input_dim: usize,
    /// Totals per split; classes are assigned round-robin.
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
    /// Per-coordinate standard deviation around the class mean.
    pub spread: f64,
    pub confusable_pairs: Vec<ConfusablePair>,
    /// Weight of the class mean in each text anchor.
    pub anchor_correlation: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 7,
            input_dim: 32,
            labeled: 100,
            unlabeled: 5000,
            test: 1400,
            spread: 0.35,
            confusable_pairs: vec![
                ConfusablePair { a: 0, b: 1, overlap: 0.9 },
                ConfusablePair { a: 2, b: 5, overlap: 0.9 },
            ],
            anchor_correlation: 0.8,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("synthetic benchmark needs at least two classes"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("input dimension must be positive"));
        }
        if self.labeled == 0 || self.unlabeled == 0 || self.test == 0 {
            return Err(Error::config("split sizes must be positive"));
        }
        if !(self.spread >= 0.0) || !self.spread.is_finite() {
            return Err(Error::config("spread must be a nonnegative number"));
        }
        if !(0.0..=1.0).contains(&self.anchor_correlation) {
            return Err(Error::config("anchor correlation must be in [0, 1]"));
        }
        let mut used = vec![false; self.num_classes];
        for p in &self.confusable_pairs {
            if p.a >= self.num_classes || p.b >= self.num_classes || p.a == p.b {
                return Err(Error::config(format!("invalid confusable pair ({}, {})", p.a, p.b)));
            }
            if !(0.0..=1.0).contains(&p.overlap) {
                return Err(Error::config("pair overlap must be in [0, 1]"));
            }
            // pairs are placed independently; a class in two pairs cannot
            // satisfy both constraints in general
            if used[p.a] || used[p.b] {
                return Err(Error::config(format!(
                    "infeasible overlap constraints: class in more than one confusable pair ({}, {})",
                    p.a, p.b
                )));
            }
            used[p.a] = true;
            used[p.b] = true;
        }
        Ok(())
    }
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = l2_normalize(&v) {
            return u;
        }
    }
}

/// Rotates two unit means within their common plane so that their cosine is
/// exactly `overlap`, keeping their bisector fixed.
fn pull_together<R: Rng + ?Sized>(a: &mut Vec<f64>, b: &mut Vec<f64>, overlap: f64, rng: &mut R) {
    let dim = a.len();
    let sum: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x + y).collect();
    let mid = l2_normalize(&sum).unwrap_or_else(|_| random_unit(dim, rng));
    let diff: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    let along = dot(&diff, &mid);
    let mut ortho: Vec<f64> = diff.iter().zip(&mid).map(|(d, m)| d - along * m).collect();
    if norm(&ortho) < 1e-12 {
        // a and b parallel: pick any direction orthogonal to the bisector
        let r = random_unit(dim, rng);
        let c = dot(&r, &mid);
        ortho = r.iter().zip(&mid).map(|(r, m)| r - c * m).collect();
    }
    let ortho = l2_normalize(&ortho).expect("orthogonal direction is nonzero");
    let half = overlap.clamp(-1.0, 1.0).acos() / 2.0;
    let (c, s) = (half.cos(), half.sin());
    *a = mid.iter().zip(&ortho).map(|(m, o)| c * m + s * o).collect();
    *b = mid.iter().zip(&ortho).map(|(m, o)| c * m - s * o).collect();
}

/// `anchor_k = normalize(ρ·mean_k + (1−ρ)·r_k)` with random unit `r_k`.
pub fn make_text_anchors<R: Rng + ?Sized>(
    anchor_correlation: f64,
    class_means: &[Vec<f64>],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    class_means
        .iter()
        .map(|mean| {
            let r = random_unit(mean.len(), rng);
            let mixed: Vec<f64> = mean
                .iter()
                .zip(&r)
                .map(|(m, r)| anchor_correlation * m + (1.0 - anchor_correlation) * r)
                .collect();
            l2_normalize(&mixed)
        })
        .collect()
}

fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

/// Generates a dataset; identical configs (including the seed) give
/// bitwise-identical datasets. Values are rounded to `f32` so that a dataset
/// survives a trip through the embedding format unchanged.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.num_classes;
    let dim = cfg.input_dim;

    let mut means: Vec<Vec<f64>> = (0..k).map(|_| random_unit(dim, &mut rng)).collect();
    for p in &cfg.confusable_pairs {
        let (mut a, mut b) = (means[p.a].clone(), means[p.b].clone());
        pull_together(&mut a, &mut b, p.overlap, &mut rng);
        means[p.a] = a;
        means[p.b] = b;
    }

    let draw = |class: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        means[class]
            .iter()
            .map(|m| {
                let noise: f64 = rng.sample(StandardNormal);
                round_f32(m + cfg.spread * noise)
            })
            .collect()
    };

    let mut next_id = 0u64;
    let mut labeled = Vec::with_capacity(cfg.labeled);
    for i in 0..cfg.labeled {
        let label = i % k;
        labeled.push(LabeledSample { id: next_id, x: draw(label, &mut rng), label });
        next_id += 1;
    }
    let mut unlabeled = Vec::with_capacity(cfg.unlabeled);
    let mut hidden = HashMap::with_capacity(cfg.unlabeled);
    for i in 0..cfg.unlabeled {
        let label = i % k;
        unlabeled.push(UnlabeledSample { id: next_id, x: draw(label, &mut rng) });
        hidden.insert(next_id, label);
        next_id += 1;
    }
    let mut test = Vec::with_capacity(cfg.test);
    for i in 0..cfg.test {
        let label = i % k;
        test.push(LabeledSample { id: next_id, x: draw(label, &mut rng), label });
        next_id += 1;
    }

    let anchors: Vec<Vec<f64>> = make_text_anchors(cfg.anchor_correlation, &means, &mut rng)?
        .into_iter()
        .map(|a| a.into_iter().map(round_f32).collect())
        .collect();

    Dataset::from_parts(k, dim, labeled, unlabeled, hidden, test, anchors, Some(means))
}
