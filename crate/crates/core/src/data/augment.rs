//! Embedding-space weak and strong augmentation.
//!
//! Weak: Gaussian noise scaled by the input's RMS. Strong: larger noise, then a
//! fixed fraction of coordinates zeroed at random.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Weak noise scale as a fraction of the per-coordinate RMS.
    pub weak_noise: f64,
    pub strong_noise: f64,
    /// Fraction of coordinates zeroed in the strong view.
    pub strong_mask_fraction: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            weak_noise: 0.1,
            strong_noise: 0.5,
            strong_mask_fraction: 0.2,
        }
    }
}

impl AugmentationConfig {
    pub fn identity() -> Self {
        AugmentationConfig {
            weak_noise: 0.0,
            strong_noise: 0.0,
            strong_mask_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weak_noise >= 0.0 && self.strong_noise.is_finite()) {
            return Err(Error::config("augmentation noise must be nonnegative"));
        }
        if self.weak_noise > self.strong_noise {
            return Err(Error::config(format!(
                "weak noise {} exceeds strong noise {}",
                self.weak_noise, self.strong_noise
            )));
        }
        if !(0.0..1.0).contains(&self.strong_mask_fraction) {
            return Err(Error::config("strong mask fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn add_noise<R: Rng + ?Sized>(x: &[f64], scale: f64, rng: &mut R) -> Vec<f64> {
    if scale == 0.0 {
        return x.to_vec();
    }
    let sigma = scale * rms(x);
    x.iter()
        .map(|v| {
            let n: f64 = rng.sample(StandardNormal);
            v + sigma * n
        })
        .collect()
}

pub fn weak_aug<R: Rng + ?Sized>(x: &[f64], cfg: &AugmentationConfig, rng: &mut R) -> Vec<f64> {
    add_noise(x, cfg.weak_noise, rng)
}

pub fn strong_aug<R: Rng + ?Sized>(x: &[f64], cfg: &AugmentationConfig, rng: &mut R) -> Vec<f64> {
    let mut out = add_noise(x, cfg.strong_noise, rng);
    let masked = (cfg.strong_mask_fraction * x.len() as f64).round() as usize;
    if masked > 0 {
        for i in index::sample(rng, x.len(), masked.min(x.len())) {
            out[i] = 0.0;
        }
    }
    out
}
