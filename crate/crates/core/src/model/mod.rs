//! Trainable surrogate for the image encoder and classification head.
//!
//! A linear adapter maps an input embedding `x` to a feature `f = W·x + a`, and a
//! fully connected head maps the feature to class probabilities
//! `p = softmax(H·f + c)`. Gradients for every loss are derived by hand in
//! [`loss`]; [`adam`] holds the optimizer.

pub mod adam;
pub mod checkpoint;
pub mod loss;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{softmax_raw, ProbVector};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use loss::{
    loss_and_gradients, supervised_loss, text_loss, total_loss, LabeledBatch, LossBreakdown,
    LossConfig, TextAxis, TextReduction, UnlabeledBatch,
};

/// Adapter and head weights. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d_in: usize,
    pub d: usize,
    pub k: usize,
    /// `d × d_in`
    pub adapter_w: Vec<f64>,
    pub adapter_b: Vec<f64>,
    /// `k × d`
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub f: Vec<f64>,
    pub logits: Vec<f64>,
    pub p: ProbVector,
}

impl ModelParams {
    pub fn zeros(d_in: usize, d: usize, k: usize) -> Self {
        ModelParams {
            d_in,
            d,
            k,
            adapter_w: vec![0.0; d * d_in],
            adapter_b: vec![0.0; d],
            head_w: vec![0.0; k * d],
            head_b: vec![0.0; k],
        }
    }

    /// Identity adapter when `d == d_in` (Gaussian with variance `1/d_in`
    /// otherwise) and a small Gaussian head.
    pub fn init<R: Rng + ?Sized>(d_in: usize, d: usize, k: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(d_in, d, k);
        if d == d_in {
            for i in 0..d {
                p.adapter_w[i * d_in + i] = 1.0;
            }
        } else {
            let n = Normal::new(0.0, (1.0 / d_in as f64).sqrt()).expect("valid std");
            p.adapter_w.iter_mut().for_each(|w| *w = n.sample(rng));
        }
        let n = Normal::new(0.0, 0.01).expect("valid std");
        p.head_w.iter_mut().for_each(|w| *w = n.sample(rng));
        p
    }

    pub fn num_params(&self) -> usize {
        self.adapter_w.len() + self.adapter_b.len() + self.head_w.len() + self.head_b.len()
    }

    /// Parameter blocks in a fixed order: adapter weights, adapter bias, head
    /// weights, head bias.
    pub fn blocks(&self) -> [&[f64]; 4] {
        [&self.adapter_w, &self.adapter_b, &self.head_w, &self.head_b]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.adapter_w,
            &mut self.adapter_b,
            &mut self.head_w,
            &mut self.head_b,
        ]
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.d_in == other.d_in && self.d == other.d && self.k == other.k
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// `W·x + a`.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(Error::domain(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.d_in
            )));
        }
        Ok(affine(&self.adapter_w, &self.adapter_b, x))
    }

    pub fn logits(&self, f: &[f64]) -> Vec<f64> {
        affine(&self.head_w, &self.head_b, f)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        let f = self.features(x)?;
        let logits = self.logits(&f);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite logits"));
        }
        let p = ProbVector::from_normalized(softmax_raw(&logits, 1.0));
        Ok(Forward { f, logits, p })
    }

    /// Argmax of the semantic head.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.forward(x)?.p.argmax())
    }
}

/// `M·x + b` for a row-major `M`.
pub(crate) fn affine(m: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    m.chunks_exact(cols)
        .zip(b)
        .map(|(row, bias)| bias + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_model_is_uniform() {
        let m = ModelParams::zeros(4, 3, 7);
        let out = m.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert!(out.p.iter().all(|p| (p - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn aligned_head_row_wins() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = ModelParams::init(5, 5, 4, &mut rng);
        let x = [0.2, -0.4, 0.9, 0.1, 0.3];
        for (i, v) in x.iter().enumerate() {
            m.head_w[2 * 5 + i] = 50.0 * v;
        }
        assert_eq!(m.predict(&x).unwrap(), 2);
    }

    #[test]
    fn forward_matches_straight_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut m = ModelParams::init(3, 2, 3, &mut rng);
        m.adapter_b = vec![0.1, -0.2];
        m.head_b = vec![0.3, 0.0, -0.1];
        let x = [0.5, -1.0, 2.0];
        let w = &m.adapter_w;
        let f0 = w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + 0.1;
        let f1 = w[3] * x[0] + w[4] * x[1] + w[5] * x[2] - 0.2;
        let h = &m.head_w;
        let z = [
            h[0] * f0 + h[1] * f1 + 0.3,
            h[2] * f0 + h[3] * f1,
            h[4] * f0 + h[5] * f1 - 0.1,
        ];
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        let out = m.forward(&x).unwrap();
        assert!((out.f[0] - f0).abs() < 1e-12 && (out.f[1] - f1).abs() < 1e-12);
        for c in 0..3 {
            assert!((out.p[c] - e[c] / s).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let m = ModelParams::zeros(4, 4, 2);
        assert!(matches!(m.forward(&[1.0]), Err(Error::Domain(_))));
    }
}
