//! Instance memory buffer.
//!
//! Holds unit-norm feature embeddings together with a class label for every
//! labeled sample plus the unlabeled samples whose aligned pseudo-label cleared
//! the admission threshold. Features are refreshed with an exponential moving
//! average and queried with a softmax over cosine similarities.
//!
//! Reads take `&self` and updates take `&mut self`, so the borrow checker
//! enforces the single-writer contract: any number of concurrent queries, or
//! exactly one mutation.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, l2_normalize, norm, ProbVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Labeled,
    Unlabeled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferConfig {
    /// EMA momentum `m` applied to the stored feature.
    pub momentum: f64,
    /// Maximum number of entries; `None` means four times the labeled count.
    pub capacity: Option<usize>,
    /// Admission threshold `γ` on the aligned pseudo-label confidence.
    pub admission_threshold: f64,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig {
            momentum: 0.9,
            capacity: None,
            admission_threshold: 0.86,
        }
    }
}

/// A labeled feature for buffer initialization.
#[derive(Debug, Clone)]
pub struct LabeledFeature<'a> {
    pub id: u64,
    pub feature: &'a [f64],
    pub label: usize,
}

/// Borrowed view of one stored entry.
#[derive(Debug, Clone, Copy)]
pub struct BufferEntry<'a> {
    pub sample_id: u64,
    pub feature: &'a [f64],
    pub label: usize,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy)]
struct Meta {
    id: u64,
    label: usize,
    origin: Origin,
}

#[derive(Debug, Clone)]
pub struct InstanceMemoryBuffer {
    dim: usize,
    num_classes: usize,
    momentum: f64,
    capacity: usize,
    admission_threshold: f64,
    labeled_count: usize,
    // row-major M×S
    features: Vec<f64>,
    meta: Vec<Meta>,
    index: HashMap<u64, usize>,
    // unlabeled ids in admission order, oldest first
    fifo: VecDeque<u64>,
}

impl InstanceMemoryBuffer {
    /// Builds a buffer holding one normalized entry per labeled sample.
    pub fn init_from_labeled(
        labeled: &[LabeledFeature<'_>],
        num_classes: usize,
        config: BufferConfig,
    ) -> Result<Self> {
        if labeled.is_empty() {
            return Err(Error::config("instance buffer needs at least one labeled sample"));
        }
        if !(0.0..1.0).contains(&config.momentum) {
            return Err(Error::config(format!(
                "buffer momentum must be in [0, 1), got {}",
                config.momentum
            )));
        }
        if !(config.admission_threshold > 0.0 && config.admission_threshold < 1.0) {
            return Err(Error::config(format!(
                "admission threshold must be in (0, 1), got {}",
                config.admission_threshold
            )));
        }
        let dim = labeled[0].feature.len();
        let capacity = config.capacity.unwrap_or(4 * labeled.len());
        if capacity < labeled.len() {
            return Err(Error::config(format!(
                "buffer capacity {capacity} is below the labeled count {}",
                labeled.len()
            )));
        }
        let mut buf = InstanceMemoryBuffer {
            dim,
            num_classes,
            momentum: config.momentum,
            capacity,
            admission_threshold: config.admission_threshold,
            labeled_count: labeled.len(),
            features: Vec::with_capacity(capacity * dim),
            meta: Vec::with_capacity(capacity),
            index: HashMap::with_capacity(capacity),
            fifo: VecDeque::new(),
        };
        for item in labeled {
            if item.feature.len() != dim {
                return Err(Error::config("inconsistent labeled feature dimensions"));
            }
            if item.label >= num_classes {
                return Err(Error::config(format!("label {} out of range", item.label)));
            }
            if buf.index.contains_key(&item.id) {
                return Err(Error::config(format!("duplicate sample id {}", item.id)));
            }
            let unit = l2_normalize(item.feature)?;
            buf.push(item.id, &unit, item.label, Origin::Labeled);
        }
        Ok(buf)
    }

    fn push(&mut self, id: u64, unit: &[f64], label: usize, origin: Origin) {
        self.index.insert(id, self.meta.len());
        self.meta.push(Meta { id, label, origin });
        self.features.extend_from_slice(unit);
        if origin == Origin::Unlabeled {
            self.fifo.push_back(id);
        }
    }

    fn remove_at(&mut self, row: usize) {
        let last = self.meta.len() - 1;
        let id = self.meta[row].id;
        self.index.remove(&id);
        if row != last {
            let (head, tail) = self.features.split_at_mut(last * self.dim);
            head[row * self.dim..(row + 1) * self.dim].copy_from_slice(&tail[..self.dim]);
            self.meta[row] = self.meta[last];
            self.index.insert(self.meta[row].id, row);
        }
        self.meta.pop();
        self.features.truncate(last * self.dim);
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled_count
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn admission_threshold(&self) -> f64 {
        self.admission_threshold
    }

    pub fn contains(&self, id: u64) -> bool {
        self.index.contains_key(&id)
    }

    pub fn get(&self, id: u64) -> Option<BufferEntry<'_>> {
        self.index.get(&id).map(|&row| self.entry(row))
    }

    fn entry(&self, row: usize) -> BufferEntry<'_> {
        let m = self.meta[row];
        BufferEntry {
            sample_id: m.id,
            feature: &self.features[row * self.dim..(row + 1) * self.dim],
            label: m.label,
            origin: m.origin,
        }
    }

    /// Entries in storage order (the order used by [`instance_similarities`](Self::instance_similarities)).
    pub fn entries(&self) -> impl Iterator<Item = BufferEntry<'_>> + '_ {
        (0..self.meta.len()).map(move |row| self.entry(row))
    }

    /// Stored label per entry, in storage order.
    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.meta.iter().map(|m| m.label)
    }

    /// `stored ← normalize(m·stored + (1−m)·normalize(z_new))`.
    pub fn ema_update(&mut self, id: u64, z_new: &[f64]) -> Result<()> {
        let row = *self.index.get(&id).ok_or(Error::UnknownId(id))?;
        if z_new.len() != self.dim {
            return Err(Error::domain("feature dimension does not match the buffer"));
        }
        let z = l2_normalize(z_new)?;
        let m = self.momentum;
        let slot = &mut self.features[row * self.dim..(row + 1) * self.dim];
        let blended: Vec<f64> = slot
            .iter()
            .zip(&z)
            .map(|(s, z)| m * s + (1.0 - m) * z)
            .collect();
        let unit = l2_normalize(&blended)
            .map_err(|_| Error::domain("EMA blend cancelled to the zero vector"))?;
        slot.copy_from_slice(&unit);
        Ok(())
    }

    /// Admits an unlabeled sample when `max(aligned_pseudo) > γ`.
    ///
    /// A sample already present is EMA-updated and relabeled in place. A new
    /// sample is appended, evicting the oldest unlabeled entry when the buffer
    /// is full. Ids that belong to labeled entries are never touched.
    pub fn admit_unlabeled(&mut self, id: u64, z: &[f64], aligned_pseudo: &ProbVector) -> Result<bool> {
        if aligned_pseudo.max() <= self.admission_threshold {
            return Ok(false);
        }
        let class = aligned_pseudo.argmax();
        if let Some(&row) = self.index.get(&id) {
            if self.meta[row].origin == Origin::Labeled {
                return Ok(false);
            }
            self.ema_update(id, z)?;
            self.meta[row].label = class;
            return Ok(true);
        }
        if z.len() != self.dim {
            return Err(Error::domain("feature dimension does not match the buffer"));
        }
        if self.meta.len() >= self.capacity {
            let Some(oldest) = self.fifo.pop_front() else {
                return Ok(false);
            };
            let row = self.index[&oldest];
            self.remove_at(row);
        }
        let unit = l2_normalize(z)?;
        self.push(id, &unit, class, Origin::Unlabeled);
        Ok(true)
    }

    /// Softmax over `sim(z_w, z_j)/τ` for every stored entry `j`.
    pub fn instance_similarities(&self, z_w: &[f64], tau: f64) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::State("instance buffer is empty".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::domain(format!("temperature must be positive, got {tau}")));
        }
        if z_w.len() != self.dim {
            return Err(Error::domain("query dimension does not match the buffer"));
        }
        let qn = norm(z_w);
        if qn == 0.0 || !qn.is_finite() {
            return Err(Error::domain("zero-norm or non-finite query embedding"));
        }
        // stored rows are unit-norm, so the cosine is a dot product over ‖z_w‖
        let mut scores: Vec<f64> = self
            .features
            .chunks_exact(self.dim)
            .map(|row| dot(z_w, row) / qn / tau)
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        scores.iter_mut().for_each(|s| *s /= total);
        Ok(scores)
    }

    /// Per-class maximum of `similarities` over entries carrying that label;
    /// zero for classes with no entry.
    pub fn classwise_max(&self, similarities: &[f64]) -> Result<Vec<f64>> {
        if similarities.len() != self.len() {
            return Err(Error::domain(format!(
                "{} similarities for {} buffer entries",
                similarities.len(),
                self.len()
            )));
        }
        let mut out = vec![0.0f64; self.num_classes];
        for (meta, s) in self.meta.iter().zip(similarities) {
            if *s > out[meta.label] {
                out[meta.label] = *s;
            }
        }
        Ok(out)
    }

    /// Entries grouped by origin, in storage order. Used for snapshots.
    pub fn snapshot(&self, origin: Origin) -> Vec<(u64, usize, Vec<f64>)> {
        self.entries()
            .filter(|e| e.origin == origin)
            .map(|e| (e.sample_id, e.label, e.feature.to_vec()))
            .collect()
    }
}
