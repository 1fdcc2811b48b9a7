//! Datasets: the synthetic benchmark generator, embedding-space augmentation
//! and the on-disk embedding format.

pub mod augment;
pub mod format;
pub mod synthetic;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};
use format::{read_embeddings, write_embeddings, EmbeddingRecord};

pub use augment::{strong_aug, weak_aug, AugmentationConfig};
pub use synthetic::{generate_synthetic, make_text_anchors, ConfusablePair, SyntheticConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: u64,
    pub x: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSample {
    pub id: u64,
    pub x: Vec<f64>,
}

/// True labels of the unlabeled pool. Only reachable through
/// [`Dataset::evaluation_oracle`].
#[derive(Debug, Clone, Default, PartialEq)]
struct HiddenLabels(HashMap<u64, usize>);

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub dim: usize,
    pub labeled: Vec<LabeledSample>,
    pub unlabeled: Vec<UnlabeledSample>,
    pub test: Vec<LabeledSample>,
    /// One text anchor per class, indexed by class.
    pub anchors: Vec<Vec<f64>>,
    /// Generator class means, when known.
    pub class_means: Option<Vec<Vec<f64>>>,
    hidden: HiddenLabels,
}

/// Everything the training loop may see: no hidden labels.
#[derive(Debug, Clone, Copy)]
pub struct TrainingView<'a> {
    pub num_classes: usize,
    pub dim: usize,
    pub labeled: &'a [LabeledSample],
    pub unlabeled: &'a [UnlabeledSample],
    pub test: &'a [LabeledSample],
    pub anchors: &'a [Vec<f64>],
}

/// Evaluation-only access to the true labels of unlabeled samples.
#[derive(Debug, Clone, Copy)]
pub struct EvalOracle<'a> {
    labels: &'a HashMap<u64, usize>,
}

impl EvalOracle<'_> {
    pub fn true_label(&self, id: u64) -> Option<usize> {
        self.labels.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Dataset {
    pub(crate) fn from_parts(
        num_classes: usize,
        dim: usize,
        labeled: Vec<LabeledSample>,
        unlabeled: Vec<UnlabeledSample>,
        hidden: HashMap<u64, usize>,
        test: Vec<LabeledSample>,
        anchors: Vec<Vec<f64>>,
        class_means: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let ds = Dataset {
            num_classes,
            dim,
            labeled,
            unlabeled,
            test,
            anchors,
            class_means,
            hidden: HiddenLabels(hidden),
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("a dataset needs at least two classes"));
        }
        if self.anchors.len() != self.num_classes {
            return Err(Error::config(format!(
                "{} anchors for {} classes",
                self.anchors.len(),
                self.num_classes
            )));
        }
        let mut ids = HashSet::new();
        let labeled = self.labeled.iter().chain(&self.test).map(|s| (s.id, &s.x, Some(s.label)));
        let unlabeled = self.unlabeled.iter().map(|s| (s.id, &s.x, None));
        for (id, x, label) in labeled.chain(unlabeled) {
            if !ids.insert(id) {
                return Err(Error::config(format!("duplicate sample id {id}")));
            }
            if x.len() != self.dim {
                return Err(Error::config(format!("sample {id} has dimension {}", x.len())));
            }
            if label.is_some_and(|l| l >= self.num_classes) {
                return Err(Error::config(format!("sample {id} has an out-of-range label")));
            }
        }
        if self.anchors.iter().any(|a| a.len() != self.dim) {
            return Err(Error::config("anchor dimension differs from the sample dimension"));
        }
        Ok(())
    }

    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            num_classes: self.num_classes,
            dim: self.dim,
            labeled: &self.labeled,
            unlabeled: &self.unlabeled,
            test: &self.test,
            anchors: &self.anchors,
        }
    }

    /// `None` when the unlabeled pool came without ground truth.
    pub fn evaluation_oracle(&self) -> Option<EvalOracle<'_>> {
        if self.hidden.0.is_empty() {
            None
        } else {
            Some(EvalOracle { labels: &self.hidden.0 })
        }
    }

    /// Writes `train.sitf` (labeled + unlabeled), `test.sitf`, `anchors.sitf`
    /// and, when ground truth is known, `unlabeled_truth.sitf` into `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rec = |id: u64, label: Option<usize>, x: &[f64]| {
            EmbeddingRecord::new(id, label.map(|l| l as u32), x.iter().map(|&v| v as f32).collect())
        };
        let mut train: Vec<EmbeddingRecord> =
            self.labeled.iter().map(|s| rec(s.id, Some(s.label), &s.x)).collect();
        train.extend(self.unlabeled.iter().map(|s| rec(s.id, None, &s.x)));
        write_embeddings(dir.join("train.sitf"), self.dim, &train)?;
        let test: Vec<_> = self.test.iter().map(|s| rec(s.id, Some(s.label), &s.x)).collect();
        write_embeddings(dir.join("test.sitf"), self.dim, &test)?;
        let anchors: Vec<_> = self
            .anchors
            .iter()
            .enumerate()
            .map(|(c, a)| rec(c as u64, Some(c), a))
            .collect();
        write_embeddings(dir.join("anchors.sitf"), self.dim, &anchors)?;
        if !self.hidden.0.is_empty() {
            let truth: Vec<_> = self
                .unlabeled
                .iter()
                .filter_map(|s| self.hidden.0.get(&s.id).map(|&l| rec(s.id, Some(l), &s.x)))
                .collect();
            write_embeddings(dir.join("unlabeled_truth.sitf"), self.dim, &truth)?;
        }
        Ok(())
    }

    /// Loads a dataset from embedding files. Records in `train` with label -1
    /// form the unlabeled pool; `truth`, when given, supplies their hidden
    /// labels for evaluation.
    pub fn load(
        train: impl AsRef<Path>,
        test: impl AsRef<Path>,
        anchors: impl AsRef<Path>,
        truth: Option<&Path>,
    ) -> Result<Self> {
        let train = read_embeddings(train)?;
        let test = read_embeddings(test)?;
        let anchor_file = read_embeddings(anchors)?;
        let k = anchor_file.records.len();
        let dim = anchor_file.dim;
        for (name, f) in [("train", &train), ("test", &test)] {
            if f.dim != dim {
                return Err(Error::config(format!(
                    "{name} file has dimension {}, anchors have {dim}",
                    f.dim
                )));
            }
        }
        let mut anchors = vec![None; k];
        for r in &anchor_file.records {
            let c = r.label.ok_or_else(|| Error::config("anchor record without a class label"))? as usize;
            if c >= k || anchors[c].is_some() {
                return Err(Error::config(format!("anchor labels must be a permutation of 0..{k}")));
            }
            anchors[c] = Some(r.to_f64());
        }
        let anchors: Vec<Vec<f64>> = anchors.into_iter().map(|a| a.unwrap()).collect();

        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        for r in train.records {
            match r.label {
                Some(l) => labeled.push(LabeledSample { id: r.id, x: r.to_f64(), label: l as usize }),
                None => unlabeled.push(UnlabeledSample { id: r.id, x: r.to_f64() }),
            }
        }
        let test = test
            .records
            .into_iter()
            .map(|r| {
                let label = r.label.ok_or_else(|| Error::config(format!("test record {} is unlabeled", r.id)))?;
                Ok(LabeledSample { id: r.id, x: r.to_f64(), label: label as usize })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut hidden = HashMap::new();
        if let Some(path) = truth {
            for r in read_embeddings(path)?.records {
                if let Some(l) = r.label {
                    hidden.insert(r.id, l as usize);
                }
            }
        }
        Dataset::from_parts(k, dim, labeled, unlabeled, hidden, test, anchors, None)
    }

    /// Class counts of the labeled set divided by its size.
    pub fn labeled_marginal(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.num_classes];
        self.labeled.iter().for_each(|s| counts[s.label] += 1.0);
        let n = self.labeled.len().max(1) as f64;
        counts.into_iter().map(|c| c / n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_load_preserves_everything() {
        let cfg = SyntheticConfig { labeled: 14, unlabeled: 30, test: 21, ..Default::default() };
        let ds = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write_to_dir(dir.path()).unwrap();
        let back = Dataset::load(
            dir.path().join("train.sitf"),
            dir.path().join("test.sitf"),
            dir.path().join("anchors.sitf"),
            Some(&dir.path().join("unlabeled_truth.sitf")),
        )
        .unwrap();
        assert_eq!(back.labeled, ds.labeled);
        assert_eq!(back.unlabeled, ds.unlabeled);
        assert_eq!(back.test, ds.test);
        assert_eq!(back.anchors, ds.anchors);
        let (a, b) = (ds.evaluation_oracle().unwrap(), back.evaluation_oracle().unwrap());
        for s in &ds.unlabeled {
            assert_eq!(a.true_label(s.id), b.true_label(s.id));
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let x = vec![1.0, 0.0];
        let s = LabeledSample { id: 1, x: x.clone(), label: 0 };
        let err = Dataset::from_parts(
            2,
            2,
            vec![s.clone()],
            vec![UnlabeledSample { id: 1, x }],
            HashMap::new(),
            vec![],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            None,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
