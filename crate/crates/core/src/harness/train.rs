//! The training loop.
//!
//! Each step draws `B` labeled and `μB` unlabeled samples. Labeled weak views
//! feed the supervised and text losses and refresh their buffer entries.
//! Unlabeled weak views produce fused, aligned pseudo-labels that supervise the
//! strong views when confident enough and enter the buffer when very
//! confident. One Adam step is applied to the total loss.
//!
//! An epoch is one pass over the unlabeled pool; labeled batches cycle.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{BufferConfig, InstanceMemoryBuffer, LabeledFeature};
use crate::data::{strong_aug, weak_aug, AugmentationConfig, EvalOracle, LabeledSample, TrainingView};
use crate::error::{Error, Result};
use crate::model::{loss_and_gradients, Adam, AdamConfig, LabeledBatch, ModelParams, UnlabeledBatch};
use crate::numeric::ProbVector;
use crate::pseudolabel::{fuse_raw, label_from_aligned, AlignMode, DistributionAligner, FusedPseudoLabel};

use super::config::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_s: f64,
    pub l_t: f64,
    pub l_u: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub unlabeled: usize,
    pub alpha_pass: usize,
    pub gamma_admit: usize,
    pub buffer_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub l_s: f64,
    pub l_t: f64,
    pub l_u: f64,
    pub total: f64,
    pub alpha_pass_rate: f64,
    pub alpha_pass_count: usize,
    pub gamma_admissions: usize,
    pub buffer_size: usize,
    /// Accuracy of masked pseudo-labels against hidden labels, when available.
    pub pseudo_label_accuracy: Option<f64>,
    pub test_accuracy: f64,
}

/// One pseudo-label as seen by the training loop, for diagnostics.
#[derive(Debug, Clone)]
pub struct DiagnosticRecord {
    pub epoch: usize,
    pub sample_id: u64,
    pub p_sem: ProbVector,
    pub p_text: Option<ProbVector>,
    pub p_ins: Option<Vec<f64>>,
    pub label: FusedPseudoLabel,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    pub steps: Vec<StepRecord>,
    pub final_test_accuracy: f64,
    pub params: ModelParams,
    pub optimizer: Adam,
    pub buffer: InstanceMemoryBuffer,
    pub diagnostics: Vec<DiagnosticRecord>,
}

/// Optional per-run hooks.
#[derive(Default)]
pub struct RunHooks<'a> {
    /// Called after every epoch with the current state.
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochMetrics, &ModelParams, &Adam, &InstanceMemoryBuffer) -> Result<()>>,
    /// Called with the steps so far when the run aborts on a non-finite loss.
    pub on_failure: Option<&'a mut dyn FnMut(&Error, &[StepRecord]) -> Result<()>>,
    /// Collect per-sample pseudo-label records for the final epoch.
    pub collect_diagnostics: bool,
}

/// Fraction of samples whose semantic-head argmax equals the label.
pub fn accuracy(params: &ModelParams, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::config("accuracy of an empty sample set"));
    }
    let mut correct = 0usize;
    for s in samples {
        if params.predict(&s.x)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Alignment target for the configured mode.
fn aligner_for(cfg: &TrainConfig, view: &TrainingView<'_>) -> Result<DistributionAligner> {
    let k = view.num_classes;
    let warmup = (cfg.aligner_warmup_batches * cfg.mu * cfg.batch_size) as u64;
    let target = match cfg.align_mode {
        AlignMode::Off => return Ok(DistributionAligner::disabled(k)),
        AlignMode::Uniform => ProbVector::uniform(k),
        AlignMode::LabeledMarginal => {
            let mut counts = vec![0.0; k];
            view.labeled.iter().for_each(|s| counts[s.label] += 1.0);
            let n: f64 = counts.iter().sum();
            if counts.iter().any(|c| *c == 0.0) {
                // a class with no labels would be suppressed entirely
                ProbVector::uniform(k)
            } else {
                ProbVector::new(counts.into_iter().map(|c| c / n).collect())?
            }
        }
    };
    DistributionAligner::new(target, cfg.aligner_decay, warmup)
}

/// Runs one training run. `oracle` only feeds the pseudo-label accuracy
/// metric; it never influences training.
pub fn train_run(
    cfg: &TrainConfig,
    augment: &AugmentationConfig,
    view: TrainingView<'_>,
    oracle: Option<EvalOracle<'_>>,
    seed: u64,
    mut hooks: RunHooks<'_>,
) -> Result<RunResult> {
    cfg.validate()?;
    augment.validate()?;
    if view.labeled.is_empty() {
        return Err(Error::config("training needs at least one labeled sample"));
    }
    if view.unlabeled.is_empty() {
        return Err(Error::config("training needs at least one unlabeled sample"));
    }
    if view.test.is_empty() {
        return Err(Error::config("training needs a nonempty test set"));
    }
    if view.anchors.len() != view.num_classes {
        return Err(Error::config("anchor count does not match the class count"));
    }

    let k = view.num_classes;
    let d_in = view.dim;
    let d = cfg.adapter_dim.unwrap_or(d_in);
    if d != d_in && cfg.use_text_loss | cfg.use_text_prob {
        return Err(Error::config(format!(
            "text anchors live in dimension {d_in}; adapter dimension {d} cannot be compared with them"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(d_in, d, k, &mut rng);
    let mut optimizer = Adam::new(&params, AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() });

    let initial: Vec<Vec<f64>> = view
        .labeled
        .iter()
        .map(|s| params.features(&s.x))
        .collect::<Result<_>>()?;
    let items: Vec<LabeledFeature<'_>> = view
        .labeled
        .iter()
        .zip(&initial)
        .map(|(s, f)| LabeledFeature { id: s.id, feature: f, label: s.label })
        .collect();
    let mut buffer = InstanceMemoryBuffer::init_from_labeled(
        &items,
        k,
        BufferConfig {
            momentum: cfg.buffer_momentum,
            capacity: cfg.buffer_capacity,
            admission_threshold: cfg.gamma,
        },
    )?;
    let mut aligner = aligner_for(cfg, &view)?;
    let pl_cfg = cfg.pseudo_label_config();
    let loss_cfg = cfg.loss_config();
    let mu_b = cfg.mu * cfg.batch_size;

    let mut labeled_order: Vec<usize> = (0..view.labeled.len()).collect();
    labeled_order.shuffle(&mut rng);
    let mut labeled_cursor = 0usize;
    let mut unlabeled_order: Vec<usize> = (0..view.unlabeled.len()).collect();

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut steps = Vec::new();
    let mut diagnostics = Vec::new();
    let mut step_index = 0usize;
    let total_steps = cfg.epochs * view.unlabeled.len().div_ceil(mu_b);

    for epoch in 1..=cfg.epochs {
        unlabeled_order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut n_steps = 0usize;
        let (mut seen, mut passed, mut admitted) = (0usize, 0usize, 0usize);
        let (mut pl_checked, mut pl_correct) = (0usize, 0usize);
        let last_epoch = epoch == cfg.epochs;

        for chunk in unlabeled_order.chunks(mu_b) {
            // labeled weak views
            let mut lab_x = Vec::with_capacity(cfg.batch_size);
            let mut lab_y = Vec::with_capacity(cfg.batch_size);
            let mut lab_ids = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                if labeled_cursor == labeled_order.len() {
                    labeled_order.shuffle(&mut rng);
                    labeled_cursor = 0;
                }
                let s = &view.labeled[labeled_order[labeled_cursor]];
                labeled_cursor += 1;
                lab_x.push(weak_aug(&s.x, augment, &mut rng));
                lab_y.push(s.label);
                lab_ids.push(s.id);
            }
            for (id, x) in lab_ids.iter().zip(&lab_x) {
                let f = params.features(x)?;
                buffer.ema_update(*id, &f)?;
            }

            // unlabeled weak/strong views and raw pseudo-labels
            let mut strong = Vec::with_capacity(chunk.len());
            let mut weak_feats = Vec::with_capacity(chunk.len());
            let mut raws = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let u = &view.unlabeled[i];
                let xw = weak_aug(&u.x, augment, &mut rng);
                let xs = strong_aug(&u.x, augment, &mut rng);
                let fw = params.forward(&xw)?;
                let raw = fuse_raw(&fw.f, &fw.p, view.anchors, &buffer, &pl_cfg)?;
                raws.push((fw.p, raw));
                weak_feats.push(fw.f);
                strong.push(xs);
            }
            // alignment is sequential in sample order
            let mut labels = Vec::with_capacity(chunk.len());
            for (p_sem, (raw, p_text, p_ins)) in raws {
                let aligned = aligner.align(&raw)?;
                let label = label_from_aligned(raw, aligned, &pl_cfg);
                if hooks.collect_diagnostics && last_epoch {
                    diagnostics.push(DiagnosticRecord {
                        epoch,
                        sample_id: view.unlabeled[chunk[labels.len()]].id,
                        p_sem,
                        p_text,
                        p_ins,
                        label: label.clone(),
                    });
                }
                labels.push(label);
            }
            let mut step_pass = 0usize;
            let mut step_admit = 0usize;
            for ((&i, label), f) in chunk.iter().zip(&labels).zip(&weak_feats) {
                let id = view.unlabeled[i].id;
                if label.passes_alpha {
                    step_pass += 1;
                    if let Some(truth) = oracle.and_then(|o| o.true_label(id)) {
                        pl_checked += 1;
                        if label.aligned.argmax() == truth {
                            pl_correct += 1;
                        }
                    }
                }
                if label.passes_gamma && buffer.admit_unlabeled(id, f, &label.aligned)? {
                    step_admit += 1;
                }
            }

            let labeled_batch = LabeledBatch {
                inputs: lab_x.iter().map(|x| x.as_slice()).collect(),
                labels: lab_y,
            };
            let masks: Vec<bool> = labels.iter().map(|l| l.passes_alpha).collect();
            let unlabeled_batch = UnlabeledBatch {
                strong_inputs: strong.iter().map(|x| x.as_slice()).collect(),
                targets: labels.into_iter().map(|l| l.aligned).collect(),
                masks,
            };
            let (losses, grads) = loss_and_gradients(&params, &labeled_batch, &unlabeled_batch, view.anchors, &loss_cfg)?;
            if !losses.is_finite() || !grads.is_finite() {
                let err = Error::NonFinite {
                    epoch,
                    step: step_index,
                    detail: format!(
                        "l_s={} l_t={} l_u={} total={} grads_finite={}",
                        losses.l_s,
                        losses.l_t,
                        losses.l_u,
                        losses.total,
                        grads.is_finite()
                    ),
                };
                if let Some(cb) = hooks.on_failure.as_mut() {
                    cb(&err, &steps)?;
                }
                return Err(err);
            }
            optimizer.config.lr = cfg.learning_rate * cfg.lr_schedule.factor(step_index, total_steps);
            optimizer.step(&mut params, &grads)?;

            sums[0] += losses.l_s;
            sums[1] += losses.l_t;
            sums[2] += losses.l_u;
            sums[3] += losses.total;
            n_steps += 1;
            seen += chunk.len();
            passed += step_pass;
            admitted += step_admit;
            steps.push(StepRecord {
                epoch,
                step: step_index,
                l_s: losses.l_s,
                l_t: losses.l_t,
                l_u: losses.l_u,
                total: losses.total,
                lambda1: losses.lambda1,
                lambda2: losses.lambda2,
                unlabeled: chunk.len(),
                alpha_pass: step_pass,
                gamma_admit: step_admit,
                buffer_size: buffer.len(),
            });
            step_index += 1;
        }

        let n = n_steps as f64;
        let metrics = EpochMetrics {
            epoch,
            l_s: sums[0] / n,
            l_t: sums[1] / n,
            l_u: sums[2] / n,
            total: sums[3] / n,
            alpha_pass_rate: passed as f64 / seen as f64,
            alpha_pass_count: passed,
            gamma_admissions: admitted,
            buffer_size: buffer.len(),
            pseudo_label_accuracy: (pl_checked > 0).then(|| pl_correct as f64 / pl_checked as f64),
            test_accuracy: accuracy(&params, view.test)?,
        };
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(&metrics, &params, &optimizer, &buffer)?;
        }
        epochs.push(metrics);
    }

    let final_test_accuracy = epochs.last().map_or(0.0, |m| m.test_accuracy);
    Ok(RunResult {
        seed,
        epochs,
        steps,
        final_test_accuracy,
        params,
        optimizer,
        buffer,
        diagnostics,
    })
}
