//! Single runs with artifacts, the ablation matrix, threshold sweeps and
//! checkpoint evaluation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::format::read_embeddings;
use crate::data::{Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::model::read_checkpoint;

use super::config::{ExperimentConfig, TrainConfig};
use super::output::{self, RunSummary};
use super::train::{accuracy, train_run, RunHooks, RunResult};

/// Trains once on `dataset` and, when `out_dir` is given, writes the run's
/// artifacts there.
pub fn run_with_dataset(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<RunResult> {
    cfg.validate()?;
    let Some(dir) = out_dir else {
        return train_run(
            &cfg.train,
            &cfg.augment,
            dataset.training_view(),
            dataset.evaluation_oracle(),
            seed,
            RunHooks::default(),
        );
    };
    output::ensure_dir(dir)?;
    output::write_text(&dir.join(output::CONFIG_FILE), &cfg.to_toml_string()?)?;
    let every = cfg.output.checkpoint_every;
    let snapshots = cfg.output.buffer_snapshots;
    let mut on_epoch = |m: &super::train::EpochMetrics,
                        params: &crate::model::ModelParams,
                        opt: &crate::model::Adam,
                        buffer: &crate::buffer::InstanceMemoryBuffer| {
        if every > 0 && m.epoch % every == 0 {
            let path = output::checkpoint_path(dir, m.epoch);
            output::ensure_dir(path.parent().expect("checkpoint path has a parent"))?;
            crate::model::write_checkpoint(&path, params, opt)?;
            if snapshots {
                output::write_buffer_snapshot(dir, &format!("epoch_{:03}", m.epoch), buffer)?;
            }
        }
        Ok(())
    };
    let mut on_failure = |e: &Error, steps: &[super::train::StepRecord]| output::write_failure(dir, e, steps);
    let hooks = RunHooks {
        on_epoch: Some(&mut on_epoch),
        on_failure: Some(&mut on_failure),
        collect_diagnostics: cfg.output.diagnostics,
    };
    let result = train_run(
        &cfg.train,
        &cfg.augment,
        dataset.training_view(),
        dataset.evaluation_oracle(),
        seed,
        hooks,
    );
    let run = result?;
    output::write_metrics(dir, &run.epochs)?;
    if cfg.output.step_log {
        output::write_steps(dir, &run.steps)?;
    }
    if cfg.output.diagnostics {
        output::write_text(&dir.join(output::DIAGNOSTICS_FILE), &output::diagnostics_tsv(&run.diagnostics))?;
    }
    if snapshots {
        output::write_buffer_snapshot(dir, "final", &run.buffer)?;
    }
    output::write_summary(
        dir,
        &RunSummary {
            seed,
            epochs: run.epochs.len(),
            final_test_accuracy: run.final_test_accuracy,
            final_buffer_size: run.buffer.len(),
            metrics: &run.epochs,
        },
    )?;
    Ok(run)
}

/// Loads the configured data for `seed` and trains once.
pub fn run(cfg: &ExperimentConfig, seed: u64, out_dir: Option<&Path>) -> Result<RunResult> {
    cfg.validate()?;
    let dataset = cfg.data.load(seed)?;
    run_with_dataset(cfg, &dataset, seed, out_dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Semantic head only.
    Semantic,
    /// Semantic and text levels.
    SemanticText,
    /// All three pseudo-label levels.
    AllLevels,
    /// All levels plus the text loss.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Semantic, Variant::SemanticText, Variant::AllLevels, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Semantic => "p_sem",
            Variant::SemanticText => "p_sem+p_text",
            Variant::AllLevels => "p_sem+p_text+p_ins",
            Variant::Full => "p_sem+p_text+p_ins+L_t",
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let (text, ins, lt) = match self {
            Variant::Semantic => (false, false, false),
            Variant::SemanticText => (true, false, false),
            Variant::AllLevels => (true, true, false),
            Variant::Full => (true, true, true),
        };
        TrainConfig {
            use_text_prob: text,
            use_instance_prob: ins,
            use_text_loss: lt,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub name: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation; the deviation of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `jobs` (variant or grid index, seed) in parallel. Each job builds its
/// own state; the dataset of a seed is shared read-only.
fn run_grid<T: Sync>(
    cfg: &ExperimentConfig,
    points: &[T],
    make: impl Fn(&T) -> ExperimentConfig + Sync,
    parallel: bool,
) -> Result<Vec<Vec<f64>>> {
    let seeds = &cfg.train.seeds;
    let datasets: Vec<Dataset> = seeds.iter().map(|&s| cfg.data.load(s)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..seeds.len()).map(move |s| (p, s)))
        .collect();
    let one = |&(p, s): &(usize, usize)| -> Result<f64> {
        let c = make(&points[p]);
        run_with_dataset(&c, &datasets[s], seeds[s], None).map(|r| r.final_test_accuracy)
    };
    let accs: Vec<f64> = if parallel {
        jobs.par_iter().map(one).collect::<Result<_>>()?
    } else {
        jobs.iter().map(one).collect::<Result<_>>()?
    };
    Ok(accs.chunks(seeds.len()).map(|c| c.to_vec()).collect())
}

/// The four-variant ablation, every variant on the same per-seed data.
pub fn ablate(cfg: &ExperimentConfig, parallel: bool) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let per_variant = run_grid(
        cfg,
        &Variant::ALL,
        |v| ExperimentConfig { train: v.apply(&cfg.train), ..cfg.clone() },
        parallel,
    )?;
    Ok(Variant::ALL
        .iter()
        .zip(per_variant)
        .map(|(&variant, accuracies)| {
            let (mean, std) = mean_std(&accuracies);
            AblationRow { variant, name: variant.name().to_string(), accuracies, mean, std }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    Gamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// The config used at one sweep point. Sweeping α above γ raises γ to α;
/// sweeping γ below α is an error.
pub fn sweep_point_config(base: &TrainConfig, param: SweepParam, value: f64) -> Result<TrainConfig> {
    if !(value > 0.0 && value < 1.0) {
        return Err(Error::config(format!("sweep value {value} outside (0, 1)")));
    }
    let cfg = match param {
        SweepParam::Alpha => TrainConfig { alpha: value, gamma: base.gamma.max(value), ..base.clone() },
        SweepParam::Gamma => {
            if value < base.alpha {
                return Err(Error::config(format!("gamma {value} below alpha {}", base.alpha)));
            }
            TrainConfig { gamma: value, ..base.clone() }
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, grid: &[f64], parallel: bool) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::config("empty sweep grid"));
    }
    let configs: Vec<TrainConfig> = grid
        .iter()
        .map(|&v| sweep_point_config(&cfg.train, param, v))
        .collect::<Result<_>>()?;
    let per_point = run_grid(cfg, &configs, |t| ExperimentConfig { train: t.clone(), ..cfg.clone() }, parallel)?;
    Ok(grid
        .iter()
        .zip(&configs)
        .zip(per_point)
        .map(|((&value, t), accuracies)| {
            let (mean, std) = mean_std(&accuracies);
            SweepPoint { value, alpha: t.alpha, gamma: t.gamma, accuracies, mean, std }
        })
        .collect())
}

/// Accuracy of a checkpoint on a labeled embedding file.
pub fn evaluate(checkpoint: impl AsRef<Path>, test: impl AsRef<Path>) -> Result<f64> {
    let (params, _) = read_checkpoint(checkpoint)?;
    let file = read_embeddings(test)?;
    if file.dim != params.d_in {
        return Err(Error::format(
            0,
            format!("test embeddings have dimension {}, checkpoint expects {}", file.dim, params.d_in),
        ));
    }
    let samples = file
        .records
        .iter()
        .map(|r| {
            let label = r.label.ok_or_else(|| Error::config(format!("test record {} is unlabeled", r.id)))? as usize;
            if label >= params.k {
                return Err(Error::config(format!("test record {} has label {label} >= {}", r.id, params.k)));
            }
            Ok(LabeledSample { id: r.id, x: r.to_f64(), label })
        })
        .collect::<Result<Vec<_>>>()?;
    accuracy(&params, &samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_of_one_value_has_zero_spread() {
        assert_eq!(mean_std(&[0.4]), (0.4, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_points_keep_the_threshold_order() {
        let base = TrainConfig::default();
        let c = sweep_point_config(&base, SweepParam::Alpha, 0.9).unwrap();
        assert_eq!((c.alpha, c.gamma), (0.9, 0.9));
        let c = sweep_point_config(&base, SweepParam::Alpha, 0.6).unwrap();
        assert_eq!((c.alpha, c.gamma), (0.6, 0.86));
        assert!(sweep_point_config(&base, SweepParam::Gamma, 0.7).is_err());
        assert!(sweep_point_config(&base, SweepParam::Alpha, 1.0).is_err());
    }

    #[test]
    fn variants_toggle_the_expected_flags() {
        let base = TrainConfig::default();
        let s = Variant::Semantic.apply(&base);
        assert!(!s.use_text_prob && !s.use_instance_prob && !s.use_text_loss);
        let f = Variant::Full.apply(&base);
        assert!(f.use_text_prob && f.use_instance_prob && f.use_text_loss);
        assert_eq!(f.alpha, base.alpha);
    }
}
