use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentationConfig, Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::model::{LossConfig, TextAxis, TextReduction};
use crate::pseudolabel::{AlignMode, PseudoLabelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Temperature of the similarity softmaxes (text loss, text and instance levels).
    pub tau: f64,
    /// Confidence threshold for the unsupervised loss mask.
    pub alpha: f64,
    /// Confidence threshold for buffer admission; must be at least `alpha`.
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub buffer_momentum: f64,
    /// Defaults to four times the labeled count.
    pub buffer_capacity: Option<usize>,
    pub aligner_decay: f64,
    /// Batches during which alignment is the identity.
    pub aligner_warmup_batches: usize,
    /// Unlabeled-to-labeled batch ratio.
    pub mu: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Initial learning rate.
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub seeds: Vec<u64>,
    /// Adapter output dimension; defaults to the input dimension.
    pub adapter_dim: Option<usize>,
    pub use_text_prob: bool,
    pub use_instance_prob: bool,
    pub use_text_loss: bool,
    pub literal_instance_prob: bool,
    pub align_mode: AlignMode,
    pub text_loss_reduction: TextReduction,
    pub text_softmax_axis: TextAxis,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.1,
            alpha: 0.8,
            gamma: 0.86,
            lambda1: 0.6,
            lambda2: 0.3,
            buffer_momentum: 0.9,
            buffer_capacity: None,
            aligner_decay: 0.999,
            aligner_warmup_batches: 16,
            mu: 4,
            batch_size: 16,
            epochs: 60,
            learning_rate: 5e-4,
            lr_schedule: LrSchedule::Constant,
            seeds: vec![0, 1, 2, 3, 4],
            adapter_dim: None,
            use_text_prob: true,
            use_instance_prob: true,
            use_text_loss: true,
            literal_instance_prob: false,
            align_mode: AlignMode::LabeledMarginal,
            text_loss_reduction: TextReduction::Sum,
            text_softmax_axis: TextAxis::Class,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Config(msg)) };
        check(self.tau > 0.0 && self.tau.is_finite(), format!("tau must be positive, got {}", self.tau))?;
        check(
            self.alpha > 0.0 && self.alpha <= self.gamma && self.gamma < 1.0,
            format!("thresholds must satisfy 0 < alpha <= gamma < 1, got alpha={} gamma={}", self.alpha, self.gamma),
        )?;
        check(
            self.lambda1 >= 0.0 && self.lambda2 >= 0.0,
            "loss weights must be nonnegative".into(),
        )?;
        check(
            (0.0..1.0).contains(&self.buffer_momentum),
            format!("buffer momentum must be in [0, 1), got {}", self.buffer_momentum),
        )?;
        check(
            self.aligner_decay > 0.0 && self.aligner_decay < 1.0,
            format!("aligner decay must be in (0, 1), got {}", self.aligner_decay),
        )?;
        check(self.mu >= 1, "mu must be at least 1".into())?;
        check(self.batch_size >= 1, "batch size must be at least 1".into())?;
        check(self.epochs >= 1, "epochs must be at least 1".into())?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning rate must be positive".into(),
        )?;
        check(!self.seeds.is_empty(), "at least one seed is required".into())?;
        check(self.adapter_dim != Some(0), "adapter dimension must be positive".into())?;
        Ok(())
    }

    pub fn pseudo_label_config(&self) -> PseudoLabelConfig {
        PseudoLabelConfig {
            tau: self.tau,
            alpha: self.alpha,
            gamma: self.gamma,
            use_text: self.use_text_prob,
            use_instance: self.use_instance_prob,
            literal_instance: self.literal_instance_prob,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            tau: self.tau,
            use_text_loss: self.use_text_loss,
            text_reduction: self.text_loss_reduction,
            text_axis: self.text_softmax_axis,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr·cos(7πk / 16K)` over the `K` total steps.
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => (7.0 * std::f64::consts::PI * step as f64 / (16.0 * total.max(1) as f64)).cos(),
        }
    }
}

/// Where a run's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Generated per run; the run seed is added to the generator seed.
    Synthetic(SyntheticConfig),
    Files {
        train: PathBuf,
        test: PathBuf,
        anchors: PathBuf,
        #[serde(default)]
        truth: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticConfig::default())
    }
}

impl DataSource {
    /// Dataset for one run seed. File sources ignore the seed.
    pub fn load(&self, run_seed: u64) -> Result<Dataset> {
        match self {
            DataSource::Synthetic(cfg) => {
                let cfg = SyntheticConfig { seed: cfg.seed.wrapping_add(run_seed), ..cfg.clone() };
                crate::data::generate_synthetic(&cfg)
            }
            DataSource::Files { train, test, anchors, truth } => {
                Dataset::load(train, test, anchors, truth.as_deref())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Write a checkpoint every N epochs (0 disables).
    pub checkpoint_every: usize,
    /// Dump the instance buffer at every checkpoint and at the end of the run.
    pub buffer_snapshots: bool,
    /// Write per-sample pseudo-label records for the final epoch.
    pub diagnostics: bool,
    /// Write the per-step log.
    pub step_log: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            checkpoint_every: 0,
            buffer_snapshots: false,
            diagnostics: false,
            step_log: true,
        }
    }
}

/// Complete experiment description; the structure of the TOML config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub augment: AugmentationConfig,
    pub data: DataSource,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.augment.validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        Ok(())
    }
}
