use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mlpl::data::SyntheticConfig;
use mlpl::harness::output::write_text;
use mlpl::harness::{ablate, evaluate, run, sweep, DataSource, ExperimentConfig, LrSchedule, SweepParam};
use mlpl::model::{TextAxis, TextReduction};
use mlpl::pseudolabel::AlignMode;
use mlpl::{Error, Result};

#[derive(Parser)]
#[command(name = "mlpl", version, about = "Multi-level pseudo-label training on embedding files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as embedding files.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once per configured seed; artifacts go to OUT/seed_N.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the four-variant ablation over all configured seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run jobs sequentially.
        #[arg(long)]
        serial: bool,
    },
    /// Sweep one threshold over a grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        serial: bool,
    },
    /// Accuracy of a checkpoint on a labeled embedding file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
}

#[derive(Args, Default)]
struct Common {
    /// TOML experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    data: DataFlags,
}

#[derive(Args, Default)]
struct TrainFlags {
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    buffer_momentum: Option<f64>,
    #[arg(long)]
    buffer_capacity: Option<usize>,
    #[arg(long)]
    aligner_decay: Option<f64>,
    #[arg(long)]
    aligner_warmup_batches: Option<usize>,
    #[arg(long)]
    mu: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_parser = parse_schedule)]
    lr_schedule: Option<LrSchedule>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    adapter_dim: Option<usize>,
    #[arg(long)]
    use_text_prob: Option<bool>,
    #[arg(long)]
    use_instance_prob: Option<bool>,
    #[arg(long)]
    use_text_loss: Option<bool>,
    #[arg(long)]
    literal_instance_prob: Option<bool>,
    #[arg(long, value_parser = parse_align)]
    align_mode: Option<AlignMode>,
    #[arg(long, value_parser = parse_reduction)]
    text_loss_reduction: Option<TextReduction>,
    #[arg(long, value_parser = parse_axis)]
    text_softmax_axis: Option<TextAxis>,
}

#[derive(Args, Default)]
struct DataFlags {
    /// Labeled + unlabeled embedding file; switches the data source to files.
    #[arg(long)]
    train_file: Option<PathBuf>,
    #[arg(long)]
    test_file: Option<PathBuf>,
    #[arg(long)]
    anchors_file: Option<PathBuf>,
    /// Hidden labels of the unlabeled pool, for evaluation only.
    #[arg(long)]
    truth_file: Option<PathBuf>,
    /// Synthetic generator seed.
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    labeled: Option<usize>,
    #[arg(long)]
    unlabeled: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_align(s: &str) -> std::result::Result<AlignMode, String> {
    parse_enum(s)
}

fn parse_reduction(s: &str) -> std::result::Result<TextReduction, String> {
    parse_enum(s)
}

fn parse_schedule(s: &str) -> std::result::Result<LrSchedule, String> {
    parse_enum(s)
}

fn parse_axis(s: &str) -> std::result::Result<TextAxis, String> {
    parse_enum(s)
}

macro_rules! set {
    ($target:expr, $flags:expr, $($field:ident),*) => {
        $(if let Some(v) = $flags.$field.clone() { $target.$field = v; })*
    };
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        let t = &self.train;
        set!(
            cfg.train, t, tau, alpha, gamma, lambda1, lambda2, buffer_momentum, aligner_decay,
            aligner_warmup_batches, mu, batch_size, epochs, learning_rate, lr_schedule, seeds, use_text_prob,
            use_instance_prob, use_text_loss, literal_instance_prob, align_mode, text_loss_reduction,
            text_softmax_axis
        );
        if t.buffer_capacity.is_some() {
            cfg.train.buffer_capacity = t.buffer_capacity;
        }
        if t.adapter_dim.is_some() {
            cfg.train.adapter_dim = t.adapter_dim;
        }

        let d = &self.data;
        let files = [&d.train_file, &d.test_file, &d.anchors_file];
        if files.iter().any(|f| f.is_some()) {
            match files {
                [Some(train), Some(test), Some(anchors)] => {
                    cfg.data = DataSource::Files {
                        train: train.clone(),
                        test: test.clone(),
                        anchors: anchors.clone(),
                        truth: d.truth_file.clone(),
                    }
                }
                _ => return Err(Error::Config("--train-file, --test-file and --anchors-file go together".into())),
            }
        }
        if let DataSource::Synthetic(s) = &mut cfg.data {
            set!(s, d, labeled, unlabeled, spread);
            if let Some(v) = d.data_seed {
                s.seed = v;
            }
            if let Some(v) = d.classes {
                s.num_classes = v;
            }
            if let Some(v) = d.dim {
                s.input_dim = v;
            }
            if let Some(v) = d.test_size {
                s.test = v;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn synth_config(cfg: &ExperimentConfig) -> Result<SyntheticConfig> {
    match &cfg.data {
        DataSource::Synthetic(s) => Ok(s.clone()),
        DataSource::Files { .. } => Err(Error::Config("synth needs a synthetic data source".into())),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::State(e.to_string()))?;
    write_text(path, &text)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { common, out } => {
            let cfg = common.resolve()?;
            let ds = mlpl::data::generate_synthetic(&synth_config(&cfg)?)?;
            ds.write_to_dir(&out)?;
            println!(
                "wrote {} labeled, {} unlabeled, {} test samples to {}",
                ds.labeled.len(),
                ds.unlabeled.len(),
                ds.test.len(),
                out.display()
            );
        }
        Command::Train { common, out } => {
            let cfg = common.resolve()?;
            for &seed in &cfg.train.seeds {
                let dir = out.join(format!("seed_{seed}"));
                let result = run(&cfg, seed, Some(&dir))?;
                println!("seed {seed}: test accuracy {:.4}", result.final_test_accuracy);
            }
        }
        Command::Ablate { common, out, serial } => {
            let cfg = common.resolve()?;
            let rows = ablate(&cfg, !serial)?;
            let mut table = String::from("variant\tmean\tstd\taccuracies\n");
            for r in &rows {
                let accs: Vec<String> = r.accuracies.iter().map(|a| format!("{a:.4}")).collect();
                table.push_str(&format!("{}\t{:.4}\t{:.4}\t{}\n", r.name, r.mean, r.std, accs.join(",")));
            }
            print!("{table}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
                write_text(&dir.join("config.toml"), &cfg.to_toml_string()?)?;
                write_text(&dir.join("ablation.tsv"), &table)?;
                write_json(&dir.join("ablation.json"), &rows)?;
            }
        }
        Command::Sweep { common, param, grid, out, serial } => {
            let cfg = common.resolve()?;
            let points = sweep(&cfg, param, &grid, !serial)?;
            let mut table = String::from("value\talpha\tgamma\tmean\tstd\n");
            for p in &points {
                table.push_str(&format!("{}\t{}\t{}\t{:.4}\t{:.4}\n", p.value, p.alpha, p.gamma, p.mean, p.std));
            }
            print!("{table}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
                write_text(&dir.join("config.toml"), &cfg.to_toml_string()?)?;
                write_text(&dir.join("sweep.tsv"), &table)?;
                write_json(&dir.join("sweep.json"), &points)?;
            }
        }
        Command::Eval { checkpoint, test } => {
            let acc = evaluate(&checkpoint, &test)?;
            println!("{acc:.6}");
        }
    }
    Ok(())
}

fn report(category: &str, message: &str, code: i32) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": category, "message": message }));
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report("config", e.to_string().trim(), 2),
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e.category(), &e.to_string(), e.exit_code()),
    }
}
