//! Run output directory.
//!
//! ```text
//! out/
//!   config.toml              snapshot of the effective configuration
//!   metrics.tsv              one row per epoch
//!   steps.tsv                one row per optimizer step (optional)
//!   summary.json             final metrics and the full epoch series
//!   checkpoints/epoch_NNN.sitm
//!   buffer/epoch_NNN_labeled.sitf, epoch_NNN_unlabeled.sitf
//!   diagnostics.tsv          per-sample pseudo-labels of the last epoch (optional)
//!   failure.json             written when a run aborts on a non-finite loss
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::buffer::{InstanceMemoryBuffer, Origin};
use crate::data::format::{write_embeddings, EmbeddingRecord};
use crate::error::{Error, Result};

use super::train::{DiagnosticRecord, EpochMetrics, StepRecord};

pub const METRICS_FILE: &str = "metrics.tsv";
pub const STEPS_FILE: &str = "steps.tsv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.tsv";
pub const FAILURE_FILE: &str = "failure.json";

const METRICS_HEADER: &str =
    "epoch\tl_s\tl_t\tl_u\ttotal\talpha_pass_rate\talpha_pass_count\tgamma_admissions\tbuffer_size\tpseudo_label_accuracy\ttest_accuracy";
const STEPS_HEADER: &str =
    "epoch\tstep\tl_s\tl_t\tl_u\ttotal\tlambda1\tlambda2\tunlabeled\talpha_pass\tgamma_admit\tbuffer_size";

#[derive(Debug, Serialize)]
pub struct RunSummary<'a> {
    pub seed: u64,
    pub epochs: usize,
    pub final_test_accuracy: f64,
    pub final_buffer_size: usize,
    pub metrics: &'a [EpochMetrics],
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Full-precision float formatting for the delimited files.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn metrics_tsv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        let pl = m.pseudo_label_accuracy.map_or_else(|| "NA".to_string(), num);
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.epoch,
            num(m.l_s),
            num(m.l_t),
            num(m.l_u),
            num(m.total),
            num(m.alpha_pass_rate),
            m.alpha_pass_count,
            m.gamma_admissions,
            m.buffer_size,
            pl,
            num(m.test_accuracy)
        );
    }
    out
}

pub fn steps_tsv(steps: &[StepRecord]) -> String {
    let mut out = String::from(STEPS_HEADER);
    out.push('\n');
    for s in steps {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.epoch,
            s.step,
            num(s.l_s),
            num(s.l_t),
            num(s.l_u),
            num(s.total),
            num(s.lambda1),
            num(s.lambda2),
            s.unlabeled,
            s.alpha_pass,
            s.gamma_admit,
            s.buffer_size
        );
    }
    out
}

fn vec_field(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(",")
}

pub fn diagnostics_tsv(records: &[DiagnosticRecord]) -> String {
    let mut out = String::from("epoch\tid\tp_sem\tp_text\tp_ins\tfused\taligned\tconfidence\tpasses_alpha\tpasses_gamma\n");
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.epoch,
            r.sample_id,
            vec_field(&r.p_sem),
            r.p_text.as_ref().map_or_else(|| "NA".into(), |p| vec_field(p)),
            r.p_ins.as_ref().map_or_else(|| "NA".into(), |p| vec_field(p)),
            vec_field(&r.label.raw),
            vec_field(&r.label.aligned),
            num(r.label.confidence),
            r.label.passes_alpha,
            r.label.passes_gamma
        );
    }
    out
}

pub fn write_metrics(dir: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    write_text(&dir.join(METRICS_FILE), &metrics_tsv(metrics))
}

pub fn write_steps(dir: &Path, steps: &[StepRecord]) -> Result<()> {
    write_text(&dir.join(STEPS_FILE), &steps_tsv(steps))
}

pub fn write_summary(dir: &Path, summary: &RunSummary<'_>) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::State(format!("cannot serialize summary: {e}")))?;
    write_text(&dir.join(SUMMARY_FILE), &text)
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("epoch_{epoch:03}.sitm"))
}

/// Writes the buffer as two embedding files, one per origin. Labels are the
/// stored class of each entry.
pub fn write_buffer_snapshot(dir: &Path, tag: &str, buffer: &InstanceMemoryBuffer) -> Result<()> {
    let sub = dir.join("buffer");
    ensure_dir(&sub)?;
    for (origin, name) in [(Origin::Labeled, "labeled"), (Origin::Unlabeled, "unlabeled")] {
        let records: Vec<EmbeddingRecord> = buffer
            .snapshot(origin)
            .into_iter()
            .map(|(id, label, f)| EmbeddingRecord::new(id, Some(label as u32), f.iter().map(|&v| v as f32).collect()))
            .collect();
        write_embeddings(sub.join(format!("{tag}_{name}.sitf")), buffer.dim(), &records)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct Failure<'a> {
    error: &'a str,
    message: String,
    last_steps: &'a [StepRecord],
}

/// Diagnostic dump for an aborted run.
pub fn write_failure(dir: &Path, err: &Error, steps: &[StepRecord]) -> Result<()> {
    let start = steps.len().saturating_sub(10);
    let failure = Failure {
        error: err.category(),
        message: err.to_string(),
        last_steps: &steps[start..],
    };
    let text = serde_json::to_string_pretty(&failure)
        .map_err(|e| Error::State(format!("cannot serialize failure: {e}")))?;
    write_text(&dir.join(FAILURE_FILE), &text)
}
