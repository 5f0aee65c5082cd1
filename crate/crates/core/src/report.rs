//! CSV and JSON artifacts for training runs and sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::SweepResult;
use crate::error::{LdbError, Result};
use crate::scheduler::Mode;
use crate::trainer::{StepLoss, TrainReport};

pub const SCHEMA_VERSION: u32 = 1;

/// One row of the per-epoch CSV. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub mode: Mode,
    pub lr: f64,
    pub batch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub ms_fwd: f64,
    pub ms_bwd_dx: f64,
    pub ms_bwd_dw: f64,
    pub ms_upd: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,mode,lr,batch,train_loss,val_acc,ms_fwd,ms_bwd_dx,ms_bwd_dw,ms_upd";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub epochs: usize,
    pub drop_epochs: usize,
    pub best_val_accuracy: f64,
    pub final_val_accuracy: f64,
    pub total_wall_ms: f64,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub best_val_accuracy: f64,
    pub final_val_accuracy: f64,
    pub total_wall_ms: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDocument {
    pub schema_version: u32,
    #[serde(flatten)]
    pub result: SweepResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub value: Option<f64>,
    pub val_accuracy: f64,
    pub wall_ms: f64,
    pub speedup: f64,
    pub equivalence: bool,
    pub failed: bool,
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub epochs_csv: PathBuf,
    pub summary_json: PathBuf,
    pub loss_csv: PathBuf,
}

pub fn epoch_rows(report: &TrainReport) -> Vec<EpochRow> {
    report
        .records
        .iter()
        .map(|r| EpochRow {
            epoch: r.epoch,
            mode: r.mode,
            lr: r.lr,
            batch: r.batch,
            train_loss: r.train_loss,
            val_acc: r.val_accuracy,
            ms_fwd: r.ms_forward,
            ms_bwd_dx: r.ms_backward_dx,
            ms_bwd_dw: r.ms_backward_dw,
            ms_upd: r.ms_update,
        })
        .collect()
}

pub fn summarize(report: &TrainReport, baseline: Option<&TrainReport>) -> RunSummary {
    let total = report.total_wall_ms();
    RunSummary {
        schema_version: SCHEMA_VERSION,
        epochs: report.records.len(),
        drop_epochs: report.drop_epochs(),
        best_val_accuracy: report.best_val_accuracy(),
        final_val_accuracy: report.final_val_accuracy(),
        total_wall_ms: total,
        warnings: report.warnings.clone(),
        baseline: baseline.map(|b| BaselineComparison {
            best_val_accuracy: b.best_val_accuracy(),
            final_val_accuracy: b.final_val_accuracy(),
            total_wall_ms: b.total_wall_ms(),
            speedup: 1.0 - total / b.total_wall_ms(),
        }),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| LdbError::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn csv_err(path: &Path, e: csv::Error) -> LdbError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LdbError::io(path, io),
        other => LdbError::Data(format!("{}: {other:?}", path.display())),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    fs::write(path, text + "\n").map_err(|e| LdbError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| LdbError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LdbError::Data(format!("{}: {e}", path.display())))
}

pub fn write_epoch_csv(report: &TrainReport, path: &Path) -> Result<()> {
    let rows = epoch_rows(report);
    if rows.is_empty() {
        // The serializer only emits a header alongside the first row.
        return fs::write(path, format!("{EPOCH_CSV_HEADER}\n")).map_err(|e| LdbError::io(path, e));
    }
    write_rows(path, &rows)
}

pub fn read_epoch_csv(path: &Path) -> Result<Vec<EpochRow>> {
    read_rows(path)
}

pub fn write_loss_csv(report: &TrainReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["step", "epoch", "loss"]).map_err(|e| csv_err(path, e))?;
    for (i, s) in report.step_losses.iter().enumerate() {
        w.write_record([i.to_string(), s.epoch.to_string(), s.loss.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| LdbError::io(path, e))
}

/// Reads a loss curve back; the per-epoch step index is recomputed.
pub fn read_loss_csv(path: &Path) -> Result<Vec<StepLoss>> {
    #[derive(Deserialize)]
    struct Row {
        #[allow(dead_code)]
        step: usize,
        epoch: usize,
        loss: f64,
    }
    let rows: Vec<Row> = read_rows(path)?;
    let mut out: Vec<StepLoss> = Vec::with_capacity(rows.len());
    for r in rows {
        let step = match out.last() {
            Some(prev) if prev.epoch == r.epoch => prev.step + 1,
            _ => 0,
        };
        out.push(StepLoss {
            epoch: r.epoch,
            step,
            loss: r.loss,
        });
    }
    Ok(out)
}

pub fn write_summary_json(summary: &RunSummary, path: &Path) -> Result<()> {
    write_json(path, summary)
}

pub fn read_summary_json(path: &Path) -> Result<RunSummary> {
    read_json(path)
}

/// Writes `<stem>_epochs.csv`, `<stem>_summary.json` and `<stem>_loss.csv`
/// into `dir`, creating it if needed.
pub fn emit_report(report: &TrainReport, baseline: Option<&TrainReport>, dir: &Path, stem: &str) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| LdbError::io(dir, e))?;
    let files = ReportFiles {
        epochs_csv: dir.join(format!("{stem}_epochs.csv")),
        summary_json: dir.join(format!("{stem}_summary.json")),
        loss_csv: dir.join(format!("{stem}_loss.csv")),
    };
    write_epoch_csv(report, &files.epochs_csv)?;
    write_summary_json(&summarize(report, baseline), &files.summary_json)?;
    write_loss_csv(report, &files.loss_csv)?;
    Ok(files)
}

pub fn sweep_rows(result: &SweepResult) -> Vec<SweepRow> {
    std::iter::once(&result.baseline)
        .chain(&result.arms)
        .map(|a| SweepRow {
            label: a.label.clone(),
            value: a.value,
            val_accuracy: a.val_accuracy,
            wall_ms: a.wall_ms,
            speedup: a.speedup,
            equivalence: a.equivalence,
            failed: a.failed.is_some(),
        })
        .collect()
}

/// Writes `sweep_<axis>.csv` (baseline first) and `sweep_<axis>.json`.
pub fn emit_sweep(result: &SweepResult, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| LdbError::io(dir, e))?;
    let csv_path = dir.join(format!("sweep_{}.csv", result.axis));
    let json_path = dir.join(format!("sweep_{}.json", result.axis));
    write_rows(&csv_path, &sweep_rows(result))?;
    write_json(
        &json_path,
        &SweepDocument {
            schema_version: SCHEMA_VERSION,
            result: result.clone(),
        },
    )?;
    Ok((csv_path, json_path))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    read_rows(path)
}

pub fn read_sweep_json(path: &Path) -> Result<SweepDocument> {
    read_json(path)
}
