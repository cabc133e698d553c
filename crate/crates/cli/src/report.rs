//! Artifact writers: alignment JSON, the HTML overlap report, per-epoch
//! metrics, and summary JSON files.

use std::path::Path;

use shield_core::alignment::AlignmentResult;
use shield_core::fusion::TrainReport;

use crate::error::AppError;

pub fn write_json_pretty<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), AppError> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| AppError::storage(format!("serialize: {e}")))?;
    body.push('\n');
    std::fs::write(path, body)
        .map_err(|e| AppError::storage(format!("cannot write {}: {e}", path.display())))
}

pub fn write_alignment_json(result: &AlignmentResult, path: &Path) -> Result<(), AppError> {
    write_json_pretty(result, path)
}

pub fn write_html(html: &str, path: &Path) -> Result<(), AppError> {
    std::fs::write(path, html)
        .map_err(|e| AppError::storage(format!("cannot write {}: {e}", path.display())))
}

/// One metrics record per epoch, JSON-lines.
#[derive(Debug, serde::Serialize)]
struct EpochRecord {
    epoch: usize,
    train_loss: f64,
    val_accuracy: f64,
}

pub fn write_metrics_jsonl(report: &TrainReport, path: &Path) -> Result<(), AppError> {
    let mut body = String::new();
    for (epoch, (loss, acc)) in report
        .epoch_losses
        .iter()
        .zip(&report.val_accuracies)
        .enumerate()
    {
        let record = EpochRecord {
            epoch,
            train_loss: *loss,
            val_accuracy: *acc,
        };
        body.push_str(
            &serde_json::to_string(&record)
                .map_err(|e| AppError::storage(format!("serialize metrics: {e}")))?,
        );
        body.push('\n');
    }
    std::fs::write(path, body)
        .map_err(|e| AppError::storage(format!("cannot write {}: {e}", path.display())))
}
