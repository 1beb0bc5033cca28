use std::fs;
use std::path::Path;

use super::format_error;
use crate::error::Result;
use crate::nbv::ActiveReport;
use crate::propagate::ObjectScore;
use crate::train::StepRecord;

fn write_rows<T: serde::Serialize>(rows: &[T], header: &[&str], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| format_error(path, e))?;
    w.write_record(header).map_err(|e| format_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| format_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: serde::de::DeserializeOwned>(header: &[&str], path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_error(path, e))?;
    let found = r.headers().map_err(|e| format_error(path, e))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(format_error(path, format!("expected header `{}`", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(|e| format_error(path, e))).collect()
}

const SCORE_HEADER: [&str; 4] = ["view_id", "object_id", "score", "pixel_count"];
const TRACE_HEADER: [&str; 5] = ["step", "view_id", "loss", "grad_norm", "alpha"];

pub fn write_scores(scores: &[ObjectScore], path: &Path) -> Result<()> {
    write_rows(scores, &SCORE_HEADER, path)
}

pub fn read_scores(path: &Path) -> Result<Vec<ObjectScore>> {
    read_rows(&SCORE_HEADER, path)
}

pub fn write_trace(records: &[StepRecord], path: &Path) -> Result<()> {
    write_rows(records, &TRACE_HEADER, path)
}

pub fn read_trace(path: &Path) -> Result<Vec<StepRecord>> {
    read_rows(&TRACE_HEADER, path)
}

/// One row per round: chosen pose, held-out PSNR and the aggregate score of
/// every candidate.
pub fn write_active_report(report: &ActiveReport, path: &Path) -> Result<()> {
    let n = report.rounds.first().map_or(0, |r| r.aggregate_scores.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| format_error(path, e))?;
    let mut header: Vec<String> = [
        "round", "policy", "chosen_id", "center_x", "center_y", "psi", "zoom", "width", "height", "psnr",
        "final_loss",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..n).map(|i| format!("score_{i}")));
    w.write_record(&header).map_err(|e| format_error(path, e))?;
    for r in &report.rounds {
        let c = &r.chosen_camera;
        let mut row = vec![
            r.round.to_string(),
            report.policy.name().to_string(),
            r.chosen_id.to_string(),
            c.center[0].to_string(),
            c.center[1].to_string(),
            c.psi.to_string(),
            c.zoom.to_string(),
            c.width.to_string(),
            c.height.to_string(),
            r.psnr.to_string(),
            r.final_loss.to_string(),
        ];
        row.extend(r.aggregate_scores.iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| format_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_active_summary(report: &ActiveReport, threshold: f64, path: &Path) -> Result<()> {
    let reached = report
        .rounds_to_psnr(threshold)
        .map_or_else(|| "not reached".to_string(), |r| r.to_string());
    let last = report.rounds.last().map_or(f64::NAN, |r| r.psnr);
    let chosen: Vec<String> = report.rounds.iter().map(|r| r.chosen_id.to_string()).collect();
    let text = format!(
        "policy {}\nrounds {}\npsnr_threshold {}\nrounds_to_threshold {}\nfinal_psnr {}\nchosen {}\n",
        report.policy.name(),
        report.rounds.len(),
        threshold,
        reached,
        last,
        chosen.join(" "),
    );
    fs::write(path, text)?;
    Ok(())
}
