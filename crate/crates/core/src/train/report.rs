//! Calibration of trained models and the per-class diagnostic tables.

use std::fmt::Write as _;

use pitch_autograd::loss::binary_cross_entropy;
use serde::{Deserialize, Serialize};

use super::calibrate::{
    ece, reliability, search_temperature, softmax3, success_confidences, temperature_grid, value_confidences,
    CalibrationMode, CalibrationReport, DEFAULT_BINS,
};
use super::eval::{dest_outputs, DestOutputs};
use crate::data::samples::PassSample;
use crate::model::{ModelError, PassNet};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("{0} head cannot be used here")]
    WrongHead(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Searches the temperature grid on `val_set`, stores the winner on `net`
/// and returns the reliability table at that temperature. The likelihood
/// head is not calibrated and yields `None`.
pub fn calibrate(net: &mut PassNet<f32>, val_set: &[&PassSample], batch: usize) -> Result<Option<CalibrationReport>, ReportError> {
    if val_set.is_empty() {
        return Err(ReportError::Empty);
    }
    let out = dest_outputs(net, val_set, batch)?;
    let Some(report) = calibrate_outputs(&out, val_set) else {
        return Ok(None);
    };
    net.temperature = report.temperature;
    Ok(Some(report))
}

/// [`calibrate`] on precomputed destination logits.
pub fn calibrate_outputs(out: &DestOutputs, samples: &[&PassSample]) -> Option<CalibrationReport> {
    let mode = out.mode()?;
    let grid = temperature_grid();
    let (t, e) = search_temperature(&grid, |t| out.ece_at(samples, t).unwrap_or(f64::INFINITY));
    let (conf, outcomes) = confidences(out, samples, t);
    let bins = reliability(&conf, &outcomes, mode, DEFAULT_BINS).ok()?;
    Some(CalibrationReport {
        mode,
        bins,
        ece: e,
        temperature: t,
    })
}

fn confidences(out: &DestOutputs, samples: &[&PassSample], t: f64) -> (Vec<f64>, Vec<f64>) {
    match out {
        DestOutputs::Success(z) => (
            success_confidences(z, t),
            samples.iter().map(|s| f64::from(u8::from(s.success))).collect(),
        ),
        DestOutputs::Value(z) => (value_confidences(z, t), samples.iter().map(|s| f64::from(s.value)).collect()),
        DestOutputs::Likelihood(p) => (p.clone(), vec![1.0; p.len()]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Successful,
    Unsuccessful,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::Successful => "successful",
            Subset::Unsuccessful => "unsuccessful",
        }
    }
}

/// Value classes in report order, with their channel index.
pub const CLASSES: [(&str, usize); 3] = [("score", 2), ("no-goal", 1), ("concede", 0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub subset: Subset,
    pub class: String,
    pub samples: usize,
    pub positives: usize,
    /// Mean binary cross-entropy of the class probability against its indicator.
    pub loss: f64,
    pub ece: f64,
}

/// Three rows (score, no goal, concede) from per-sample probability triples
/// ordered (concede, no goal, score) and labels in `{-1, 0, 1}`.
pub fn class_rows(subset: Subset, probs: &[[f64; 3]], labels: &[i8]) -> Result<Vec<ClassRow>, ReportError> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(ReportError::Empty);
    }
    CLASSES
        .iter()
        .map(|&(name, ch)| {
            let p: Vec<f64> = probs.iter().map(|t| t[ch]).collect();
            let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from((l + 1) as usize == ch))).collect();
            let loss = binary_cross_entropy(&p, &y).map_err(|_| ReportError::Empty)?;
            let e = ece(&p, &y, CalibrationMode::Success, DEFAULT_BINS).map_err(|_| ReportError::Empty)?;
            Ok(ClassRow {
                subset,
                class: name.to_string(),
                samples: p.len(),
                positives: y.iter().filter(|&&v| v == 1.0).count(),
                loss,
                ece: e,
            })
        })
        .collect()
}

/// Per-class rows for one value model on its own subset, at its temperature.
pub fn value_model_rows(
    net: &PassNet<f32>,
    subset: Subset,
    samples: &[&PassSample],
    batch: usize,
) -> Result<Vec<ClassRow>, ReportError> {
    let DestOutputs::Value(z) = dest_outputs(net, samples, batch)? else {
        return Err(ReportError::WrongHead(net.spec().head.name()));
    };
    let probs: Vec<[f64; 3]> = z.iter().map(|v| softmax3(v, net.temperature)).collect();
    let labels: Vec<i8> = samples.iter().map(|s| s.value).collect();
    class_rows(subset, &probs, &labels)
}

/// The six-row table: both value models, each on the passes it models.
pub fn per_class_report(
    value_s: &PassNet<f32>,
    value_u: &PassNet<f32>,
    samples: &[&PassSample],
    batch: usize,
) -> Result<Vec<ClassRow>, ReportError> {
    let ok: Vec<&PassSample> = samples.iter().copied().filter(|s| s.success).collect();
    let bad: Vec<&PassSample> = samples.iter().copied().filter(|s| !s.success).collect();
    let mut rows = value_model_rows(value_s, Subset::Successful, &ok, batch)?;
    rows.extend(value_model_rows(value_u, Subset::Unsuccessful, &bad, batch)?);
    Ok(rows)
}

pub const REPORT_COLUMNS: [&str; 6] = ["subset", "class", "samples", "positives", "bce_loss", "ece"];

pub fn rows_to_csv(rows: &[ClassRow]) -> String {
    let mut s = REPORT_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{:.6},{:.6}", r.subset.name(), r.class, r.samples, r.positives, r.loss, r.ece);
    }
    s
}

pub fn rows_to_markdown(rows: &[ClassRow]) -> String {
    let mut s = format!("| {} |\n", REPORT_COLUMNS.join(" | "));
    s.push_str(&format!("|{}\n", "---|".repeat(REPORT_COLUMNS.len())));
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.6} | {:.6} |",
            r.subset.name(),
            r.class,
            r.samples,
            r.positives,
            r.loss,
            r.ece
        );
    }
    s
}
