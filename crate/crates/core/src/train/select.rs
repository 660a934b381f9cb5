//! Picking the epoch to keep from a training history.

use super::{EpochRecord, SelectionMetric};

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

/// Index into `history` of the selected epoch; earliest wins ties.
///
/// Epochs without an ECE (the likelihood head) are scored on loss alone.
pub fn select_epoch(history: &[EpochRecord], metric: SelectionMetric) -> Option<usize> {
    if history.is_empty() {
        return None;
    }
    let loss: Vec<f64> = history.iter().map(|r| r.val_loss).collect();
    let has_ece = history.iter().all(|r| r.val_ece.is_some());
    let ece: Vec<f64> = history.iter().map(|r| r.val_ece.unwrap_or(0.0)).collect();
    let score: Vec<f64> = match (metric, has_ece) {
        (SelectionMetric::Loss, _) | (_, false) => loss,
        (SelectionMetric::Ece, true) => ece,
        (SelectionMetric::Combined, true) => min_max(&loss).iter().zip(min_max(&ece)).map(|(a, b)| a + b).collect(),
    };
    let mut best = 0;
    for (i, &s) in score.iter().enumerate() {
        if s < score[best] {
            best = i;
        }
    }
    Some(best)
}
