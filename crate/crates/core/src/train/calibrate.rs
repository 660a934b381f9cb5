//! Expected calibration error and post-hoc temperature search.

use serde::{Deserialize, Serialize};

pub const DEFAULT_BINS: usize = 10;

/// Which calibration reading a head uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    /// Confidence in `[0, 1]`, outcome in `{0, 1}`.
    Success,
    /// Confidence `P_score - P_concede` in `[-1, 1]`, outcome in `{-1, 0, 1}`.
    Value,
}

impl CalibrationMode {
    pub fn range(self) -> (f64, f64) {
        match self {
            CalibrationMode::Success => (0.0, 1.0),
            CalibrationMode::Value => (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub confidence: f64,
    pub outcome: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub mode: CalibrationMode,
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
    pub temperature: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CalibrationError {
    #[error("calibration needs at least one sample")]
    Empty,
    #[error("{confidences} confidences but {outcomes} outcomes")]
    Length { confidences: usize, outcomes: usize },
    #[error("bin count must be positive")]
    NoBins,
}

/// Equal-width reliability bins over the mode's range.
pub fn reliability(
    confidences: &[f64],
    outcomes: &[f64],
    mode: CalibrationMode,
    bins: usize,
) -> Result<Vec<CalibrationBin>, CalibrationError> {
    if confidences.len() != outcomes.len() {
        return Err(CalibrationError::Length {
            confidences: confidences.len(),
            outcomes: outcomes.len(),
        });
    }
    if confidences.is_empty() {
        return Err(CalibrationError::Empty);
    }
    if bins == 0 {
        return Err(CalibrationError::NoBins);
    }
    let (lo, hi) = mode.range();
    let width = (hi - lo) / bins as f64;
    let mut sums = vec![(0usize, 0.0f64, 0.0f64); bins];
    for (&c, &o) in confidences.iter().zip(outcomes) {
        let b = (((c - lo) / (hi - lo)) * bins as f64).floor();
        let b = (b.max(0.0) as usize).min(bins - 1);
        sums[b].0 += 1;
        sums[b].1 += c;
        sums[b].2 += o;
    }
    let n = confidences.len() as f64;
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(i, (count, cs, os))| {
            let k = count.max(1) as f64;
            CalibrationBin {
                lo: lo + width * i as f64,
                hi: lo + width * (i + 1) as f64,
                count,
                confidence: cs / k,
                outcome: os / k,
                weight: count as f64 / n,
            }
        })
        .collect())
}

pub fn ece_from_bins(bins: &[CalibrationBin]) -> f64 {
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| b.weight * (b.outcome - b.confidence).abs())
        .sum()
}

pub fn ece(confidences: &[f64], outcomes: &[f64], mode: CalibrationMode, bins: usize) -> Result<f64, CalibrationError> {
    Ok(ece_from_bins(&reliability(confidences, outcomes, mode, bins)?))
}

/// `{0.1, 0.2, ..., 2.0}`.
pub fn temperature_grid() -> Vec<f64> {
    (1..=20).map(|k| k as f64 / 10.0).collect()
}

/// ECE differences below this are ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Returns the grid temperature with minimal `ece_at(T)` with its ECE.
/// Ties go to 1.0, then to the smaller temperature.
pub fn search_temperature(grid: &[f64], mut ece_at: impl FnMut(f64) -> f64) -> (f64, f64) {
    let scored: Vec<(f64, f64)> = grid.iter().map(|&t| (t, ece_at(t))).collect();
    let best = scored.iter().map(|&(_, e)| e).fold(f64::INFINITY, f64::min);
    let tied: Vec<(f64, f64)> = scored.into_iter().filter(|&(_, e)| e <= best + TIE_TOLERANCE).collect();
    tied.iter()
        .copied()
        .find(|&(t, _)| t == 1.0)
        .unwrap_or_else(|| tied.iter().copied().fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a }))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax3(z: &[f64], temperature: f64) -> [f64; 3] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| ((v - m) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    [e[0] / s, e[1] / s, e[2] / s]
}

/// Confidences of a success head at `temperature` given raw destination logits.
pub fn success_confidences(logits: &[f64], temperature: f64) -> Vec<f64> {
    logits.iter().map(|&z| sigmoid(z / temperature)).collect()
}

/// `P_score - P_concede` of a value head at `temperature`; channels are
/// (concede, no goal, score).
pub fn value_confidences(logits: &[[f64; 3]], temperature: f64) -> Vec<f64> {
    logits
        .iter()
        .map(|z| {
            let p = softmax3(z, temperature);
            p[2] - p[0]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_single_bin() {
        let e = ece(&[0.9; 10], &[1.0; 10], CalibrationMode::Success, 10).unwrap();
        assert!((e - 0.1).abs() < 1e-12);
    }

    #[test]
    fn edges_clamp_into_outer_bins() {
        let bins = reliability(&[0.0, 1.0, -1.0], &[0.0, 1.0, -1.0], CalibrationMode::Value, 10).unwrap();
        assert_eq!(bins[0].count, 1);
        assert_eq!(bins[5].count, 1);
        assert_eq!(bins[9].count, 1);
        let w: f64 = bins.iter().map(|b| b.weight).sum();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(ece(&[], &[], CalibrationMode::Success, 10), Err(CalibrationError::Empty));
        assert!(matches!(ece(&[0.1], &[], CalibrationMode::Success, 10), Err(CalibrationError::Length { .. })));
    }

    #[test]
    fn grid_is_exact() {
        let g = temperature_grid();
        assert_eq!(g.len(), 20);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[9], 1.0);
        assert_eq!(g[19], 2.0);
        assert_eq!(g[2].to_string(), "0.3");
    }

    #[test]
    fn tie_rules() {
        let g = temperature_grid();
        assert_eq!(search_temperature(&g, |_| 0.5).0, 1.0);
        let (t, _) = search_temperature(&g, |t| if t == 0.7 || t == 1.4 { 0.1 } else { 0.2 });
        assert_eq!(t, 0.7);
    }
}
