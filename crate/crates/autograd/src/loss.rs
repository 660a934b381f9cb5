//! Cross-entropy losses on plain slices.
//!
//! Probabilities are clamped to `[1e-7, 1 - 1e-7]` before the log; the tape
//! ops in [`crate::tape`] share these definitions.

use crate::element::Element;
use crate::error::{invalid, Result};
use crate::tape::LOG_CLAMP;

fn clamp<E: Element>(p: E) -> E {
    let lo = E::from_f64_lossy(LOG_CLAMP);
    p.max(lo).min(E::one() - lo)
}

/// Mean binary cross-entropy; every target must be exactly 0 or 1.
pub fn binary_cross_entropy<E: Element>(pred: &[E], target: &[E]) -> Result<E> {
    if pred.len() != target.len() {
        return Err(invalid("binary_cross_entropy", "prediction and target lengths differ"));
    }
    if pred.is_empty() {
        return Err(invalid("binary_cross_entropy", "empty input"));
    }
    let mut total = E::zero();
    for (&p, &t) in pred.iter().zip(target) {
        if t != E::zero() && t != E::one() {
            return Err(invalid("binary_cross_entropy", format!("target {t} is not 0 or 1")));
        }
        let p = clamp(p);
        total = total - (t * p.ln() + (E::one() - t) * (E::one() - p).ln());
    }
    Ok(total / E::from_f64_lossy(pred.len() as f64))
}

/// Mean over rows of `-sum(t * ln p)`; `pred` and `target` are row-major `N x classes`
/// and each target row must be one-hot.
pub fn categorical_cross_entropy<E: Element>(pred: &[E], target: &[E], classes: usize) -> Result<E> {
    if classes == 0 || pred.len() != target.len() || !pred.len().is_multiple_of(classes) {
        return Err(invalid("categorical_cross_entropy", "shape mismatch"));
    }
    if pred.is_empty() {
        return Err(invalid("categorical_cross_entropy", "empty input"));
    }
    let rows = pred.len() / classes;
    let mut total = E::zero();
    for (p_row, t_row) in pred.chunks(classes).zip(target.chunks(classes)) {
        let ones = t_row.iter().filter(|&&t| t == E::one()).count();
        let zeros = t_row.iter().filter(|&&t| t == E::zero()).count();
        if ones != 1 || zeros != classes - 1 {
            return Err(invalid("categorical_cross_entropy", "target row is not one-hot"));
        }
        for (&p, &t) in p_row.iter().zip(t_row) {
            if t == E::one() {
                total = total - clamp(p).ln();
            }
        }
    }
    Ok(total / E::from_f64_lossy(rows as f64))
}
