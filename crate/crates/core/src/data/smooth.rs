//! Savitzky-Golay velocity estimation.
//!
//! Each sample's velocity is the slope at that sample of a least-squares
//! polynomial fitted over a centred window. Near segment edges the window is
//! truncated (so it becomes one-sided) and the order drops if too few points
//! remain. Fitting in real time coordinates makes the 10 Hz scaling implicit.

use std::collections::HashMap;

use super::tracking::TrackingFrame;

pub const WINDOW: usize = 7;
pub const ORDER: usize = 2;
/// Larger gaps between consecutive samples of a player start a new segment.
pub const MAX_GAP_S: f64 = 0.5;

/// Solves `a x = b` for a small dense system by Gaussian elimination.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let pivot_row = a[col].clone();
        for row in col + 1..n {
            let f = a[row][col] / pivot_row[col];
            for (v, p) in a[row].iter_mut().zip(&pivot_row).skip(col) {
                *v -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Slope at `ts[i]` of a degree-`order` least-squares fit to the window.
fn local_slope(ts: &[f64], vs: &[f64], i: usize, half: usize, order: usize) -> f64 {
    let lo = i.saturating_sub(half);
    let hi = (i + half).min(ts.len() - 1);
    let m = hi - lo + 1;
    let order = order.min(m - 1);
    if order == 0 {
        return 0.0;
    }
    let k = order + 1;
    let mut ata = vec![vec![0.0; k]; k];
    let mut atb = vec![0.0; k];
    for j in lo..=hi {
        let tau = ts[j] - ts[i];
        let mut powers = vec![1.0; k];
        for p in 1..k {
            powers[p] = powers[p - 1] * tau;
        }
        for r in 0..k {
            atb[r] += powers[r] * vs[j];
            for c in 0..k {
                ata[r][c] += powers[r] * powers[c];
            }
        }
    }
    solve(ata, atb).map_or(0.0, |coef| coef[1])
}

/// First derivative of `vs` sampled at times `ts` (one contiguous segment).
pub fn sg_derivative(ts: &[f64], vs: &[f64], window: usize, order: usize) -> Vec<f64> {
    assert_eq!(ts.len(), vs.len());
    let half = window / 2;
    (0..ts.len()).map(|i| local_slope(ts, vs, i, half, order)).collect()
}

/// Splits sorted sample times into contiguous runs with gaps `<= MAX_GAP_S`.
pub fn segments(ts: &[f64]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..ts.len() {
        if ts[i] - ts[i - 1] > MAX_GAP_S + 1e-9 {
            out.push(start..i);
            start = i;
        }
    }
    if !ts.is_empty() {
        out.push(start..ts.len());
    }
    out
}

/// Fills every player's `vx, vy` (m/s) in place.
pub fn smooth_velocities(frames: &mut [TrackingFrame]) {
    // (period, player id) -> [(frame index, slot in frame)]
    let mut tracks: HashMap<(u8, String), Vec<(usize, usize)>> = HashMap::new();
    for (fi, f) in frames.iter().enumerate() {
        for (pi, p) in f.players.iter().enumerate() {
            tracks.entry((f.period, p.id.clone())).or_default().push((fi, pi));
        }
    }
    for refs in tracks.values() {
        let ts: Vec<f64> = refs.iter().map(|&(fi, _)| frames[fi].t).collect();
        for seg in segments(&ts) {
            let slice = &refs[seg.clone()];
            let t = &ts[seg];
            let xs: Vec<f64> = slice.iter().map(|&(fi, pi)| frames[fi].players[pi].x).collect();
            let ys: Vec<f64> = slice.iter().map(|&(fi, pi)| frames[fi].players[pi].y).collect();
            let vx = sg_derivative(t, &xs, WINDOW, ORDER);
            let vy = sg_derivative(t, &ys, WINDOW, ORDER);
            for (k, &(fi, pi)) in slice.iter().enumerate() {
                let p = &mut frames[fi].players[pi];
                p.vx = vx[k];
                p.vy = vy[k];
            }
        }
    }
}
