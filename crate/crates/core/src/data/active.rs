//! Active (ball-in-play) time.
//!
//! The interval after frame `j` counts toward active time when frame `j` is in
//! play. Intervals across a period boundary never count.

use super::tracking::TrackingFrame;

/// The value window following each pass, in active seconds (inclusive).
pub const VALUE_WINDOW_S: f64 = 15.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveTime {
    periods: Vec<u8>,
    times: Vec<f64>,
    in_play: Vec<bool>,
    /// Active seconds elapsed before each frame.
    cumulative: Vec<f64>,
    nominal_dt: f64,
}

impl ActiveTime {
    pub fn new(frames: &[TrackingFrame]) -> Self {
        let mut cumulative = Vec::with_capacity(frames.len());
        let mut acc = 0.0;
        for (j, f) in frames.iter().enumerate() {
            if j > 0 {
                let prev = &frames[j - 1];
                if prev.ball_in_play && prev.period == f.period {
                    acc += f.t - prev.t;
                }
            }
            cumulative.push(acc);
        }
        Self {
            periods: frames.iter().map(|f| f.period).collect(),
            times: frames.iter().map(|f| f.t).collect(),
            in_play: frames.iter().map(|f| f.ball_in_play).collect(),
            cumulative,
            nominal_dt: 0.1,
        }
    }

    /// Cumulative active seconds at each frame.
    pub fn index(&self) -> &[f64] {
        &self.cumulative
    }

    /// Total active seconds including the last frame's own interval.
    pub fn total(&self) -> f64 {
        match (self.cumulative.last(), self.in_play.last()) {
            (Some(&c), Some(&true)) => c + self.nominal_dt,
            (Some(&c), _) => c,
            _ => 0.0,
        }
    }

    /// Active seconds at an arbitrary time, interpolating inside in-play intervals.
    pub fn at(&self, period: u8, t: f64) -> Option<f64> {
        let end = self.periods.partition_point(|&p| p <= period);
        let start = self.periods.partition_point(|&p| p < period);
        if start == end {
            return None;
        }
        let j = start + self.times[start..end].partition_point(|&ft| ft <= t + 1e-9);
        if j == start {
            return Some(self.cumulative[start]);
        }
        let j = j - 1;
        let step = if j + 1 < end { self.times[j + 1] - self.times[j] } else { self.nominal_dt };
        let extra = if self.in_play[j] { (t - self.times[j]).clamp(0.0, step) } else { 0.0 };
        Some(self.cumulative[j] + extra)
    }

    /// Whether an event at `(period, t_event)` lies within `window` active
    /// seconds after `(period, t_release)`. Different periods never match.
    pub fn within(&self, period: u8, t_release: f64, event_period: u8, t_event: f64, window: f64) -> bool {
        if period != event_period || t_event < t_release {
            return false;
        }
        match (self.at(period, t_release), self.at(period, t_event)) {
            (Some(a), Some(b)) => b - a <= window + 1e-9,
            _ => false,
        }
    }
}
