//! Orientation normalization and out-of-pitch cleaning.
//!
//! Frames are mirrored (x and y, velocities negated) whenever the team in
//! possession attacks right-to-left, so every attack runs toward x = L.
//! Possession at a frame is the team of the latest pass aligned at or before it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::events::PassEvent;
use super::tracking::{MatchHeader, TrackingFrame};
use super::{DataError, Result, Team};

/// Players beyond the pitch by more than this many meters are removed.
pub const BOUNDS_TOLERANCE_M: f64 = 0.5;
/// Passes further than this from every frame cannot be aligned.
pub const ALIGN_TOLERANCE_S: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "ltr")]
    LeftToRight,
    #[serde(rename = "rtl")]
    RightToLeft,
}

impl Direction {
    pub fn flipped(self) -> Direction {
        match self {
            Direction::LeftToRight => Direction::RightToLeft,
            Direction::RightToLeft => Direction::LeftToRight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionTable {
    table: BTreeMap<(Team, u8), Direction>,
}

impl DirectionTable {
    pub fn from_header(header: &MatchHeader) -> Result<Self> {
        let mut table = BTreeMap::new();
        for (period, dir) in &header.home_direction {
            let p: u8 = period
                .parse()
                .map_err(|_| DataError::Invalid(format!("bad period key {period:?} in home_direction")))?;
            table.insert((Team::Home, p), *dir);
            table.insert((Team::Away, p), dir.flipped());
        }
        Ok(Self { table })
    }

    pub fn get(&self, team: Team, period: u8) -> Result<Direction> {
        self.table
            .get(&(team, period))
            .copied()
            .ok_or(DataError::UnknownDirection { team, period })
    }
}

/// A frame in attacking orientation for `attacking`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFrame {
    pub frame: TrackingFrame,
    pub attacking: Team,
    pub mirrored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMatch {
    pub header: MatchHeader,
    pub frames: Vec<NormalizedFrame>,
    /// Passes with end locations in the passing team's attacking orientation.
    pub passes: Vec<PassEvent>,
    /// Frame index each pass aligns to, `None` when unalignable.
    pub alignment: Vec<Option<usize>>,
    pub removed_players: usize,
}

/// Reflects a frame through the pitch centre. Applying it twice is the identity.
pub fn mirror_frame(frame: &TrackingFrame, pitch: [f64; 2]) -> TrackingFrame {
    let mut f = frame.clone();
    for p in &mut f.players {
        p.x = pitch[0] - p.x;
        p.y = pitch[1] - p.y;
        p.vx = -p.vx;
        p.vy = -p.vy;
    }
    f.ball[0] = pitch[0] - f.ball[0];
    f.ball[1] = pitch[1] - f.ball[1];
    f
}

pub fn mirror_pass(pass: &PassEvent, pitch: [f64; 2]) -> PassEvent {
    PassEvent {
        end_x: pitch[0] - pass.end_x,
        end_y: pitch[1] - pass.end_y,
        ..pass.clone()
    }
}

/// Nearest frame of the same period within [`ALIGN_TOLERANCE_S`].
pub fn align(frames: &[TrackingFrame], period: u8, t: f64) -> Option<usize> {
    let start = frames.partition_point(|f| (f.period, f.t) < (period, t));
    let mut best: Option<(usize, f64)> = None;
    for idx in [start.checked_sub(1), Some(start)].into_iter().flatten() {
        if let Some(f) = frames.get(idx) {
            let d = (f.t - t).abs();
            if f.period == period && d <= ALIGN_TOLERANCE_S + 1e-9 && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((idx, d));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Removes players beyond the tolerance band and clamps the rest (and the ball)
/// onto the pitch. Returns the number of removed players.
pub fn clean_frame(frame: &mut TrackingFrame, pitch: [f64; 2]) -> usize {
    let drop = frame.out_of_bounds(pitch, BOUNDS_TOLERANCE_M);
    let before = frame.players.len();
    let mut k = 0;
    frame.players.retain(|_| {
        let keep = !drop.contains(&k);
        k += 1;
        keep
    });
    for p in &mut frame.players {
        p.x = p.x.clamp(0.0, pitch[0]);
        p.y = p.y.clamp(0.0, pitch[1]);
    }
    frame.ball[0] = frame.ball[0].clamp(0.0, pitch[0]);
    frame.ball[1] = frame.ball[1].clamp(0.0, pitch[1]);
    before - frame.players.len()
}

/// Orients frames and passes and removes out-of-pitch players.
///
/// Possession before a period's first aligned pass is given to that pass's
/// team; a period with no passes defaults to the home team.
pub fn normalize_and_clean(header: &MatchHeader, frames: &[TrackingFrame], passes: &[PassEvent]) -> Result<NormalizedMatch> {
    let pitch = header.pitch;
    if !(pitch[0] > 0.0 && pitch[1] > 0.0) {
        return Err(DataError::Invalid(format!("pitch dimensions {pitch:?} must be positive")));
    }
    let dirs = DirectionTable::from_header(header)?;
    let alignment: Vec<Option<usize>> = passes.iter().map(|p| align(frames, p.period, p.t)).collect();

    // possession changes at aligned frames, in frame order
    let mut changes: Vec<(usize, Team)> = alignment
        .iter()
        .zip(passes)
        .filter_map(|(a, p)| a.map(|fi| (fi, p.team)))
        .collect();
    changes.sort_by_key(|&(fi, _)| fi);

    let mut out_frames = Vec::with_capacity(frames.len());
    let mut removed = 0;
    let mut next = 0;
    let mut current: Option<(u8, Team)> = None;
    for (fi, f) in frames.iter().enumerate() {
        if current.is_none_or(|(p, _)| p != f.period) {
            let first = changes.iter().find(|&&(ci, _)| frames[ci].period == f.period && ci >= fi);
            current = Some((f.period, first.map_or(Team::Home, |&(_, t)| t)));
        }
        while next < changes.len() && changes[next].0 <= fi {
            if frames[changes[next].0].period == f.period {
                current = Some((f.period, changes[next].1));
            }
            next += 1;
        }
        let team = current.expect("set above").1;
        let mirrored = dirs.get(team, f.period)? == Direction::RightToLeft;
        let mut frame = if mirrored { mirror_frame(f, pitch) } else { f.clone() };
        removed += clean_frame(&mut frame, pitch);
        out_frames.push(NormalizedFrame { frame, attacking: team, mirrored });
    }

    let mut out_passes = Vec::with_capacity(passes.len());
    for p in passes {
        let mut q = if dirs.get(p.team, p.period)? == Direction::RightToLeft {
            mirror_pass(p, pitch)
        } else {
            p.clone()
        };
        q.end_x = q.end_x.clamp(0.0, pitch[0]);
        q.end_y = q.end_y.clamp(0.0, pitch[1]);
        out_passes.push(q);
    }

    Ok(NormalizedMatch {
        header: header.clone(),
        frames: out_frames,
        passes: out_passes,
        alignment,
        removed_players: removed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tracking::TrackedPlayer;

    fn header() -> MatchHeader {
        MatchHeader {
            match_id: "m".into(),
            pitch: [105.0, 68.0],
            home_direction: [("1".to_string(), Direction::LeftToRight)].into_iter().collect(),
        }
    }

    fn frame(t: f64, xs: &[f64]) -> TrackingFrame {
        TrackingFrame {
            t,
            period: 1,
            players: xs
                .iter()
                .enumerate()
                .map(|(i, &x)| TrackedPlayer { id: format!("p{i}"), team: Team::Home, x, y: 30.0, vx: 1.0, vy: 0.5 })
                .collect(),
            ball: [50.0, 30.0, 0.0],
            ball_in_play: true,
        }
    }

    fn pass(t: f64, team: Team) -> PassEvent {
        PassEvent {
            match_id: "m".into(),
            t,
            passer_id: "p0".into(),
            team,
            end_x: 80.0,
            end_y: 10.0,
            success: true,
            end_t: t + 1.0,
            period: 1,
        }
    }

    #[test]
    fn left_to_right_is_unchanged() {
        let frames = vec![frame(0.0, &[20.0])];
        let m = normalize_and_clean(&header(), &frames, &[pass(0.0, Team::Home)]).unwrap();
        assert_eq!(m.frames[0].frame, frames[0]);
        assert!(!m.frames[0].mirrored);
        assert_eq!(m.passes[0].end_x, 80.0);
    }

    #[test]
    fn away_possession_is_mirrored() {
        let frames = vec![frame(0.0, &[20.0]), frame(0.1, &[20.0])];
        let m = normalize_and_clean(&header(), &frames, &[pass(0.1, Team::Away)]).unwrap();
        assert!(m.frames[1].mirrored);
        assert_eq!(m.frames[1].frame.players[0].x, 85.0);
        assert_eq!(m.frames[1].frame.players[0].vx, -1.0);
        assert_eq!(m.passes[0].end_x, 25.0);
        assert_eq!(m.passes[0].end_y, 58.0);
    }

    #[test]
    fn tolerance_band() {
        let mut f = frame(0.0, &[-1.2, 0.2, 105.4, 106.0]);
        assert_eq!(clean_frame(&mut f, [105.0, 68.0]), 2);
        let xs: Vec<f64> = f.players.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.2, 105.0]);
    }

    #[test]
    fn unknown_direction_errors() {
        let mut f = frame(0.0, &[10.0]);
        f.period = 2;
        let err = normalize_and_clean(&header(), &[f], &[]).unwrap_err();
        assert!(matches!(err, DataError::UnknownDirection { period: 2, .. }));
    }

    #[test]
    fn alignment_tolerance() {
        let frames = vec![frame(0.0, &[1.0]), frame(0.1, &[1.0])];
        assert_eq!(align(&frames, 1, 0.04), Some(0));
        assert_eq!(align(&frames, 1, 0.07), Some(1));
        assert_eq!(align(&frames, 1, 0.3), Some(1));
        assert_eq!(align(&frames, 1, 0.31), None);
        assert_eq!(align(&frames, 2, 0.0), None);
    }
}
