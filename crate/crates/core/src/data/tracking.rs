//! JSONL tracking parser.
//!
//! The first line is a match header:
//! `{"match_id": "m1", "pitch": [105, 68], "home_direction": {"1": "ltr", "2": "rtl"}}`.
//! Every further line is one 10 Hz frame:
//! `{"t": 0.1, "period": 1, "ball": [x, y, z], "in_play": true, "players": [{"id": "h7", "team": "H", "x": 10.0, "y": 20.0}]}`.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::normalize::Direction;
use super::{DataError, Result, Team};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchHeader {
    pub match_id: String,
    /// Pitch length and width in meters.
    pub pitch: [f64; 2],
    /// Attack direction of the home team keyed by period number.
    pub home_direction: BTreeMap<String, Direction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedPlayer {
    pub id: String,
    pub team: Team,
    pub x: f64,
    pub y: f64,
    /// Filled in by velocity smoothing.
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingFrame {
    pub t: f64,
    pub period: u8,
    pub players: Vec<TrackedPlayer>,
    pub ball: [f64; 3],
    pub ball_in_play: bool,
}

impl TrackingFrame {
    /// Indices of players farther than `tolerance` meters outside the pitch.
    pub fn out_of_bounds(&self, pitch: [f64; 2], tolerance: f64) -> Vec<usize> {
        self.players
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                p.x < -tolerance || p.x > pitch[0] + tolerance || p.y < -tolerance || p.y > pitch[1] + tolerance
            })
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineIssue {
    /// 1-based line number in the input.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedTracking {
    pub header: Option<MatchHeader>,
    pub frames: Vec<TrackingFrame>,
    /// Malformed lines; each was skipped.
    pub issues: Vec<LineIssue>,
}

#[derive(Deserialize)]
struct RawPlayer {
    id: String,
    team: Team,
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
struct RawFrame {
    t: f64,
    period: u8,
    ball: Option<[f64; 3]>,
    in_play: bool,
    players: Vec<RawPlayer>,
}

/// Parses a tracking stream. Malformed lines (bad JSON, missing ball,
/// non-monotone timestamps) are skipped and reported; I/O errors abort.
pub fn parse_tracking(reader: impl BufRead) -> Result<ParsedTracking> {
    let mut out = ParsedTracking::default();
    let mut last: Option<(u8, f64)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if out.header.is_none() && out.frames.is_empty() && out.issues.is_empty() && line.contains("\"match_id\"") {
            match serde_json::from_str::<MatchHeader>(&line) {
                Ok(h) => out.header = Some(h),
                Err(e) => out.issues.push(LineIssue { line: line_no, reason: format!("bad header: {e}") }),
            }
            continue;
        }
        let raw: RawFrame = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                out.issues.push(LineIssue { line: line_no, reason: e.to_string() });
                continue;
            }
        };
        let issue = |reason: String| LineIssue { line: line_no, reason };
        let Some(ball) = raw.ball else {
            out.issues.push(issue("missing ball record".into()));
            continue;
        };
        if !(1..=2).contains(&raw.period) {
            out.issues.push(issue(format!("period {} not in 1..=2", raw.period)));
            continue;
        }
        if ball[2] < 0.0 || !ball.iter().all(|v| v.is_finite()) || !raw.t.is_finite() {
            out.issues.push(issue("invalid ball or timestamp".into()));
            continue;
        }
        if let Some((p, t)) = last {
            if raw.period < p || (raw.period == p && raw.t <= t) {
                out.issues.push(issue(format!("non-monotone timestamp {} after {t} (period {p})", raw.t)));
                continue;
            }
        }
        last = Some((raw.period, raw.t));
        out.frames.push(TrackingFrame {
            t: raw.t,
            period: raw.period,
            players: raw
                .players
                .into_iter()
                .map(|p| TrackedPlayer { id: p.id, team: p.team, x: p.x, y: p.y, vx: 0.0, vy: 0.0 })
                .collect(),
            ball,
            ball_in_play: raw.in_play,
        });
    }
    Ok(out)
}

/// Serializes a header and frames back to the JSONL format.
pub fn write_tracking(mut w: impl std::io::Write, header: &MatchHeader, frames: &[TrackingFrame]) -> Result<()> {
    serde_json::to_writer(&mut w, header)?;
    writeln!(w)?;
    for f in frames {
        let players: Vec<serde_json::Value> = f
            .players
            .iter()
            .map(|p| serde_json::json!({"id": p.id, "team": p.team, "x": p.x, "y": p.y}))
            .collect();
        let line = serde_json::json!({
            "t": f.t,
            "period": f.period,
            "ball": f.ball,
            "in_play": f.ball_in_play,
            "players": players,
        });
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    Ok(())
}

impl ParsedTracking {
    /// The header, or an error naming the missing line.
    pub fn require_header(&self) -> Result<&MatchHeader> {
        self.header
            .as_ref()
            .ok_or_else(|| DataError::Line { line: 1, reason: "missing match header".into() })
    }
}
