//! Labelled pass samples.

use serde::{Deserialize, Serialize};

use super::active::{ActiveTime, VALUE_WINDOW_S};
use super::events::GoalEvent;
use super::normalize::{mirror_frame, NormalizedMatch};
use super::tracking::TrackingFrame;
use super::Team;
use crate::grid::scale_coords;
use crate::state::{GameState, PlayerState, Side, MAX_X, MAX_Y};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassSample {
    pub match_id: String,
    pub state: GameState,
    /// Destination grid node `(ix, iy)`.
    pub dest: (u16, u16),
    pub success: bool,
    /// +1 passing team scores within the window, -1 opponent scores, else 0.
    pub value: i8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub passes: usize,
    pub samples: usize,
    pub unaligned: usize,
    pub no_attackers: usize,
}

/// Rounds meters to the nearest grid node.
pub fn destination_cell(x_m: f64, y_m: f64, pitch: [f64; 2]) -> (u16, u16) {
    let (gx, gy) = scale_coords(x_m, y_m, pitch[0], pitch[1]);
    (gx.round().clamp(0.0, MAX_X) as u16, gy.round().clamp(0.0, MAX_Y) as u16)
}

/// Builds the grid-unit game state of `frame` from `attacking`'s perspective.
/// The frame must already be oriented for that team.
pub fn game_state(frame: &TrackingFrame, attacking: Team, passer_id: &str, pitch: [f64; 2]) -> Option<GameState> {
    let players: Vec<PlayerState> = frame
        .players
        .iter()
        .map(|p| {
            let (x, y) = scale_coords(p.x, p.y, pitch[0], pitch[1]);
            PlayerState {
                x: x.clamp(0.0, MAX_X),
                y: y.clamp(0.0, MAX_Y),
                vx: p.vx,
                vy: p.vy,
                team: if p.team == attacking { Side::Attacking } else { Side::Defending },
            }
        })
        .collect();
    let (bx, by) = scale_coords(frame.ball[0], frame.ball[1], pitch[0], pitch[1]);
    let ball = [bx.clamp(0.0, MAX_X), by.clamp(0.0, MAX_Y), frame.ball[2]];
    let carrier = frame
        .players
        .iter()
        .position(|p| p.id == passer_id && p.team == attacking)
        .or_else(|| {
            // passer missing from this frame: nearest attacker to the ball
            players
                .iter()
                .enumerate()
                .filter(|(_, p)| p.team == Side::Attacking)
                .min_by(|a, b| {
                    let da = (a.1.x - ball[0]).hypot(a.1.y - ball[1]);
                    let db = (b.1.x - ball[0]).hypot(b.1.y - ball[1]);
                    da.total_cmp(&db)
                })
                .map(|(i, _)| i)
        })?;
    Some(GameState { players, ball, carrier })
}

/// Value label of a pass released by `team` at `(period, t)`: the first goal
/// within the active window decides.
pub fn value_label(active: &ActiveTime, goals: &[GoalEvent], team: Team, period: u8, t: f64) -> i8 {
    goals
        .iter()
        .find(|g| active.within(period, t, g.period, g.t, VALUE_WINDOW_S))
        .map_or(0, |g| if g.team == team { 1 } else { -1 })
}

pub fn build_samples(m: &NormalizedMatch, goals: &[GoalEvent]) -> (Vec<PassSample>, BuildStats) {
    let raw: Vec<TrackingFrame> = m.frames.iter().map(|f| f.frame.clone()).collect();
    let active = ActiveTime::new(&raw);
    let pitch = m.header.pitch;
    let goals: Vec<GoalEvent> = goals.iter().filter(|g| g.match_id == m.header.match_id).cloned().collect();
    let mut stats = BuildStats { passes: m.passes.len(), ..Default::default() };
    let mut out = Vec::new();
    for (pass, aligned) in m.passes.iter().zip(&m.alignment) {
        let Some(fi) = *aligned else {
            stats.unaligned += 1;
            continue;
        };
        let nf = &m.frames[fi];
        let frame = if nf.attacking == pass.team { nf.frame.clone() } else { mirror_frame(&nf.frame, pitch) };
        let Some(state) = game_state(&frame, pass.team, &pass.passer_id, pitch) else {
            stats.no_attackers += 1;
            continue;
        };
        out.push(PassSample {
            match_id: m.header.match_id.clone(),
            state,
            dest: destination_cell(pass.end_x, pass.end_y, pitch),
            success: pass.success,
            value: value_label(&active, &goals, pass.team, pass.period, pass.t),
        });
    }
    stats.samples = out.len();
    (out, stats)
}

/// Percentage of successful passes, or 0 for an empty set.
pub fn success_percentage(samples: &[PassSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    100.0 * samples.iter().filter(|s| s.success).count() as f64 / samples.len() as f64
}
