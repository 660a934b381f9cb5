//! Normalized game states in grid units.
//!
//! The attacking team always plays toward grid-x 103. Positions are grid
//! coordinates on the 104x68 node lattice; velocities stay in m/s.

use serde::{Deserialize, Serialize};

pub const GRID_X: usize = 104;
pub const GRID_Y: usize = 68;
pub const GRID_CELLS: usize = GRID_X * GRID_Y;
pub const MAX_X: f64 = (GRID_X - 1) as f64;
pub const MAX_Y: f64 = (GRID_Y - 1) as f64;
pub const CENTER_Y: f64 = MAX_Y / 2.0;

/// Flat index of grid node `(ix, iy)`; x-major, matching the feature layout.
pub fn cell_index(ix: usize, iy: usize) -> usize {
    ix * GRID_Y + iy
}

pub fn cell_coords(index: usize) -> (usize, usize) {
    (index / GRID_Y, index % GRID_Y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "att")]
    Attacking,
    #[serde(rename = "def")]
    Defending,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayerState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub team: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub players: Vec<PlayerState>,
    /// `[grid-x, grid-y, height in meters]`.
    pub ball: [f64; 3],
    /// Index into `players` of the ball carrier.
    pub carrier: usize,
}

/// A validation failure with the JSON path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {reason}")]
pub struct StateError {
    pub path: String,
    pub reason: String,
}

fn state_error(path: impl Into<String>, reason: impl Into<String>) -> StateError {
    StateError {
        path: path.into(),
        reason: reason.into(),
    }
}

fn check_range(path: String, v: f64, max: f64) -> Result<(), StateError> {
    if !v.is_finite() {
        return Err(state_error(path, "must be finite"));
    }
    if !(0.0..=max).contains(&v) {
        return Err(state_error(path, format!("{v} outside [0, {max}]")));
    }
    Ok(())
}

impl GameState {
    pub const MAX_PLAYERS: usize = 22;

    pub fn validate(&self) -> Result<(), StateError> {
        if self.players.is_empty() || self.players.len() > Self::MAX_PLAYERS {
            return Err(state_error(
                "players",
                format!("expected 1 to {} players, got {}", Self::MAX_PLAYERS, self.players.len()),
            ));
        }
        for (i, p) in self.players.iter().enumerate() {
            check_range(format!("players[{i}].x"), p.x, MAX_X)?;
            check_range(format!("players[{i}].y"), p.y, MAX_Y)?;
            for (name, v) in [("vx", p.vx), ("vy", p.vy)] {
                if !v.is_finite() {
                    return Err(state_error(format!("players[{i}].{name}"), "must be finite"));
                }
            }
        }
        check_range("ball[0]".into(), self.ball[0], MAX_X)?;
        check_range("ball[1]".into(), self.ball[1], MAX_Y)?;
        if !self.ball[2].is_finite() || self.ball[2] < 0.0 {
            return Err(state_error("ball[2]", "height must be finite and non-negative"));
        }
        match self.players.get(self.carrier) {
            None => Err(state_error("carrier", format!("index {} out of range", self.carrier))),
            Some(p) if p.team != Side::Attacking => Err(state_error("carrier", "carrier must be an attacking player")),
            Some(_) => Ok(()),
        }
    }

    /// Reflects the state across the pitch's long axis (`y -> 67 - y`).
    pub fn mirror_y(&self) -> GameState {
        GameState {
            players: self
                .players
                .iter()
                .map(|p| PlayerState {
                    y: MAX_Y - p.y,
                    vy: -p.vy,
                    ..*p
                })
                .collect(),
            ball: [self.ball[0], MAX_Y - self.ball[1], self.ball[2]],
            carrier: self.carrier,
        }
    }

    pub fn attackers(&self) -> impl Iterator<Item = &PlayerState> {
        self.players.iter().filter(|p| p.team == Side::Attacking)
    }

    pub fn defenders(&self) -> impl Iterator<Item = &PlayerState> {
        self.players.iter().filter(|p| p.team == Side::Defending)
    }
}
