//! Rasterizes a [`GameState`] into the 10-channel feature stack.
//!
//! Layout is channel-major, then grid-x, then grid-y:
//! `index = c * 104 * 68 + ix * 68 + iy`. Units are raw (grid units, m/s,
//! meters, radians); the model applies its own fixed input scale.

use crate::state::{GameState, Side, CENTER_Y, GRID_CELLS, GRID_X, GRID_Y, MAX_X, MAX_Y};

pub const CHANNELS: usize = 10;
pub const STACK_LEN: usize = CHANNELS * GRID_CELLS;

pub const CHANNEL_NAMES: [&str; CHANNELS] = [
    "att_presence",
    "att_vx",
    "att_vy",
    "def_presence",
    "def_vx",
    "def_vy",
    "dist_to_ball",
    "ball_height",
    "dist_to_goal",
    "angle_to_goal",
];

pub const ATT_PRESENCE: usize = 0;
pub const DEF_PRESENCE: usize = 3;
pub const DIST_TO_BALL: usize = 6;
pub const BALL_HEIGHT: usize = 7;
pub const DIST_TO_GOAL: usize = 8;
pub const ANGLE_TO_GOAL: usize = 9;

/// Goal mouth half-width in grid-y units (7.32 m mouth on a 68 m pitch).
pub const GOAL_HALF_WIDTH: f64 = 3.66 * MAX_Y / 68.0;
/// Inside this distance of the goal centre the subtended angle is pinned to pi.
pub const ANGLE_CLAMP_RADIUS: f64 = 0.5;
/// Smallest reported angle, so nodes collinear with the goal line stay positive.
pub const MIN_ANGLE: f64 = 1e-6;

/// Maps pitch meters onto grid coordinates (`0..=103`, `0..=67`).
pub fn scale_coords(x_m: f64, y_m: f64, pitch_len: f64, pitch_wid: f64) -> (f64, f64) {
    (x_m / pitch_len * MAX_X, y_m / pitch_wid * MAX_Y)
}

/// Angle subtended by the goal mouth at `(gx, gy)`.
pub fn angle_to_goal(gx: f64, gy: f64) -> f64 {
    let (dx, dy) = (MAX_X - gx, CENTER_Y - gy);
    if (dx * dx + dy * dy).sqrt() < ANGLE_CLAMP_RADIUS {
        return std::f64::consts::PI;
    }
    let (ax, ay) = (MAX_X - gx, CENTER_Y - GOAL_HALF_WIDTH - gy);
    let (bx, by) = (MAX_X - gx, CENTER_Y + GOAL_HALF_WIDTH - gy);
    let cross = ax * by - ay * bx;
    let dot = ax * bx + ay * by;
    cross.atan2(dot).abs().max(MIN_ANGLE)
}

pub fn dist_to_goal(gx: f64, gy: f64) -> f64 {
    (MAX_X - gx).hypot(CENTER_Y - gy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    data: Vec<f32>,
}

impl FeatureStack {
    pub fn zeros() -> Self {
        Self { data: vec![0.0; STACK_LEN] }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * GRID_CELLS..(c + 1) * GRID_CELLS]
    }

    pub fn at(&self, c: usize, ix: usize, iy: usize) -> f32 {
        self.data[c * GRID_CELLS + ix * GRID_Y + iy]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub sum: f64,
}

pub fn channel_stats(stack: &FeatureStack) -> [ChannelStats; CHANNELS] {
    std::array::from_fn(|c| {
        let ch = stack.channel(c);
        let sum: f64 = ch.iter().map(|&v| v as f64).sum();
        ChannelStats {
            min: ch.iter().fold(f64::INFINITY, |m, &v| m.min(v as f64)),
            max: ch.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64)),
            mean: sum / ch.len() as f64,
            sum,
        }
    })
}

/// Bilinear weights of `(gx, gy)` on its four surrounding nodes.
fn bilinear(gx: f64, gy: f64) -> [(usize, usize, f64); 4] {
    let gx = gx.clamp(0.0, MAX_X);
    let gy = gy.clamp(0.0, MAX_Y);
    let x0 = (gx.floor() as usize).min(GRID_X - 2);
    let y0 = (gy.floor() as usize).min(GRID_Y - 2);
    let fx = gx - x0 as f64;
    let fy = gy - y0 as f64;
    [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ]
}

/// Static goal-geometry planes, identical for every state.
fn goal_planes() -> &'static (Vec<f32>, Vec<f32>) {
    static PLANES: std::sync::OnceLock<(Vec<f32>, Vec<f32>)> = std::sync::OnceLock::new();
    PLANES.get_or_init(|| {
        let mut dist = vec![0.0; GRID_CELLS];
        let mut angle = vec![0.0; GRID_CELLS];
        for ix in 0..GRID_X {
            for iy in 0..GRID_Y {
                let (x, y) = (ix as f64, iy as f64);
                dist[ix * GRID_Y + iy] = dist_to_goal(x, y) as f32;
                angle[ix * GRID_Y + iy] = angle_to_goal(x, y) as f32;
            }
        }
        (dist, angle)
    })
}

/// Writes the feature stack of `state` into `out` (length [`STACK_LEN`]).
pub fn rasterize_into(state: &GameState, out: &mut [f32]) {
    assert_eq!(out.len(), STACK_LEN, "feature buffer length");
    out.fill(0.0);
    for p in &state.players {
        let base = match p.team {
            Side::Attacking => ATT_PRESENCE,
            Side::Defending => DEF_PRESENCE,
        };
        for (ix, iy, w) in bilinear(p.x, p.y) {
            if w == 0.0 {
                continue;
            }
            let cell = ix * GRID_Y + iy;
            out[base * GRID_CELLS + cell] += w as f32;
            out[(base + 1) * GRID_CELLS + cell] += (w * p.vx) as f32;
            out[(base + 2) * GRID_CELLS + cell] += (w * p.vy) as f32;
        }
    }
    let [bx, by, bz] = state.ball;
    for ix in 0..GRID_X {
        for iy in 0..GRID_Y {
            out[DIST_TO_BALL * GRID_CELLS + ix * GRID_Y + iy] = (ix as f64 - bx).hypot(iy as f64 - by) as f32;
        }
    }
    out[BALL_HEIGHT * GRID_CELLS..(BALL_HEIGHT + 1) * GRID_CELLS].fill(bz as f32);
    let (dist, angle) = goal_planes();
    out[DIST_TO_GOAL * GRID_CELLS..(DIST_TO_GOAL + 1) * GRID_CELLS].copy_from_slice(dist);
    out[ANGLE_TO_GOAL * GRID_CELLS..(ANGLE_TO_GOAL + 1) * GRID_CELLS].copy_from_slice(angle);
}

pub fn rasterize(state: &GameState) -> FeatureStack {
    let mut stack = FeatureStack::zeros();
    rasterize_into(state, &mut stack.data);
    stack
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::PlayerState;

    fn one_player(x: f64, y: f64) -> GameState {
        GameState {
            players: vec![PlayerState { x, y, vx: 2.0, vy: -1.0, team: Side::Attacking }],
            ball: [x, y, 0.0],
            carrier: 0,
        }
    }

    #[test]
    fn scale_coords_corners() {
        assert_eq!(scale_coords(0.0, 0.0, 105.0, 68.0), (0.0, 0.0));
        assert_eq!(scale_coords(105.0, 68.0, 105.0, 68.0), (103.0, 67.0));
        assert_eq!(scale_coords(52.5, 34.0, 105.0, 68.0), (51.5, 33.5));
    }

    #[test]
    fn node_and_half_cell_splats() {
        let s = rasterize(&one_player(10.0, 20.0));
        assert_eq!(s.at(ATT_PRESENCE, 10, 20), 1.0);
        assert_eq!(s.at(1, 10, 20), 2.0);
        let s = rasterize(&one_player(10.5, 20.5));
        for (ix, iy) in [(10, 20), (11, 20), (10, 21), (11, 21)] {
            assert_eq!(s.at(ATT_PRESENCE, ix, iy), 0.25);
        }
        let s = rasterize(&one_player(103.0, 67.0));
        assert_eq!(s.at(ATT_PRESENCE, 103, 67), 1.0);
    }

    #[test]
    fn goal_geometry() {
        assert_eq!(dist_to_goal(MAX_X, CENTER_Y), 0.0);
        assert_eq!(angle_to_goal(MAX_X, CENTER_Y), std::f64::consts::PI);
        assert_eq!(angle_to_goal(MAX_X, 0.0), MIN_ANGLE);
    }
}
