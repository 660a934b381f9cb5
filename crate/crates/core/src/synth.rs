//! Parameter-driven synthetic matches standing in for real tracking feeds.
//!
//! Each match is simulated at 10 Hz: players steer toward a formation slot
//! that shifts with the ball, the carrier releases a pass every 1-4 s, and
//! pass success falls with distance and with defenders near the target or
//! the passing lane. Carrying the ball close to goal carries a goal hazard.
//! Goals and some failed passes stop play for a few seconds.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::events::{write_goals, write_passes, GoalEvent, PassEvent};
use crate::data::normalize::Direction;
use crate::data::tracking::{write_tracking, MatchHeader, TrackedPlayer, TrackingFrame};
use crate::data::{DataError, Team};

/// Box-Muller standard normal.
fn normal(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub matches: usize,
    pub period_seconds: f64,
    pub pitch: [f64; 2],
    /// Fraction of passes played in the air.
    pub aerial_fraction: f64,
    pub max_speed: f64,
    /// Goal hazard per second when carrying the ball at the goal line.
    pub goal_hazard: f64,
    /// Share of failed passes that leave the pitch.
    pub out_of_play_share: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            matches: 3,
            period_seconds: 150.0,
            pitch: [105.0, 68.0],
            aerial_fraction: 0.2,
            max_speed: 8.5,
            goal_hazard: 0.35,
            out_of_play_share: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthMatch {
    pub header: MatchHeader,
    pub frames: Vec<TrackingFrame>,
    pub passes: Vec<PassEvent>,
    pub goals: Vec<GoalEvent>,
}

/// Formation slots in meters for a team attacking toward x = 105.
const SHAPE: [(f64, f64); 11] = [
    (5.0, 34.0),
    (22.0, 8.0),
    (20.0, 25.0),
    (20.0, 43.0),
    (22.0, 60.0),
    (40.0, 10.0),
    (37.0, 28.0),
    (37.0, 40.0),
    (40.0, 58.0),
    (55.0, 27.0),
    (55.0, 41.0),
];

const DT: f64 = 0.1;
const MAX_ACCEL: f64 = 5.0;

#[derive(Debug, Clone, Copy)]
struct Body {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
}

#[derive(Debug, Clone, Copy)]
enum Ball {
    Carried(usize),
    Flight {
        from: [f64; 2],
        to: [f64; 2],
        t0: f64,
        t1: f64,
        peak: f64,
        receiver: usize,
        success: bool,
    },
    Dead {
        at: [f64; 2],
        until: f64,
        restart_team: Team,
    },
}

fn team_of(i: usize) -> Team {
    if i < 11 {
        Team::Home
    } else {
        Team::Away
    }
}

fn player_id(i: usize) -> String {
    match team_of(i) {
        Team::Home => format!("H{}", i + 1),
        Team::Away => format!("A{}", i - 10),
    }
}

struct Sim<'c> {
    cfg: &'c SynthConfig,
    rng: ChaCha8Rng,
    bodies: Vec<Body>,
    ball: Ball,
    ball_pos: [f64; 3],
    period: u8,
    next_pass: f64,
    match_id: String,
    passes: Vec<PassEvent>,
    goals: Vec<GoalEvent>,
}

impl Sim<'_> {
    fn attacks_ltr(&self, team: Team) -> bool {
        (team == Team::Home) == (self.period == 1)
    }

    /// Converts team-frame meters (attacking toward +x) to world meters.
    /// The map is its own inverse.
    fn world(&self, team: Team, x: f64, y: f64) -> (f64, f64) {
        if self.attacks_ltr(team) {
            (x, y)
        } else {
            (self.cfg.pitch[0] - x, self.cfg.pitch[1] - y)
        }
    }

    fn possession(&self) -> Option<Team> {
        match self.ball {
            Ball::Carried(c) => Some(team_of(c)),
            Ball::Flight { receiver, .. } => Some(team_of(receiver)),
            Ball::Dead { .. } => None,
        }
    }

    fn kickoff(&mut self, team: Team, t: f64) {
        let [l, w] = self.cfg.pitch;
        for i in 0..22 {
            let (sx, sy) = SHAPE[i % 11];
            let (x, y) = self.world(team_of(i), sx * 0.9, sy);
            self.bodies[i] = Body { x, y, vx: 0.0, vy: 0.0 };
        }
        let (l2, w2) = (l / 2.0, w / 2.0);
        self.ball = Ball::Dead {
            at: [l2, w2],
            until: t + 2.0,
            restart_team: team,
        };
        self.ball_pos = [l2, w2, 0.0];
    }

    fn target(&mut self, i: usize) -> (f64, f64) {
        let team = team_of(i);
        let (bx, _) = self.world(team, self.ball_pos[0], self.ball_pos[1]);
        let (sx, sy) = SHAPE[i % 11];
        let attacking = self.possession() == Some(team);
        let push = if attacking { 10.0 } else { -4.0 };
        let shift = 0.45 * (bx - 52.5);
        let gk = i.is_multiple_of(11);
        let tx = if gk { sx + 0.1 * shift } else { sx + shift + push };
        let (mut x, mut y) = self.world(team, tx.clamp(2.0, 100.0), sy);
        match self.ball {
            Ball::Flight { to, receiver, .. } if receiver == i => {
                x = to[0];
                y = to[1];
            }
            _ => {}
        }
        // the carrier drives at goal
        if matches!(self.ball, Ball::Carried(c) if c == i) {
            let (gx, gy) = self.world(team, 100.0, 34.0);
            return (gx, gy);
        }
        // the nearest defender presses the ball
        if !attacking && !gk && self.nearest_of(team, self.ball_pos[0], self.ball_pos[1], None) == Some(i) {
            x = self.ball_pos[0];
            y = self.ball_pos[1];
        }
        (x, y)
    }

    fn nearest_of(&self, team: Team, x: f64, y: f64, except: Option<usize>) -> Option<usize> {
        (0..22)
            .filter(|&j| team_of(j) == team && Some(j) != except)
            .min_by(|&a, &b| {
                let da = (self.bodies[a].x - x).hypot(self.bodies[a].y - y);
                let db = (self.bodies[b].x - x).hypot(self.bodies[b].y - y);
                da.total_cmp(&db)
            })
    }

    fn move_players(&mut self) {
        let [l, w] = self.cfg.pitch;
        for i in 0..22 {
            let (tx, ty) = self.target(i);
            let b = self.bodies[i];
            let jx = 0.6 * normal(&mut self.rng);
            let jy = 0.6 * normal(&mut self.rng);
            // desired velocity toward the target, easing in over the last meters
            let (dx, dy) = (tx - b.x, ty - b.y);
            let dist = dx.hypot(dy).max(1e-9);
            let want = (dist * 0.8).min(self.cfg.max_speed * 0.9);
            let (wx, wy) = (dx / dist * want + jx, dy / dist * want + jy);
            let (mut ax, mut ay) = ((wx - b.vx) / DT, (wy - b.vy) / DT);
            let a = ax.hypot(ay);
            if a > MAX_ACCEL {
                ax *= MAX_ACCEL / a;
                ay *= MAX_ACCEL / a;
            }
            let mut vx = b.vx + ax * DT;
            let mut vy = b.vy + ay * DT;
            let s = vx.hypot(vy);
            if s > self.cfg.max_speed {
                vx *= self.cfg.max_speed / s;
                vy *= self.cfg.max_speed / s;
            }
            let mut x = b.x + vx * DT;
            let mut y = b.y + vy * DT;
            if !(0.0..=l).contains(&x) {
                x = x.clamp(0.0, l);
                vx = 0.0;
            }
            if !(0.0..=w).contains(&y) {
                y = y.clamp(0.0, w);
                vy = 0.0;
            }
            self.bodies[i] = Body { x, y, vx, vy };
        }
    }

    fn success_probability(&self, passer: usize, to: [f64; 2]) -> f64 {
        let p = self.bodies[passer];
        let team = team_of(passer);
        let dist = (to[0] - p.x).hypot(to[1] - p.y);
        let mut near_end = 0.0;
        let mut near_lane = 0.0;
        for j in (0..22).filter(|&j| team_of(j) != team) {
            let d = self.bodies[j];
            if (d.x - to[0]).hypot(d.y - to[1]) < 3.0 {
                near_end += 1.0;
            }
            let (sx, sy) = (to[0] - p.x, to[1] - p.y);
            let len2 = (sx * sx + sy * sy).max(1e-9);
            let u = (((d.x - p.x) * sx + (d.y - p.y) * sy) / len2).clamp(0.0, 1.0);
            if (p.x + u * sx - d.x).hypot(p.y + u * sy - d.y) < 1.5 && u > 0.1 && u < 0.9 {
                near_lane += 1.0;
            }
        }
        (0.93 - 0.006 * dist - 0.12 * near_end - 0.08 * near_lane).clamp(0.05, 0.99)
    }

    fn release_pass(&mut self, passer: usize, t: f64) {
        let team = team_of(passer);
        let [l, w] = self.cfg.pitch;
        let p = self.bodies[passer];
        let (px, _) = self.world(team, p.x, p.y);
        let mates: Vec<usize> = (0..22)
            .filter(|&j| team_of(j) == team && j != passer && j % 11 != 0)
            .collect();
        let weights: Vec<f64> = mates
            .iter()
            .map(|&j| {
                let b = self.bodies[j];
                let d = (b.x - p.x).hypot(b.y - p.y);
                let (jx, _) = self.world(team, b.x, b.y);
                (-(d - 14.0).abs() / 9.0).exp() * (1.0 + ((jx - px) / 15.0).clamp(-0.8, 2.0))
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut pick = self.rng.gen_range(0.0..total);
        let mut receiver = mates[0];
        for (&j, &wt) in mates.iter().zip(&weights) {
            if pick < wt {
                receiver = j;
                break;
            }
            pick -= wt;
        }
        let r = self.bodies[receiver];
        let aerial = self.rng.gen_bool(self.cfg.aerial_fraction);
        let lead = 0.8;
        let to = [
            (r.x + r.vx * lead + 1.2 * normal(&mut self.rng)).clamp(0.5, l - 0.5),
            (r.y + r.vy * lead + 1.2 * normal(&mut self.rng)).clamp(0.5, w - 0.5),
        ];
        let dist = (to[0] - p.x).hypot(to[1] - p.y);
        let speed = if aerial { 14.0 } else { 17.0 };
        let mut ps = self.success_probability(passer, to);
        if aerial {
            ps = (ps + 0.05).min(0.99);
        }
        let success = self.rng.gen_bool(ps);
        let t1 = t + (dist / speed).max(0.3);
        let peak = if aerial { self.rng.gen_range(2.0..6.0) } else { 0.0 };
        self.passes.push(PassEvent {
            match_id: self.match_id.clone(),
            t: round_t(t),
            passer_id: player_id(passer),
            team,
            end_x: to[0],
            end_y: to[1],
            success,
            end_t: round_t(t1),
            period: self.period,
        });
        self.ball = Ball::Flight {
            from: [self.ball_pos[0], self.ball_pos[1]],
            to,
            t0: t,
            t1,
            peak,
            receiver,
            success,
        };
    }

    fn step_ball(&mut self, t: f64) {
        let [l, w] = self.cfg.pitch;
        match self.ball {
            Ball::Carried(c) => {
                let b = self.bodies[c];
                let team = team_of(c);
                let dir = if self.attacks_ltr(team) { 1.0 } else { -1.0 };
                self.ball_pos = [(b.x + 0.5 * dir).clamp(0.0, l), b.y, 0.0];
                let goal_x = if self.attacks_ltr(team) { l } else { 0.0 };
                let d = (goal_x - b.x).hypot(w / 2.0 - b.y);
                let hazard = if d < 30.0 { self.cfg.goal_hazard * (-d / 8.0).exp() } else { 0.0 };
                if self.rng.gen_bool((hazard * DT).min(1.0)) {
                    self.goals.push(GoalEvent {
                        match_id: self.match_id.clone(),
                        period: self.period,
                        t: round_t(t),
                        team,
                    });
                    self.ball = Ball::Dead {
                        at: [goal_x, w / 2.0],
                        until: t + self.rng.gen_range(5.0..8.0),
                        restart_team: team.other(),
                    };
                    self.ball_pos = [goal_x, w / 2.0, 0.0];
                } else if t >= self.next_pass {
                    self.release_pass(c, t);
                }
            }
            Ball::Flight {
                from,
                to,
                t0,
                t1,
                peak,
                receiver,
                success,
            } => {
                let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                self.ball_pos = [
                    from[0] + s * (to[0] - from[0]),
                    from[1] + s * (to[1] - from[1]),
                    4.0 * peak * s * (1.0 - s),
                ];
                if t + 1e-9 >= t1 {
                    self.ball_pos[2] = 0.0;
                    self.next_pass = t + self.rng.gen_range(1.0..4.0);
                    if success {
                        self.ball = Ball::Carried(receiver);
                    } else if self.rng.gen_bool(self.cfg.out_of_play_share) {
                        self.ball = Ball::Dead {
                            at: to,
                            until: t + self.rng.gen_range(2.0..5.0),
                            restart_team: team_of(receiver).other(),
                        };
                    } else {
                        let other = team_of(receiver).other();
                        let winner = self.nearest_of(other, to[0], to[1], None).unwrap_or(0);
                        self.ball = Ball::Carried(winner);
                    }
                }
            }
            Ball::Dead { at, until, restart_team } => {
                self.ball_pos = [at[0], at[1], 0.0];
                if t >= until {
                    let c = self
                        .nearest_of(restart_team, at[0], at[1], Some(if restart_team == Team::Home { 0 } else { 11 }))
                        .unwrap_or(0);
                    self.ball = Ball::Carried(c);
                    self.next_pass = t + self.rng.gen_range(1.0..3.0);
                }
            }
        }
    }

    fn frame(&self, t: f64) -> TrackingFrame {
        TrackingFrame {
            t: round_t(t),
            period: self.period,
            players: self
                .bodies
                .iter()
                .enumerate()
                .map(|(i, b)| TrackedPlayer {
                    id: player_id(i),
                    team: team_of(i),
                    x: round_cm(b.x),
                    y: round_cm(b.y),
                    vx: 0.0,
                    vy: 0.0,
                })
                .collect(),
            ball: [round_cm(self.ball_pos[0]), round_cm(self.ball_pos[1]), round_cm(self.ball_pos[2])],
            ball_in_play: !matches!(self.ball, Ball::Dead { .. }),
        }
    }
}

fn round_t(t: f64) -> f64 {
    (t * 10.0).round() / 10.0
}

fn round_cm(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

pub fn match_id(index: usize) -> String {
    format!("syn{index:03}")
}

/// Simulates match `index` of a seeded set.
pub fn simulate_match(cfg: &SynthConfig, index: usize) -> SynthMatch {
    let seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64 + 1);
    let mut sim = Sim {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(seed),
        bodies: vec![Body { x: 0.0, y: 0.0, vx: 0.0, vy: 0.0 }; 22],
        ball: Ball::Carried(9),
        ball_pos: [0.0; 3],
        period: 1,
        next_pass: 0.0,
        match_id: match_id(index),
        passes: Vec::new(),
        goals: Vec::new(),
    };
    let steps = (cfg.period_seconds / DT).round() as usize;
    let mut frames = Vec::with_capacity(2 * steps);
    for period in 1..=2u8 {
        sim.period = period;
        let starter = if period == 1 { Team::Home } else { Team::Away };
        sim.kickoff(starter, 0.0);
        for k in 0..steps {
            let t = k as f64 * DT;
            sim.move_players();
            sim.step_ball(t);
            frames.push(sim.frame(t));
        }
        // a pass still in flight at the whistle has no outcome
        if let Ball::Flight { .. } = sim.ball {
            sim.passes.pop();
        }
    }
    let header = MatchHeader {
        match_id: sim.match_id.clone(),
        pitch: cfg.pitch,
        home_direction: BTreeMap::from([("1".into(), Direction::LeftToRight), ("2".into(), Direction::RightToLeft)]),
    };
    SynthMatch {
        header,
        frames,
        passes: sim.passes,
        goals: sim.goals,
    }
}

pub fn generate(cfg: &SynthConfig) -> Vec<SynthMatch> {
    (0..cfg.matches).map(|i| simulate_match(cfg, i)).collect()
}

pub const PASSES_FILE: &str = "passes.csv";
pub const GOALS_FILE: &str = "goals.csv";
pub const TRACKING_SUFFIX: &str = ".tracking.jsonl";

/// Writes `<id>.tracking.jsonl` per match plus combined pass and goal CSVs.
pub fn write_fixture(dir: &Path, cfg: &SynthConfig) -> Result<Vec<SynthMatch>, DataError> {
    fs::create_dir_all(dir)?;
    let matches = generate(cfg);
    let mut passes = Vec::new();
    let mut goals = Vec::new();
    for m in &matches {
        let f = fs::File::create(dir.join(format!("{}{TRACKING_SUFFIX}", m.header.match_id)))?;
        let mut w = BufWriter::new(f);
        write_tracking(&mut w, &m.header, &m.frames)?;
        w.flush()?;
        passes.extend(m.passes.iter().cloned());
        goals.extend(m.goals.iter().cloned());
    }
    write_passes(BufWriter::new(fs::File::create(dir.join(PASSES_FILE))?), &passes)?;
    write_goals(BufWriter::new(fs::File::create(dir.join(GOALS_FILE))?), &goals)?;
    fs::write(
        dir.join("synth.json"),
        serde_json::to_string_pretty(cfg).map_err(DataError::from)?,
    )?;
    Ok(matches)
}
