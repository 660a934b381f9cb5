//! Generated pair sets whose ordering is known by construction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::benchmark::{BenchmarkPair, PairFile, PairLabel};
use crate::state::{GameState, PlayerState, Side, MAX_X, MAX_Y};

/// 4-4-2 shape for the attacking side, in grid units with the goal at x = 103.
const ATT_SHAPE: [(f64, f64); 11] = [
    (5.0, 33.5),
    (22.0, 8.0),
    (20.0, 24.0),
    (20.0, 43.0),
    (22.0, 59.0),
    (38.0, 10.0),
    (36.0, 27.0),
    (36.0, 40.0),
    (38.0, 57.0),
    (52.0, 26.0),
    (52.0, 41.0),
];

fn jitter(rng: &mut ChaCha8Rng, v: f64, amp: f64, max: f64) -> f64 {
    (v + rng.gen_range(-amp..amp)).clamp(0.0, max)
}

/// A random but plausible open-play state with the ball at `carrier`.
pub fn random_state(rng: &mut ChaCha8Rng) -> GameState {
    let push = rng.gen_range(0.0..25.0);
    let mut players = Vec::with_capacity(22);
    for &(x, y) in &ATT_SHAPE {
        players.push(PlayerState {
            x: jitter(rng, x + push, 4.0, MAX_X),
            y: jitter(rng, y, 4.0, MAX_Y),
            vx: rng.gen_range(-2.0..5.0),
            vy: rng.gen_range(-3.0..3.0),
            team: Side::Attacking,
        });
    }
    for &(x, y) in &ATT_SHAPE {
        players.push(PlayerState {
            x: jitter(rng, MAX_X - x - push * 0.5 + 8.0, 4.0, MAX_X),
            y: jitter(rng, MAX_Y - y, 4.0, MAX_Y),
            vx: rng.gen_range(-5.0..2.0),
            vy: rng.gen_range(-3.0..3.0),
            team: Side::Defending,
        });
    }
    let carrier = rng.gen_range(5..11);
    let c = players[carrier];
    GameState {
        players,
        ball: [c.x, c.y, 0.0],
        carrier,
    }
}

/// Moves every attacker (and the ball) `shift` grid units toward goal.
pub fn advance_attack(state: &GameState, shift: f64) -> GameState {
    let mut out = state.clone();
    for p in out.players.iter_mut().filter(|p| p.team == Side::Attacking) {
        p.x = (p.x + shift).min(MAX_X - 4.0);
    }
    let c = out.players[out.carrier];
    out.ball = [c.x, c.y, state.ball[2]];
    out
}

/// `n` pairs where one state has the same attack pushed 8-20 units further
/// forward; that state is the labelled winner.
pub fn separable_pairs(seed: u64, n: usize) -> PairFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..n)
        .map(|i| {
            let base = random_state(&mut rng);
            let ahead = advance_attack(&base, rng.gen_range(8.0..20.0));
            let ahead_is_a = rng.gen_bool(0.5);
            let (a, b, label) = if ahead_is_a {
                (ahead, base, PairLabel::A)
            } else {
                (base, ahead, PairLabel::B)
            };
            BenchmarkPair {
                id: format!("syn-{i:03}"),
                label: Some(label),
                rationale: "attack pushed toward goal".into(),
                tags: vec!["synthetic".into(), "separable".into()],
                a,
                b,
            }
        })
        .collect();
    PairFile { pairs }
}
