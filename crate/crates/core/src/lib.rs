//! Pass expected-possession-value engine.
//!
//! Tracking and event data are normalized into [`state::GameState`]s,
//! rasterized into ten-channel grids, and fed to four attention U-Nets
//! (pass likelihood, pass success and the two conditional value models).
//! Their calibrated surfaces are composed into per-cell pass values and a
//! scalar per game state, which the benchmark harness compares pairwise.

pub mod data;
pub mod epv;
pub mod grid;
pub mod model;
pub mod pipeline;
pub mod state;
pub mod synth;
pub mod train;
