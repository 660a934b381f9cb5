//! Pass values from model surfaces, scalar game-state values, best-pass
//! search and the pairwise benchmark.

pub mod adapter;
pub mod benchmark;
pub mod models;
pub mod pairs;
pub mod surface;

pub use benchmark::{evaluate_benchmark, BenchmarkPair, BenchmarkReport, PairFile, PairLabel};
pub use models::{HeuristicModel, ModelBundle, SurfaceModel};
pub use surface::{best_pass, compose, evaluate, state_epv, EpvSurface, Evaluation, StateEpv, SurfaceSet};
