//! Tracking and event ingestion, through to labelled pass samples.
//!
//! Stages run in order: [`tracking::parse_tracking`], [`smooth::smooth_velocities`],
//! [`normalize::normalize_and_clean`], [`samples::build_samples`].

pub mod active;
pub mod events;
pub mod normalize;
pub mod sample_file;
pub mod samples;
pub mod smooth;
pub mod split;
pub mod tracking;

use serde::{Deserialize, Serialize};

/// Team identity in raw match data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Team {
    #[serde(rename = "H")]
    Home,
    #[serde(rename = "A")]
    Away,
}

impl Team {
    pub fn other(self) -> Team {
        match self {
            Team::Home => Team::Away,
            Team::Away => Team::Home,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Team::Home => "H",
            Team::Away => "A",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("no attack direction for team {team:?} in period {period}")]
    UnknownDirection { team: Team, period: u8 },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;
