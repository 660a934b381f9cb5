//! Pass and goal event CSVs.
//!
//! Passes: `match_id,t,passer_id,team,end_x,end_y,success,end_t[,period]`
//! (period defaults to 1). Goals: `match_id,period,t,team`.

use std::io::{Read, Write};

use serde::{Deserialize, Deserializer, Serialize};

use super::{DataError, Result, Team};

fn flexible_bool<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" => Ok(true),
        "0" | "false" | "f" | "no" => Ok(false),
        other => Err(serde::de::Error::custom(format!("not a boolean: {other:?}"))),
    }
}

fn serialize_bool01<S: serde::Serializer>(v: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*v))
}

fn default_period() -> u8 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassEvent {
    pub match_id: String,
    /// Release time, seconds since period start.
    pub t: f64,
    pub passer_id: String,
    pub team: Team,
    /// End location in meters.
    pub end_x: f64,
    pub end_y: f64,
    #[serde(deserialize_with = "flexible_bool", serialize_with = "serialize_bool01")]
    pub success: bool,
    pub end_t: f64,
    #[serde(default = "default_period")]
    pub period: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalEvent {
    pub match_id: String,
    pub period: u8,
    pub t: f64,
    /// The team credited with the goal.
    pub team: Team,
}

pub fn parse_passes(reader: impl Read) -> Result<Vec<PassEvent>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<PassEvent>().enumerate() {
        let ev = rec.map_err(|e| DataError::Line { line: i + 2, reason: e.to_string() })?;
        if ev.end_t < ev.t {
            return Err(DataError::Line { line: i + 2, reason: format!("end_t {} before release {}", ev.end_t, ev.t) });
        }
        out.push(ev);
    }
    out.sort_by(|a, b| (a.period, a.t).partial_cmp(&(b.period, b.t)).expect("finite times"));
    Ok(out)
}

pub fn parse_goals(reader: impl Read) -> Result<Vec<GoalEvent>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<GoalEvent>().enumerate() {
        out.push(rec.map_err(|e| DataError::Line { line: i + 2, reason: e.to_string() })?);
    }
    out.sort_by(|a, b| (a.period, a.t).partial_cmp(&(b.period, b.t)).expect("finite times"));
    Ok(out)
}

pub fn write_passes(w: impl Write, passes: &[PassEvent]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for p in passes {
        wtr.serialize(p)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_goals(w: impl Write, goals: &[GoalEvent]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for g in goals {
        wtr.serialize(g)?;
    }
    wtr.flush()?;
    Ok(())
}
