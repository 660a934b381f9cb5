//! Import/export of the long-form published pair layout: one CSV row per
//! entity, pair fields repeated on every row.
//!
//! ```text
//! pair_id,label,rationale,tags,state,entity,team,x,y,z,vx,vy,carrier
//! p1,a,deeper run,press|wide,a,player,att,50,30,,1.5,0,
//! p1,a,deeper run,press|wide,a,ball,,51,30,0,,,0
//! ```
//! Numbers are written with shortest round-trip formatting, so export then
//! import is lossless.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::benchmark::{BenchmarkPair, PairFile, PairLabel};
use crate::state::{GameState, PlayerState, Side};

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Row {
    pair_id: String,
    label: String,
    rationale: String,
    tags: String,
    state: String,
    entity: String,
    team: String,
    x: f64,
    y: f64,
    z: Option<f64>,
    vx: Option<f64>,
    vy: Option<f64>,
    carrier: Option<usize>,
}

const TAG_SEP: char = '|';

fn state_rows(p: &BenchmarkPair, side: &str, st: &GameState, out: &mut Vec<Row>) {
    let base = Row {
        pair_id: p.id.clone(),
        label: p.label.map(|l| l.name().to_string()).unwrap_or_default(),
        rationale: p.rationale.clone(),
        tags: p.tags.join(&TAG_SEP.to_string()),
        state: side.to_string(),
        entity: String::new(),
        team: String::new(),
        x: 0.0,
        y: 0.0,
        z: None,
        vx: None,
        vy: None,
        carrier: None,
    };
    for pl in &st.players {
        out.push(Row {
            entity: "player".into(),
            team: match pl.team {
                Side::Attacking => "att".into(),
                Side::Defending => "def".into(),
            },
            x: pl.x,
            y: pl.y,
            vx: Some(pl.vx),
            vy: Some(pl.vy),
            ..base.clone()
        });
    }
    out.push(Row {
        entity: "ball".into(),
        x: st.ball[0],
        y: st.ball[1],
        z: Some(st.ball[2]),
        carrier: Some(st.carrier),
        ..base
    });
}

pub fn export_published<W: Write>(file: &PairFile, w: W) -> Result<(), AdapterError> {
    let mut rows = Vec::new();
    for p in &file.pairs {
        state_rows(p, "a", &p.a, &mut rows);
        state_rows(p, "b", &p.b, &mut rows);
    }
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Default)]
struct Partial {
    players: Vec<PlayerState>,
    ball: Option<([f64; 3], usize)>,
}

impl Partial {
    fn finish(self, row: usize) -> Result<GameState, AdapterError> {
        let (ball, carrier) = self.ball.ok_or_else(|| AdapterError::Row {
            row,
            reason: "state has no ball row".into(),
        })?;
        Ok(GameState {
            players: self.players,
            ball,
            carrier,
        })
    }
}

pub fn import_published<R: Read>(r: R) -> Result<PairFile, AdapterError> {
    let mut reader = csv::Reader::from_reader(r);
    let mut pairs: Vec<BenchmarkPair> = Vec::new();
    let mut current: Option<(Row, Partial, Partial)> = None;
    let mut last_row = 0;
    let flush = |cur: Option<(Row, Partial, Partial)>, row: usize, pairs: &mut Vec<BenchmarkPair>| -> Result<(), AdapterError> {
        let Some((head, a, b)) = cur else {
            return Ok(());
        };
        let label = match head.label.as_str() {
            "" => None,
            l => Some(PairLabel::parse(l).ok_or_else(|| AdapterError::Row {
                row,
                reason: format!("bad label `{l}`"),
            })?),
        };
        pairs.push(BenchmarkPair {
            id: head.pair_id,
            label,
            rationale: head.rationale,
            tags: if head.tags.is_empty() {
                Vec::new()
            } else {
                head.tags.split(TAG_SEP).map(str::to_string).collect()
            },
            a: a.finish(row)?,
            b: b.finish(row)?,
        });
        Ok(())
    };
    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        let row = i + 2;
        last_row = row;
        let r = rec?;
        if current.as_ref().is_none_or(|(h, _, _)| h.pair_id != r.pair_id) {
            flush(current.take(), row, &mut pairs)?;
            current = Some((r.clone(), Partial::default(), Partial::default()));
        }
        let (_, a, b) = current.as_mut().expect("just set");
        let target = match r.state.as_str() {
            "a" => a,
            "b" => b,
            s => {
                return Err(AdapterError::Row {
                    row,
                    reason: format!("bad state `{s}`"),
                })
            }
        };
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| AdapterError::Row {
                row,
                reason: format!("missing {name}"),
            })
        };
        match r.entity.as_str() {
            "player" => {
                let team = match r.team.as_str() {
                    "att" => Side::Attacking,
                    "def" => Side::Defending,
                    t => {
                        return Err(AdapterError::Row {
                            row,
                            reason: format!("bad team `{t}`"),
                        })
                    }
                };
                target.players.push(PlayerState {
                    x: r.x,
                    y: r.y,
                    vx: need(r.vx, "vx")?,
                    vy: need(r.vy, "vy")?,
                    team,
                });
            }
            "ball" => {
                let carrier = r.carrier.ok_or_else(|| AdapterError::Row {
                    row,
                    reason: "ball row without carrier".into(),
                })?;
                target.ball = Some(([r.x, r.y, need(r.z, "z")?], carrier));
            }
            e => {
                return Err(AdapterError::Row {
                    row,
                    reason: format!("bad entity `{e}`"),
                })
            }
        }
    }
    flush(current, last_row, &mut pairs)?;
    Ok(PairFile { pairs })
}
