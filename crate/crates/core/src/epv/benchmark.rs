//! Pairwise game-state benchmark: file format and scorer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::models::SurfaceModel;
use super::surface::{evaluate, StateEpv, SurfaceError};
use crate::model::ModelError;
use crate::state::{GameState, StateError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairLabel {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
}

impl PairLabel {
    pub fn flipped(self) -> Self {
        match self {
            PairLabel::A => PairLabel::B,
            PairLabel::B => PairLabel::A,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PairLabel::A => "a",
            PairLabel::B => "b",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "a" => Some(PairLabel::A),
            "b" => Some(PairLabel::B),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPair {
    #[serde(default)]
    pub id: String,
    /// Which state has the higher pass value. Optional while authoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<PairLabel>,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub a: GameState,
    pub b: GameState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairFile {
    pub pairs: Vec<BenchmarkPair>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error("pair file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed pair file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("pair {id}: {reason}")]
    Pair { id: String, reason: String },
    #[error("pair {id}, state {side}: {source}")]
    State {
        id: String,
        side: &'static str,
        #[source]
        source: StateError,
    },
    #[error("no pairs to evaluate")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("pair {id}: {source}")]
    Surface {
        id: String,
        #[source]
        source: SurfaceError,
    },
}

impl BenchmarkPair {
    /// Checks both states and that they differ; `require_label` also
    /// demands a label (as evaluation does).
    pub fn validate(&self, require_label: bool) -> Result<(), BenchmarkError> {
        for (side, st) in [("a", &self.a), ("b", &self.b)] {
            st.validate().map_err(|source| BenchmarkError::State {
                id: self.id.clone(),
                side,
                source,
            })?;
        }
        if self.a == self.b {
            return Err(BenchmarkError::Pair {
                id: self.id.clone(),
                reason: "states are identical".into(),
            });
        }
        if require_label && self.label.is_none() {
            return Err(BenchmarkError::Pair {
                id: self.id.clone(),
                reason: "missing label".into(),
            });
        }
        Ok(())
    }
}

impl PairFile {
    pub fn parse(text: &str) -> Result<Self, BenchmarkError> {
        let file: PairFile = serde_json::from_str(text)?;
        for p in &file.pairs {
            p.validate(true)?;
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, BenchmarkError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pairs serialize")
    }

    pub fn inverted(&self) -> Self {
        PairFile {
            pairs: self
                .pairs
                .iter()
                .map(|p| BenchmarkPair {
                    label: p.label.map(PairLabel::flipped),
                    ..p.clone()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub label: PairLabel,
    /// `None` when the pair abstained.
    pub predicted: Option<PairLabel>,
    pub epv_a: Option<StateEpv>,
    pub epv_b: Option<StateEpv>,
    /// `epv_a.mean - epv_b.mean`.
    pub margin: Option<f64>,
    pub correct: bool,
    /// Verdict under max-output aggregation instead.
    pub correct_by_max: bool,
    /// Why the pair was not scored: a state whose likelihood surface has no
    /// cell above the threshold has no pass value.
    pub abstained: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// Pairs scored; abstentions are excluded from the accuracies.
    pub total: usize,
    pub abstained: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub accuracy_by_max: f64,
    pub records: Vec<PairRecord>,
}

/// The larger scalar wins; exact ties predict `a`.
pub fn predict(a: f64, b: f64) -> PairLabel {
    if b > a {
        PairLabel::B
    } else {
        PairLabel::A
    }
}

fn state_scalars(model: &dyn SurfaceModel, states: &[&GameState]) -> Result<Vec<Result<StateEpv, SurfaceError>>, ModelError> {
    let sets = model.surfaces(states)?;
    Ok(sets.into_iter().map(|s| evaluate(s).map(|e| e.state_epv)).collect())
}

/// Scores every pair. A pair abstains when either state has nothing above
/// the likelihood threshold. States are evaluated on scoped worker threads and the
/// records come back in input order.
pub fn evaluate_benchmark(pairs: &[BenchmarkPair], model: &dyn SurfaceModel) -> Result<BenchmarkReport, BenchmarkError> {
    if pairs.is_empty() {
        return Err(BenchmarkError::Empty);
    }
    for p in pairs {
        p.validate(true)?;
    }
    let states: Vec<&GameState> = pairs.iter().flat_map(|p| [&p.a, &p.b]).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(states.len());
    let per = states.len().div_ceil(workers);
    let scalars: Vec<Result<StateEpv, SurfaceError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = states
            .chunks(per)
            .map(|chunk| scope.spawn(move || state_scalars(model, chunk)))
            .collect();
        let mut all = Vec::with_capacity(states.len());
        for h in handles {
            all.extend(h.join().expect("benchmark worker panicked")?);
        }
        Ok::<_, ModelError>(all)
    })?;
    let mut records = Vec::with_capacity(pairs.len());
    for (p, sc) in pairs.iter().zip(scalars.chunks(2)) {
        let label = p.label.expect("validated");
        let record = match (&sc[0], &sc[1]) {
            (Ok(ea), Ok(eb)) => {
                let predicted = predict(ea.mean, eb.mean);
                PairRecord {
                    id: p.id.clone(),
                    label,
                    predicted: Some(predicted),
                    epv_a: Some(*ea),
                    epv_b: Some(*eb),
                    margin: Some(ea.mean - eb.mean),
                    correct: predicted == label,
                    correct_by_max: predict(ea.max_output, eb.max_output) == label,
                    abstained: None,
                }
            }
            (Err(SurfaceError::NothingRetained), _) | (_, Err(SurfaceError::NothingRetained)) => PairRecord {
                id: p.id.clone(),
                label,
                predicted: None,
                epv_a: sc[0].as_ref().ok().copied(),
                epv_b: sc[1].as_ref().ok().copied(),
                margin: None,
                correct: false,
                correct_by_max: false,
                abstained: Some(SurfaceError::NothingRetained.to_string()),
            },
            (Err(e), _) | (_, Err(e)) => return Err(BenchmarkError::Surface { id: p.id.clone(), source: e.clone() }),
        };
        records.push(record);
    }
    let scored = records.iter().filter(|r| r.abstained.is_none()).count();
    let correct = records.iter().filter(|r| r.correct).count();
    let by_max = records.iter().filter(|r| r.correct_by_max).count();
    let rate = |n: usize| if scored == 0 { 0.0 } else { n as f64 / scored as f64 };
    Ok(BenchmarkReport {
        total: scored,
        abstained: records.len() - scored,
        correct,
        accuracy: rate(correct),
        accuracy_by_max: rate(by_max),
        records,
    })
}

pub const REPORT_HEADER: [&str; 11] = [
    "id",
    "label",
    "predicted",
    "epv_a",
    "epv_b",
    "margin",
    "max_a",
    "max_b",
    "correct",
    "correct_by_max",
    "abstained",
];

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(REPORT_HEADER);
        for r in &self.records {
            let num = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            let _ = w.write_record([
                r.id.clone(),
                r.label.name().to_string(),
                r.predicted.map(|l| l.name().to_string()).unwrap_or_default(),
                num(r.epv_a.map(|e| e.mean)),
                num(r.epv_b.map(|e| e.mean)),
                num(r.margin),
                num(r.epv_a.map(|e| e.max_output)),
                num(r.epv_b.map(|e| e.max_output)),
                u8::from(r.correct).to_string(),
                u8::from(r.correct_by_max).to_string(),
                r.abstained.clone().unwrap_or_default(),
            ]);
        }
        String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
    }
}
