//! Per-cell surfaces and their composition into pass values.
//!
//! For every cell, `V_s = P_score|s - P_concede|s`,
//! `V_u = P_score|u - P_concede|u` and `V = S V_s + (1 - S) V_u`. The
//! reported output keeps `V` only where the pass likelihood exceeds
//! [`LIKELIHOOD_THRESHOLD`].

use serde::{Deserialize, Serialize};

use crate::state::{GRID_X, GRID_Y};

pub const LIKELIHOOD_THRESHOLD: f64 = 0.001;

/// Channel order of a value triple.
pub const CONCEDE: usize = 0;
pub const NO_GOAL: usize = 1;
pub const SCORE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSet {
    /// `(grid-x, grid-y)` extent; cells are x-major.
    pub dims: (usize, usize),
    pub likelihood: Vec<f64>,
    pub success: Vec<f64>,
    /// `(P_concede, P_nogoal, P_score)` given the pass succeeds.
    pub value_success: Vec<[f64; 3]>,
    /// Same, given the pass fails.
    pub value_failure: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpvSurface {
    pub dims: (usize, usize),
    pub v_s: Vec<f64>,
    pub v_u: Vec<f64>,
    pub v: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SurfaceError {
    #[error("surface `{name}` has {found} cells, expected {expected}")]
    Shape { name: &'static str, expected: usize, found: usize },
    #[error("no cell has likelihood above {LIKELIHOOD_THRESHOLD}")]
    NothingRetained,
}

impl SurfaceSet {
    pub fn cells(&self) -> usize {
        self.dims.0 * self.dims.1
    }

    pub fn check(&self) -> Result<(), SurfaceError> {
        let n = self.cells();
        for (name, len) in [
            ("likelihood", self.likelihood.len()),
            ("success", self.success.len()),
            ("value_success", self.value_success.len()),
            ("value_failure", self.value_failure.len()),
        ] {
            if len != n {
                return Err(SurfaceError::Shape { name, expected: n, found: len });
            }
        }
        Ok(())
    }

    /// Reflects every surface across the long axis.
    pub fn mirror_y(&self) -> SurfaceSet {
        let (nx, ny) = self.dims;
        let flip = |i: usize| (i / ny) * ny + (ny - 1 - i % ny);
        let remap = |v: &Vec<f64>| (0..nx * ny).map(|i| v[flip(i)]).collect();
        let remap3 = |v: &Vec<[f64; 3]>| (0..nx * ny).map(|i| v[flip(i)]).collect();
        SurfaceSet {
            dims: self.dims,
            likelihood: remap(&self.likelihood),
            success: remap(&self.success),
            value_success: remap3(&self.value_success),
            value_failure: remap3(&self.value_failure),
        }
    }
}

pub fn net_value(triple: &[f64; 3]) -> f64 {
    triple[SCORE] - triple[CONCEDE]
}

pub fn compose(s: &SurfaceSet) -> Result<EpvSurface, SurfaceError> {
    s.check()?;
    let v_s: Vec<f64> = s.value_success.iter().map(net_value).collect();
    let v_u: Vec<f64> = s.value_failure.iter().map(net_value).collect();
    let v: Vec<f64> = s
        .success
        .iter()
        .zip(v_s.iter().zip(&v_u))
        .map(|(&p, (&a, &b))| p * a + (1.0 - p) * b)
        .collect();
    let output = v
        .iter()
        .zip(&s.likelihood)
        .map(|(&v, &l)| if l > LIKELIHOOD_THRESHOLD { v } else { 0.0 })
        .collect();
    Ok(EpvSurface {
        dims: s.dims,
        v_s,
        v_u,
        v,
        output,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateEpv {
    /// Likelihood-weighted mean of `V` over retained cells.
    pub mean: f64,
    /// Largest retained output.
    pub max_output: f64,
    pub retained_mass: f64,
    pub retained_cells: usize,
}

pub fn state_epv(s: &SurfaceSet, e: &EpvSurface) -> Result<StateEpv, SurfaceError> {
    let mut mass = 0.0;
    let mut weighted = 0.0;
    let mut max_output = f64::NEG_INFINITY;
    let mut cells = 0;
    for (i, &l) in s.likelihood.iter().enumerate() {
        if l > LIKELIHOOD_THRESHOLD {
            mass += l;
            weighted += l * e.v[i];
            max_output = max_output.max(e.output[i]);
            cells += 1;
        }
    }
    if cells == 0 || mass <= 0.0 {
        return Err(SurfaceError::NothingRetained);
    }
    Ok(StateEpv {
        mean: weighted / mass,
        max_output,
        retained_mass: mass,
        retained_cells: cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestPass {
    pub cell: (usize, usize),
    pub value: f64,
}

/// Argmax of the output over retained cells. Ties go to the larger grid-x,
/// then the cell closer to the centre line, then the smaller grid-y.
pub fn best_pass(s: &SurfaceSet, e: &EpvSurface) -> Result<BestPass, SurfaceError> {
    let (_, ny) = s.dims;
    let centre = (ny as f64 - 1.0) / 2.0;
    let mut best: Option<BestPass> = None;
    for (i, &l) in s.likelihood.iter().enumerate() {
        if l <= LIKELIHOOD_THRESHOLD {
            continue;
        }
        let cand = BestPass {
            cell: (i / ny, i % ny),
            value: e.output[i],
        };
        let better = match best {
            None => true,
            Some(b) => {
                let off = |c: (usize, usize)| (c.1 as f64 - centre).abs();
                cand.value > b.value
                    || (cand.value == b.value
                        && (cand.cell.0 > b.cell.0
                            || (cand.cell.0 == b.cell.0
                                && (off(cand.cell) < off(b.cell)
                                    || (off(cand.cell) == off(b.cell) && cand.cell.1 < b.cell.1)))))
            }
        };
        if better {
            best = Some(cand);
        }
    }
    best.ok_or(SurfaceError::NothingRetained)
}

/// Everything derived from one game state's surfaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub surfaces: SurfaceSet,
    pub epv: EpvSurface,
    pub state_epv: StateEpv,
    pub best_pass: BestPass,
}

pub fn evaluate(surfaces: SurfaceSet) -> Result<Evaluation, SurfaceError> {
    let epv = compose(&surfaces)?;
    let state = state_epv(&surfaces, &epv)?;
    let best = best_pass(&surfaces, &epv)?;
    Ok(Evaluation {
        surfaces,
        epv,
        state_epv: state,
        best_pass: best,
    })
}

/// What a client sees for one state. When no cell clears the likelihood
/// threshold the scalar and best pass are absent and `abstained` says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceReport {
    pub surfaces: SurfaceSet,
    pub epv: EpvSurface,
    pub state_epv: Option<StateEpv>,
    pub best_pass: Option<BestPass>,
    pub abstained: Option<String>,
}

pub fn report(surfaces: SurfaceSet) -> Result<SurfaceReport, SurfaceError> {
    let epv = compose(&surfaces)?;
    let (state, best, abstained) = match (state_epv(&surfaces, &epv), best_pass(&surfaces, &epv)) {
        (Ok(s), Ok(b)) => (Some(s), Some(b), None),
        (Err(e @ SurfaceError::NothingRetained), _) | (_, Err(e @ SurfaceError::NothingRetained)) => {
            (None, None, Some(e.to_string()))
        }
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    Ok(SurfaceReport {
        surfaces,
        epv,
        state_epv: state,
        best_pass: best,
        abstained,
    })
}

/// Full-grid dims.
pub const FULL_DIMS: (usize, usize) = (GRID_X, GRID_Y);
