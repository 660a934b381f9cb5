//! Sources of surfaces: the four trained networks or a closed-form heuristic.

use std::path::{Path, PathBuf};

use pitch_autograd::Tensor;

use super::surface::{SurfaceSet, FULL_DIMS};
use crate::grid::dist_to_goal;
use crate::model::{batch_tensor, load_checkpoint, CheckpointError, ModelError, ModelKind, PassNet};
use crate::state::{GameState, GRID_CELLS, GRID_X, GRID_Y};

/// Anything that maps game states to a full surface set.
pub trait SurfaceModel: Sync {
    fn surfaces(&self, states: &[&GameState]) -> Result<Vec<SurfaceSet>, ModelError>;
}

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("checkpoint directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("missing checkpoint {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Load {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("{path}: expected a {expected} head, found {found}")]
    Head {
        path: PathBuf,
        expected: &'static str,
        found: &'static str,
    },
}

/// The four calibrated networks.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub likelihood: PassNet<f32>,
    pub success: PassNet<f32>,
    pub value_success: PassNet<f32>,
    pub value_failure: PassNet<f32>,
}

pub fn checkpoint_file(dir: &Path, kind: ModelKind) -> PathBuf {
    dir.join(format!("{}.ckpt", kind.name()))
}

/// Rows of the batch inference chunk.
const INFER_BATCH: usize = 8;

impl ModelBundle {
    pub fn load(dir: &Path) -> Result<Self, BundleError> {
        if !dir.is_dir() {
            return Err(BundleError::MissingDir(dir.to_path_buf()));
        }
        let load = |kind: ModelKind| -> Result<PassNet<f32>, BundleError> {
            let path = checkpoint_file(dir, kind);
            if !path.is_file() {
                return Err(BundleError::MissingFile(path));
            }
            let net = load_checkpoint(&path).map_err(|source| BundleError::Load { path: path.clone(), source })?;
            if net.spec().head != kind.head() {
                return Err(BundleError::Head {
                    path,
                    expected: kind.head().name(),
                    found: net.spec().head.name(),
                });
            }
            Ok(net)
        };
        Ok(Self {
            likelihood: load(ModelKind::Likelihood)?,
            success: load(ModelKind::Success)?,
            value_success: load(ModelKind::ValueSuccess)?,
            value_failure: load(ModelKind::ValueFailure)?,
        })
    }

    pub fn get(&self, kind: ModelKind) -> &PassNet<f32> {
        match kind {
            ModelKind::Likelihood => &self.likelihood,
            ModelKind::Success => &self.success,
            ModelKind::ValueSuccess => &self.value_success,
            ModelKind::ValueFailure => &self.value_failure,
        }
    }
}

fn widen(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

fn triples(v: &[f64], item: usize) -> Vec<[f64; 3]> {
    let base = item * 3 * GRID_CELLS;
    (0..GRID_CELLS)
        .map(|c| [v[base + c], v[base + GRID_CELLS + c], v[base + 2 * GRID_CELLS + c]])
        .collect()
}

impl SurfaceModel for ModelBundle {
    fn surfaces(&self, states: &[&GameState]) -> Result<Vec<SurfaceSet>, ModelError> {
        let mut out = Vec::with_capacity(states.len());
        for chunk in states.chunks(INFER_BATCH) {
            let x: Tensor<f32> = batch_tensor(chunk.iter().copied());
            let l = widen(&self.likelihood.predict(x.clone())?);
            let s = widen(&self.success.predict(x.clone())?);
            let vs = widen(&self.value_success.predict(x.clone())?);
            let vu = widen(&self.value_failure.predict(x)?);
            for i in 0..chunk.len() {
                let cells = i * GRID_CELLS..(i + 1) * GRID_CELLS;
                out.push(SurfaceSet {
                    dims: FULL_DIMS,
                    likelihood: l[cells.clone()].to_vec(),
                    success: s[cells].to_vec(),
                    value_success: triples(&vs, i),
                    value_failure: triples(&vu, i),
                });
            }
        }
        Ok(out)
    }
}

/// Closed-form surfaces whose value rises toward the opponent goal.
///
/// Likelihood is a Gaussian mixture around the attackers, so states with
/// attackers nearer the goal put more pass mass on high-value cells. Every
/// quantity depends on `y` only through symmetric distances, making the
/// model y-mirror equivariant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicModel {
    /// Likelihood kernel width in grid units.
    pub sigma: f64,
    pub success: f64,
    /// Scoring-probability decay length in grid units.
    pub decay: f64,
}

impl Default for HeuristicModel {
    fn default() -> Self {
        Self {
            sigma: 3.0,
            success: 0.8,
            decay: 15.0,
        }
    }
}

impl HeuristicModel {
    pub fn surface(&self, state: &GameState) -> SurfaceSet {
        let mut likelihood = vec![0.0; GRID_CELLS];
        let two_s2 = 2.0 * self.sigma * self.sigma;
        for ix in 0..GRID_X {
            for iy in 0..GRID_Y {
                let (x, y) = (ix as f64, iy as f64);
                likelihood[ix * GRID_Y + iy] = state
                    .attackers()
                    .map(|p| (-((x - p.x).powi(2) + (y - p.y).powi(2)) / two_s2).exp())
                    .sum();
            }
        }
        let total: f64 = likelihood.iter().sum();
        if total > 0.0 {
            likelihood.iter_mut().for_each(|l| *l /= total);
        }
        let mut value_success = Vec::with_capacity(GRID_CELLS);
        let mut value_failure = Vec::with_capacity(GRID_CELLS);
        for ix in 0..GRID_X {
            for iy in 0..GRID_Y {
                let near = (-dist_to_goal(ix as f64, iy as f64) / self.decay).exp();
                let (score_s, concede_s) = (0.4 * near, 0.01);
                let (score_u, concede_u) = (0.05 * near, 0.03);
                value_success.push([concede_s, 1.0 - score_s - concede_s, score_s]);
                value_failure.push([concede_u, 1.0 - score_u - concede_u, score_u]);
            }
        }
        SurfaceSet {
            dims: FULL_DIMS,
            likelihood,
            success: vec![self.success; GRID_CELLS],
            value_success,
            value_failure,
        }
    }
}

impl SurfaceModel for HeuristicModel {
    fn surfaces(&self, states: &[&GameState]) -> Result<Vec<SurfaceSet>, ModelError> {
        Ok(states.iter().map(|s| self.surface(s)).collect())
    }
}

