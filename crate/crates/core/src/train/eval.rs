//! No-gradient evaluation at the destination cells of a sample set.

use pitch_autograd::loss::{binary_cross_entropy, categorical_cross_entropy};
use pitch_autograd::Tensor;

use super::calibrate::{ece, success_confidences, value_confidences, softmax3, sigmoid, CalibrationMode, DEFAULT_BINS};
use crate::data::samples::PassSample;
use crate::model::{batch_tensor, HeadKind, ModelError, PassNet};
use crate::state::{GRID_X, GRID_Y};

/// Head outputs gathered at each sample's destination cell.
#[derive(Debug, Clone, PartialEq)]
pub enum DestOutputs {
    /// Spatial-softmax probability at the destination, already at the model temperature.
    Likelihood(Vec<f64>),
    /// Raw logits; temperature is applied later.
    Success(Vec<f64>),
    Value(Vec<[f64; 3]>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub ece: Option<f64>,
}

/// Evaluates `net` in eval mode over `samples` in chunks of `batch`.
pub fn dest_outputs(net: &PassNet<f32>, samples: &[&PassSample], batch: usize) -> Result<DestOutputs, ModelError> {
    let head = net.spec().head;
    let hw = GRID_X * GRID_Y;
    let mut lik = Vec::new();
    let mut succ = Vec::new();
    let mut val = Vec::new();
    for chunk in samples.chunks(batch.max(1)) {
        let x: Tensor<f32> = batch_tensor(chunk.iter().map(|s| &s.state));
        let out = match head {
            HeadKind::Likelihood => net.predict(x)?,
            _ => net.predict_logits(x)?,
        };
        let c = head.out_channels();
        let data = out.data();
        for (i, s) in chunk.iter().enumerate() {
            let cell = s.dest.0 as usize * GRID_Y + s.dest.1 as usize;
            let at = |ch: usize| f64::from(data[(i * c + ch) * hw + cell]);
            match head {
                HeadKind::Likelihood => lik.push(at(0)),
                HeadKind::Success => succ.push(at(0)),
                HeadKind::Value => val.push([at(0), at(1), at(2)]),
            }
        }
    }
    Ok(match head {
        HeadKind::Likelihood => DestOutputs::Likelihood(lik),
        HeadKind::Success => DestOutputs::Success(succ),
        HeadKind::Value => DestOutputs::Value(val),
    })
}

impl DestOutputs {
    pub fn len(&self) -> usize {
        match self {
            DestOutputs::Likelihood(v) | DestOutputs::Success(v) => v.len(),
            DestOutputs::Value(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> Option<CalibrationMode> {
        match self {
            DestOutputs::Likelihood(_) => None,
            DestOutputs::Success(_) => Some(CalibrationMode::Success),
            DestOutputs::Value(_) => Some(CalibrationMode::Value),
        }
    }

    /// ECE at `temperature`; `None` for the likelihood head.
    pub fn ece_at(&self, samples: &[&PassSample], temperature: f64) -> Option<f64> {
        let (conf, outcomes, mode) = match self {
            DestOutputs::Likelihood(_) => return None,
            DestOutputs::Success(z) => (
                success_confidences(z, temperature),
                samples.iter().map(|s| f64::from(u8::from(s.success))).collect::<Vec<_>>(),
                CalibrationMode::Success,
            ),
            DestOutputs::Value(z) => (
                value_confidences(z, temperature),
                samples.iter().map(|s| f64::from(s.value)).collect(),
                CalibrationMode::Value,
            ),
        };
        ece(&conf, &outcomes, mode, DEFAULT_BINS).ok()
    }

    /// Mean training loss and ECE at `temperature`.
    pub fn metrics_at(&self, samples: &[&PassSample], temperature: f64) -> Metrics {
        let loss = match self {
            DestOutputs::Likelihood(p) => binary_cross_entropy(p, &vec![1.0; p.len()]),
            DestOutputs::Success(z) => {
                let p: Vec<f64> = z.iter().map(|&v| sigmoid(v / temperature)).collect();
                let y: Vec<f64> = samples.iter().map(|s| f64::from(u8::from(s.success))).collect();
                binary_cross_entropy(&p, &y)
            }
            DestOutputs::Value(z) => {
                let p: Vec<f64> = z.iter().flat_map(|v| softmax3(v, temperature)).collect();
                let mut y = vec![0.0; p.len()];
                for (i, s) in samples.iter().enumerate() {
                    y[3 * i + (s.value + 1) as usize] = 1.0;
                }
                categorical_cross_entropy(&p, &y, 3)
            }
        };
        Metrics {
            loss: loss.unwrap_or(f64::NAN),
            ece: self.ece_at(samples, temperature),
        }
    }
}
