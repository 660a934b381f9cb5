//! The training loop.

use std::time::Instant;

use pitch_autograd::nn::{Mode, Session};
use pitch_autograd::{Adam, AdamConfig, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::dest_outputs;
use super::schedule::{cyclic_lr, EarlyStopping};
use super::TrainConfig;
use crate::data::samples::PassSample;
use crate::model::{batch_tensor, write_checkpoint, CheckpointError, ModelError, ModelKind, PassNet, Target};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr_start: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_ece: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    TargetLoss,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub kind: ModelKind,
    /// Train-mode loss over the training set before any update.
    pub initial_loss: f64,
    pub history: Vec<EpochRecord>,
    /// Serialized checkpoint after each epoch, aligned with `history`.
    pub checkpoints: Vec<Vec<u8>>,
    pub stop: StopReason,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("batch norm needs at least 2 training samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (lr {lr:e}, batch size {size})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: f64,
        lr: f64,
        size: usize,
    },
    #[error(transparent)]
    Config(#[from] super::ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Splits `order` into batches of `size`, folding a trailing singleton into
/// the previous batch so every batch can be normalized.
pub fn make_batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap_or_default();
        if let Some(prev) = out.last_mut() {
            prev.extend(last);
        }
    }
    out
}

struct Step {
    loss: f64,
}

fn forward_loss(
    net: &mut PassNet<f32>,
    kind: ModelKind,
    batch: &[&PassSample],
    update: Option<(&mut Adam<f32>, f64)>,
) -> Result<Step, TrainError> {
    let x: Tensor<f32> = batch_tensor(batch.iter().map(|s| &s.state));
    let targets: Vec<Target> = batch.iter().map(|s| Target::from_sample(kind, s)).collect();
    let grad = update.is_some();
    let (loss, grads, stats) = {
        let mut s = Session::new(net.store(), Mode::Train, grad)?;
        let xv = s.input(x, false);
        let (logits, _) = net.logits(&mut s, xv)?;
        let probs = net.activate(&mut s, logits, 1.0)?;
        let lv = net.loss(&mut s, probs, &targets)?;
        let loss = f64::from(s.tape.value(lv).item());
        let grads = if grad && loss.is_finite() {
            s.tape.backward(lv)?;
            s.param_grads()
        } else {
            Vec::new()
        };
        (loss, grads, s.into_stat_updates())
    };
    if let Some((adam, lr)) = update {
        if loss.is_finite() {
            adam.step(net.store_mut(), &grads, lr)?;
            net.store_mut().apply_stat_updates(stats);
            net.store_mut().set_stats_ready(true);
        }
    }
    Ok(Step { loss })
}

/// Trains `net` as `kind`. The loss is supervised only at each sample's
/// destination cell; every epoch's weights are kept for selection.
pub fn train(
    kind: ModelKind,
    net: &mut PassNet<f32>,
    train_set: &[&PassSample],
    val_set: &[&PassSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    if train_set.len() < 2 {
        return Err(TrainError::TooFewSamples(train_set.len()));
    }
    let mut adam = Adam::new(net.store(), AdamConfig::default());
    let natural: Vec<usize> = (0..train_set.len()).collect();

    let mut weighted = 0.0;
    for b in make_batches(&natural, cfg.batch_size) {
        let batch: Vec<&PassSample> = b.iter().map(|&i| train_set[i]).collect();
        weighted += forward_loss(net, kind, &batch, None)?.loss * batch.len() as f64;
    }
    let initial_loss = weighted / train_set.len() as f64;

    let mut history = Vec::new();
    let mut checkpoints = Vec::new();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut stop = StopReason::MaxEpochs;
    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let mut order = natural.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let batches = make_batches(&order, cfg.batch_size);
        let nb = batches.len() as f64;
        let mut weighted = 0.0;
        for (bi, b) in batches.iter().enumerate() {
            let lr = cyclic_lr(epoch as f64 + bi as f64 / nb, cfg);
            let batch: Vec<&PassSample> = b.iter().map(|&i| train_set[i]).collect();
            let step = forward_loss(net, kind, &batch, Some((&mut adam, lr)))?;
            if !step.loss.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch: epoch + 1,
                    batch: bi,
                    loss: step.loss,
                    lr,
                    size: batch.len(),
                });
            }
            weighted += step.loss * batch.len() as f64;
        }
        let train_loss = weighted / train_set.len() as f64;
        let out = dest_outputs(net, val_set, cfg.eval_batch_size)?;
        let metrics = out.metrics_at(val_set, 1.0);
        let record = EpochRecord {
            epoch: epoch + 1,
            lr_start: cyclic_lr(epoch as f64, cfg),
            train_loss,
            val_loss: metrics.loss,
            val_ece: metrics.ece,
        };
        log::info!(
            "{} epoch {}: train {:.5} val {:.5} ece {:?} ({:.1?})",
            kind.name(),
            record.epoch,
            record.train_loss,
            record.val_loss,
            record.val_ece,
            started.elapsed()
        );
        net.meta.insert("epoch".into(), record.epoch.to_string());
        let mut bytes = Vec::new();
        write_checkpoint(net, &mut bytes)?;
        checkpoints.push(bytes);
        history.push(record);

        let patience_hit = stopper.observe(metrics.loss);
        let done = epoch + 1 >= cfg.min_epochs;
        if done && cfg.target_loss_fraction.is_some_and(|f| train_loss < f * initial_loss) {
            stop = StopReason::TargetLoss;
            break;
        }
        if done && patience_hit {
            stop = StopReason::Patience;
            break;
        }
    }
    Ok(TrainOutcome {
        kind,
        initial_loss,
        history,
        checkpoints,
        stop,
    })
}
