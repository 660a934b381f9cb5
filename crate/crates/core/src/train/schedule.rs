//! Triangular cyclic learning rate and patience-based early stopping.

use super::TrainConfig;

/// Learning rate at fractional epoch `epoch`.
///
/// Rises linearly from `base_lr` to `max_lr` over the first half cycle and
/// falls back over the second.
pub fn cyclic_lr(epoch: f64, cfg: &TrainConfig) -> f64 {
    triangle(epoch, cfg.base_lr, cfg.max_lr, cfg.cycle_epochs)
}

pub fn triangle(epoch: f64, base: f64, max: f64, cycle: f64) -> f64 {
    let phase = (epoch.max(0.0) / cycle).fract();
    let tri = if phase <= 0.5 { 2.0 * phase } else { 2.0 - 2.0 * phase };
    // written so that both ends are hit exactly
    base * (1.0 - tri) + max * tri
}

/// Stops once `patience` consecutive epochs fail to improve the best loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
    seen: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
            seen: 0,
        }
    }

    /// Records one epoch's validation loss; returns true when training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        self.seen += 1;
        if loss < self.best {
            self.best = loss;
            self.best_epoch = self.seen;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    /// 1-based epoch of the best loss, with that loss.
    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_endpoints() {
        let c = TrainConfig::default();
        assert_eq!(cyclic_lr(0.0, &c), 1e-6);
        assert_eq!(cyclic_lr(4.0, &c), 1e-4);
        assert_eq!(cyclic_lr(8.0, &c), 1e-6);
        assert!((cyclic_lr(2.0, &c) - 5.05e-5).abs() < 1e-18);
    }

    #[test]
    fn patience_rule() {
        let mut es = EarlyStopping::new(8);
        let losses = [1.0, 1.0, 1.2, 1.0, 3.0, 1.0, 1.0, 1.1, 1.0];
        let stops: Vec<bool> = losses.iter().map(|&l| es.observe(l)).collect();
        assert_eq!(stops.iter().position(|&s| s), Some(8));
        assert_eq!(es.best(), (1, 1.0));
    }
}
