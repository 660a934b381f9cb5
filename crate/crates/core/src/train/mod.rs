//! Training, epoch selection, calibration and diagnostics.

pub mod calibrate;
pub mod config;
pub mod eval;
pub mod report;
pub mod schedule;
pub mod select;
pub mod trainer;

pub use calibrate::{ece, search_temperature, temperature_grid, CalibrationMode, CalibrationReport};
pub use config::{ConfigError, SelectionMetric, TrainConfig};
pub use eval::{dest_outputs, DestOutputs, Metrics};
pub use report::{calibrate, per_class_report, ClassRow, Subset};
pub use schedule::{cyclic_lr, EarlyStopping};
pub use select::select_epoch;
pub use trainer::{train, EpochRecord, StopReason, TrainError, TrainOutcome};
