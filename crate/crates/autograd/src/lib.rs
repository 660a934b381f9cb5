//! A small reverse-mode differentiable tensor engine.
//!
//! It provides exactly what the pass-surface U-Nets need: replication padding,
//! 2-D convolution, batch norm, LeakyReLU, 2x2 max pooling, nearest-neighbour
//! upsampling, additive attention gates, spatial and per-cell softmax,
//! cross-entropy losses and Adam. Everything runs on the CPU in either `f32`
//! or `f64`.

pub mod element;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod nn;
pub mod optim;
pub mod suite;
pub mod tape;
pub mod tensor;

pub use element::Element;
pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, finite_diff_check_with_reference, GradCheckConfig, GradCheckReport, Selection};
pub use nn::{
    AttentionGate, BatchNorm2d, Conv2d, Head, LayerKind, LayerParams, Mode, Param, ParamId, ParamStore,
    Session, StatUpdate,
};
pub use optim::{Adam, AdamConfig};
pub use tape::{BranchTrace, Tape, Var};
pub use tensor::Tensor;
