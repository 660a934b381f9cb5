//! The finite-difference suite run over every tape op and one deep block.
//!
//! Each [`Case`] builds a scalar from seeded random inputs, once per
//! precision. 64-bit analytic gradients are compared with 64-bit central
//! differences; 32-bit analytic gradients with 64-bit differences of the same
//! graph (pure 32-bit quotients are round-off limited).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::{finite_diff_check, finite_diff_check_with_reference, GradCheckConfig, GradCheckReport};
use crate::nn::{BatchNorm2d, Conv2d, ParamStore};
use crate::{Element, Result, Tape, Tensor, Var};

/// Tolerance on the maximum relative error for 32-bit gradients.
pub const TOL_F32: f64 = 1e-2;
/// Tolerance on the maximum relative error for 64-bit gradients.
pub const TOL_F64: f64 = 1e-5;
/// Largest share of entries that may be skipped as kink crossings.
pub const MAX_SKIPPED: f64 = 0.05;

pub fn random<E: Element>(shape: &[usize], seed: u64) -> Tensor<E> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| E::from_f64_lossy(rng.gen_range(-1.0..1.0)))
}

pub fn loss_weights<E: Element>(n: usize, seed: u64) -> Vec<E> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| E::from_f64_lossy(rng.gen_range(-1.0..1.0))).collect()
}

pub type Graph<E> = fn(&mut Tape<E>, &[Var]) -> Result<Var>;

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<(Vec<usize>, u64)>,
    pub single: Graph<f32>,
    pub double: Graph<f64>,
}

macro_rules! case {
    ($name:literal, [$(($shape:expr, $seed:expr)),+], $graph:ident) => {
        Case {
            name: $name,
            inputs: vec![$(($shape.to_vec(), $seed)),+],
            single: $graph::<f32>,
            double: $graph::<f64>,
        }
    };
}

pub fn linear<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    // a dense layer is a 1x1 convolution on a 1x1 map
    let y = tp.conv2d(v[0], v[1], Some(v[2]))?;
    tp.weighted_sum(y, &loss_weights(6, 40))
}

pub fn pad<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let y = tp.replication_pad(v[0], 2)?;
    tp.weighted_sum(y, &loss_weights(2 * 2 * 8 * 8, 44))
}

pub fn conv<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let y = tp.conv2d(v[0], v[1], Some(v[2]))?;
    tp.weighted_sum(y, &loss_weights(2 * 3 * 4 * 4, 46))
}

pub fn bn_train<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let (y, _) = tp.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
    tp.weighted_sum(y, &loss_weights(3 * 2 * 9, 50))
}

pub fn bn_eval<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let rm = [0.1, -0.2].map(E::from_f64_lossy);
    let rv = [0.8, 1.3].map(E::from_f64_lossy);
    let y = tp.batch_norm_eval(v[0], v[1], v[2], &rm, &rv, 1e-5)?;
    tp.weighted_sum(y, &loss_weights(18, 50))
}

pub fn lrelu<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let y = tp.leaky_relu(v[0], 0.1)?;
    tp.weighted_sum(y, &loss_weights(16, 57))
}

pub fn pool<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let y = tp.max_pool_2x2(v[0])?;
    tp.weighted_sum(y, &loss_weights(4, 57))
}

pub fn upsample<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let y = tp.upsample_2x(v[0])?;
    tp.weighted_sum(y, &loss_weights(16, 57))
}

pub fn sigmoid<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let y = tp.sigmoid(v[0])?;
    tp.weighted_sum(y, &loss_weights(16, 57))
}

pub fn spatial_softmax<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let y = tp.spatial_softmax(v[0], 0.7)?;
    tp.weighted_sum(y, &loss_weights(16, 57))
}

pub fn channel_softmax<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let y = tp.channel_softmax(v[0], 1.3)?;
    tp.weighted_sum(y, &loss_weights(48, 63))
}

pub fn mask_mul<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let y = tp.mask_mul(v[0], v[1])?;
    tp.weighted_sum(y, &loss_weights(48, 63))
}

pub fn add<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let y = tp.add(v[0], v[1])?;
    tp.weighted_sum(y, &loss_weights(48, 63))
}

pub fn scale<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let y = tp.scale(v[0], -2.5)?;
    tp.weighted_sum(y, &loss_weights(16, 57))
}

pub fn channel_scale<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let factors: Vec<E> = [0.01, 1.0, -3.0].iter().map(|&f| E::from_f64_lossy(f)).collect();
    let y = tp.channel_scale(v[0], &factors)?;
    tp.weighted_sum(y, &loss_weights(2 * 3 * 9, 76))
}

pub fn concat<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let y = tp.concat_channels(v[0], v[1])?;
    tp.weighted_sum(y, &loss_weights(80, 67))
}

pub fn bce_at_cells<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let p = tp.sigmoid(v[0])?;
    let picked = tp.gather_cells(p, &[(0, 1), (2, 2)])?;
    tp.bce_loss(picked, &[1.0, 0.0].map(E::from_f64_lossy))
}

pub fn cce_at_cells<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    let p = tp.channel_softmax(v[0], 1.0)?;
    let picked = tp.gather_cells(p, &[(1, 1), (0, 2)])?;
    tp.cce_loss(picked, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0].map(E::from_f64_lossy))
}

pub fn encoder_block<E: Element>(tp: &mut Tape<E>, v: &[Var]) -> Result<Var> {
    // v: x, c1.w, c1.b, b1.g, b1.b, c2.w, c2.b, b2.g, b2.b
    let p = tp.replication_pad(v[0], 2)?;
    let y = tp.conv2d(p, v[1], Some(v[2]))?;
    let (y, _) = tp.batch_norm_train(y, v[3], v[4], 1e-5)?;
    let y = tp.leaky_relu(y, 0.1)?;
    let p = tp.replication_pad(y, 2)?;
    let y = tp.conv2d(p, v[5], Some(v[6]))?;
    let (y, _) = tp.batch_norm_train(y, v[7], v[8], 1e-5)?;
    let y = tp.leaky_relu(y, 0.1)?;
    tp.weighted_sum(y, &loss_weights(2 * 4 * 12 * 12, 92))
}

pub fn op_cases() -> Vec<Case> {
    vec![
        case!("linear", [([2, 4, 1, 1], 41), ([3, 4, 1, 1], 42), ([3], 43)], linear),
        case!("replication_pad", [([2, 2, 4, 4], 45)], pad),
        case!("conv2d", [([2, 2, 8, 8], 47), ([3, 2, 5, 5], 48), ([3], 49)], conv),
        case!("batch_norm_train", [([3, 2, 3, 3], 51), ([2], 52), ([2], 53)], bn_train),
        case!("batch_norm_eval", [([1, 2, 3, 3], 54), ([2], 55), ([2], 56)], bn_eval),
        case!("leaky_relu", [([1, 4, 4], 58)], lrelu),
        case!("max_pool_2x2", [([1, 4, 4], 59)], pool),
        case!("upsample_2x", [([1, 2, 2], 60)], upsample),
        case!("sigmoid", [([1, 4, 4], 61)], sigmoid),
        case!("spatial_softmax", [([1, 1, 4, 4], 62)], spatial_softmax),
        case!("channel_softmax", [([1, 3, 4, 4], 64)], channel_softmax),
        case!("mask_mul", [([1, 3, 4, 4], 65), ([1, 1, 4, 4], 66)], mask_mul),
        case!("add", [([1, 3, 4, 4], 72), ([1, 3, 4, 4], 73)], add),
        case!("scale", [([1, 4, 4], 74)], scale),
        case!("channel_scale", [([2, 3, 3, 3], 75)], channel_scale),
        case!("concat_channels", [([1, 3, 4, 4], 68), ([1, 2, 4, 4], 69)], concat),
        case!("bce_loss", [([2, 1, 3, 3], 70)], bce_at_cells),
        case!("cce_loss", [([2, 3, 3, 3], 71)], cce_at_cells),
    ]
}

pub fn case_inputs<E: Element>(case: &Case) -> Vec<Tensor<E>> {
    case.inputs.iter().map(|(shape, seed)| random(shape, *seed)).collect()
}


pub fn encoder_block_inputs<E: Element>() -> Vec<Tensor<E>> {
    let mut store = ParamStore::<E>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    Conv2d::new(&mut store, "c1", 3, 4, 5, &mut rng);
    BatchNorm2d::new(&mut store, "b1", 4);
    Conv2d::new(&mut store, "c2", 4, 4, 5, &mut rng);
    BatchNorm2d::new(&mut store, "b2", 4);
    let mut inputs = vec![random::<E>(&[2, 3, 12, 12], 91)];
    inputs.extend(store.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.clone()));
    inputs
}


/// One scored check of the suite.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub precision: &'static str,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.checked > 0 && self.report.max_rel_error < self.tolerance && self.report.skipped_fraction() < MAX_SKIPPED
    }
}

/// Runs every op case and the padded conv/bn/LeakyReLU encoder block in both precisions.
pub fn run_op_suite() -> Result<Vec<SuiteEntry>> {
    let f64_cfg = GradCheckConfig::for_element::<f64>();
    let mut out = Vec::new();
    let mut push = |name: &str, precision, tolerance, report| {
        out.push(SuiteEntry { name: name.to_string(), precision, tolerance, report });
    };
    for case in op_cases() {
        push(case.name, "f64", TOL_F64, finite_diff_check(&case_inputs::<f64>(&case), f64_cfg, case.double)?);
        let single = finite_diff_check_with_reference(&case_inputs::<f32>(&case), f64_cfg, case.single, case.double)?;
        push(case.name, "f32", TOL_F32, single);
    }
    let block = finite_diff_check(&encoder_block_inputs::<f64>(), f64_cfg, encoder_block::<f64>)?;
    push("encoder_block", "f64", TOL_F64, block);
    let block = finite_diff_check_with_reference(
        &encoder_block_inputs::<f32>(),
        f64_cfg,
        encoder_block::<f32>,
        encoder_block::<f64>,
    )?;
    push("encoder_block", "f32", TOL_F32, block);
    Ok(out)
}
