//! Finite-difference check of a whole reduced-grid U-Net.
//!
//! The graph is the training loss: forward in train mode, head activation at
//! `T = 1`, cross-entropy at fixed destination cells. Gradients are taken with
//! respect to the input batch and every trainable parameter.

use pitch_autograd::nn::{Mode, ParamId, Session};
use pitch_autograd::{
    finite_diff_check, finite_diff_check_with_reference, Element, GradCheckConfig, GradCheckReport, Selection, Tape,
    Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HeadKind, ModelError, ModelSpec, PassNet, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FullCheckConfig {
    pub side: usize,
    pub batch: usize,
    /// Entries perturbed per input tensor.
    pub per_tensor: usize,
    pub seed: u64,
}

impl Default for FullCheckConfig {
    fn default() -> Self {
        Self { side: 12, batch: 2, per_tensor: 6, seed: 5 }
    }
}

#[derive(Debug, Clone)]
pub struct FullCheck {
    pub head: HeadKind,
    pub double: GradCheckReport,
    /// 32-bit analytic gradients against 64-bit differences.
    pub single: GradCheckReport,
}

fn targets(head: HeadKind, batch: usize, side: usize) -> Vec<Target> {
    (0..batch)
        .map(|i| {
            let label = match head {
                HeadKind::Likelihood => 0,
                HeadKind::Success => (i % 2) as i8,
                HeadKind::Value => (i % 3) as i8 - 1,
            };
            Target { cell: ((3 * i + 1) % side, (5 * i + 2) % side), label }
        })
        .collect()
}

fn model_loss<E: Element>(
    net: &PassNet<E>,
    ids: &[ParamId],
    targets: &[Target],
    tape: &mut Tape<E>,
    vars: &[Var],
) -> pitch_autograd::Result<Var> {
    let bindings: Vec<(ParamId, Var)> = ids.iter().copied().zip(vars[1..].iter().copied()).collect();
    let owned = std::mem::replace(tape, Tape::new(false));
    let mut s = Session::with_tape(owned, net.store(), Mode::Train, &bindings)?;
    let out = net
        .logits(&mut s, vars[0])
        .and_then(|(z, _)| net.activate(&mut s, z, 1.0))
        .and_then(|p| net.loss(&mut s, p, targets));
    *tape = s.into_tape();
    out
}

fn inputs<E: Element>(net: &PassNet<E>, x: &Tensor<f64>) -> Vec<Tensor<E>> {
    let mut out = vec![x.cast()];
    out.extend(net.trainable_ids().into_iter().map(|id| net.store().get(id).value.clone()));
    out
}

/// Checks one head in both precisions on a `10 x side x side` grid.
pub fn check_full_model(head: HeadKind, cfg: FullCheckConfig) -> Result<FullCheck, ModelError> {
    let spec = ModelSpec::reduced(head, cfg.side);
    let net64 = PassNet::<f64>::new(spec.clone(), cfg.seed)?;
    let net32 = PassNet::<f32>::new(spec.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5);
    let x = Tensor::from_fn(vec![cfg.batch, spec.in_channels, cfg.side, cfg.side], |_| rng.gen_range(-1.0..1.0));
    let tg = targets(head, cfg.batch, cfg.side);
    let ids64 = net64.trainable_ids();
    let ids32 = net32.trainable_ids();
    let grad_cfg = GradCheckConfig {
        selection: Selection::Sample { per_tensor: cfg.per_tensor, seed: cfg.seed },
        ..GradCheckConfig::for_element::<f64>()
    };
    let f64_graph = |tp: &mut Tape<f64>, v: &[Var]| model_loss(&net64, &ids64, &tg, tp, v);
    let f32_graph = |tp: &mut Tape<f32>, v: &[Var]| model_loss(&net32, &ids32, &tg, tp, v);
    let double = finite_diff_check(&inputs(&net64, &x), grad_cfg, f64_graph)?;
    let single = finite_diff_check_with_reference(&inputs(&net32, &x), grad_cfg, f32_graph, f64_graph)?;
    Ok(FullCheck { head, double, single })
}
