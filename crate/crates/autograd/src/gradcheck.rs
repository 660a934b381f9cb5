//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{invalid, Result};
use crate::tape::{BranchTrace, Tape, Var};
use crate::tensor::Tensor;

/// Which entries of each input get perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    All,
    /// At most `per_tensor` entries of each input, drawn without replacement.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Relative error is `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    pub selection: Selection,
}

impl GradCheckConfig {
    pub fn for_element<E: Element>() -> Self {
        Self {
            epsilon: if E::NAME == "f32" { 1e-3 } else { 1e-6 },
            floor: 1e-2,
            selection: Selection::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat entry)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Entries whose `±epsilon` perturbation changed a LeakyReLU side or a
    /// max-pool winner. Central differences are meaningless across a kink,
    /// so these are left out of `max_rel_error`.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn skipped_fraction(&self) -> f64 {
        let total = self.checked + self.skipped;
        if total == 0 {
            0.0
        } else {
            self.skipped as f64 / total as f64
        }
    }
}

/// Compares the gradient of the scalar built by `f` against central differences
/// over the selected entries of every input, all at precision `E`.
pub fn finite_diff_check<E, F>(inputs: &[Tensor<E>], config: GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    E: Element,
    F: Fn(&mut Tape<E>, &[Var]) -> Result<Var>,
{
    finite_diff_check_with_reference(inputs, config, &f, &f)
}

/// Analytic gradients come from `f` at precision `E`; central differences are
/// taken on `reference` (the same graph built at precision `R`).
///
/// Checking an `f32` backward pass against `f64` differences removes the
/// forward round-off that otherwise dominates `f32` difference quotients.
pub fn finite_diff_check_with_reference<E, R, F, G>(
    inputs: &[Tensor<E>],
    config: GradCheckConfig,
    f: F,
    reference: G,
) -> Result<GradCheckReport>
where
    E: Element,
    R: Element,
    F: Fn(&mut Tape<E>, &[Var]) -> Result<Var>,
    G: Fn(&mut Tape<R>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new(true);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(invalid("finite_diff_check", "function must return a scalar"));
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match tape.grad(v) {
            Some(g) => g.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; t.len()],
        })
        .collect();
    drop(tape);

    let eval = |perturbed: &[Tensor<R>]| -> Result<(f64, Option<BranchTrace>)> {
        let mut tape = Tape::new(false);
        tape.trace_branches();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = f_scalar(&reference, &mut tape, &vars)?;
        Ok((tape.value(out).item().as_f64(), tape.branch_trace()))
    };

    let mut work: Vec<Tensor<R>> = inputs.iter().map(Tensor::cast).collect();
    let (_, base_trace) = eval(&work)?;
    let eps = R::from_f64_lossy(config.epsilon);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        skipped: 0,
    };
    for ti in 0..inputs.len() {
        let len = inputs[ti].len();
        let entries: Vec<usize> = match config.selection {
            Selection::All => (0..len).collect(),
            Selection::Sample { per_tensor, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (ti as u64).wrapping_mul(0x9E37_79B9));
                let mut idx = sample(&mut rng, len, per_tensor.min(len)).into_vec();
                idx.sort_unstable();
                idx
            }
        };
        for e in entries {
            let orig = work[ti].data()[e];
            let plus = orig + eps;
            let minus = orig - eps;
            work[ti].data_mut()[e] = plus;
            let (fp, trace_p) = eval(&work)?;
            work[ti].data_mut()[e] = minus;
            let (fm, trace_m) = eval(&work)?;
            work[ti].data_mut()[e] = orig;
            if trace_p != base_trace || trace_m != base_trace {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (plus - minus).as_f64();
            let a = analytic[ti][e];
            let denom = a.abs().max(numeric.abs()).max(config.floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((ti, e));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn f_scalar<R: Element, G>(g: &G, tape: &mut Tape<R>, vars: &[Var]) -> Result<Var>
where
    G: Fn(&mut Tape<R>, &[Var]) -> Result<Var>,
{
    let out = g(tape, vars)?;
    if tape.value(out).len() != 1 {
        return Err(invalid("finite_diff_check", "reference must return a scalar"));
    }
    Ok(out)
}
