//! Parameter storage and the layers the pass-surface networks are built from.

use rand::Rng;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<E> {
    pub name: String,
    pub value: Tensor<E>,
    pub trainable: bool,
}

/// Ordered, named parameter arrays. Order is insertion order and is what
/// checkpoints serialize.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<E> {
    params: Vec<Param<E>>,
    stats_ready: bool,
}

impl<E: Element> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            stats_ready: false,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>, trainable: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<E> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<E> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<E>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Whether batch-norm running statistics may be used for eval-mode passes.
    pub fn stats_ready(&self) -> bool {
        self.stats_ready
    }

    pub fn set_stats_ready(&mut self, ready: bool) {
        self.stats_ready = ready;
    }

    pub fn apply_stat_updates(&mut self, updates: Vec<StatUpdate<E>>) {
        if updates.is_empty() {
            return;
        }
        for StatUpdate { id, value } in updates {
            self.params[id.0].value.data_mut().copy_from_slice(&value);
        }
        self.stats_ready = true;
    }

    pub fn snapshot(&self) -> Vec<Vec<E>> {
        self.params.iter().map(|p| p.value.data().to_vec()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<E>]) {
        for (p, values) in self.params.iter_mut().zip(snapshot) {
            p.value.data_mut().copy_from_slice(values);
        }
    }
}

#[derive(Debug, Clone)]
pub struct StatUpdate<E> {
    pub id: ParamId,
    pub value: Vec<E>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward (and optionally backward) pass over a parameter store.
///
/// Parameters are bound lazily onto the tape. Batch-norm running-stat updates
/// are buffered so the store can stay shared during the pass.
pub struct Session<'s, E: Element> {
    pub tape: Tape<E>,
    store: &'s ParamStore<E>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    stat_updates: Vec<StatUpdate<E>>,
}

impl<'s, E: Element> Session<'s, E> {
    pub fn new(store: &'s ParamStore<E>, mode: Mode, grad: bool) -> Result<Self> {
        if mode == Mode::Eval && !store.stats_ready() {
            return Err(TensorError::UninitializedStats);
        }
        Ok(Self {
            tape: Tape::new(grad),
            store,
            bound: vec![None; store.len()],
            mode,
            stat_updates: Vec::new(),
        })
    }

    /// Continues on an existing tape with some parameters already bound to
    /// vars on it (used to differentiate a model w.r.t. explicit inputs).
    pub fn with_tape(tape: Tape<E>, store: &'s ParamStore<E>, mode: Mode, bindings: &[(ParamId, Var)]) -> Result<Self> {
        if mode == Mode::Eval && !store.stats_ready() {
            return Err(TensorError::UninitializedStats);
        }
        let mut bound = vec![None; store.len()];
        for &(id, v) in bindings {
            bound[id.0] = Some(v);
        }
        Ok(Self {
            tape,
            store,
            bound,
            mode,
            stat_updates: Vec::new(),
        })
    }

    /// Gives the tape back, discarding buffered stat updates.
    pub fn into_tape(self) -> Tape<E> {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<E> {
        self.store
    }

    pub fn input(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        self.tape.leaf(value, requires_grad)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let v = self.tape.leaf(p.value.clone(), p.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn push_stat_update(&mut self, id: ParamId, value: Vec<E>) {
        self.stat_updates.push(StatUpdate { id, value });
    }

    /// Gradients of every bound trainable parameter, in store order.
    pub fn param_grads(&mut self) -> Vec<(ParamId, Vec<E>)> {
        let mut out = Vec::new();
        for (i, slot) in self.bound.iter().enumerate() {
            if let Some(v) = slot {
                if let Some(g) = self.tape.take_grad(*v) {
                    out.push((ParamId(i), g));
                }
            }
        }
        out
    }

    pub fn into_stat_updates(self) -> Vec<StatUpdate<E>> {
        self.stat_updates
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    BatchNorm,
    AttentionGate,
    Head,
}

/// Introspection over a layer's named parameter arrays.
pub trait LayerParams {
    fn kind(&self) -> LayerKind;
    fn param_ids(&self) -> Vec<ParamId>;
}

/// He-uniform initialised, stride-1 convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let weight = Tensor::from_fn(vec![out_channels, in_channels, kernel, kernel], |_| {
            E::from_f64_lossy(rng.gen_range(-limit..limit))
        });
        let weight = store.add(format!("{name}.weight"), weight, true);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![out_channels]), true);
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn forward<E: Element>(&self, s: &mut Session<'_, E>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        s.tape.conv2d(x, w, Some(b))
    }
}

impl LayerParams for Conv2d {
    fn kind(&self) -> LayerKind {
        LayerKind::Conv
    }

    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new<E: Element>(store: &mut ParamStore<E>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(vec![channels], E::one()), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(vec![channels]), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::full(vec![channels], E::one()), false),
            channels,
        }
    }

    pub fn forward<E: Element>(&self, s: &mut Session<'_, E>, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        match s.mode() {
            Mode::Train => {
                let (y, stats) = s.tape.batch_norm_train(x, gamma, beta, BN_EPSILON)?;
                let m = E::from_f64_lossy(BN_MOMENTUM);
                let blend = |running: &[E], batch: &[E]| -> Vec<E> {
                    running
                        .iter()
                        .zip(batch)
                        .map(|(&r, &b)| m * r + (E::one() - m) * b)
                        .collect()
                };
                let mean = blend(s.store().get(self.running_mean).value.data(), &stats.mean);
                let var = blend(s.store().get(self.running_var).value.data(), &stats.var);
                s.push_stat_update(self.running_mean, mean);
                s.push_stat_update(self.running_var, var);
                Ok(y)
            }
            Mode::Eval => {
                let store = s.store();
                let mean = store.get(self.running_mean).value.data().to_vec();
                let var = store.get(self.running_var).value.data().to_vec();
                s.tape.batch_norm_eval(x, gamma, beta, &mean, &var, BN_EPSILON)
            }
        }
    }
}

impl LayerParams for BatchNorm2d {
    fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm
    }

    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta, self.running_mean, self.running_var]
    }
}

/// Additive attention gate: `skip * sigmoid(psi(lrelu(theta(skip) + phi(gate))))`.
#[derive(Debug, Clone)]
pub struct AttentionGate {
    pub theta: Conv2d,
    pub phi: Conv2d,
    pub psi: Conv2d,
    pub alpha: f64,
}

impl AttentionGate {
    /// The intermediate width equals the skip channel count.
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        skip_channels: usize,
        gate_channels: usize,
        alpha: f64,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            theta: Conv2d::new(store, &format!("{name}.theta"), skip_channels, skip_channels, 1, rng),
            phi: Conv2d::new(store, &format!("{name}.phi"), gate_channels, skip_channels, 1, rng),
            psi: Conv2d::new(store, &format!("{name}.psi"), skip_channels, 1, 1, rng),
            alpha,
        }
    }

    pub fn forward<E: Element>(&self, s: &mut Session<'_, E>, skip: Var, gate: Var) -> Result<Var> {
        let (_, _, sh, sw) = s.tape.value(skip).dims4("attention_gate")?;
        let (_, _, gh, gw) = s.tape.value(gate).dims4("attention_gate")?;
        if (sh, sw) != (gh, gw) {
            return Err(TensorError::ShapeMismatch {
                op: "attention_gate",
                left: s.tape.shape(skip).to_vec(),
                right: s.tape.shape(gate).to_vec(),
            });
        }
        let t = self.theta.forward(s, skip)?;
        let p = self.phi.forward(s, gate)?;
        let sum = s.tape.add(t, p)?;
        let act = s.tape.leaky_relu(sum, self.alpha)?;
        let logit = self.psi.forward(s, act)?;
        let mask = s.tape.sigmoid(logit)?;
        s.tape.mask_mul(skip, mask)
    }
}

impl LayerParams for AttentionGate {
    fn kind(&self) -> LayerKind {
        LayerKind::AttentionGate
    }

    fn param_ids(&self) -> Vec<ParamId> {
        [&self.theta, &self.phi, &self.psi]
            .iter()
            .flat_map(|c| c.param_ids())
            .collect()
    }
}

/// 1x1 output convolution producing head logits.
#[derive(Debug, Clone)]
pub struct Head {
    pub conv: Conv2d,
}

impl Head {
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            conv: Conv2d::new(store, name, in_channels, out_channels, 1, rng),
        }
    }

    pub fn forward<E: Element>(&self, s: &mut Session<'_, E>, x: Var) -> Result<Var> {
        self.conv.forward(s, x)
    }
}

impl LayerParams for Head {
    fn kind(&self) -> LayerKind {
        LayerKind::Head
    }

    fn param_ids(&self) -> Vec<ParamId> {
        self.conv.param_ids()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn head_16_to_3_has_51_parameters() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = Head::new(&mut store, "head", 16, 3, &mut rng);
        assert_eq!(store.trainable_count(), 51);
        assert_eq!(head.kind(), LayerKind::Head);
        assert_eq!(ParamStore::<f32>::new().total_count(), 0);
    }

    #[test]
    fn batch_norm_running_stats_are_not_trainable() {
        let mut store = ParamStore::<f32>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 4);
        assert!(store.get(bn.gamma).trainable);
        assert!(!store.get(bn.running_mean).trainable);
        assert!(!store.get(bn.running_var).trainable);
        assert_eq!(store.trainable_count(), 8);
        assert_eq!(store.total_count(), 16);
    }

    #[test]
    fn eval_without_stats_is_rejected() {
        let mut store = ParamStore::<f32>::new();
        BatchNorm2d::new(&mut store, "bn", 2);
        assert!(matches!(
            Session::new(&store, Mode::Eval, false),
            Err(TensorError::UninitializedStats)
        ));
        store.set_stats_ready(true);
        assert!(Session::new(&store, Mode::Eval, false).is_ok());
    }

    #[test]
    fn train_step_updates_running_stats_with_momentum() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 1);
        let x = Tensor::new(vec![2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let mut s = Session::new(&store, Mode::Train, false).unwrap();
        let xv = s.input(x, false);
        bn.forward(&mut s, xv).unwrap();
        let updates = s.into_stat_updates();
        store.apply_stat_updates(updates);
        let mean = store.get(bn.running_mean).value.data()[0];
        let var = store.get(bn.running_var).value.data()[0];
        assert!((mean - 0.01 * 4.0).abs() < 1e-12);
        assert!((var - (0.99 + 0.01 * 5.0)).abs() < 1e-12);
        assert!(store.stats_ready());
    }
}
