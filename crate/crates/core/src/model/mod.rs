//! The attention U-Net shared by all pass models.
//!
//! ```text
//! enc1(16) -> pool -> enc2(32) -> pool -> enc3(64)
//!   -> up, conv(32), gate(enc2), concat -> enc(32)
//!   -> up, conv(16), gate(enc1), concat -> enc(16) -> 1x1 head
//! ```
//! Every conv is `replication pad -> 5x5 conv -> batch norm -> LeakyReLU(0.1)`;
//! the head is a bare 1x1 conv whose logits are divided by the temperature
//! before the head nonlinearity.
//!
//! The feature stack arrives in raw units. A fixed per-channel factor
//! ([`INPUT_SCALE`]) brings the two distance planes (0 to ~120 grid units)
//! down to the range of the others before the first convolution; without
//! it Adam's per-weight steps are dominated by those planes and training
//! stalls.

pub mod checkpoint;
pub mod gradcheck;

use std::collections::BTreeMap;

use pitch_autograd::nn::{AttentionGate, BatchNorm2d, Conv2d, Head, Mode, ParamId, ParamStore, Session};
use pitch_autograd::{Element, Tensor, TensorError, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::samples::PassSample;
use crate::grid::{rasterize_into, CHANNELS, DIST_TO_BALL, DIST_TO_GOAL, STACK_LEN};
use crate::state::{GRID_X, GRID_Y};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError};

/// Input multipliers per feature channel; stored with the model as a fixed array.
pub const INPUT_SCALE: [f64; CHANNELS] = {
    let mut s = [1.0; CHANNELS];
    s[DIST_TO_BALL] = 0.01;
    s[DIST_TO_GOAL] = 0.01;
    s
};

fn input_scale(channels: usize) -> Vec<f64> {
    if channels == CHANNELS {
        INPUT_SCALE.to_vec()
    } else {
        vec![1.0; channels]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Likelihood,
    Success,
    Value,
}

impl HeadKind {
    pub fn out_channels(self) -> usize {
        match self {
            HeadKind::Likelihood | HeadKind::Success => 1,
            HeadKind::Value => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Likelihood => "likelihood",
            HeadKind::Success => "success",
            HeadKind::Value => "value",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "likelihood" => Some(HeadKind::Likelihood),
            "success" => Some(HeadKind::Success),
            "value" => Some(HeadKind::Value),
            _ => None,
        }
    }
}

/// The four trained models. Both value models share the value head but see
/// different training subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "likelihood")]
    Likelihood,
    #[serde(rename = "success")]
    Success,
    /// Value given the pass succeeds.
    #[serde(rename = "value-s")]
    ValueSuccess,
    /// Value given the pass fails.
    #[serde(rename = "value-u")]
    ValueFailure,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Likelihood,
        ModelKind::Success,
        ModelKind::ValueSuccess,
        ModelKind::ValueFailure,
    ];

    pub fn head(self) -> HeadKind {
        match self {
            ModelKind::Likelihood => HeadKind::Likelihood,
            ModelKind::Success => HeadKind::Success,
            ModelKind::ValueSuccess | ModelKind::ValueFailure => HeadKind::Value,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Likelihood => "likelihood",
            ModelKind::Success => "success",
            ModelKind::ValueSuccess => "value-s",
            ModelKind::ValueFailure => "value-u",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Whether a sample belongs to this model's training population.
    pub fn accepts(self, sample: &PassSample) -> bool {
        match self {
            ModelKind::Likelihood | ModelKind::Success => true,
            ModelKind::ValueSuccess => sample.success,
            ModelKind::ValueFailure => !sample.success,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub head: HeadKind,
    pub in_channels: usize,
    /// Input height (grid-x) and width (grid-y).
    pub grid: (usize, usize),
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub kernel: usize,
    pub leaky_alpha: f64,
}

impl ModelSpec {
    pub fn new(head: HeadKind) -> Self {
        Self {
            head,
            in_channels: CHANNELS,
            grid: (GRID_X, GRID_Y),
            encoder: vec![16, 32, 64],
            decoder: vec![32, 16],
            kernel: 5,
            leaky_alpha: 0.1,
        }
    }

    /// Same topology on a small square grid, for gradient checks.
    pub fn reduced(head: HeadKind, side: usize) -> Self {
        Self { grid: (side, side), ..Self::new(head) }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.encoder.len() != 3 || self.decoder.len() != 2 {
            return Err("plan must have 3 encoder and 2 decoder blocks".into());
        }
        if self.decoder != [self.encoder[1], self.encoder[0]] {
            return Err("decoder widths must match the skip connections".into());
        }
        let (h, w) = self.grid;
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(format!("grid {h}x{w} must be divisible by 4"));
        }
        if self.kernel.is_multiple_of(2) || self.in_channels == 0 {
            return Err("kernel must be odd and input channels positive".into());
        }
        Ok(())
    }

    pub fn bottleneck(&self) -> (usize, usize) {
        (self.grid.0 / 4, self.grid.1 / 4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub trainable: usize,
    /// Trainable plus batch-norm running statistics and the input scale.
    pub total: usize,
}

/// Parameter counts computed from the plan alone.
pub fn count_params(spec: &ModelSpec) -> ParamCounts {
    if spec.encoder.is_empty() {
        return ParamCounts { trainable: 0, total: 0 };
    }
    let k2 = spec.kernel * spec.kernel;
    let conv = |i: usize, o: usize, k2: usize| i * o * k2 + o;
    let mut trainable = 0;
    let mut stats = spec.in_channels;
    let mut block = |i: usize, o: usize, trainable: &mut usize| {
        *trainable += conv(i, o, k2) + 2 * o;
        stats += 2 * o;
    };
    let mut prev = spec.in_channels;
    for &c in &spec.encoder {
        block(prev, c, &mut trainable);
        block(c, c, &mut trainable);
        prev = c;
    }
    for &c in &spec.decoder {
        // up conv, attention gate (intermediate width = skip width), two convs
        block(prev, c, &mut trainable);
        trainable += conv(c, c, 1) + conv(c, c, 1) + conv(c, 1, 1);
        block(2 * c, c, &mut trainable);
        block(c, c, &mut trainable);
        prev = c;
    }
    trainable += conv(prev, spec.head.out_channels(), 1);
    ParamCounts { trainable, total: trainable + stats }
}

#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBlock {
    fn new<E: Element>(store: &mut ParamStore<E>, name: &str, idx: &str, i: usize, o: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(store, &format!("{name}.conv{idx}"), i, o, k, rng),
            bn: BatchNorm2d::new(store, &format!("{name}.bn{idx}"), o),
        }
    }

    fn forward<E: Element>(&self, s: &mut Session<'_, E>, x: Var, alpha: f64) -> pitch_autograd::Result<Var> {
        let p = s.tape.replication_pad(x, self.conv.kernel / 2)?;
        let y = self.conv.forward(s, p)?;
        let y = self.bn.forward(s, y)?;
        s.tape.leaky_relu(y, alpha)
    }
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    first: ConvBlock,
    second: ConvBlock,
}

impl EncoderBlock {
    fn new<E: Element>(store: &mut ParamStore<E>, name: &str, i: usize, o: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            first: ConvBlock::new(store, name, "1", i, o, k, rng),
            second: ConvBlock::new(store, name, "2", o, o, k, rng),
        }
    }

    fn forward<E: Element>(&self, s: &mut Session<'_, E>, x: Var, alpha: f64) -> pitch_autograd::Result<Var> {
        let y = self.first.forward(s, x, alpha)?;
        self.second.forward(s, y, alpha)
    }
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: ConvBlock,
    gate: AttentionGate,
    block: EncoderBlock,
}

/// Shapes recorded during a forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardTrace {
    pub input: Vec<usize>,
    pub bottleneck: Vec<usize>,
    pub output: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PassNet<E: Element> {
    spec: ModelSpec,
    store: ParamStore<E>,
    input_scale: ParamId,
    encoders: Vec<EncoderBlock>,
    decoders: Vec<DecoderStage>,
    head: Head,
    pub temperature: f64,
    /// Free-form training metadata (epoch, seeds, data hash).
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
}

/// One training target: destination cell plus the label for the head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub cell: (usize, usize),
    /// Success label (0/1) or value label (-1/0/+1); ignored by the likelihood head.
    pub label: i8,
}

impl Target {
    pub fn from_sample(kind: ModelKind, s: &PassSample) -> Self {
        let label = match kind {
            ModelKind::Likelihood => 0,
            ModelKind::Success => i8::from(s.success),
            ModelKind::ValueSuccess | ModelKind::ValueFailure => s.value,
        };
        Target { cell: (s.dest.0 as usize, s.dest.1 as usize), label }
    }
}

impl<E: Element> PassNet<E> {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate().map_err(ModelError::Spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let scale = input_scale(spec.in_channels).into_iter().map(E::from_f64_lossy).collect();
        let input_scale = store.add("input.scale", Tensor::new(vec![spec.in_channels], scale)?, false);
        let k = spec.kernel;
        let mut encoders = Vec::new();
        let mut prev = spec.in_channels;
        for (i, &c) in spec.encoder.iter().enumerate() {
            encoders.push(EncoderBlock::new(&mut store, &format!("enc{}", i + 1), prev, c, k, &mut rng));
            prev = c;
        }
        let mut decoders = Vec::new();
        for (i, &c) in spec.decoder.iter().enumerate() {
            let name = format!("dec{}", i + 1);
            let up = ConvBlock::new(&mut store, &format!("{name}.up"), "", prev, c, k, &mut rng);
            let gate = AttentionGate::new(&mut store, &format!("{name}.att"), c, c, spec.leaky_alpha, &mut rng);
            let block = EncoderBlock::new(&mut store, &name, 2 * c, c, k, &mut rng);
            decoders.push(DecoderStage { up, gate, block });
            prev = c;
        }
        let head = Head::new(&mut store, "head", prev, spec.head.out_channels(), &mut rng);
        Ok(Self {
            spec,
            store,
            input_scale,
            encoders,
            decoders,
            head,
            temperature: 1.0,
            meta: BTreeMap::new(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore<E> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<E> {
        &mut self.store
    }

    pub fn counts(&self) -> ParamCounts {
        ParamCounts {
            trainable: self.store.trainable_count(),
            total: self.store.total_count(),
        }
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    /// Head logits for a `N x C x H x W` input, plus recorded shapes.
    pub fn logits(&self, s: &mut Session<'_, E>, x: Var) -> pitch_autograd::Result<(Var, ForwardTrace)> {
        let alpha = self.spec.leaky_alpha;
        let input = s.tape.shape(x).to_vec();
        let factors = s.store().get(self.input_scale).value.data().to_vec();
        let x = s.tape.channel_scale(x, &factors)?;
        let e1 = self.encoders[0].forward(s, x, alpha)?;
        let p1 = s.tape.max_pool_2x2(e1)?;
        let e2 = self.encoders[1].forward(s, p1, alpha)?;
        let p2 = s.tape.max_pool_2x2(e2)?;
        let bottom = self.encoders[2].forward(s, p2, alpha)?;
        let bottleneck = s.tape.shape(bottom).to_vec();
        let mut y = bottom;
        for (stage, skip) in self.decoders.iter().zip([e2, e1]) {
            let up = s.tape.upsample_2x(y)?;
            let up = stage.up.forward(s, up, alpha)?;
            let gated = stage.gate.forward(s, skip, up)?;
            let cat = s.tape.concat_channels(gated, up)?;
            y = stage.block.forward(s, cat, alpha)?;
        }
        let logits = self.head.forward(s, y)?;
        let output = s.tape.shape(logits).to_vec();
        Ok((logits, ForwardTrace { input, bottleneck, output }))
    }

    /// Applies the head nonlinearity at `temperature`.
    pub fn activate(&self, s: &mut Session<'_, E>, logits: Var, temperature: f64) -> pitch_autograd::Result<Var> {
        match self.spec.head {
            HeadKind::Success => {
                let z = s.tape.scale(logits, 1.0 / temperature)?;
                s.tape.sigmoid(z)
            }
            HeadKind::Likelihood => s.tape.spatial_softmax(logits, temperature),
            HeadKind::Value => s.tape.channel_softmax(logits, temperature),
        }
    }

    /// Mean training loss at the target cells of a probability batch.
    pub fn loss(&self, s: &mut Session<'_, E>, probs: Var, targets: &[Target]) -> pitch_autograd::Result<Var> {
        let cells: Vec<(usize, usize)> = targets.iter().map(|t| t.cell).collect();
        let picked = s.tape.gather_cells(probs, &cells)?;
        match self.spec.head {
            HeadKind::Likelihood => s.tape.bce_loss(picked, &vec![E::one(); targets.len()]),
            HeadKind::Success => {
                let y: Vec<E> = targets.iter().map(|t| E::from_f64_lossy(f64::from(t.label))).collect();
                s.tape.bce_loss(picked, &y)
            }
            HeadKind::Value => {
                let mut y = vec![E::zero(); 3 * targets.len()];
                for (i, t) in targets.iter().enumerate() {
                    y[3 * i + (t.label + 1) as usize] = E::one();
                }
                s.tape.cce_loss(picked, &y)
            }
        }
    }

    /// Eval-mode probabilities for a batch, at the model's temperature.
    pub fn predict(&self, input: Tensor<E>) -> Result<Tensor<E>, ModelError> {
        self.predict_at(input, self.temperature)
    }

    pub fn predict_at(&self, input: Tensor<E>, temperature: f64) -> Result<Tensor<E>, ModelError> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(ModelError::Temperature(temperature));
        }
        self.check_input(&input)?;
        let mut s = Session::new(&self.store, Mode::Eval, false)?;
        let x = s.input(input, false);
        let (logits, _) = self.logits(&mut s, x)?;
        let probs = self.activate(&mut s, logits, temperature)?;
        Ok(s.tape.value(probs).clone())
    }

    /// Eval-mode head logits (temperature not applied).
    pub fn predict_logits(&self, input: Tensor<E>) -> Result<Tensor<E>, ModelError> {
        self.check_input(&input)?;
        let mut s = Session::new(&self.store, Mode::Eval, false)?;
        let x = s.input(input, false);
        let (logits, _) = self.logits(&mut s, x)?;
        Ok(s.tape.value(logits).clone())
    }

    /// Runs a forward pass and returns the recorded shapes.
    pub fn trace(&self, input: Tensor<E>, mode: Mode) -> Result<ForwardTrace, ModelError> {
        self.check_input(&input)?;
        let mut s = Session::new(&self.store, mode, false)?;
        let x = s.input(input, false);
        Ok(self.logits(&mut s, x)?.1)
    }

    fn check_input(&self, input: &Tensor<E>) -> Result<(), ModelError> {
        let expect = [self.spec.in_channels, self.spec.grid.0, self.spec.grid.1];
        let shape = input.shape();
        let ok = match shape.len() {
            4 => shape[1..] == expect,
            3 => shape == expect,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::Tensor(TensorError::ShapeMismatch {
                op: "passnet_input",
                left: shape.to_vec(),
                right: expect.to_vec(),
            }))
        }
    }
}

/// Rasterizes samples into an `N x 10 x 104 x 68` batch.
pub fn batch_tensor<'a, E: Element>(states: impl ExactSizeIterator<Item = &'a crate::state::GameState>) -> Tensor<E> {
    let n = states.len();
    let mut data = vec![E::zero(); n * STACK_LEN];
    let mut buf = vec![0.0f32; STACK_LEN];
    for (i, st) in states.enumerate() {
        rasterize_into(st, &mut buf);
        for (d, &v) in data[i * STACK_LEN..(i + 1) * STACK_LEN].iter_mut().zip(&buf) {
            *d = E::from_f64_lossy(v as f64);
        }
    }
    Tensor::new(vec![n, CHANNELS, GRID_X, GRID_Y], data).expect("length matches shape")
}
