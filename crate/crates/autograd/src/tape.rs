//! Reverse-mode tape.
//!
//! Every op appends a node holding its forward value and whatever it needs to
//! run backwards. Nodes only reference earlier nodes, so a reverse sweep over
//! the node list is a valid topological order.

use crate::element::Element;
use crate::error::{invalid, Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Lower and upper clamp applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-7;

/// Per-channel statistics of a training-mode batch-norm call.
#[derive(Debug, Clone)]
pub struct BatchStats<E> {
    pub mean: Vec<E>,
    pub var: Vec<E>,
}

enum Op<E> {
    Leaf,
    Pad {
        input: Var,
        pad: usize,
    },
    Conv {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<E>,
        inv_std: Vec<E>,
        // eval mode treats mean/inv_std as constants
        batch_stats: bool,
    },
    LeakyRelu {
        input: Var,
        alpha: E,
    },
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    Upsample {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    MaskMul {
        input: Var,
        mask: Var,
    },
    Sigmoid {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: E,
    },
    ChannelScale {
        input: Var,
        factors: Vec<E>,
    },
    SpatialSoftmax {
        input: Var,
        inv_t: E,
    },
    ChannelSoftmax {
        input: Var,
        inv_t: E,
    },
    Gather {
        input: Var,
        cells: Vec<(usize, usize)>,
    },
    Bce {
        pred: Var,
        targets: Vec<E>,
    },
    Cce {
        pred: Var,
        targets: Vec<E>,
    },
    WeightedSum {
        input: Var,
        weights: Vec<E>,
    },
}

struct Node<E> {
    value: Tensor<E>,
    grad: Option<Vec<E>>,
    requires_grad: bool,
    op: Op<E>,
}

pub struct Tape<E> {
    nodes: Vec<Node<E>>,
    grad_enabled: bool,
    branches: Option<BranchTrace>,
}

/// Running hash of the piecewise branch taken by every kinked op
/// (LeakyReLU side, max-pool winner). Two forward passes with equal traces
/// stayed on the same smooth piece.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchTrace(u64);

impl BranchTrace {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0100_0000_01b3;

    fn mix(&mut self, v: u64) {
        self.0 = (self.0 ^ v).wrapping_mul(Self::PRIME);
    }
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new(true)
    }
}

fn lit<E: Element>(x: f64) -> E {
    E::from_f64_lossy(x)
}

impl<E: Element> Tape<E> {
    /// With `grad_enabled == false` no node keeps backward state.
    pub fn new(grad_enabled: bool) -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled,
            branches: None,
        }
    }

    /// Starts recording a [`BranchTrace`] for subsequent ops.
    pub fn trace_branches(&mut self) {
        self.branches = Some(BranchTrace(BranchTrace::OFFSET));
    }

    pub fn branch_trace(&self) -> Option<BranchTrace> {
        self.branches
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: requires_grad && self.grad_enabled,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<E>> {
        self.nodes[v.0].grad.take()
    }

    fn push(&mut self, value: Tensor<E>, parents: &[Var], op: Op<E>) -> Var {
        let requires_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: if requires_grad { op } else { Op::Leaf },
        });
        Var(self.nodes.len() - 1)
    }

    fn dims4(&self, v: Var, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        self.nodes[v.0].value.dims4(op)
    }

    fn out_shape(&self, like: Var, n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
        if self.shape(like).len() == 3 {
            vec![c, h, w]
        } else {
            vec![n, c, h, w]
        }
    }

    // ----- forward ops -------------------------------------------------

    /// Replicates the edge cells `pad` times on every spatial border.
    pub fn replication_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        let (n, c, h, w) = self.dims4(x, "replication_pad")?;
        if h == 0 || w == 0 {
            return Err(invalid("replication_pad", "empty spatial dims"));
        }
        let (ho, wo) = (h + 2 * pad, w + 2 * pad);
        let src = self.value(x).data();
        let mut out = vec![E::zero(); n * c * ho * wo];
        for plane in 0..n * c {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            let d = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for i in 0..ho {
                let si = i.saturating_sub(pad).min(h - 1);
                let row = &s[si * w..(si + 1) * w];
                let drow = &mut d[i * wo..(i + 1) * wo];
                drow[..pad].fill(row[0]);
                drow[pad..pad + w].copy_from_slice(row);
                drow[pad + w..].fill(row[w - 1]);
            }
        }
        let shape = self.out_shape(x, n, c, ho, wo);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, &[x], Op::Pad { input: x, pad }))
    }

    /// Stride-1 cross-correlation without implicit padding.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (n, cin, h, w) = self.dims4(x, "conv2d")?;
        let wshape = self.shape(weight).to_vec();
        let [cout, wcin, kh, kw] = wshape[..] else {
            return Err(TensorError::Rank {
                op: "conv2d",
                expected: "4 (out x in x kh x kw)",
                actual: wshape,
            });
        };
        if wcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: self.shape(x).to_vec(),
                right: wshape,
            });
        }
        if kh > h || kw > w {
            return Err(invalid("conv2d", "kernel larger than input"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    left: vec![cout],
                    right: self.shape(b).to_vec(),
                });
            }
        }
        let (ho, wo) = (h - kh + 1, w - kw + 1);
        let k = cin * kh * kw;
        let p = ho * wo;
        let xs = self.value(x).data();
        let ws = self.value(weight).data();
        let bs = bias.map(|b| self.value(b).data());
        let mut out = vec![E::zero(); n * cout * p];
        let mut col = if kh == 1 && kw == 1 { Vec::new() } else { vec![E::zero(); k * p] };
        for s in 0..n {
            let xin = &xs[s * cin * h * w..(s + 1) * cin * h * w];
            let cols: &[E] = if kh == 1 && kw == 1 {
                xin
            } else {
                im2col(xin, cin, h, w, kh, kw, &mut col);
                &col
            };
            let o = &mut out[s * cout * p..(s + 1) * cout * p];
            if let Some(bs) = bs {
                for (co, chunk) in o.chunks_mut(p).enumerate() {
                    chunk.fill(bs[co]);
                }
                E::gemm(cout, k, p, E::one(), ws, false, cols, false, E::one(), o);
            } else {
                E::gemm(cout, k, p, E::one(), ws, false, cols, false, E::zero(), o);
            }
        }
        let shape = self.out_shape(x, n, cout, ho, wo);
        let value = Tensor::new(shape, out)?;
        let mut parents = vec![x, weight];
        parents.extend(bias);
        Ok(self.push(value, &parents, Op::Conv { input: x, weight, bias }))
    }

    /// Batch norm over `N x H x W` per channel using the batch statistics.
    /// Returns the biased batch mean and variance for running-stat updates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats<E>)> {
        let (n, c, h, w) = self.dims4(x, "batch_norm")?;
        if self.shape(x).len() != 4 || n < 2 {
            return Err(invalid("batch_norm", "train mode needs a batch of at least 2"));
        }
        self.check_channel_param(gamma, c)?;
        self.check_channel_param(beta, c)?;
        let hw = h * w;
        let m = (n * hw) as f64;
        let xs = self.value(x).data();
        let mut mean = vec![E::zero(); c];
        let mut var = vec![E::zero(); c];
        let mut inv_std = vec![E::zero(); c];
        for ch in 0..c {
            let mut sum = 0.0f64;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                sum += xs[base..base + hw].iter().map(|v| v.as_f64()).sum::<f64>();
            }
            let mu = sum / m;
            let mut sq = 0.0f64;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                sq += xs[base..base + hw]
                    .iter()
                    .map(|v| {
                        let d = v.as_f64() - mu;
                        d * d
                    })
                    .sum::<f64>();
            }
            let v = sq / m;
            mean[ch] = lit(mu);
            var[ch] = lit(v);
            inv_std[ch] = lit(1.0 / (v + eps).sqrt());
        }
        let out = self.normalize(x, gamma, beta, &mean, &inv_std, n, c, hw);
        let shape = self.shape(x).to_vec();
        let value = Tensor::new(shape, out)?;
        let stats = BatchStats {
            mean: mean.clone(),
            var,
        };
        let node = self.push(
            value,
            &[x, gamma, beta],
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats: true,
            },
        );
        Ok((node, stats))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[E],
        running_var: &[E],
        eps: f64,
    ) -> Result<Var> {
        let (n, c, h, w) = self.dims4(x, "batch_norm")?;
        self.check_channel_param(gamma, c)?;
        self.check_channel_param(beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(invalid("batch_norm", "running statistics do not match channels"));
        }
        let mean = running_mean.to_vec();
        let inv_std: Vec<E> = running_var
            .iter()
            .map(|v| lit(1.0 / (v.as_f64() + eps).sqrt()))
            .collect();
        let out = self.normalize(x, gamma, beta, &mean, &inv_std, n, c, h * w);
        let shape = self.shape(x).to_vec();
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            &[x, gamma, beta],
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats: false,
            },
        ))
    }

    fn check_channel_param(&self, p: Var, c: usize) -> Result<()> {
        if self.shape(p) != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                left: vec![c],
                right: self.shape(p).to_vec(),
            });
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[E],
        inv_std: &[E],
        n: usize,
        c: usize,
        hw: usize,
    ) -> Vec<E> {
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = vec![E::zero(); xs.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                let (mu, is, gg, bb) = (mean[ch], inv_std[ch], g[ch], b[ch]);
                for (o, &v) in out[base..base + hw].iter_mut().zip(&xs[base..base + hw]) {
                    *o = gg * ((v - mu) * is) + bb;
                }
            }
        }
        out
    }

    /// `max(x, alpha * x)`; the slope at exactly zero is `alpha`.
    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        let a: E = lit(alpha);
        let out: Vec<E> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > E::zero() { v } else { a * v })
            .collect();
        if let Some(trace) = self.branches.as_mut() {
            for (i, &v) in self.nodes[x.0].value.data().iter().enumerate() {
                if v > E::zero() {
                    trace.mix(i as u64);
                }
            }
            trace.mix(u64::MAX);
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, &[x], Op::LeakyRelu { input: x, alpha: a }))
    }

    /// 2x2 max pooling with stride 2; ties go to the first cell in row-major order.
    pub fn max_pool_2x2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.dims4(x, "max_pool_2x2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(invalid("max_pool_2x2", format!("odd spatial dims {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let xs = self.value(x).data();
        let mut out = vec![E::zero(); n * c * ho * wo];
        let mut argmax = vec![0u32; out.len()];
        for plane in 0..n * c {
            let s = &xs[plane * h * w..(plane + 1) * h * w];
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = (2 * i) * w + 2 * j;
                    for idx in [(2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j, (2 * i + 1) * w + 2 * j + 1] {
                        if s[idx] > s[best] {
                            best = idx;
                        }
                    }
                    let o = plane * ho * wo + i * wo + j;
                    out[o] = s[best];
                    argmax[o] = (plane * h * w + best) as u32;
                }
            }
        }
        if let Some(trace) = self.branches.as_mut() {
            argmax.iter().for_each(|&a| trace.mix(a as u64));
            trace.mix(u64::MAX);
        }
        let shape = self.out_shape(x, n, c, ho, wo);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, &[x], Op::MaxPool { input: x, argmax }))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample_2x(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.dims4(x, "upsample_2x")?;
        let (ho, wo) = (2 * h, 2 * w);
        let xs = self.value(x).data();
        let mut out = vec![E::zero(); n * c * ho * wo];
        for plane in 0..n * c {
            let s = &xs[plane * h * w..(plane + 1) * h * w];
            let d = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for i in 0..ho {
                let row = &s[(i / 2) * w..(i / 2 + 1) * w];
                for (j, o) in d[i * wo..(i + 1) * wo].iter_mut().enumerate() {
                    *o = row[j / 2];
                }
            }
        }
        let shape = self.out_shape(x, n, c, ho, wo);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, &[x], Op::Upsample { input: x }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out: Vec<E> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(value, &[a, b], Op::Add { a, b }))
    }

    /// Multiplies every channel of `x` (N x C x H x W) by a single-channel mask (N x 1 x H x W).
    pub fn mask_mul(&mut self, x: Var, mask: Var) -> Result<Var> {
        let (n, c, h, w) = self.dims4(x, "mask_mul")?;
        let (mn, mc, mh, mw) = self.dims4(mask, "mask_mul")?;
        if (mn, mc, mh, mw) != (n, 1, h, w) {
            return Err(TensorError::ShapeMismatch {
                op: "mask_mul",
                left: self.shape(x).to_vec(),
                right: self.shape(mask).to_vec(),
            });
        }
        let hw = h * w;
        let xs = self.value(x).data();
        let ms = self.value(mask).data();
        let mut out = vec![E::zero(); xs.len()];
        for s in 0..n {
            let m = &ms[s * hw..(s + 1) * hw];
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for ((o, &v), &mv) in out[base..base + hw].iter_mut().zip(&xs[base..base + hw]).zip(m) {
                    *o = v * mv;
                }
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, &[x, mask], Op::MaskMul { input: x, mask }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out: Vec<E> = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, &[x], Op::Sigmoid { input: x }))
    }

    /// Concatenates along the channel axis, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.dims4(a, "concat_channels")?;
        let (nb, cb, hb, wb) = self.dims4(b, "concat_channels")?;
        if (n, h, w) != (nb, hb, wb) || self.shape(a).len() != self.shape(b).len() {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let hw = h * w;
        let xa = self.value(a).data();
        let xb = self.value(b).data();
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for s in 0..n {
            out.extend_from_slice(&xa[s * ca * hw..(s + 1) * ca * hw]);
            out.extend_from_slice(&xb[s * cb * hw..(s + 1) * cb * hw]);
        }
        let shape = self.out_shape(a, n, ca + cb, h, w);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, &[a, b], Op::Concat { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f: E = lit(factor);
        let out: Vec<E> = self.value(x).data().iter().map(|&v| v * f).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, &[x], Op::Scale { input: x, factor: f }))
    }

    /// Multiplies channel `c` of an `N x C x H x W` tensor by `factors[c]`.
    pub fn channel_scale(&mut self, x: Var, factors: &[E]) -> Result<Var> {
        let (_, c, h, w) = self.dims4(x, "channel_scale")?;
        if factors.len() != c {
            return Err(invalid("channel_scale", format!("{} factors for {c} channels", factors.len())));
        }
        let hw = h * w;
        let out: Vec<E> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * factors[(i / hw) % c])
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(
            value,
            &[x],
            Op::ChannelScale {
                input: x,
                factors: factors.to_vec(),
            },
        ))
    }

    /// Softmax of `logits / temperature` over all cells of each single-channel map.
    pub fn spatial_softmax(&mut self, x: Var, temperature: f64) -> Result<Var> {
        let (n, c, h, w) = self.dims4(x, "spatial_softmax")?;
        if c != 1 {
            return Err(invalid("spatial_softmax", format!("expected 1 channel, got {c}")));
        }
        check_temperature("spatial_softmax", temperature)?;
        let inv_t: E = lit(1.0 / temperature);
        let hw = h * w;
        let xs = self.value(x).data();
        let mut out = vec![E::zero(); xs.len()];
        for s in 0..n {
            softmax_into(&xs[s * hw..(s + 1) * hw], inv_t, &mut out[s * hw..(s + 1) * hw]);
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, &[x], Op::SpatialSoftmax { input: x, inv_t }))
    }

    /// Softmax of `logits / temperature` across channels at every cell.
    pub fn channel_softmax(&mut self, x: Var, temperature: f64) -> Result<Var> {
        let (n, c, h, w) = self.dims4(x, "channel_softmax")?;
        check_temperature("channel_softmax", temperature)?;
        let inv_t: E = lit(1.0 / temperature);
        let hw = h * w;
        let xs = self.value(x).data();
        let mut out = vec![E::zero(); xs.len()];
        for s in 0..n {
            let base = s * c * hw;
            for cell in 0..hw {
                let logits: Vec<E> = (0..c).map(|ch| xs[base + ch * hw + cell]).collect();
                let mut probs = vec![E::zero(); c];
                softmax_into(&logits, inv_t, &mut probs);
                for ch in 0..c {
                    out[base + ch * hw + cell] = probs[ch];
                }
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, &[x], Op::ChannelSoftmax { input: x, inv_t }))
    }

    /// Picks one cell per batch item, giving an `N x C` tensor.
    pub fn gather_cells(&mut self, x: Var, cells: &[(usize, usize)]) -> Result<Var> {
        let (n, c, h, w) = self.dims4(x, "gather_cells")?;
        if cells.len() != n {
            return Err(invalid("gather_cells", format!("{} cells for batch of {n}", cells.len())));
        }
        if let Some(&(i, j)) = cells.iter().find(|&&(i, j)| i >= h || j >= w) {
            return Err(invalid("gather_cells", format!("cell ({i}, {j}) outside {h}x{w}")));
        }
        let hw = h * w;
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * c);
        for (s, &(i, j)) in cells.iter().enumerate() {
            for ch in 0..c {
                out.push(xs[(s * c + ch) * hw + i * w + j]);
            }
        }
        let value = Tensor::new(vec![n, c], out)?;
        Ok(self.push(value, &[x], Op::Gather { input: x, cells: cells.to_vec() }))
    }

    /// Mean binary cross-entropy over every entry of `pred`.
    pub fn bce_loss(&mut self, pred: Var, targets: &[E]) -> Result<Var> {
        let loss = crate::loss::binary_cross_entropy(self.value(pred).data(), targets)?;
        let value = Tensor::scalar(loss);
        Ok(self.push(value, &[pred], Op::Bce { pred, targets: targets.to_vec() }))
    }

    /// Mean over rows of categorical cross-entropy; `pred` is `N x C`, targets one-hot.
    pub fn cce_loss(&mut self, pred: Var, targets: &[E]) -> Result<Var> {
        let shape = self.shape(pred).to_vec();
        let [_, c] = shape[..] else {
            return Err(TensorError::Rank {
                op: "cce_loss",
                expected: "2 (N x C)",
                actual: shape,
            });
        };
        let loss = crate::loss::categorical_cross_entropy(self.value(pred).data(), targets, c)?;
        let value = Tensor::scalar(loss);
        Ok(self.push(value, &[pred], Op::Cce { pred, targets: targets.to_vec() }))
    }

    /// `sum(x * weights)` as a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: &[E]) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(invalid("weighted_sum", "weights length differs from input"));
        }
        let total: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(weights)
            .map(|(&a, &b)| a.as_f64() * b.as_f64())
            .sum();
        let total = E::from_f64_lossy(total);
        Ok(self.push(
            Tensor::scalar(total),
            &[x],
            Op::WeightedSum {
                input: x,
                weights: weights.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ones = vec![E::one(); self.value(x).len()];
        self.weighted_sum(x, &ones)
    }

    // ----- backward ----------------------------------------------------

    /// Back-propagates from a scalar node. Leaf gradients accumulate and stay
    /// readable through [`Tape::grad`]; interior gradients are released.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(invalid("backward", "root must be a scalar"));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(vec![E::one()]);
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = node.grad.take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                node.grad = Some(grad);
                continue;
            }
            backprop_node(node, &grad, before);
        }
        Ok(())
    }
}

fn check_temperature(op: &'static str, t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(op, format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

pub(crate) fn sigmoid<E: Element>(v: E) -> E {
    if v >= E::zero() {
        E::one() / (E::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (E::one() + e)
    }
}

/// Softmax of `xs * inv_t` written to `out`.
pub(crate) fn softmax_into<E: Element>(xs: &[E], inv_t: E, out: &mut [E]) {
    let mut max = E::neg_infinity();
    for v in xs {
        max = max.max(*v * inv_t);
    }
    let mut total = 0.0f64;
    for (o, v) in out.iter_mut().zip(xs) {
        let e = (*v * inv_t - max).exp();
        *o = e;
        total += e.as_f64();
    }
    let inv: E = lit(1.0 / total);
    for o in out.iter_mut() {
        *o = *o * inv;
    }
}

fn grad_slot<E: Element>(nodes: &mut [Node<E>], v: Var) -> Option<&mut Vec<E>> {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.len();
    Some(node.grad.get_or_insert_with(|| vec![E::zero(); len]))
}

fn im2col<E: Element>(x: &[E], cin: usize, h: usize, w: usize, kh: usize, kw: usize, col: &mut [E]) {
    let (ho, wo) = (h - kh + 1, w - kw + 1);
    let p = ho * wo;
    for ci in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oi in 0..ho {
                    let src = &x[ci * h * w + (oi + ki) * w + kj..][..wo];
                    dst[oi * wo..(oi + 1) * wo].copy_from_slice(src);
                }
            }
        }
    }
}

fn col2im_add<E: Element>(col: &[E], cin: usize, h: usize, w: usize, kh: usize, kw: usize, dx: &mut [E]) {
    let (ho, wo) = (h - kh + 1, w - kw + 1);
    let p = ho * wo;
    for ci in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oi in 0..ho {
                    let dst = &mut dx[ci * h * w + (oi + ki) * w + kj..][..wo];
                    for (d, &s) in dst.iter_mut().zip(&src[oi * wo..(oi + 1) * wo]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

fn clamp_bounds<E: Element>() -> (E, E) {
    let lo: E = lit(LOG_CLAMP);
    (lo, E::one() - lo)
}

fn backprop_node<E: Element>(node: &Node<E>, g: &[E], before: &mut [Node<E>]) {
    match &node.op {
        Op::Leaf => {}
        &Op::Pad { input, pad } => {
            let (n, c, h, w) = before[input.0].value.dims4("pad").expect("validated");
            let (ho, wo) = (h + 2 * pad, w + 2 * pad);
            if let Some(dx) = grad_slot(before, input) {
                for plane in 0..n * c {
                    for i in 0..ho {
                        let si = i.saturating_sub(pad).min(h - 1);
                        for j in 0..wo {
                            let sj = j.saturating_sub(pad).min(w - 1);
                            let d = &mut dx[plane * h * w + si * w + sj];
                            *d = *d + g[plane * ho * wo + i * wo + j];
                        }
                    }
                }
            }
        }
        &Op::Conv { input, weight, bias } => {
            let (n, cin, h, w) = before[input.0].value.dims4("conv2d").expect("validated");
            let wshape = before[weight.0].value.shape().to_vec();
            let (cout, kh, kw) = (wshape[0], wshape[2], wshape[3]);
            let (ho, wo) = (h - kh + 1, w - kw + 1);
            let (k, p) = (cin * kh * kw, ho * wo);
            let pointwise = kh == 1 && kw == 1;
            if let Some(b) = bias {
                if let Some(db) = grad_slot(before, b) {
                    for s in 0..n {
                        for co in 0..cout {
                            let row = &g[(s * cout + co) * p..(s * cout + co + 1) * p];
                            db[co] = db[co] + row.iter().copied().sum::<E>();
                        }
                    }
                }
            }
            let need_dw = before[weight.0].requires_grad;
            let need_dx = before[input.0].requires_grad;
            let mut col = if pointwise { Vec::new() } else { vec![E::zero(); k * p] };
            if need_dw {
                let xs = before[input.0].value.data().to_vec();
                let dw = grad_slot(before, weight).expect("requires grad");
                for s in 0..n {
                    let xin = &xs[s * cin * h * w..(s + 1) * cin * h * w];
                    let cols: &[E] = if pointwise {
                        xin
                    } else {
                        im2col(xin, cin, h, w, kh, kw, &mut col);
                        &col
                    };
                    let gs = &g[s * cout * p..(s + 1) * cout * p];
                    E::gemm(cout, p, k, E::one(), gs, false, cols, true, E::one(), dw);
                }
            }
            if need_dx {
                let ws = before[weight.0].value.data().to_vec();
                let dx = grad_slot(before, input).expect("requires grad");
                let mut dcol = vec![E::zero(); k * p];
                for s in 0..n {
                    let gs = &g[s * cout * p..(s + 1) * cout * p];
                    let dxs = &mut dx[s * cin * h * w..(s + 1) * cin * h * w];
                    if pointwise {
                        E::gemm(k, cout, p, E::one(), &ws, true, gs, false, E::one(), dxs);
                    } else {
                        E::gemm(k, cout, p, E::one(), &ws, true, gs, false, E::zero(), &mut dcol);
                        col2im_add(&dcol, cin, h, w, kh, kw, dxs);
                    }
                }
            }
        }
        Op::BatchNorm {
            input,
            gamma,
            beta,
            mean,
            inv_std,
            batch_stats,
        } => {
            let (input, gamma, beta) = (*input, *gamma, *beta);
            let (n, c, h, w) = before[input.0].value.dims4("batch_norm").expect("validated");
            let hw = h * w;
            let m = (n * hw) as f64;
            let xs = before[input.0].value.data().to_vec();
            let gam = before[gamma.0].value.data().to_vec();
            let mut sum_dy = vec![0.0f64; c];
            let mut sum_dy_xhat = vec![0.0f64; c];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * hw;
                    let (mu, is) = (mean[ch], inv_std[ch]);
                    let (mut a, mut b) = (0.0f64, 0.0f64);
                    for (&gv, &xv) in g[base..base + hw].iter().zip(&xs[base..base + hw]) {
                        a += gv.as_f64();
                        b += (gv * ((xv - mu) * is)).as_f64();
                    }
                    sum_dy[ch] += a;
                    sum_dy_xhat[ch] += b;
                }
            }
            if let Some(dg) = grad_slot(before, gamma) {
                for ch in 0..c {
                    dg[ch] = dg[ch] + lit(sum_dy_xhat[ch]);
                }
            }
            if let Some(db) = grad_slot(before, beta) {
                for ch in 0..c {
                    db[ch] = db[ch] + lit(sum_dy[ch]);
                }
            }
            if let Some(dx) = grad_slot(before, input) {
                for ch in 0..c {
                    let scale = gam[ch] * inv_std[ch];
                    let (mean_dy, mean_dy_xhat): (E, E) = (lit(sum_dy[ch] / m), lit(sum_dy_xhat[ch] / m));
                    for s in 0..n {
                        let base = (s * c + ch) * hw;
                        for idx in base..base + hw {
                            let contrib = if *batch_stats {
                                let xhat = (xs[idx] - mean[ch]) * inv_std[ch];
                                scale * (g[idx] - mean_dy - xhat * mean_dy_xhat)
                            } else {
                                scale * g[idx]
                            };
                            dx[idx] = dx[idx] + contrib;
                        }
                    }
                }
            }
        }
        &Op::LeakyRelu { input, alpha } => {
            let xs = before[input.0].value.data().to_vec();
            if let Some(dx) = grad_slot(before, input) {
                for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(&xs) {
                    *d = *d + if xv > E::zero() { gv } else { alpha * gv };
                }
            }
        }
        Op::MaxPool { input, argmax } => {
            if let Some(dx) = grad_slot(before, *input) {
                for (&src, &gv) in argmax.iter().zip(g) {
                    let d = &mut dx[src as usize];
                    *d = *d + gv;
                }
            }
        }
        &Op::Upsample { input } => {
            let (n, c, h, w) = before[input.0].value.dims4("upsample").expect("validated");
            let wo = 2 * w;
            if let Some(dx) = grad_slot(before, input) {
                for plane in 0..n * c {
                    let gp = &g[plane * 4 * h * w..(plane + 1) * 4 * h * w];
                    for i in 0..2 * h {
                        for j in 0..wo {
                            let d = &mut dx[plane * h * w + (i / 2) * w + j / 2];
                            *d = *d + gp[i * wo + j];
                        }
                    }
                }
            }
        }
        &Op::Add { a, b } => {
            for v in [a, b] {
                if let Some(d) = grad_slot(before, v) {
                    for (x, &gv) in d.iter_mut().zip(g) {
                        *x = *x + gv;
                    }
                }
            }
        }
        &Op::MaskMul { input, mask } => {
            let (n, c, h, w) = before[input.0].value.dims4("mask_mul").expect("validated");
            let hw = h * w;
            let xs = before[input.0].value.data().to_vec();
            let ms = before[mask.0].value.data().to_vec();
            if let Some(dx) = grad_slot(before, input) {
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        for cell in 0..hw {
                            dx[base + cell] = dx[base + cell] + g[base + cell] * ms[s * hw + cell];
                        }
                    }
                }
            }
            if let Some(dm) = grad_slot(before, mask) {
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * hw;
                        for cell in 0..hw {
                            dm[s * hw + cell] = dm[s * hw + cell] + g[base + cell] * xs[base + cell];
                        }
                    }
                }
            }
        }
        &Op::Sigmoid { input } => {
            let ys = node.value.data();
            if let Some(dx) = grad_slot(before, input) {
                for ((d, &gv), &y) in dx.iter_mut().zip(g).zip(ys) {
                    *d = *d + gv * y * (E::one() - y);
                }
            }
        }
        &Op::Concat { a, b } => {
            let (n, ca, h, w) = before[a.0].value.dims4("concat").expect("validated");
            let (_, cb, _, _) = before[b.0].value.dims4("concat").expect("validated");
            let hw = h * w;
            let ct = ca + cb;
            if let Some(da) = grad_slot(before, a) {
                for s in 0..n {
                    for (d, &gv) in da[s * ca * hw..(s + 1) * ca * hw].iter_mut().zip(&g[s * ct * hw..][..ca * hw]) {
                        *d = *d + gv;
                    }
                }
            }
            if let Some(db) = grad_slot(before, b) {
                for s in 0..n {
                    for (d, &gv) in db[s * cb * hw..(s + 1) * cb * hw]
                        .iter_mut()
                        .zip(&g[(s * ct + ca) * hw..][..cb * hw])
                    {
                        *d = *d + gv;
                    }
                }
            }
        }
        &Op::Scale { input, factor } => {
            if let Some(dx) = grad_slot(before, input) {
                for (d, &gv) in dx.iter_mut().zip(g) {
                    *d = *d + gv * factor;
                }
            }
        }
        Op::ChannelScale { input, factors } => {
            let c = factors.len();
            let hw = g.len() / (before[input.0].value.shape()[0] * c).max(1);
            if let Some(dx) = grad_slot(before, *input) {
                for (i, (d, &gv)) in dx.iter_mut().zip(g).enumerate() {
                    *d = *d + gv * factors[(i / hw) % c];
                }
            }
        }
        &Op::SpatialSoftmax { input, inv_t } => {
            let (n, _, h, w) = before[input.0].value.dims4("spatial_softmax").expect("validated");
            let hw = h * w;
            let ys = node.value.data();
            if let Some(dx) = grad_slot(before, input) {
                for s in 0..n {
                    let y = &ys[s * hw..(s + 1) * hw];
                    let gs = &g[s * hw..(s + 1) * hw];
                    let dot: E = lit(y.iter().zip(gs).map(|(&a, &b)| (a * b).as_f64()).sum::<f64>());
                    for cell in 0..hw {
                        let d = &mut dx[s * hw + cell];
                        *d = *d + inv_t * y[cell] * (gs[cell] - dot);
                    }
                }
            }
        }
        &Op::ChannelSoftmax { input, inv_t } => {
            let (n, c, h, w) = before[input.0].value.dims4("channel_softmax").expect("validated");
            let hw = h * w;
            let ys = node.value.data();
            if let Some(dx) = grad_slot(before, input) {
                for s in 0..n {
                    let base = s * c * hw;
                    for cell in 0..hw {
                        let mut dot = E::zero();
                        for ch in 0..c {
                            let idx = base + ch * hw + cell;
                            dot = dot + ys[idx] * g[idx];
                        }
                        for ch in 0..c {
                            let idx = base + ch * hw + cell;
                            dx[idx] = dx[idx] + inv_t * ys[idx] * (g[idx] - dot);
                        }
                    }
                }
            }
        }
        Op::Gather { input, cells } => {
            let (_, c, h, w) = before[input.0].value.dims4("gather_cells").expect("validated");
            let hw = h * w;
            if let Some(dx) = grad_slot(before, *input) {
                for (s, &(i, j)) in cells.iter().enumerate() {
                    for ch in 0..c {
                        let d = &mut dx[(s * c + ch) * hw + i * w + j];
                        *d = *d + g[s * c + ch];
                    }
                }
            }
        }
        Op::Bce { pred, targets } => {
            let ps = before[pred.0].value.data().to_vec();
            let (lo, hi) = clamp_bounds::<E>();
            let scale = g[0] / lit(ps.len() as f64);
            if let Some(dp) = grad_slot(before, *pred) {
                for ((d, &p), &t) in dp.iter_mut().zip(&ps).zip(targets) {
                    if p >= lo && p <= hi {
                        let grad = -(t / p - (E::one() - t) / (E::one() - p));
                        *d = *d + scale * grad;
                    }
                }
            }
        }
        Op::Cce { pred, targets } => {
            let shape = before[pred.0].value.shape().to_vec();
            let ps = before[pred.0].value.data().to_vec();
            let (lo, hi) = clamp_bounds::<E>();
            let scale = g[0] / lit(shape[0] as f64);
            if let Some(dp) = grad_slot(before, *pred) {
                for ((d, &p), &t) in dp.iter_mut().zip(&ps).zip(targets) {
                    if t > E::zero() && p >= lo && p <= hi {
                        *d = *d - scale * t / p;
                    }
                }
            }
        }
        Op::WeightedSum { input, weights } => {
            if let Some(dx) = grad_slot(before, *input) {
                for (d, &wv) in dx.iter_mut().zip(weights) {
                    *d = *d + g[0] * wv;
                }
            }
        }
    }
}
