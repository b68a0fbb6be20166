//! Reverse-mode tape over the raw kernels.
//!
//! A [`Graph`] records every operation as it executes. `backward` walks the
//! tape in reverse, accumulating gradients for every node that (transitively)
//! depends on a gradient-carrying leaf. Values are immutable once recorded;
//! gradients live in a side table.

use super::kernels::{self, Conv2dCfg};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActKind {
    Relu,
    Relu6,
    Silu,
    Sigmoid,
}

impl ActKind {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        let zero = T::zero();
        match self {
            ActKind::Relu => {
                if x > zero {
                    x
                } else {
                    zero
                }
            }
            ActKind::Relu6 => {
                let six = T::from_f64(6.0);
                if x < zero {
                    zero
                } else if x > six {
                    six
                } else {
                    x
                }
            }
            ActKind::Silu => x * sigmoid(x),
            ActKind::Sigmoid => sigmoid(x),
        }
    }

    fn derivative<T: Scalar>(self, x: T) -> T {
        let zero = T::zero();
        let one = T::one();
        match self {
            ActKind::Relu => {
                if x > zero {
                    one
                } else {
                    zero
                }
            }
            ActKind::Relu6 => {
                if x > zero && x < T::from_f64(6.0) {
                    one
                } else {
                    zero
                }
            }
            ActKind::Silu => {
                let s = sigmoid(x);
                s + x * s * (one - s)
            }
            ActKind::Sigmoid => {
                let s = sigmoid(x);
                s * (one - s)
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Updated running statistics produced by a train-mode batch norm, to be
/// committed to the owning model by the caller.
#[derive(Clone, Debug)]
pub struct BnUpdate<T: Scalar> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum OpRecord<T: Scalar> {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        cfg: Conv2dCfg,
        ishape: [usize; 4],
        wshape: [usize; 4],
    },
    BatchNormTrain {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        ishape: [usize; 4],
        var: Vec<T>,
        xhat: Vec<T>,
        eps: T,
    },
    BatchNormEval {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        ishape: [usize; 4],
        running_mean: Vec<T>,
        running_var: Vec<T>,
        eps: T,
    },
    Activation {
        input: NodeId,
        kind: ActKind,
    },
    Gap {
        input: NodeId,
        ishape: [usize; 4],
    },
    ChannelPool {
        input: NodeId,
        ishape: [usize; 4],
        argmax: Vec<u32>,
    },
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        n: usize,
        d: usize,
        k: usize,
    },
    Dropout {
        input: NodeId,
        mask: Vec<T>,
    },
    MaxPool {
        input: NodeId,
        argmax: Vec<u32>,
        input_len: usize,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    ScaleChannels {
        x: NodeId,
        s: NodeId,
        ishape: [usize; 4],
    },
    ScaleSpatial {
        x: NodeId,
        m: NodeId,
        ishape: [usize; 4],
    },
    SoftmaxXent {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<T>,
        n: usize,
        k: usize,
    },
    WeightedSum {
        input: NodeId,
        weights: Vec<T>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: OpRecord<T>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> NodeId {
        self.push(value, OpRecord::Leaf, needs_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id].value.data()[0]
    }

    fn push(&mut self, value: Tensor<T>, op: OpRecord<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    fn shape4(&self, id: NodeId, what: &str) -> Result<[usize; 4]> {
        let s = self.nodes[id].value.shape();
        if s.len() != 4 {
            return Err(Error::Config(format!(
                "{what} expects a rank-4 NCHW tensor, got shape {s:?}"
            )));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        cfg: Conv2dCfg,
    ) -> Result<NodeId> {
        let ishape = self.shape4(input, "conv2d input")?;
        let wshape = self.shape4(weight, "conv2d weight")?;
        let [n, c, h, w] = ishape;
        let [oc, cg, kh, kw] = wshape;
        if cfg.groups == 0 || cfg.stride == 0 {
            return Err(Error::Config("conv2d stride and groups must be positive".into()));
        }
        if c % cfg.groups != 0 || cg != c / cfg.groups || oc % cfg.groups != 0 {
            return Err(Error::Config(format!(
                "conv2d channel mismatch: input has {c} channels with groups={}, \
                 weight expects {cg} channels per group (weight shape {wshape:?})",
                cfg.groups
            )));
        }
        if h + 2 * cfg.padding < kh || w + 2 * cfg.padding < kw {
            return Err(Error::Config(format!(
                "conv2d kernel {kh}x{kw} exceeds padded input {}x{}",
                h + 2 * cfg.padding,
                w + 2 * cfg.padding
            )));
        }
        if let Some(b) = bias {
            let bs = self.nodes[b].value.shape();
            if bs != [oc] {
                return Err(Error::Config(format!(
                    "conv2d bias shape {bs:?} does not match {oc} output channels"
                )));
            }
        }
        let out = kernels::conv2d_forward(
            self.nodes[input].value.data(),
            ishape,
            self.nodes[weight].value.data(),
            wshape,
            bias.map(|b| self.nodes[b].value.data()),
            cfg,
        );
        let oh = kernels::conv_out_dim(h, cfg.padding, kh, cfg.stride);
        let ow = kernels::conv_out_dim(w, cfg.padding, kw, cfg.stride);
        let needs = self.needs(input)
            || self.needs(weight)
            || bias.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(
            Tensor::new(vec![n, oc, oh, ow], out)?,
            OpRecord::Conv2d {
                input,
                weight,
                bias,
                cfg,
                ishape,
                wshape,
            },
            needs,
        ))
    }

    /// Train mode normalizes with batch statistics and reports the updated
    /// running stats; eval mode consumes the running stats as constants.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: Mode,
        running_mean: &[T],
        running_var: &[T],
        momentum: T,
        eps: T,
    ) -> Result<(NodeId, Option<BnUpdate<T>>)> {
        let ishape = self.shape4(input, "batch_norm input")?;
        let c = ishape[1];
        for (name, len) in [
            ("gamma", self.nodes[gamma].value.numel()),
            ("beta", self.nodes[beta].value.numel()),
            ("running_mean", running_mean.len()),
            ("running_var", running_var.len()),
        ] {
            if len != c {
                return Err(Error::Config(format!(
                    "batch_norm {name} has length {len}, input has {c} channels"
                )));
            }
        }
        let needs = self.needs(input) || self.needs(gamma) || self.needs(beta);
        match mode {
            Mode::Train => {
                let (out, mean, var, xhat) = kernels::batch_norm_train_forward(
                    self.nodes[input].value.data(),
                    ishape,
                    self.nodes[gamma].value.data(),
                    self.nodes[beta].value.data(),
                    eps,
                );
                let m = (ishape[0] * ishape[2] * ishape[3]) as f64;
                let unbias = if m > 1.0 {
                    T::from_f64(m / (m - 1.0))
                } else {
                    T::one()
                };
                let one_m = T::one() - momentum;
                let update = BnUpdate {
                    mean: running_mean
                        .iter()
                        .zip(&mean)
                        .map(|(&rm, &bm)| one_m * rm + momentum * bm)
                        .collect(),
                    var: running_var
                        .iter()
                        .zip(&var)
                        .map(|(&rv, &bv)| one_m * rv + momentum * bv * unbias)
                        .collect(),
                };
                let id = self.push(
                    Tensor::new(ishape.to_vec(), out)?,
                    OpRecord::BatchNormTrain {
                        input,
                        gamma,
                        beta,
                        ishape,
                        var,
                        xhat,
                        eps,
                    },
                    needs,
                );
                Ok((id, Some(update)))
            }
            Mode::Eval => {
                let out = kernels::batch_norm_eval_forward(
                    self.nodes[input].value.data(),
                    ishape,
                    self.nodes[gamma].value.data(),
                    self.nodes[beta].value.data(),
                    running_mean,
                    running_var,
                    eps,
                );
                let id = self.push(
                    Tensor::new(ishape.to_vec(), out)?,
                    OpRecord::BatchNormEval {
                        input,
                        gamma,
                        beta,
                        ishape,
                        running_mean: running_mean.to_vec(),
                        running_var: running_var.to_vec(),
                        eps,
                    },
                    needs,
                );
                Ok((id, None))
            }
        }
    }

    pub fn activation(&mut self, input: NodeId, kind: ActKind) -> NodeId {
        let data: Vec<T> = self.nodes[input]
            .value
            .data()
            .iter()
            .map(|&x| kind.apply(x))
            .collect();
        let shape = self.nodes[input].value.shape().to_vec();
        let needs = self.needs(input);
        let value = Tensor::new(shape, data).expect("activation preserves shape");
        self.push(value, OpRecord::Activation { input, kind }, needs)
    }

    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let ishape = self.shape4(input, "global_avg_pool input")?;
        let out = kernels::global_avg_pool_forward(self.nodes[input].value.data(), ishape);
        let needs = self.needs(input);
        Ok(self.push(
            Tensor::new(vec![ishape[0], ishape[1]], out)?,
            OpRecord::Gap { input, ishape },
            needs,
        ))
    }

    pub fn channel_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let ishape = self.shape4(input, "channel_pool input")?;
        let (out, argmax) =
            kernels::channel_pool_forward(self.nodes[input].value.data(), ishape);
        let needs = self.needs(input);
        Ok(self.push(
            Tensor::new(vec![ishape[0], 2, ishape[2], ishape[3]], out)?,
            OpRecord::ChannelPool {
                input,
                ishape,
                argmax,
            },
            needs,
        ))
    }

    pub fn linear(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    ) -> Result<NodeId> {
        let is = self.nodes[input].value.shape().to_vec();
        let ws = self.nodes[weight].value.shape().to_vec();
        if is.len() != 2 || ws.len() != 2 || is[1] != ws[1] {
            return Err(Error::Config(format!(
                "linear expects input N×D and weight K×D, got {is:?} and {ws:?}"
            )));
        }
        let (n, d, k) = (is[0], is[1], ws[0]);
        if let Some(b) = bias {
            if self.nodes[b].value.shape() != [k] {
                return Err(Error::Config(format!(
                    "linear bias shape {:?} does not match {k} outputs",
                    self.nodes[b].value.shape()
                )));
            }
        }
        let out = kernels::linear_forward(
            self.nodes[input].value.data(),
            n,
            d,
            self.nodes[weight].value.data(),
            k,
            bias.map(|b| self.nodes[b].value.data()),
        );
        let needs = self.needs(input)
            || self.needs(weight)
            || bias.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(
            Tensor::new(vec![n, k], out)?,
            OpRecord::Linear {
                input,
                weight,
                bias,
                n,
                d,
                k,
            },
            needs,
        ))
    }

    /// Inverted dropout: identity in eval mode, zero-and-rescale in train mode.
    pub fn dropout(
        &mut self,
        input: NodeId,
        p: f64,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability must be in [0, 1), got {p}"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            let value = self.nodes[input].value.clone();
            let needs = self.needs(input);
            // Identity mask keeps the backward path uniform.
            let mask = vec![T::one(); value.numel()];
            return Ok(self.push(value, OpRecord::Dropout { input, mask }, needs));
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.nodes[input].value.numel())
            .map(|_| {
                if rng.uniform() < p {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let data: Vec<T> = self.nodes[input]
            .value
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let shape = self.nodes[input].value.shape().to_vec();
        let needs = self.needs(input);
        Ok(self.push(
            Tensor::new(shape, data)?,
            OpRecord::Dropout { input, mask },
            needs,
        ))
    }

    pub fn max_pool2d(
        &mut self,
        input: NodeId,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let ishape = self.shape4(input, "max_pool2d input")?;
        if kernel == 0 || stride == 0 {
            return Err(Error::Config("max_pool2d kernel and stride must be positive".into()));
        }
        if ishape[2] + 2 * padding < kernel || ishape[3] + 2 * padding < kernel {
            return Err(Error::Config(format!(
                "max_pool2d kernel {kernel} exceeds padded input {}x{}",
                ishape[2] + 2 * padding,
                ishape[3] + 2 * padding
            )));
        }
        let (out, argmax, oshape) = kernels::max_pool2d_forward(
            self.nodes[input].value.data(),
            ishape,
            kernel,
            stride,
            padding,
        );
        let input_len = self.nodes[input].value.numel();
        let needs = self.needs(input);
        Ok(self.push(
            Tensor::new(oshape.to_vec(), out)?,
            OpRecord::MaxPool {
                input,
                argmax,
                input_len,
            },
            needs,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].value.shape() != self.nodes[b].value.shape() {
            return Err(Error::Config(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.nodes[a].value.shape(),
                self.nodes[b].value.shape()
            )));
        }
        let data: Vec<T> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, OpRecord::Add { a, b }, needs))
    }

    /// x[n,c,h,w] · s[n,c] with the gate broadcast over the spatial plane.
    pub fn scale_channels(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let ishape = self.shape4(x, "scale_channels input")?;
        let ss = self.nodes[s].value.shape();
        if ss != [ishape[0], ishape[1]] {
            return Err(Error::Config(format!(
                "scale_channels gate shape {:?} does not match input {:?}",
                ss,
                self.nodes[x].value.shape()
            )));
        }
        let [n, c, h, w] = ishape;
        let hw = h * w;
        let xv = self.nodes[x].value.data();
        let sv = self.nodes[s].value.data();
        let mut out = vec![T::zero(); xv.len()];
        for ni in 0..n {
            for ch in 0..c {
                let g = sv[ni * c + ch];
                let base = (ni * c + ch) * hw;
                for i in 0..hw {
                    out[base + i] = xv[base + i] * g;
                }
            }
        }
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(
            Tensor::new(ishape.to_vec(), out)?,
            OpRecord::ScaleChannels { x, s, ishape },
            needs,
        ))
    }

    /// x[n,c,h,w] · m[n,0,h,w] with the map broadcast over channels.
    pub fn scale_spatial(&mut self, x: NodeId, m: NodeId) -> Result<NodeId> {
        let ishape = self.shape4(x, "scale_spatial input")?;
        let ms = self.nodes[m].value.shape();
        if ms != [ishape[0], 1, ishape[2], ishape[3]] {
            return Err(Error::Config(format!(
                "scale_spatial map shape {ms:?} does not match input {:?}",
                self.nodes[x].value.shape()
            )));
        }
        let [n, c, h, w] = ishape;
        let hw = h * w;
        let xv = self.nodes[x].value.data();
        let mv = self.nodes[m].value.data();
        let mut out = vec![T::zero(); xv.len()];
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * hw;
                for i in 0..hw {
                    out[base + i] = xv[base + i] * mv[ni * hw + i];
                }
            }
        }
        let needs = self.needs(x) || self.needs(m);
        Ok(self.push(
            Tensor::new(ishape.to_vec(), out)?,
            OpRecord::ScaleSpatial { x, m, ishape },
            needs,
        ))
    }

    /// Scalar mean cross-entropy over the batch.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let ls = self.nodes[logits].value.shape().to_vec();
        if ls.len() != 2 {
            return Err(Error::Config(format!(
                "softmax_cross_entropy expects N×K logits, got {ls:?}"
            )));
        }
        let (n, k) = (ls[0], ls[1]);
        if targets.len() != n {
            return Err(Error::Input(format!(
                "got {} targets for {n} logit rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Input(format!(
                "target class {bad} out of range for {k} classes"
            )));
        }
        let (loss, probs) =
            kernels::softmax_cross_entropy_forward(self.nodes[logits].value.data(), n, k, targets);
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::new(vec![1], vec![loss])?,
            OpRecord::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
                n,
                k,
            },
            needs,
        ))
    }

    /// Scalar Σᵢ wᵢ·xᵢ; the gradient-check harness uses this to give every
    /// output coordinate a distinct upstream gradient.
    pub fn weighted_sum(&mut self, input: NodeId, weights: Vec<T>) -> Result<NodeId> {
        if weights.len() != self.nodes[input].value.numel() {
            return Err(Error::Config(format!(
                "weighted_sum got {} weights for {} elements",
                weights.len(),
                self.nodes[input].value.numel()
            )));
        }
        let mut acc = T::zero();
        for (&x, &w) in self.nodes[input].value.data().iter().zip(&weights) {
            acc += x * w;
        }
        let needs = self.needs(input);
        Ok(self.push(
            Tensor::new(vec![1], vec![acc])?,
            OpRecord::WeightedSum { input, weights },
            needs,
        ))
    }

    /// Reverse pass from `root`, which must be a scalar node.
    pub fn backward(&mut self, root: NodeId) {
        assert_eq!(
            self.nodes[root].value.numel(),
            1,
            "backward root must be scalar"
        );
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[root] = Some(vec![T::one()]);

        for i in (0..=root).rev() {
            let Some(upstream) = self.grads[i].take() else {
                continue;
            };
            if !self.nodes[i].needs_grad {
                self.grads[i] = Some(upstream);
                continue;
            }
            self.apply_backward(i, &upstream);
            self.grads[i] = Some(upstream);
        }
    }

    fn accum(&mut self, id: NodeId, contribution: Vec<T>) {
        if !self.nodes[id].needs_grad {
            return;
        }
        match &mut self.grads[id] {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(&contribution) {
                    *a += *b;
                }
            }
            slot => *slot = Some(contribution),
        }
    }

    fn apply_backward(&mut self, i: NodeId, upstream: &[T]) {
        match &self.nodes[i].op {
            OpRecord::Leaf => {}
            OpRecord::Conv2d {
                input,
                weight,
                bias,
                cfg,
                ishape,
                wshape,
            } => {
                let (input, weight, bias, cfg, ishape, wshape) =
                    (*input, *weight, *bias, *cfg, *ishape, *wshape);
                let (dinput, dweight, dbias) = kernels::conv2d_backward(
                    self.nodes[input].value.data(),
                    ishape,
                    self.nodes[weight].value.data(),
                    wshape,
                    bias.is_some(),
                    cfg,
                    upstream,
                );
                self.accum(input, dinput);
                self.accum(weight, dweight);
                if let (Some(b), Some(db)) = (bias, dbias) {
                    self.accum(b, db);
                }
            }
            OpRecord::BatchNormTrain {
                input,
                gamma,
                beta,
                ishape,
                var,
                xhat,
                eps,
            } => {
                let (input, gamma_id, beta_id, ishape, eps) = (*input, *gamma, *beta, *ishape, *eps);
                let (dinput, dgamma, dbeta) = kernels::batch_norm_train_backward(
                    ishape,
                    self.nodes[gamma_id].value.data(),
                    var,
                    xhat,
                    eps,
                    upstream,
                );
                self.accum(input, dinput);
                self.accum(gamma_id, dgamma);
                self.accum(beta_id, dbeta);
            }
            OpRecord::BatchNormEval {
                input,
                gamma,
                beta,
                ishape,
                running_mean,
                running_var,
                eps,
            } => {
                let (input, gamma_id, beta_id, ishape, eps) = (*input, *gamma, *beta, *ishape, *eps);
                let [n, c, h, w] = ishape;
                let dinput = kernels::batch_norm_eval_backward(
                    ishape,
                    self.nodes[gamma_id].value.data(),
                    running_var,
                    eps,
                    upstream,
                );
                // dgamma needs the eval-mode normalized input.
                let xv = self.nodes[input].value.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for ni in 0..n {
                    for ch in 0..c {
                        let inv_std = (running_var[ch] + eps).sqrt().recip();
                        let base = ((ni * c + ch) * h) * w;
                        for idx in 0..h * w {
                            let dy = upstream[base + idx];
                            dgamma[ch] += dy * (xv[base + idx] - running_mean[ch]) * inv_std;
                            dbeta[ch] += dy;
                        }
                    }
                }
                self.accum(input, dinput);
                self.accum(gamma_id, dgamma);
                self.accum(beta_id, dbeta);
            }
            OpRecord::Activation { input, kind } => {
                let (input, kind) = (*input, *kind);
                let d: Vec<T> = self.nodes[input]
                    .value
                    .data()
                    .iter()
                    .zip(upstream)
                    .map(|(&x, &g)| g * kind.derivative(x))
                    .collect();
                self.accum(input, d);
            }
            OpRecord::Gap { input, ishape } => {
                let (input, ishape) = (*input, *ishape);
                let d = kernels::global_avg_pool_backward(ishape, upstream);
                self.accum(input, d);
            }
            OpRecord::ChannelPool {
                input,
                ishape,
                argmax,
            } => {
                let d = kernels::channel_pool_backward(*ishape, argmax, upstream);
                self.accum(*input, d);
            }
            OpRecord::Linear {
                input,
                weight,
                bias,
                n,
                d,
                k,
            } => {
                let (input, weight, bias, n, d, k) = (*input, *weight, *bias, *n, *d, *k);
                let (dinput, dweight, dbias) = kernels::linear_backward(
                    self.nodes[input].value.data(),
                    n,
                    d,
                    self.nodes[weight].value.data(),
                    k,
                    bias.is_some(),
                    upstream,
                );
                self.accum(input, dinput);
                self.accum(weight, dweight);
                if let (Some(b), Some(db)) = (bias, dbias) {
                    self.accum(b, db);
                }
            }
            OpRecord::Dropout { input, mask } => {
                let d: Vec<T> = mask.iter().zip(upstream).map(|(&m, &g)| m * g).collect();
                self.accum(*input, d);
            }
            OpRecord::MaxPool {
                input,
                argmax,
                input_len,
            } => {
                let d = kernels::max_pool2d_backward(*input_len, argmax, upstream);
                self.accum(*input, d);
            }
            OpRecord::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accum(a, upstream.to_vec());
                self.accum(b, upstream.to_vec());
            }
            OpRecord::ScaleChannels { x, s, ishape } => {
                let (x, s, [n, c, h, w]) = (*x, *s, *ishape);
                let hw = h * w;
                let xv = self.nodes[x].value.data();
                let sv = self.nodes[s].value.data();
                let mut dx = vec![T::zero(); xv.len()];
                let mut ds = vec![T::zero(); n * c];
                for ni in 0..n {
                    for ch in 0..c {
                        let g = sv[ni * c + ch];
                        let base = (ni * c + ch) * hw;
                        let mut acc = T::zero();
                        for idx in 0..hw {
                            dx[base + idx] = upstream[base + idx] * g;
                            acc += upstream[base + idx] * xv[base + idx];
                        }
                        ds[ni * c + ch] = acc;
                    }
                }
                self.accum(x, dx);
                self.accum(s, ds);
            }
            OpRecord::ScaleSpatial { x, m, ishape } => {
                let (x, m, [n, c, h, w]) = (*x, *m, *ishape);
                let hw = h * w;
                let xv = self.nodes[x].value.data();
                let mv = self.nodes[m].value.data();
                let mut dx = vec![T::zero(); xv.len()];
                let mut dm = vec![T::zero(); n * hw];
                for ni in 0..n {
                    for ch in 0..c {
                        let base = (ni * c + ch) * hw;
                        for idx in 0..hw {
                            dx[base + idx] = upstream[base + idx] * mv[ni * hw + idx];
                            dm[ni * hw + idx] += upstream[base + idx] * xv[base + idx];
                        }
                    }
                }
                self.accum(x, dx);
                self.accum(m, dm);
            }
            OpRecord::SoftmaxXent {
                logits,
                targets,
                probs,
                n,
                k,
            } => {
                let (logits, n, k) = (*logits, *n, *k);
                let d =
                    kernels::softmax_cross_entropy_backward(probs, n, k, targets, upstream[0]);
                self.accum(logits, d);
            }
            OpRecord::WeightedSum { input, weights } => {
                let g0 = upstream[0];
                let d: Vec<T> = weights.iter().map(|&w| w * g0).collect();
                self.accum(*input, d);
            }
        }
    }
}
