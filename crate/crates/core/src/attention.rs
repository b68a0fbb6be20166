//! Squeeze-and-excitation channel attention and the spatial attention block.
//!
//! Both are differentiable gates: they squeeze the input into a descriptor
//! (channel vector or 2-channel spatial map), pass it through a small learned
//! transform and a sigmoid, and multiply the input by the resulting gate. The
//! `wire` functions are the single source of truth for the math; the model
//! assembly and the standalone forward paths both go through them.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{ActKind, Conv2dCfg, Graph, NodeId, Scalar, Tensor};

/// Uniform Kaiming-style fan-in initializer used across the crate.
pub(crate) fn kaiming_uniform<T: Scalar>(
    shape: Vec<usize>,
    fan_in: usize,
    rng: &mut RngStream,
) -> Tensor<T> {
    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.uniform_in(-limit, limit)))
}

/// Channel attention: `s = σ(W2·act(W1·GAP(x)))`, output `x ⊙ s`.
#[derive(Clone, Debug)]
pub struct SeBlock<T: Scalar = f32> {
    pub channels: usize,
    pub reduction: usize,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

/// Bottleneck width: `max(1, C / r)` so tiny test presets stay valid.
pub fn se_hidden(channels: usize, reduction: usize) -> usize {
    (channels / reduction).max(1)
}

impl<T: Scalar> SeBlock<T> {
    pub fn init(channels: usize, reduction: usize, rng: &mut RngStream) -> Result<Self> {
        if channels == 0 || reduction == 0 {
            return Err(Error::Config(
                "SE block needs positive channels and reduction".into(),
            ));
        }
        let hidden = se_hidden(channels, reduction);
        Ok(SeBlock {
            channels,
            reduction,
            w1: kaiming_uniform(vec![hidden, channels], channels, rng),
            b1: Tensor::zeros(vec![hidden]),
            w2: kaiming_uniform(vec![channels, hidden], hidden, rng),
            b2: Tensor::zeros(vec![channels]),
        })
    }

    pub fn hidden(&self) -> usize {
        se_hidden(self.channels, self.reduction)
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden();
        h * self.channels + h + self.channels * h + self.channels
    }

    /// Standalone forward through a scratch graph.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xid = g.leaf(x.clone(), false);
        let w1 = g.leaf(self.w1.clone(), false);
        let b1 = g.leaf(self.b1.clone(), false);
        let w2 = g.leaf(self.w2.clone(), false);
        let b2 = g.leaf(self.b2.clone(), false);
        let out = se_wire(&mut g, xid, w1, b1, w2, b2, ActKind::Relu)?;
        Ok(g.value(out).clone())
    }

    /// The per-channel gate values, shape N×C, each strictly in (0,1).
    pub fn gate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xid = g.leaf(x.clone(), false);
        let w1 = g.leaf(self.w1.clone(), false);
        let b1 = g.leaf(self.b1.clone(), false);
        let w2 = g.leaf(self.w2.clone(), false);
        let b2 = g.leaf(self.b2.clone(), false);
        let gate = se_gate_wire(&mut g, xid, w1, b1, w2, b2, ActKind::Relu)?;
        Ok(g.value(gate).clone())
    }
}

/// Builds the SE gate vector (N×C) on `g`.
pub fn se_gate_wire<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
    act: ActKind,
) -> Result<NodeId> {
    let c = g.value(x).shape()[1];
    let w1_cols = g.value(w1).shape()[1];
    if w1_cols != c {
        return Err(Error::Config(format!(
            "SE block built for {w1_cols} channels applied to {c}-channel input"
        )));
    }
    let z = g.global_avg_pool(x)?;
    let h = g.linear(z, w1, Some(b1))?;
    let h = g.activation(h, act);
    let s = g.linear(h, w2, Some(b2))?;
    Ok(g.activation(s, ActKind::Sigmoid))
}

/// Full SE attention: gate then per-channel multiply.
pub fn se_wire<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
    act: ActKind,
) -> Result<NodeId> {
    let s = se_gate_wire(g, x, w1, b1, w2, b2, act)?;
    g.scale_channels(x, s)
}

/// Spatial attention: `M = σ(conv_k(channel_pool(x)))`, output `x ⊙ M`.
#[derive(Clone, Debug)]
pub struct SpatialAttentionBlock<T: Scalar = f32> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> SpatialAttentionBlock<T> {
    pub fn init(kernel_size: usize, rng: &mut RngStream) -> Result<Self> {
        if kernel_size % 2 == 0 || kernel_size == 0 {
            return Err(Error::Config(format!(
                "spatial attention kernel must be odd, got {kernel_size}"
            )));
        }
        Ok(SpatialAttentionBlock {
            kernel: kaiming_uniform(
                vec![1, 2, kernel_size, kernel_size],
                2 * kernel_size * kernel_size,
                rng,
            ),
            bias: Tensor::zeros(vec![1]),
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn param_count(&self) -> usize {
        self.kernel.numel() + 1
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xid = g.leaf(x.clone(), false);
        let w = g.leaf(self.kernel.clone(), false);
        let b = g.leaf(self.bias.clone(), false);
        let out = spatial_wire(&mut g, xid, w, b)?;
        Ok(g.value(out).clone())
    }

    /// The attention map M, shape N×1×H×W, entries strictly in (0,1).
    pub fn attention_map(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xid = g.leaf(x.clone(), false);
        let w = g.leaf(self.kernel.clone(), false);
        let b = g.leaf(self.bias.clone(), false);
        let m = spatial_map_wire(&mut g, xid, w, b)?;
        Ok(g.value(m).clone())
    }
}

/// Builds the spatial map (N×1×H×W) on `g`. Padding (k−1)/2 keeps the map
/// aligned pixelwise with the input.
pub fn spatial_map_wire<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    kernel: NodeId,
    bias: NodeId,
) -> Result<NodeId> {
    let k = g.value(kernel).shape()[2];
    let pooled = g.channel_pool(x)?;
    let conv = g.conv2d(
        pooled,
        kernel,
        Some(bias),
        Conv2dCfg {
            stride: 1,
            padding: (k - 1) / 2,
            groups: 1,
        },
    )?;
    Ok(g.activation(conv, ActKind::Sigmoid))
}

pub fn spatial_wire<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    kernel: NodeId,
    bias: NodeId,
) -> Result<NodeId> {
    let m = spatial_map_wire(g, x, kernel, bias)?;
    g.scale_spatial(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn se_zero_w2_halves_input() {
        // w2 = 0, b2 = 0 → every gate is σ(0) = 0.5.
        let mut rng = RngStream::seed(0);
        let mut block: SeBlock<f32> = SeBlock::init(4, 2, &mut rng).unwrap();
        block.w2 = Tensor::zeros(vec![4, 2]);
        block.b2 = Tensor::zeros(vec![4]);
        let x = Tensor::from_fn(vec![2, 4, 3, 3], |i| i as f32 * 0.1 - 2.0);
        let y = block.forward(&x).unwrap();
        for (xi, yi) in x.data().iter().zip(y.data()) {
            assert_eq!(*yi, 0.5 * xi);
        }
    }

    #[test]
    fn se_scalar_hand_computation() {
        // C=2, r=2, H=W=1, x=[4,2], w1=[1,1], w2=[1,1]ᵀ: gate = σ(6) per channel.
        let mut block: SeBlock<f64> = SeBlock {
            channels: 2,
            reduction: 2,
            w1: Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap(),
            b1: Tensor::zeros(vec![1]),
            w2: Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap(),
            b2: Tensor::zeros(vec![2]),
        };
        assert_eq!(block.hidden(), 1);
        let x = Tensor::new(vec![1, 2, 1, 1], vec![4.0, 2.0]).unwrap();
        let y = block.forward(&x).unwrap();
        let s = sigmoid(6.0);
        assert!((y.data()[0] - 4.0 * s).abs() < 1e-12);
        assert!((y.data()[1] - 2.0 * s).abs() < 1e-12);
        assert!((y.data()[0] - 3.9901).abs() < 1e-4);
        assert!((y.data()[1] - 1.9951).abs() < 1e-4);
        block.b2 = Tensor::new(vec![2], vec![0.5, 0.0]).unwrap();
        let g = block.gate(&x).unwrap();
        assert!((g.data()[0] - sigmoid(6.5)).abs() < 1e-12);
    }

    #[test]
    fn se_b0_parameter_count() {
        let mut rng = RngStream::seed(1);
        let block: SeBlock<f32> = SeBlock::init(1280, 16, &mut rng).unwrap();
        assert_eq!(block.hidden(), 80);
        assert_eq!(block.param_count(), 206_160);
    }

    #[test]
    fn se_hidden_floors_at_one() {
        assert_eq!(se_hidden(3, 16), 1);
        assert_eq!(se_hidden(1280, 16), 80);
    }

    #[test]
    fn spatial_zero_kernel_halves_input() {
        let mut rng = RngStream::seed(2);
        let mut block: SpatialAttentionBlock<f32> =
            SpatialAttentionBlock::init(7, &mut rng).unwrap();
        block.kernel = Tensor::zeros(vec![1, 2, 7, 7]);
        let x = Tensor::from_fn(vec![1, 3, 8, 8], |i| (i as f32).sin());
        let y = block.forward(&x).unwrap();
        for (xi, yi) in x.data().iter().zip(y.data()) {
            assert_eq!(*yi, 0.5 * xi);
        }
    }

    #[test]
    fn spatial_constant_input_uniform_interior_response() {
        // Constant input c: pooled maps are ≡ c, so interior pixels (full
        // kernel support) see M = σ(c·Σkernel + bias).
        let mut rng = RngStream::seed(3);
        let block: SpatialAttentionBlock<f64> = SpatialAttentionBlock::init(7, &mut rng).unwrap();
        let c = 0.37;
        let x = Tensor::full(vec![1, 5, 12, 12], c);
        let m = block.attention_map(&x).unwrap();
        let ksum: f64 = block.kernel.data().iter().sum();
        let expected = sigmoid(c * ksum + block.bias.data()[0]);
        // Interior = at least 3 pixels from every border for a 7×7 kernel.
        for y in 3..9 {
            for xpix in 3..9 {
                let got = m.data()[y * 12 + xpix];
                assert!(
                    (got - expected).abs() < 1e-12,
                    "pixel ({y},{xpix}): {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn spatial_param_count_is_99() {
        let mut rng = RngStream::seed(4);
        let block: SpatialAttentionBlock<f32> = SpatialAttentionBlock::init(7, &mut rng).unwrap();
        assert_eq!(block.param_count(), 99);
    }

    #[test]
    fn spatial_preserves_shapes() {
        let mut rng = RngStream::seed(5);
        let block: SpatialAttentionBlock<f32> = SpatialAttentionBlock::init(7, &mut rng).unwrap();
        let x = Tensor::from_fn(vec![2, 1280, 7, 7], |i| (i % 17) as f32 * 0.05);
        let y = block.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 1280, 7, 7]);
        let m = block.attention_map(&x).unwrap();
        assert_eq!(m.shape(), &[2, 1, 7, 7]);
        assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn attention_is_a_contraction() {
        let mut rng = RngStream::seed(6);
        let se: SeBlock<f32> = SeBlock::init(6, 4, &mut rng).unwrap();
        let sp: SpatialAttentionBlock<f32> = SpatialAttentionBlock::init(3, &mut rng).unwrap();
        let x = Tensor::from_fn(vec![2, 6, 5, 5], |i| ((i * 31 % 97) as f32 - 48.0) * 0.1);
        for y in [se.forward(&x).unwrap(), sp.forward(&x).unwrap()] {
            assert_eq!(y.shape(), x.shape());
            for (xi, yi) in x.data().iter().zip(y.data()) {
                assert!(yi.abs() <= xi.abs() + 1e-7);
            }
        }
    }

    #[test]
    fn se_gate_monotone_in_b2() {
        let mut rng = RngStream::seed(7);
        let mut block: SeBlock<f32> = SeBlock::init(5, 2, &mut rng).unwrap();
        let x = Tensor::from_fn(vec![3, 5, 4, 4], |i| ((i * 7 % 13) as f32 - 6.0) * 0.3);
        let before = block.gate(&x).unwrap();
        for ch in 0..5 {
            let mut bumped = block.clone();
            bumped.b2.data_mut()[ch] += 0.5;
            let after = bumped.gate(&x).unwrap();
            for n in 0..3 {
                let idx = n * 5 + ch;
                assert!(after.data()[idx] >= before.data()[idx]);
            }
        }
        let _ = &mut block;
    }
}
