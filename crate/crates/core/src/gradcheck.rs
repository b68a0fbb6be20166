//! Central finite-difference verification of every layer's reverse-mode
//! gradient, plus an end-to-end model check.
//!
//! The probe runs at f64: parameters built at f32 convert exactly, the same
//! generic forward code executes, and central differences with step 1e-3 are
//! compared coordinate-by-coordinate against the tape's gradients.

use crate::error::Result;
use crate::model::{ModelSpec, ModelState, RunOpts};
use crate::rng::RngStream;
use crate::tensor::{ActKind, Conv2dCfg, Graph, Mode, NodeId, Tensor};

pub const FD_STEP: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a.abs() < 1e-6 && b.abs() < 1e-6 {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn sample_coords(numel: usize, want: usize, rng: &mut RngStream) -> Vec<usize> {
    if numel <= want {
        return (0..numel).collect();
    }
    let mut picked = Vec::with_capacity(want);
    while picked.len() < want {
        let c = rng.below(numel);
        if !picked.contains(&c) {
            picked.push(c);
        }
    }
    picked
}

/// Checks `build`'s gradients w.r.t. every input tensor at sampled
/// coordinates. `build` must be deterministic: it is re-invoked for every
/// finite-difference evaluation.
pub fn check_fn<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    coords_per_tensor: usize,
    tolerance: f64,
    seed: u64,
    build: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| graph.leaf(t.clone(), true)).collect();
    let loss_id = build(&mut graph, &ids)?;
    graph.backward(loss_id);
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| {
            graph
                .grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut graph = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| graph.leaf(t.clone(), false)).collect();
        let loss_id = build(&mut graph, &ids)?;
        Ok(graph.scalar(loss_id))
    };

    let mut rng = RngStream::seed(seed).derive(&[0xfd]);
    let mut max_rel_err: f64 = 0.0;
    let mut coords_checked = 0;
    for (ti, tensor) in inputs.iter().enumerate() {
        for ci in sample_coords(tensor.numel(), coords_per_tensor, &mut rng) {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[ci] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[ci] -= FD_STEP;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
            max_rel_err = max_rel_err.max(rel_err(analytic[ti][ci], fd));
            coords_checked += 1;
        }
    }
    Ok(GradCheck {
        name: name.into(),
        max_rel_err,
        coords_checked,
        tolerance,
    })
}

/// Random weights for the scalar readout Σ wᵢ·outᵢ, regenerated
/// deterministically on every evaluation.
fn readout(g: &mut Graph<f64>, out: NodeId) -> Result<NodeId> {
    let n = g.value(out).numel();
    let mut rng = RngStream::seed(0x0u64).derive(&[0x77, n as u64]);
    let weights: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    g.weighted_sum(out, weights)
}

fn rand_tensor(shape: Vec<usize>, rng: &mut RngStream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform_in(-1.0, 1.0))
}

/// Random values kept away from activation kinks at 0.
fn rand_tensor_off_kink(shape: Vec<usize>, rng: &mut RngStream) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        sign * rng.uniform_in(0.05, 1.0)
    })
}

/// Values with a clearly dominating channel/cell so max-selection ties cannot
/// flip inside the finite-difference interval.
fn rand_tensor_separated(shape: Vec<usize>, rng: &mut RngStream) -> Tensor<f64> {
    let c = shape[1];
    let hw: usize = shape[2] * shape[3];
    Tensor::from_fn(shape.clone(), |i| {
        let ch = (i / hw) % c;
        let pix = i % hw;
        let boost = if ch == (pix * 7 + 3) % c { 1.5 } else { 0.0 };
        boost + rng.uniform_in(-0.3, 0.3)
    })
}

/// The per-layer gradient suite. Each entry compares the tape's gradient
/// against central differences on at least 20 coordinates per tensor.
pub fn standard_layer_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = RngStream::seed(seed);
    let coords = 20;
    let mut checks = Vec::new();

    let x = rand_tensor(vec![2, 3, 6, 6], &mut rng);
    let w = rand_tensor(vec![4, 3, 3, 3], &mut rng);
    let b = rand_tensor(vec![4], &mut rng);
    checks.push(check_fn("conv2d", &[x, w, b], coords, 1e-3, seed, |g, ids| {
        let out = g.conv2d(
            ids[0],
            ids[1],
            Some(ids[2]),
            Conv2dCfg {
                stride: 1,
                padding: 1,
                groups: 1,
            },
        )?;
        readout(g, out)
    })?);

    let x = rand_tensor(vec![2, 4, 6, 6], &mut rng);
    let w = rand_tensor(vec![6, 2, 3, 3], &mut rng);
    checks.push(check_fn(
        "conv2d_strided_grouped",
        &[x, w],
        coords,
        1e-3,
        seed,
        |g, ids| {
            let out = g.conv2d(
                ids[0],
                ids[1],
                None,
                Conv2dCfg {
                    stride: 2,
                    padding: 1,
                    groups: 2,
                },
            )?;
            readout(g, out)
        },
    )?);

    let x = rand_tensor(vec![2, 4, 5, 5], &mut rng);
    let w = rand_tensor(vec![4, 1, 3, 3], &mut rng);
    checks.push(check_fn(
        "conv2d_depthwise",
        &[x, w],
        coords,
        1e-3,
        seed,
        |g, ids| {
            let out = g.conv2d(
                ids[0],
                ids[1],
                None,
                Conv2dCfg {
                    stride: 1,
                    padding: 1,
                    groups: 4,
                },
            )?;
            readout(g, out)
        },
    )?);

    let x = rand_tensor(vec![2, 2, 3, 3], &mut rng);
    let gamma = rand_tensor_off_kink(vec![2], &mut rng);
    let beta = rand_tensor(vec![2], &mut rng);
    checks.push(check_fn(
        "batch_norm_train",
        &[x, gamma, beta],
        coords,
        1e-3,
        seed,
        |g, ids| {
            let (out, _) = g.batch_norm(
                ids[0],
                ids[1],
                ids[2],
                Mode::Train,
                &[0.0, 0.0],
                &[1.0, 1.0],
                0.1,
                1e-5,
            )?;
            readout(g, out)
        },
    )?);

    for (name, kind, tol) in [
        ("relu", ActKind::Relu, 1e-4),
        ("relu6", ActKind::Relu6, 1e-4),
        ("silu", ActKind::Silu, 1e-4),
        ("sigmoid", ActKind::Sigmoid, 1e-4),
    ] {
        let x = rand_tensor_off_kink(vec![2, 3, 4, 4], &mut rng);
        checks.push(check_fn(name, &[x], coords, tol, seed, |g, ids| {
            let out = g.activation(ids[0], kind);
            readout(g, out)
        })?);
    }

    let x = rand_tensor(vec![2, 3, 4, 4], &mut rng);
    checks.push(check_fn("global_avg_pool", &[x], coords, 1e-4, seed, |g, ids| {
        let out = g.global_avg_pool(ids[0])?;
        readout(g, out)
    })?);

    let x = rand_tensor_separated(vec![1, 4, 3, 3], &mut rng);
    checks.push(check_fn("channel_pool", &[x], coords, 1e-3, seed, |g, ids| {
        let out = g.channel_pool(ids[0])?;
        readout(g, out)
    })?);

    let x = rand_tensor(vec![3, 5], &mut rng);
    let w = rand_tensor(vec![4, 5], &mut rng);
    let b = rand_tensor(vec![4], &mut rng);
    checks.push(check_fn("linear", &[x, w, b], coords, 1e-4, seed, |g, ids| {
        let out = g.linear(ids[0], ids[1], Some(ids[2]))?;
        readout(g, out)
    })?);

    let x = rand_tensor(vec![2, 3, 4, 4], &mut rng);
    let dropout_rng = RngStream::seed(seed).derive(&[0xd0]);
    checks.push(check_fn("dropout_train", &[x], coords, 1e-4, seed, |g, ids| {
        let mut r = dropout_rng.clone();
        let out = g.dropout(ids[0], 0.3, Mode::Train, &mut r)?;
        readout(g, out)
    })?);

    let x = rand_tensor_separated(vec![1, 2, 6, 6], &mut rng);
    checks.push(check_fn("max_pool2d", &[x], coords, 1e-3, seed, |g, ids| {
        let out = g.max_pool2d(ids[0], 3, 2, 1)?;
        readout(g, out)
    })?);

    let logits = rand_tensor(vec![4, 6], &mut rng);
    let targets = vec![1usize, 4, 0, 5];
    checks.push(check_fn(
        "softmax_cross_entropy",
        &[logits],
        coords,
        1e-4,
        seed,
        move |g, ids| g.softmax_cross_entropy(ids[0], &targets),
    )?);

    let x = rand_tensor(vec![2, 4, 4, 4], &mut rng);
    let w1 = rand_tensor(vec![2, 4], &mut rng);
    let b1 = rand_tensor(vec![2], &mut rng);
    let w2 = rand_tensor(vec![4, 2], &mut rng);
    let b2 = rand_tensor(vec![4], &mut rng);
    checks.push(check_fn(
        "se_block",
        &[x, w1, b1, w2, b2],
        coords,
        1e-3,
        seed,
        |g, ids| {
            let out = crate::attention::se_wire(g, ids[0], ids[1], ids[2], ids[3], ids[4], ActKind::Relu)?;
            readout(g, out)
        },
    )?);

    let x = rand_tensor_separated(vec![2, 3, 5, 5], &mut rng);
    let w = rand_tensor(vec![1, 2, 3, 3], &mut rng);
    let b = rand_tensor(vec![1], &mut rng);
    checks.push(check_fn(
        "spatial_block",
        &[x, w, b],
        coords,
        1e-3,
        seed,
        |g, ids| {
            let out = crate::attention::spatial_wire(g, ids[0], ids[1], ids[2])?;
            readout(g, out)
        },
    )?);

    Ok(checks)
}

/// End-to-end check: random parameters of a built model are perturbed and the
/// training-mode cross-entropy loss is differentiated through the whole net.
pub fn check_model_end_to_end(
    spec: &ModelSpec,
    batch: usize,
    image_size: usize,
    params_to_check: usize,
    coords_per_param: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheck> {
    let state = ModelState::build(spec.clone(), seed)?;
    let params = state.cast_params::<f64>();
    let (bn_mean, bn_var) = state.cast_bn::<f64>();
    let mut rng = RngStream::seed(seed).derive(&[0xe2e]);
    let images = rand_tensor(vec![batch, 3, image_size, image_size], &mut rng);
    let targets: Vec<usize> = (0..batch)
        .map(|_| rng.below(spec.num_classes))
        .collect();
    let forward_rng = RngStream::seed(seed).derive(&[0xf0]);
    let opts = RunOpts {
        mode: Mode::Train,
        want_grads: true,
        bypass_attention: false,
    };

    let run = crate::model::program::run_program(
        state.program(),
        &params,
        &bn_mean,
        &bn_var,
        &images,
        &opts,
        &mut forward_rng.clone(),
    )?;
    let mut graph = run.graph;
    let loss_id = graph.softmax_cross_entropy(run.logits, &targets)?;
    graph.backward(loss_id);
    let analytic: Vec<Vec<f64>> = run
        .param_nodes
        .iter()
        .zip(&params)
        .map(|(&id, p)| {
            graph
                .grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    let eval_opts = RunOpts {
        mode: Mode::Train,
        want_grads: false,
        bypass_attention: false,
    };
    let eval = |params: &[Tensor<f64>]| -> Result<f64> {
        let run = crate::model::program::run_program(
            state.program(),
            params,
            &bn_mean,
            &bn_var,
            &images,
            &eval_opts,
            &mut forward_rng.clone(),
        )?;
        let mut graph = run.graph;
        let loss_id = graph.softmax_cross_entropy(run.logits, &targets)?;
        Ok(graph.scalar(loss_id))
    };

    let mut max_rel_err: f64 = 0.0;
    let mut coords_checked = 0;
    for pi in sample_coords(params.len(), params_to_check, &mut rng) {
        for ci in sample_coords(params[pi].numel(), coords_per_param, &mut rng) {
            let mut plus = params.clone();
            plus[pi].data_mut()[ci] += FD_STEP;
            let mut minus = params.clone();
            minus[pi].data_mut()[ci] -= FD_STEP;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
            max_rel_err = max_rel_err.max(rel_err(analytic[pi][ci], fd));
            coords_checked += 1;
        }
    }
    Ok(GradCheck {
        name: format!("{}_end_to_end", spec.kind.as_str()),
        max_rel_err,
        coords_checked,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_handles_tiny_values() {
        assert_eq!(rel_err(0.0, 1e-9), 0.0);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sample_coords_distinct_and_bounded() {
        let mut rng = RngStream::seed(3);
        let c = sample_coords(100, 20, &mut rng);
        assert_eq!(c.len(), 20);
        let mut d = c.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 20);
        assert!(c.iter().all(|&i| i < 100));
        assert_eq!(sample_coords(5, 20, &mut rng), vec![0, 1, 2, 3, 4]);
    }
}
