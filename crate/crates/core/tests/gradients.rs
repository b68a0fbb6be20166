//! Finite-difference verification of every layer and a tiny end-to-end model,
//! plus independent naive-loop oracles for the structured ops.

use efficientsign::gradcheck::{check_model_end_to_end, standard_layer_checks};
use efficientsign::model::ModelSpec;
use efficientsign::rng::RngStream;
use efficientsign::tensor::{Conv2dCfg, Graph, Tensor};

#[test]
fn every_layer_matches_finite_differences() {
    let checks = standard_layer_checks(42).expect("suite builds");
    let mut failed = Vec::new();
    for c in &checks {
        println!(
            "[{}] {:<24} max_rel_err {:.3e} (tol {:.0e}, {} coords)",
            if c.passed() { "pass" } else { "FAIL" },
            c.name,
            c.max_rel_err,
            c.tolerance,
            c.coords_checked
        );
        assert!(c.coords_checked >= 20, "{} checked too few coords", c.name);
        if !c.passed() {
            failed.push(c.name.clone());
        }
    }
    assert!(failed.is_empty(), "layers failing gradient check: {failed:?}");
}

#[test]
fn tiny_model_end_to_end_matches_finite_differences() {
    let spec = ModelSpec::efficientsign("tiny", 8).unwrap();
    let check = check_model_end_to_end(&spec, 2, 32, 5, 4, 1e-3, 42).unwrap();
    println!(
        "[{}] {:<24} max_rel_err {:.3e} ({} coords)",
        if check.passed() { "pass" } else { "FAIL" },
        check.name,
        check.max_rel_err,
        check.coords_checked
    );
    assert!(check.coords_checked >= 20);
    assert!(check.passed(), "end-to-end max rel err {}", check.max_rel_err);
}

/// The most naive possible convolution: loops over every output coordinate
/// and kernel cell, no reuse of the production kernels.
#[allow(clippy::too_many_arguments)]
fn naive_conv2d(
    input: &[f32],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &[f32],
    (oc, cg, kh, kw): (usize, usize, usize, usize),
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Vec<f32> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0f32; n * oc * oh * ow];
    for ni in 0..n {
        for o in 0..oc {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    let group = o / (oc / groups);
                    for ic in 0..cg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (x * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let cin = group * cg + ic;
                                acc += input
                                    [((ni * c + cin) * h + iy as usize) * w + ix as usize]
                                    * weight[((o * cg + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((ni * oc + o) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_naive_loop_oracle() {
    let mut rng = RngStream::seed(8);
    let input = Tensor::<f32>::from_fn(vec![2, 3, 8, 8], |_| rng.uniform_in(-1.0, 1.0) as f32);
    let weight = Tensor::<f32>::from_fn(vec![5, 3, 3, 3], |_| rng.uniform_in(-1.0, 1.0) as f32);
    let bias = Tensor::<f32>::from_fn(vec![5], |_| rng.uniform_in(-1.0, 1.0) as f32);

    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
        let mut g = Graph::new();
        let x = g.leaf(input.clone(), false);
        let w = g.leaf(weight.clone(), false);
        let b = g.leaf(bias.clone(), false);
        let out = g
            .conv2d(x, w, Some(b), Conv2dCfg { stride, padding: pad, groups: 1 })
            .unwrap();
        let expect = naive_conv2d(
            input.data(),
            (2, 3, 8, 8),
            weight.data(),
            (5, 3, 3, 3),
            Some(bias.data()),
            stride,
            pad,
            1,
        );
        for (a, e) in g.value(out).data().iter().zip(&expect) {
            assert!((a - e).abs() <= 1e-5, "stride {stride} pad {pad}: {a} vs {e}");
        }
    }
}

#[test]
fn depthwise_conv_matches_naive_loop_oracle() {
    let mut rng = RngStream::seed(9);
    let input = Tensor::<f32>::from_fn(vec![2, 4, 6, 6], |_| rng.uniform_in(-1.0, 1.0) as f32);
    let weight = Tensor::<f32>::from_fn(vec![4, 1, 3, 3], |_| rng.uniform_in(-1.0, 1.0) as f32);
    let mut g = Graph::new();
    let x = g.leaf(input.clone(), false);
    let w = g.leaf(weight.clone(), false);
    let out = g
        .conv2d(x, w, None, Conv2dCfg { stride: 2, padding: 1, groups: 4 })
        .unwrap();
    let expect = naive_conv2d(
        input.data(),
        (2, 4, 6, 6),
        weight.data(),
        (4, 1, 3, 3),
        None,
        2,
        1,
        4,
    );
    for (a, e) in g.value(out).data().iter().zip(&expect) {
        assert!((a - e).abs() <= 1e-5);
    }
}

#[test]
fn channel_pool_matches_naive_per_pixel_oracle() {
    let mut rng = RngStream::seed(10);
    let input = Tensor::<f32>::from_fn(vec![1, 4, 3, 3], |_| rng.uniform_in(-2.0, 2.0) as f32);
    let mut g = Graph::new();
    let x = g.leaf(input.clone(), false);
    let out = g.channel_pool(x).unwrap();
    let (c, hw) = (4, 9);
    for i in 0..hw {
        let mut sum = 0.0f32;
        let mut mx = f32::NEG_INFINITY;
        for ch in 0..c {
            let v = input.data()[ch * hw + i];
            sum += v;
            mx = mx.max(v);
        }
        assert_eq!(g.value(out).data()[i], sum / c as f32);
        assert_eq!(g.value(out).data()[hw + i], mx);
    }
}
