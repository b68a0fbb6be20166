//! Scratch diagnostic: which component blocks memorization of a tiny set?

use efficientsign::model::{ModelSpec, ModelState, RunOpts};
use efficientsign::rng::RngStream;
use efficientsign::tensor::{Mode, Tensor};
use efficientsign::train::{AdamConfig, AdamState};

fn synth_batch(n_classes: usize, per_class: usize) -> (Tensor<f32>, Vec<usize>) {
    // Simple distinct patterns: class c = bright square in a class-specific cell.
    let size = 32;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut rng = RngStream::seed(5);
    for c in 0..n_classes {
        for _ in 0..per_class {
            let mut img = Tensor::<f32>::zeros(vec![3, size, size]);
            let gx = (c % 4) * 8;
            let gy = (c / 4) * 8;
            for y in 0..8 {
                for x in 0..8 {
                    let noise = rng.uniform_in(0.6, 1.0) as f32;
                    for ch in 0..3 {
                        img.data_mut()[(ch * size + gy + y) * size + gx + x] = noise;
                    }
                }
            }
            images.push(img);
            labels.push(c);
        }
    }
    (Tensor::stack_images(&images).unwrap(), labels)
}

fn run(name: &str, dropout_p: f64, bypass_attention: bool, use_adam: bool, lr: f64) {
    let mut spec = ModelSpec::efficientsign("tiny", 8).unwrap();
    spec.dropout_p = dropout_p;
    let mut model = ModelState::build(spec, 3).unwrap();
    let (images, labels) = synth_batch(8, 4);
    let mut opt = AdamState::new(model.params(), AdamConfig::default());
    let mut first = 0.0;
    let mut last = 0.0;
    for step in 0..200 {
        let mut rng = RngStream::seed(100 + step as u64);
        let run = model
            .forward_run(
                &images,
                &RunOpts {
                    mode: Mode::Train,
                    want_grads: true,
                    bypass_attention,
                },
                &mut rng,
            )
            .unwrap();
        let mut g = run.graph;
        let loss_id = g.softmax_cross_entropy(run.logits, &labels).unwrap();
        let loss = g.scalar(loss_id) as f64;
        if step == 0 {
            first = loss;
        }
        last = loss;
        g.backward(loss_id);
        for (node, param) in run.param_nodes.iter().zip(model.params_mut()) {
            match g.grad(*node) {
                Some(gr) => param.grad_accum.data_mut().copy_from_slice(gr),
                None => param.grad_accum.data_mut().fill(0.0),
            }
        }
        if use_adam {
            opt.step(model.params_mut(), lr).unwrap();
        } else {
            for p in model.params_mut() {
                let g = p.grad_accum.data().to_vec();
                for (v, gi) in p.value.data_mut().iter_mut().zip(g) {
                    *v -= (lr as f32) * gi;
                }
            }
        }
        model.apply_bn_updates(&run.bn_updates);
        if step % 50 == 49 {
            println!("  {name} step {step}: loss {loss:.4}");
        }
    }
    println!("{name}: first {first:.4} -> last {last:.4}");
}

fn run_glyphs(name: &str, batch_size: usize, lr: f64, steps: usize) {
    use efficientsign::data::preprocess::{preprocess, AugmentConfig};
    let dir = std::path::Path::new("/tmp/glyphs_small");
    let ds = efficientsign::data::load_dataset(dir).unwrap().decode();
    let aug = AugmentConfig::none(64);
    let tensors: Vec<Tensor<f32>> = ds
        .images
        .iter()
        .map(|img| preprocess(img, Mode::Eval, &aug, &mut RngStream::seed(0)).unwrap())
        .collect();
    let spec = ModelSpec::efficientsign("tiny", ds.num_classes()).unwrap();
    let mut model = ModelState::build(spec, 3).unwrap();
    let mut opt = AdamState::new(model.params(), AdamConfig::default());
    let shuffle_root = RngStream::seed(9);
    let mut first = 0.0;
    let mut last = 0.0;
    let n = tensors.len();
    for step in 0..steps {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle_root.derive(&[step as u64]).shuffle(&mut order);
        let chunk: Vec<usize> = order.into_iter().take(batch_size.min(n)).collect();
        let images = Tensor::stack_images(&chunk.iter().map(|&i| tensors[i].clone()).collect::<Vec<_>>()).unwrap();
        let labels: Vec<usize> = chunk.iter().map(|&i| ds.labels[i]).collect();
        let mut rng = RngStream::seed(100 + step as u64);
        let run = model
            .forward_run(
                &images,
                &RunOpts {
                    mode: Mode::Train,
                    want_grads: true,
                    bypass_attention: false,
                },
                &mut rng,
            )
            .unwrap();
        let mut g = run.graph;
        let loss_id = g.softmax_cross_entropy(run.logits, &labels).unwrap();
        let loss = g.scalar(loss_id) as f64;
        if step == 0 {
            first = loss;
        }
        last = loss;
        g.backward(loss_id);
        for (node, param) in run.param_nodes.iter().zip(model.params_mut()) {
            match g.grad(*node) {
                Some(gr) => param.grad_accum.data_mut().copy_from_slice(gr),
                None => param.grad_accum.data_mut().fill(0.0),
            }
        }
        opt.step(model.params_mut(), lr).unwrap();
        model.apply_bn_updates(&run.bn_updates);
        if step % 50 == 49 {
            // Full-set diagnostics in both modes.
            let all = Tensor::stack_images(&tensors).unwrap();
            let eval_run = model
                .forward_run(&all, &RunOpts::default(), &mut RngStream::seed(0))
                .unwrap();
            let mut ge = eval_run.graph;
            let eval_loss_id = ge.softmax_cross_entropy(eval_run.logits, &ds.labels).unwrap();
            let eval_loss = ge.scalar(eval_loss_id);
            let train_run = model
                .forward_run(
                    &all,
                    &RunOpts { mode: Mode::Train, want_grads: false, bypass_attention: false },
                    &mut RngStream::seed(1),
                )
                .unwrap();
            let mut gt = train_run.graph;
            let tl_id = gt.softmax_cross_entropy(train_run.logits, &ds.labels).unwrap();
            let train_full_loss = gt.scalar(tl_id);
            println!(
                "  {name} step {step}: batch_loss {loss:.4} | full train-mode {train_full_loss:.4} | full eval-mode {eval_loss:.4}"
            );
        }
    }
    println!("{name}: first {first:.4} -> last {last:.4}");
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_default();
    if mode == "glyphs" {
        run_glyphs("mb16-lr3e-3", 16, 3e-3, 300);
    } else {
        run("baseline(adam,drop.3,attn)", 0.3, false, true, 1e-2);
        run("no-dropout", 0.0, false, true, 1e-2);
        run("no-dropout+no-attn", 0.0, true, true, 1e-2);
        run("sgd(no-dropout)", 0.0, false, false, 0.5);
    }
}
