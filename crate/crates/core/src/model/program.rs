//! Architecture programs: a declarative step list compiled from a model spec
//! and interpreted onto the autodiff graph.
//!
//! The manifest (parameter names, shapes, init rules) is a pure function of
//! the spec, so two builds of the same spec always agree on layout and only
//! the seeded values differ.

use crate::attention::{se_wire, spatial_wire};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{ActKind, BnUpdate, Conv2dCfg, Graph, Mode, NodeId, Scalar, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub enum Init {
    /// Uniform Kaiming-style with the given fan-in.
    FanIn(usize),
    Zero,
    One,
}

#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Clone, Debug)]
pub enum Step {
    Conv {
        name: String,
        w: usize,
        b: Option<usize>,
        cfg: Conv2dCfg,
    },
    Bn {
        gamma: usize,
        beta: usize,
        stats: usize,
    },
    Act(ActKind),
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// out = main(x) + skip(x); an empty skip is the identity.
    Residual {
        main: Vec<Step>,
        skip: Vec<Step>,
    },
    SeGate {
        w1: usize,
        b1: usize,
        w2: usize,
        b2: usize,
        act: ActKind,
        /// True for the model-level attention block (ablation target),
        /// false for SE gates internal to MBConv blocks.
        attention: bool,
    },
    SpatialGate {
        w: usize,
        b: usize,
        attention: bool,
    },
    Gap,
    Dropout {
        p: f64,
    },
    Linear {
        w: usize,
        b: usize,
    },
}

#[derive(Clone, Debug)]
pub struct Program {
    pub features: Vec<Step>,
    pub head: Vec<Step>,
    pub manifest: Vec<ManifestEntry>,
    pub head_channels: usize,
}

impl Program {
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Vec<Tensor<T>> {
        let mut rng = RngStream::seed(seed).derive(&[0x70_61_72_61_6d]); // "param"
        self.manifest
            .iter()
            .map(|entry| match entry.init {
                Init::FanIn(fan_in) => {
                    crate::attention::kaiming_uniform(entry.shape.clone(), fan_in, &mut rng)
                }
                Init::Zero => Tensor::zeros(entry.shape.clone()),
                Init::One => Tensor::full(entry.shape.clone(), T::one()),
            })
            .collect()
    }
}

/// Accumulates manifest entries while a builder lays out an architecture.
struct Layout {
    manifest: Vec<ManifestEntry>,
    n_bn: usize,
}

impl Layout {
    fn new() -> Self {
        Layout {
            manifest: Vec::new(),
            n_bn: 0,
        }
    }

    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.manifest.push(ManifestEntry { name, shape, init });
        self.manifest.len() - 1
    }

    fn conv(
        &mut self,
        name: &str,
        out_c: usize,
        in_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    ) -> Step {
        let fan_in = (in_c / groups) * k * k;
        let w = self.add(
            format!("{name}.w"),
            vec![out_c, in_c / groups, k, k],
            Init::FanIn(fan_in),
        );
        let b = bias.then(|| self.add(format!("{name}.b"), vec![out_c], Init::Zero));
        Step::Conv {
            name: name.to_string(),
            w,
            b,
            cfg: Conv2dCfg {
                stride,
                padding,
                groups,
            },
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> Step {
        let gamma = self.add(format!("{name}.g"), vec![c], Init::One);
        let beta = self.add(format!("{name}.b"), vec![c], Init::Zero);
        let stats = self.n_bn;
        self.n_bn += 1;
        Step::Bn { gamma, beta, stats }
    }

    fn se(&mut self, name: &str, channels: usize, hidden: usize, act: ActKind, attention: bool) -> Step {
        let w1 = self.add(format!("{name}.w1"), vec![hidden, channels], Init::FanIn(channels));
        let b1 = self.add(format!("{name}.b1"), vec![hidden], Init::Zero);
        let w2 = self.add(format!("{name}.w2"), vec![channels, hidden], Init::FanIn(hidden));
        let b2 = self.add(format!("{name}.b2"), vec![channels], Init::Zero);
        Step::SeGate {
            w1,
            b1,
            w2,
            b2,
            act,
            attention,
        }
    }

    fn linear(&mut self, name: &str, out: usize, inp: usize) -> Step {
        let w = self.add(format!("{name}.w"), vec![out, inp], Init::FanIn(inp));
        let b = self.add(format!("{name}.b"), vec![out], Init::Zero);
        Step::Linear { w, b }
    }
}

pub struct MbStagePlan {
    pub expansion: usize,
    pub out_channels: usize,
    pub repeats: usize,
    pub stride: usize,
    pub kernel: usize,
    pub se_ratio: f64,
}

/// One mobile inverted bottleneck: expand (if expansion > 1), depthwise,
/// optional SE gate, linear projection, with a skip when shapes allow.
#[allow(clippy::too_many_arguments)]
fn mbconv_block(
    layout: &mut Layout,
    name: &str,
    in_c: usize,
    out_c: usize,
    expansion: usize,
    kernel: usize,
    stride: usize,
    se_ratio: f64,
    act: ActKind,
) -> Vec<Step> {
    let mid = in_c * expansion;
    let mut inner = Vec::new();
    if expansion != 1 {
        inner.push(layout.conv(&format!("{name}.expand.conv"), mid, in_c, 1, 1, 0, 1, false));
        inner.push(layout.bn(&format!("{name}.expand.bn"), mid));
        inner.push(Step::Act(act));
    }
    inner.push(layout.conv(
        &format!("{name}.dw.conv"),
        mid,
        mid,
        kernel,
        stride,
        (kernel - 1) / 2,
        mid,
        false,
    ));
    inner.push(layout.bn(&format!("{name}.dw.bn"), mid));
    inner.push(Step::Act(act));
    if se_ratio > 0.0 {
        let se_c = ((in_c as f64 * se_ratio) as usize).max(1);
        inner.push(layout.se(&format!("{name}.se"), mid, se_c, act, false));
    }
    inner.push(layout.conv(&format!("{name}.project.conv"), out_c, mid, 1, 1, 0, 1, false));
    inner.push(layout.bn(&format!("{name}.project.bn"), out_c));
    if stride == 1 && in_c == out_c {
        vec![Step::Residual {
            main: inner,
            skip: Vec::new(),
        }]
    } else {
        inner
    }
}

/// Shared builder for the EfficientNet-style and MobileNetV2-style backbones.
pub struct MbBackbonePlan<'a> {
    pub stem_channels: usize,
    pub stages: &'a [MbStagePlan],
    pub head_channels: usize,
    pub act: ActKind,
}

fn mb_backbone(layout: &mut Layout, plan: &MbBackbonePlan) -> Vec<Step> {
    let mut steps = vec![
        layout.conv("backbone.stem.conv", plan.stem_channels, 3, 3, 2, 1, 1, false),
        layout.bn("backbone.stem.bn", plan.stem_channels),
        Step::Act(plan.act),
    ];
    let mut in_c = plan.stem_channels;
    for (si, stage) in plan.stages.iter().enumerate() {
        for bj in 0..stage.repeats {
            let stride = if bj == 0 { stage.stride } else { 1 };
            steps.extend(mbconv_block(
                layout,
                &format!("backbone.s{si}.b{bj}"),
                in_c,
                stage.out_channels,
                stage.expansion,
                stage.kernel,
                stride,
                stage.se_ratio,
                plan.act,
            ));
            in_c = stage.out_channels;
        }
    }
    steps.push(layout.conv("backbone.head.conv", plan.head_channels, in_c, 1, 1, 0, 1, false));
    steps.push(layout.bn("backbone.head.bn", plan.head_channels));
    steps.push(Step::Act(plan.act));
    steps
}

#[allow(clippy::too_many_arguments)]
pub fn build_efficientsign_program(
    stem_channels: usize,
    stages: &[MbStagePlan],
    head_channels: usize,
    se_reduction: usize,
    spatial_kernel: usize,
    dropout_p: f64,
    num_classes: usize,
) -> Program {
    let mut layout = Layout::new();
    let mut features = mb_backbone(
        &mut layout,
        &MbBackbonePlan {
            stem_channels,
            stages,
            head_channels,
            act: ActKind::Silu,
        },
    );
    let hidden = crate::attention::se_hidden(head_channels, se_reduction);
    features.push(layout.se("se", head_channels, hidden, ActKind::Relu, true));
    let sk = spatial_kernel;
    let w = layout.add(
        "spatial.kernel".into(),
        vec![1, 2, sk, sk],
        Init::FanIn(2 * sk * sk),
    );
    let b = layout.add("spatial.bias".into(), vec![1], Init::Zero);
    features.push(Step::SpatialGate {
        w,
        b,
        attention: true,
    });
    features.push(Step::Gap);
    let head = vec![
        Step::Dropout { p: dropout_p },
        layout.linear("head.fc", num_classes, head_channels),
    ];
    Program {
        features,
        head,
        manifest: layout.manifest,
        head_channels,
    }
}

pub fn build_mobilenetv2_program(num_classes: usize) -> Program {
    let stages: Vec<MbStagePlan> = [
        (1, 16, 1, 1),
        (6, 24, 2, 2),
        (6, 32, 3, 2),
        (6, 64, 4, 2),
        (6, 96, 3, 1),
        (6, 160, 3, 2),
        (6, 320, 1, 1),
    ]
    .into_iter()
    .map(|(expansion, out_channels, repeats, stride)| MbStagePlan {
        expansion,
        out_channels,
        repeats,
        stride,
        kernel: 3,
        se_ratio: 0.0,
    })
    .collect();
    let mut layout = Layout::new();
    let mut features = mb_backbone(
        &mut layout,
        &MbBackbonePlan {
            stem_channels: 32,
            stages: &stages,
            head_channels: 1280,
            act: ActKind::Relu6,
        },
    );
    features.push(Step::Gap);
    let head = vec![
        Step::Dropout { p: 0.2 },
        layout.linear("head.fc", num_classes, 1280),
    ];
    Program {
        features,
        head,
        manifest: layout.manifest,
        head_channels: 1280,
    }
}

fn resnet_basic_block(
    layout: &mut Layout,
    name: &str,
    in_c: usize,
    out_c: usize,
    stride: usize,
) -> Vec<Step> {
    let main = vec![
        layout.conv(&format!("{name}.conv1"), out_c, in_c, 3, stride, 1, 1, false),
        layout.bn(&format!("{name}.bn1"), out_c),
        Step::Act(ActKind::Relu),
        layout.conv(&format!("{name}.conv2"), out_c, out_c, 3, 1, 1, 1, false),
        layout.bn(&format!("{name}.bn2"), out_c),
    ];
    let skip = if stride != 1 || in_c != out_c {
        vec![
            layout.conv(&format!("{name}.down.conv"), out_c, in_c, 1, stride, 0, 1, false),
            layout.bn(&format!("{name}.down.bn"), out_c),
        ]
    } else {
        Vec::new()
    };
    vec![Step::Residual { main, skip }, Step::Act(ActKind::Relu)]
}

pub fn build_resnet18_program(num_classes: usize) -> Program {
    let mut layout = Layout::new();
    let mut features = vec![
        layout.conv("backbone.stem.conv", 64, 3, 7, 2, 3, 1, false),
        layout.bn("backbone.stem.bn", 64),
        Step::Act(ActKind::Relu),
        Step::MaxPool {
            kernel: 3,
            stride: 2,
            padding: 1,
        },
    ];
    let plan = [(64, 1), (128, 2), (256, 2), (512, 2)];
    let mut in_c = 64;
    for (li, (out_c, first_stride)) in plan.into_iter().enumerate() {
        for bj in 0..2 {
            let stride = if bj == 0 { first_stride } else { 1 };
            features.extend(resnet_basic_block(
                &mut layout,
                &format!("backbone.layer{li}.b{bj}"),
                in_c,
                out_c,
                stride,
            ));
            in_c = out_c;
        }
    }
    features.push(Step::Gap);
    let head = vec![layout.linear("head.fc", num_classes, 512)];
    Program {
        features,
        head,
        manifest: layout.manifest,
        head_channels: 512,
    }
}

/// Everything a forward pass produces besides the output tensors.
pub struct ForwardRun<T: Scalar> {
    pub graph: Graph<T>,
    pub features: NodeId,
    pub logits: NodeId,
    pub param_nodes: Vec<NodeId>,
    pub bn_updates: Vec<(usize, BnUpdate<T>)>,
}

pub struct RunOpts {
    pub mode: Mode,
    pub want_grads: bool,
    pub bypass_attention: bool,
}

impl Default for RunOpts {
    fn default() -> Self {
        RunOpts {
            mode: Mode::Eval,
            want_grads: false,
            bypass_attention: false,
        }
    }
}

struct RunCtx<'a, T: Scalar> {
    graph: Graph<T>,
    param_nodes: Vec<NodeId>,
    bn_mean: &'a [Vec<T>],
    bn_var: &'a [Vec<T>],
    mode: Mode,
    rng: &'a mut RngStream,
    bypass_attention: bool,
    updates: Vec<(usize, BnUpdate<T>)>,
}

fn run_steps<T: Scalar>(ctx: &mut RunCtx<T>, steps: &[Step], mut x: NodeId) -> Result<NodeId> {
    for step in steps {
        x = match step {
            Step::Conv { name, w, b, cfg } => ctx
                .graph
                .conv2d(x, ctx.param_nodes[*w], b.map(|b| ctx.param_nodes[b]), *cfg)
                .map_err(|e| Error::Config(format!("at {name}: {e}")))?,
            Step::Bn { gamma, beta, stats } => {
                let (out, update) = ctx.graph.batch_norm(
                    x,
                    ctx.param_nodes[*gamma],
                    ctx.param_nodes[*beta],
                    ctx.mode,
                    &ctx.bn_mean[*stats],
                    &ctx.bn_var[*stats],
                    T::from_f64(BN_MOMENTUM),
                    T::from_f64(BN_EPS),
                )?;
                if let Some(u) = update {
                    ctx.updates.push((*stats, u));
                }
                out
            }
            Step::Act(kind) => ctx.graph.activation(x, *kind),
            Step::MaxPool {
                kernel,
                stride,
                padding,
            } => ctx.graph.max_pool2d(x, *kernel, *stride, *padding)?,
            Step::Residual { main, skip } => {
                let branch = run_steps(ctx, main, x)?;
                let shortcut = if skip.is_empty() {
                    x
                } else {
                    run_steps(ctx, skip, x)?
                };
                ctx.graph.add(branch, shortcut)?
            }
            Step::SeGate {
                w1,
                b1,
                w2,
                b2,
                act,
                attention,
            } => {
                if *attention && ctx.bypass_attention {
                    x
                } else {
                    se_wire(
                        &mut ctx.graph,
                        x,
                        ctx.param_nodes[*w1],
                        ctx.param_nodes[*b1],
                        ctx.param_nodes[*w2],
                        ctx.param_nodes[*b2],
                        *act,
                    )?
                }
            }
            Step::SpatialGate { w, b, attention } => {
                if *attention && ctx.bypass_attention {
                    x
                } else {
                    spatial_wire(&mut ctx.graph, x, ctx.param_nodes[*w], ctx.param_nodes[*b])?
                }
            }
            Step::Gap => ctx.graph.global_avg_pool(x)?,
            Step::Dropout { p } => ctx.graph.dropout(x, *p, ctx.mode, ctx.rng)?,
            Step::Linear { w, b } => {
                ctx.graph
                    .linear(x, ctx.param_nodes[*w], Some(ctx.param_nodes[*b]))?
            }
        };
    }
    Ok(x)
}

/// Runs a program forward. Generic over the scalar type so the f64 gradient
/// check path executes exactly the same code as f32 training.
pub fn run_program<T: Scalar>(
    program: &Program,
    params: &[Tensor<T>],
    bn_mean: &[Vec<T>],
    bn_var: &[Vec<T>],
    images: &Tensor<T>,
    opts: &RunOpts,
    rng: &mut RngStream,
) -> Result<ForwardRun<T>> {
    if images.shape().len() != 4 || images.shape()[1] != 3 {
        return Err(Error::Config(format!(
            "model input must be N×3×H×W, got {:?}",
            images.shape()
        )));
    }
    let mut graph = Graph::new();
    let param_nodes: Vec<NodeId> = params
        .iter()
        .map(|p| graph.leaf(p.clone(), opts.want_grads))
        .collect();
    let x = graph.leaf(images.clone(), false);
    let mut ctx = RunCtx {
        graph,
        param_nodes,
        bn_mean,
        bn_var,
        mode: opts.mode,
        rng,
        bypass_attention: opts.bypass_attention,
        updates: Vec::new(),
    };
    let features = run_steps(&mut ctx, &program.features, x)?;
    let logits = run_steps(&mut ctx, &program.head, features)?;
    Ok(ForwardRun {
        graph: ctx.graph,
        features,
        logits,
        param_nodes: ctx.param_nodes,
        bn_updates: ctx.updates,
    })
}
