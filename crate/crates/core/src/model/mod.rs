//! Model specs, presets, parameter state, and the forward surface.

pub(crate) mod program;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Mode, Scalar, Tensor};
use program::{MbStagePlan, Program};
use serde::{Deserialize, Serialize};

pub use program::{ForwardRun, RunOpts, BN_EPS, BN_MOMENTUM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    EfficientSign,
    Resnet18,
    MobileNetV2,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::EfficientSign => "efficientsign",
            ModelKind::Resnet18 => "resnet18",
            ModelKind::MobileNetV2 => "mobilenetv2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MbConvStage {
    pub expansion: usize,
    pub out_channels: usize,
    pub repeats: usize,
    pub stride: usize,
    pub kernel: usize,
    pub internal_se_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub preset: String,
    pub stem_channels: usize,
    pub stages: Vec<MbConvStage>,
    pub head_channels: usize,
    pub input_size: usize,
}

pub const KNOWN_PRESETS: &[&str] = &["b0", "tiny"];

/// Named backbone presets. `b0` is the full-scale stage plan; `tiny` exists
/// for desk-scale tests and experiments.
pub fn backbone_preset(name: &str) -> Result<BackboneConfig> {
    let stage = |expansion, out_channels, repeats, stride, kernel| MbConvStage {
        expansion,
        out_channels,
        repeats,
        stride,
        kernel,
        internal_se_ratio: 0.25,
    };
    match name {
        "b0" => Ok(BackboneConfig {
            preset: "b0".into(),
            stem_channels: 32,
            stages: vec![
                stage(1, 16, 1, 1, 3),
                stage(6, 24, 2, 2, 3),
                stage(6, 40, 2, 2, 5),
                stage(6, 80, 3, 2, 3),
                stage(6, 112, 3, 1, 5),
                stage(6, 192, 4, 2, 5),
                stage(6, 320, 1, 1, 3),
            ],
            head_channels: 1280,
            input_size: 224,
        }),
        "tiny" => Ok(BackboneConfig {
            preset: "tiny".into(),
            stem_channels: 8,
            stages: vec![stage(1, 8, 1, 1, 3), stage(6, 16, 1, 2, 3)],
            head_channels: 64,
            input_size: 32,
        }),
        other => Err(Error::Config(format!(
            "unknown backbone preset '{other}'; known presets: {}",
            KNOWN_PRESETS.join(", ")
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionCfg {
    pub se_reduction: usize,
    pub spatial_kernel: usize,
}

impl Default for AttentionCfg {
    fn default() -> Self {
        AttentionCfg {
            se_reduction: 16,
            spatial_kernel: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Backbone plan; consulted for the efficientsign kind only.
    pub backbone: Option<BackboneConfig>,
    pub attention: AttentionCfg,
    pub dropout_p: f64,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn efficientsign(preset: &str, num_classes: usize) -> Result<Self> {
        Ok(ModelSpec {
            kind: ModelKind::EfficientSign,
            backbone: Some(backbone_preset(preset)?),
            attention: AttentionCfg::default(),
            dropout_p: 0.3,
            num_classes,
        })
    }

    pub fn resnet18(num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Resnet18,
            backbone: None,
            attention: AttentionCfg::default(),
            dropout_p: 0.0,
            num_classes,
        }
    }

    pub fn mobilenetv2(num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::MobileNetV2,
            backbone: None,
            attention: AttentionCfg::default(),
            dropout_p: 0.2,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.kind == ModelKind::EfficientSign {
            let bb = self
                .backbone
                .as_ref()
                .ok_or_else(|| Error::Config("efficientsign spec needs a backbone".into()))?;
            if bb.stages.is_empty() {
                return Err(Error::Config("backbone needs at least one stage".into()));
            }
            for (i, s) in bb.stages.iter().enumerate() {
                if s.stride != 1 && s.stride != 2 {
                    return Err(Error::Config(format!(
                        "stage {i}: stride must be 1 or 2, got {}",
                        s.stride
                    )));
                }
                if s.kernel % 2 == 0 || s.repeats == 0 || s.expansion == 0 {
                    return Err(Error::Config(format!(
                        "stage {i}: kernel must be odd and repeats/expansion positive"
                    )));
                }
            }
            if self.attention.spatial_kernel % 2 == 0 {
                return Err(Error::Config(
                    "spatial attention kernel size must be odd".into(),
                ));
            }
        }
        Ok(())
    }

    fn compile(&self) -> Result<Program> {
        self.validate()?;
        Ok(match self.kind {
            ModelKind::EfficientSign => {
                let bb = self.backbone.as_ref().expect("validated");
                let stages: Vec<MbStagePlan> = bb
                    .stages
                    .iter()
                    .map(|s| MbStagePlan {
                        expansion: s.expansion,
                        out_channels: s.out_channels,
                        repeats: s.repeats,
                        stride: s.stride,
                        kernel: s.kernel,
                        se_ratio: s.internal_se_ratio,
                    })
                    .collect();
                program::build_efficientsign_program(
                    bb.stem_channels,
                    &stages,
                    bb.head_channels,
                    self.attention.se_reduction,
                    self.attention.spatial_kernel,
                    self.dropout_p,
                    self.num_classes,
                )
            }
            ModelKind::Resnet18 => program::build_resnet18_program(self.num_classes),
            ModelKind::MobileNetV2 => program::build_mobilenetv2_program(self.num_classes),
        })
    }
}

/// A named, trainable tensor plus its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor<f32>,
    pub grad_accum: Tensor<f32>,
}

/// Running statistics for one batch-norm layer.
#[derive(Clone, Debug)]
pub struct BnStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// Parameter totals broken down by top-level component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub backbone: usize,
    pub se: usize,
    pub spatial: usize,
    pub head: usize,
}

/// A built model: spec, parameters, and batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct ModelState {
    spec: ModelSpec,
    params: Vec<Parameter>,
    bn: Vec<BnStats>,
    program: Program,
}

impl ModelState {
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        let program = spec.compile()?;
        let values: Vec<Tensor<f32>> = program.init_params(seed);
        let params = program
            .manifest
            .iter()
            .zip(values)
            .map(|(entry, value)| Parameter {
                name: entry.name.clone(),
                grad_accum: Tensor::zeros(entry.shape.clone()),
                value,
            })
            .collect();
        let bn = collect_bn_channels(&program)
            .into_iter()
            .map(|c| BnStats {
                mean: vec![0.0; c],
                var: vec![1.0; c],
            })
            .collect();
        Ok(ModelState {
            spec,
            params,
            bn,
            program,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn bn_stats(&self) -> &[BnStats] {
        &self.bn
    }

    pub fn bn_stats_mut(&mut self) -> &mut [BnStats] {
        &mut self.bn
    }

    pub fn head_channels(&self) -> usize {
        self.program.head_channels
    }

    /// Parameter names and shapes, in layout order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.program
            .manifest
            .iter()
            .map(|e| (e.name.clone(), e.shape.clone()))
            .collect()
    }

    pub fn count_params(&self) -> ParamCount {
        let mut count = ParamCount {
            total: 0,
            backbone: 0,
            se: 0,
            spatial: 0,
            head: 0,
        };
        for p in &self.params {
            let n = p.value.numel();
            count.total += n;
            if p.name.starts_with("backbone.") {
                count.backbone += n;
            } else if p.name.starts_with("se.") {
                count.se += n;
            } else if p.name.starts_with("spatial.") {
                count.spatial += n;
            } else if p.name.starts_with("head.") {
                count.head += n;
            }
        }
        count
    }

    pub(crate) fn program(&self) -> &Program {
        &self.program
    }

    pub(crate) fn cast_params<T: Scalar>(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.cast()).collect()
    }

    pub(crate) fn cast_bn<T: Scalar>(&self) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
        let mean = self
            .bn
            .iter()
            .map(|s| s.mean.iter().map(|&v| T::from_f64(v as f64)).collect())
            .collect();
        let var = self
            .bn
            .iter()
            .map(|s| s.var.iter().map(|&v| T::from_f64(v as f64)).collect())
            .collect();
        (mean, var)
    }

    /// Full forward pass with access to the tape, for training.
    pub fn forward_run(
        &self,
        images: &Tensor<f32>,
        opts: &RunOpts,
        rng: &mut RngStream,
    ) -> Result<ForwardRun<f32>> {
        let params = self.cast_params::<f32>();
        let (mean, var) = self.cast_bn::<f32>();
        program::run_program(&self.program, &params, &mean, &var, images, opts, rng)
    }

    /// Eval- or train-mode logits. Never mutates state; training commits the
    /// batch-norm updates explicitly via [`ModelState::apply_bn_updates`].
    pub fn forward(
        &self,
        images: &Tensor<f32>,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Tensor<f32>> {
        let run = self.forward_run(
            images,
            &RunOpts {
                mode,
                want_grads: false,
                bypass_attention: false,
            },
            rng,
        )?;
        let logits = run.graph.value(run.logits).clone();
        if !logits.is_finite() {
            return Err(Error::Numeric("non-finite logits in forward pass".into()));
        }
        Ok(logits)
    }

    /// Diagnostic forward with the model-level attention gates disabled
    /// (internal MBConv gates stay active), for ablation comparisons.
    pub fn forward_without_attention(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut rng = RngStream::seed(0);
        let run = self.forward_run(
            images,
            &RunOpts {
                mode: Mode::Eval,
                want_grads: false,
                bypass_attention: true,
            },
            &mut rng,
        )?;
        Ok(run.graph.value(run.logits).clone())
    }

    /// The post-attention, post-GAP feature vector (before dropout and the
    /// classifier head). Eval mode, deterministic.
    pub fn extract_features(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut rng = RngStream::seed(0);
        let run = self.forward_run(images, &RunOpts::default(), &mut rng)?;
        Ok(run.graph.value(run.features).clone())
    }

    pub fn apply_bn_updates(&mut self, updates: &[(usize, crate::tensor::BnUpdate<f32>)]) {
        for (idx, u) in updates {
            self.bn[*idx].mean.copy_from_slice(&u.mean);
            self.bn[*idx].var.copy_from_slice(&u.var);
        }
    }
}

fn collect_bn_channels(program: &Program) -> Vec<usize> {
    use program::Step;
    let mut channels = Vec::new();
    fn walk(steps: &[Step], manifest: &[program::ManifestEntry], out: &mut Vec<(usize, usize)>) {
        for s in steps {
            match s {
                Step::Bn { gamma, stats, .. } => out.push((*stats, manifest[*gamma].shape[0])),
                Step::Residual { main, skip } => {
                    walk(main, manifest, out);
                    walk(skip, manifest, out);
                }
                _ => {}
            }
        }
    }
    let mut found = Vec::new();
    walk(&program.features, &program.manifest, &mut found);
    walk(&program.head, &program.manifest, &mut found);
    found.sort_by_key(|(idx, _)| *idx);
    for (i, (idx, c)) in found.iter().enumerate() {
        debug_assert_eq!(i, *idx);
        channels.push(*c);
    }
    channels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn unknown_preset_lists_known_ones() {
        let err = backbone_preset("b7").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("b0") && msg.contains("tiny"), "{msg}");
    }

    #[test]
    fn efficientsign_b0_parameter_count() {
        let spec = ModelSpec::efficientsign("b0", 26).unwrap();
        let model = ModelState::build(spec, 42).unwrap();
        let count = model.count_params();
        assert_eq!(count.se, 206_160);
        assert_eq!(count.spatial, 99);
        assert_eq!(count.head, 1280 * 26 + 26);
        assert_eq!(count.backbone, 4_007_548);
        assert_eq!(count.total, 4_247_113);
        assert!(count.total >= 4_000_000 && count.total <= 4_400_000);
        let manifest_total: usize = model
            .manifest()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        assert_eq!(manifest_total, count.total);
    }

    #[test]
    fn resnet18_parameter_count() {
        let model = ModelState::build(ModelSpec::resnet18(26), 0).unwrap();
        let total = model.count_params().total;
        assert_eq!(total, 11_189_850);
        let target = 11_200_000.0;
        assert!((total as f64 - target).abs() / target <= 0.02);
        let fc = model
            .manifest()
            .into_iter()
            .find(|(n, _)| n == "head.fc.w")
            .unwrap();
        assert_eq!(fc.1, vec![26, 512]);
    }

    #[test]
    fn mobilenetv2_parameter_count() {
        let model = ModelState::build(ModelSpec::mobilenetv2(26), 0).unwrap();
        let total = model.count_params().total;
        assert_eq!(total, 2_257_178);
        let target = 2_300_000.0;
        assert!((total as f64 - target).abs() / target <= 0.05);
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = ModelSpec::efficientsign("tiny", 8).unwrap();
        let a = ModelState::build(spec.clone(), 7).unwrap();
        let b = ModelState::build(spec, 7).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.value.data(), pb.value.data());
        }
    }

    #[test]
    fn manifest_is_seed_independent() {
        let spec = ModelSpec::efficientsign("tiny", 8).unwrap();
        let a = ModelState::build(spec.clone(), 1).unwrap();
        let b = ModelState::build(spec, 2).unwrap();
        assert_eq!(a.manifest(), b.manifest());
    }

    #[test]
    fn tiny_forward_shapes_and_determinism() {
        let spec = ModelSpec::efficientsign("tiny", 8).unwrap();
        let model = ModelState::build(spec, 3).unwrap();
        let images = Tensor::from_fn(vec![2, 3, 32, 32], |i| ((i * 37 % 101) as f32 - 50.0) * 0.01);
        let mut rng = RngStream::seed(0);
        let logits = model.forward(&images, Mode::Eval, &mut rng).unwrap();
        assert_eq!(logits.shape(), &[2, 8]);
        let again = model.forward(&images, Mode::Eval, &mut rng).unwrap();
        assert_eq!(logits.data(), again.data());
        let feats = model.extract_features(&images).unwrap();
        assert_eq!(feats.shape(), &[2, 64]);
    }

    #[test]
    fn incompatible_input_is_a_config_error() {
        let spec = ModelSpec::efficientsign("tiny", 8).unwrap();
        let model = ModelState::build(spec, 3).unwrap();
        // Wrong channel count.
        let images = Tensor::zeros(vec![1, 4, 32, 32]);
        let err = model
            .forward(&images, Mode::Eval, &mut RngStream::seed(0))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("N×3"), "{err}");
        // Same-padding keeps all preset geometries valid down to 1×1 inputs,
        // so even a 2×2 image must run rather than error.
        let small = Tensor::zeros(vec![1, 3, 2, 2]);
        let logits = model
            .forward(&small, Mode::Eval, &mut RngStream::seed(0))
            .unwrap();
        assert_eq!(logits.shape(), &[1, 8]);
    }

    #[test]
    fn features_ignore_head_rebuild() {
        let spec = ModelSpec::efficientsign("tiny", 8).unwrap();
        let mut model = ModelState::build(spec, 3).unwrap();
        let images = Tensor::from_fn(vec![1, 3, 32, 32], |i| (i % 7) as f32 * 0.1);
        let before = model.extract_features(&images).unwrap();
        for p in model.params_mut() {
            if p.name.starts_with("head.") {
                for v in p.value.data_mut() {
                    *v += 1.0;
                }
            }
        }
        let after = model.extract_features(&images).unwrap();
        assert_eq!(before.data(), after.data());
    }

    #[test]
    fn attention_bypass_matches_saturated_gates() {
        // Forcing the gates to exactly 1.0 (σ saturates at f32) must make the
        // attended forward identical to the plain backbone+head composition.
        let spec = ModelSpec::efficientsign("tiny", 8).unwrap();
        let mut model = ModelState::build(spec, 11).unwrap();
        for p in model.params_mut() {
            if p.name == "se.w2" || p.name == "spatial.kernel" {
                for v in p.value.data_mut() {
                    *v = 0.0;
                }
            }
            if p.name == "se.b2" || p.name == "spatial.bias" {
                for v in p.value.data_mut() {
                    *v = 40.0;
                }
            }
        }
        let images = Tensor::from_fn(vec![2, 3, 32, 32], |i| ((i * 13 % 29) as f32 - 14.0) * 0.05);
        let gated = model
            .forward(&images, Mode::Eval, &mut RngStream::seed(0))
            .unwrap();
        let plain = model.forward_without_attention(&images).unwrap();
        for (a, b) in gated.data().iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn num_classes_must_be_at_least_two() {
        let mut spec = ModelSpec::resnet18(26);
        spec.num_classes = 1;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }
}
