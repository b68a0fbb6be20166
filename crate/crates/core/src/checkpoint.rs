//! Self-describing binary container for model weights, classical models, and
//! feature matrices.
//!
//! Layout: magic `EFSN` · version u32 LE · header length u64 LE · JSON header
//! · payload (concatenated little-endian arrays in manifest order) · CRC32 of
//! the payload. The header carries everything needed to reconstruct the
//! object; loading needs no out-of-band information.
//!
//! `from_bytes` is defensive: it must reject arbitrary bytes without panics
//! or unbounded allocation, since checkpoint files are untrusted input.

use crate::classical::{BinarySvm, ClassicalModel, KnnModel, LogRegModel, MulticlassScheme, PairProblem, SvmModel};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec, ModelState, BN_EPS, BN_MOMENTUM};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"EFSN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ArrayDesc {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    /// "model" | "svm" | "knn" | "logreg" | "features".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_spec: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Free-form metadata (classical hyperparameters, provenance notes).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
    pub arrays: Vec<ArrayDesc>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::F64(_) => "f64",
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    fn byte_len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len() * 4,
            ArrayData::F64(v) => v.len() * 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    arrays: Vec<ArrayData>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                kind: kind.to_string(),
                model_spec: None,
                train_config: None,
                bn_momentum: BN_MOMENTUM,
                bn_eps: BN_EPS,
                extra: serde_json::Value::Null,
                arrays: Vec::new(),
            },
            arrays: Vec::new(),
        }
    }

    pub fn push_f32(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        self.push_array(name, shape, ArrayData::F32(data))
    }

    pub fn push_f64(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        self.push_array(name, shape, ArrayData::F64(data))
    }

    fn push_array(&mut self, name: &str, shape: Vec<usize>, data: ArrayData) -> Result<()> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Config(format!(
                "array '{name}': shape {shape:?} wants {numel} elements, got {}",
                data.len()
            )));
        }
        self.header.arrays.push(ArrayDesc {
            name: name.to_string(),
            dtype: data.dtype().to_string(),
            shape,
        });
        self.arrays.push(data);
        Ok(())
    }

    pub fn array(&self, name: &str) -> Option<(&ArrayDesc, &ArrayData)> {
        let idx = self.header.arrays.iter().position(|a| a.name == name)?;
        Some((&self.header.arrays[idx], &self.arrays[idx]))
    }

    pub fn f32_array(&self, name: &str) -> Result<(&[usize], &[f32])> {
        match self.array(name) {
            Some((desc, ArrayData::F32(v))) => Ok((&desc.shape, v)),
            Some(_) => Err(Error::Incompatible(format!("array '{name}' is not f32"))),
            None => Err(Error::Incompatible(format!("missing array '{name}'"))),
        }
    }

    pub fn f64_array(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.array(name) {
            Some((desc, ArrayData::F64(v))) => Ok((&desc.shape, v)),
            Some(_) => Err(Error::Incompatible(format!("array '{name}' is not f64"))),
            None => Err(Error::Incompatible(format!("missing array '{name}'"))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)
            .map_err(|e| Error::Format(format!("header serialization failed: {e}")))?;
        let payload_len: usize = self.arrays.iter().map(|a| a.byte_len()).sum();
        let mut out = Vec::with_capacity(16 + header.len() + payload_len + 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let payload_start = out.len();
        for arr in &self.arrays {
            match arr {
                ArrayData::F32(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                ArrayData::F64(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        let crc = crc32fast::hash(&out[payload_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Parses a container from untrusted bytes. Never panics; never
    /// allocates beyond the input size.
    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint container (bad magic)".into()));
        }
        if bytes.len() < 16 {
            return Err(Error::Corruption("truncated before header length".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let rest = &bytes[16..];
        if header_len > rest.len() as u64 {
            return Err(Error::Corruption("truncated header".into()));
        }
        let header_len = header_len as usize;
        let header: CheckpointHeader = serde_json::from_slice(&rest[..header_len])
            .map_err(|e| Error::Corruption(format!("header is not valid JSON: {e}")))?;

        let body = &rest[header_len..];
        if body.len() < 4 {
            return Err(Error::Corruption("truncated before CRC".into()));
        }
        let (payload, crc_bytes) = body.split_at(body.len() - 4);
        let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());

        // Validate the manifest against the actual payload size before
        // materializing anything.
        let mut expected: usize = 0;
        for desc in &header.arrays {
            let elem: usize = match desc.dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                other => {
                    return Err(Error::Corruption(format!(
                        "array '{}' has unknown dtype '{other}'",
                        desc.name
                    )))
                }
            };
            let mut numel: usize = 1;
            for &d in &desc.shape {
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| Error::Corruption(format!("array '{}' shape overflows", desc.name)))?;
            }
            expected = numel
                .checked_mul(elem)
                .and_then(|b| expected.checked_add(b))
                .ok_or_else(|| Error::Corruption("manifest byte size overflows".into()))?;
        }
        if expected != payload.len() {
            return Err(Error::Corruption(format!(
                "payload holds {} bytes but the manifest expects {expected}",
                payload.len()
            )));
        }
        if crc32fast::hash(payload) != stored_crc {
            return Err(Error::Corruption("payload CRC mismatch".into()));
        }

        let mut arrays = Vec::with_capacity(header.arrays.len());
        let mut off = 0usize;
        for desc in &header.arrays {
            let numel: usize = desc.shape.iter().product();
            match desc.dtype.as_str() {
                "f32" => {
                    let n = numel * 4;
                    let v = payload[off..off + n]
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    arrays.push(ArrayData::F32(v));
                    off += n;
                }
                "f64" => {
                    let n = numel * 8;
                    let v = payload[off..off + n]
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    arrays.push(ArrayData::F64(v));
                    off += n;
                }
                _ => unreachable!("dtype validated above"),
            }
        }
        Ok(Checkpoint { header, arrays })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

/// Serializes a deep model: every parameter plus batch-norm running stats.
pub fn model_to_checkpoint(model: &ModelState, train_config: Option<&TrainConfig>) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new("model");
    ck.header.model_spec = Some(model.spec().clone());
    ck.header.train_config = train_config.cloned();
    for p in model.params() {
        ck.push_f32(&p.name, p.value.shape().to_vec(), p.value.data().to_vec())?;
    }
    for (i, stats) in model.bn_stats().iter().enumerate() {
        ck.push_f32(&format!("bn.{i}.mean"), vec![stats.mean.len()], stats.mean.clone())?;
        ck.push_f32(&format!("bn.{i}.var"), vec![stats.var.len()], stats.var.clone())?;
    }
    Ok(ck)
}

/// Rebuilds a model from a container, validating the manifest against the
/// spec's own layout. The first mismatching array is named.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<ModelState> {
    if ck.header.kind != "model" {
        return Err(Error::Incompatible(format!(
            "container holds '{}', not a model",
            ck.header.kind
        )));
    }
    let spec = ck
        .header
        .model_spec
        .clone()
        .ok_or_else(|| Error::Incompatible("model container lacks a model spec".into()))?;
    let mut model = ModelState::build(spec, 0)?;
    for p in model.params_mut() {
        let (shape, data) = ck.f32_array(&p.name)?;
        if shape != p.value.shape() {
            return Err(Error::Incompatible(format!(
                "array '{}' has shape {shape:?}, spec expects {:?}",
                p.name,
                p.value.shape()
            )));
        }
        p.value.data_mut().copy_from_slice(data);
    }
    for i in 0..model.bn_stats().len() {
        let (_, mean) = ck.f32_array(&format!("bn.{i}.mean"))?;
        let (_, var) = ck.f32_array(&format!("bn.{i}.var"))?;
        let stats = &mut model.bn_stats_mut()[i];
        if mean.len() != stats.mean.len() || var.len() != stats.var.len() {
            return Err(Error::Incompatible(format!("bn.{i} stats have the wrong length")));
        }
        stats.mean.copy_from_slice(mean);
        stats.var.copy_from_slice(var);
    }
    Ok(model)
}

pub fn save_model(model: &ModelState, train_config: Option<&TrainConfig>, path: &Path) -> Result<()> {
    model_to_checkpoint(model, train_config)?.write(path)
}

pub fn load_model(path: &Path) -> Result<ModelState> {
    model_from_checkpoint(&Checkpoint::read(path)?)
}

/// Loads a model and insists on a particular architecture kind.
pub fn load_model_as(path: &Path, expect: ModelKind) -> Result<ModelState> {
    let model = load_model(path)?;
    if model.spec().kind != expect {
        return Err(Error::Incompatible(format!(
            "checkpoint holds a {} model, expected {}",
            model.spec().kind.as_str(),
            expect.as_str()
        )));
    }
    Ok(model)
}

/// Serializes an extracted feature matrix with its labels.
pub fn features_to_checkpoint(features: &[Vec<f64>], labels: &[usize]) -> Result<Checkpoint> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Input("feature matrix and labels must be nonempty and aligned".into()));
    }
    let d = features[0].len();
    let mut flat = Vec::with_capacity(features.len() * d);
    for row in features {
        if row.len() != d {
            return Err(Error::Input("ragged feature matrix".into()));
        }
        flat.extend(row.iter().map(|&v| v as f32));
    }
    let mut ck = Checkpoint::new("features");
    ck.push_f32("features", vec![features.len(), d], flat)?;
    ck.push_f64("labels", vec![labels.len()], labels.iter().map(|&l| l as f64).collect())?;
    Ok(ck)
}

pub fn features_from_checkpoint(ck: &Checkpoint) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if ck.header.kind != "features" {
        return Err(Error::Incompatible(format!(
            "container holds '{}', not features",
            ck.header.kind
        )));
    }
    let (shape, data) = ck.f32_array("features")?;
    if shape.len() != 2 {
        return Err(Error::Incompatible("features array must be 2-d".into()));
    }
    let (n, d) = (shape[0], shape[1]);
    let rows = (0..n)
        .map(|i| data[i * d..(i + 1) * d].iter().map(|&v| v as f64).collect())
        .collect();
    let (_, raw_labels) = ck.f64_array("labels")?;
    let labels = raw_labels.iter().map(|&v| v as usize).collect();
    Ok((rows, labels))
}

/// Serializes a fitted classical model (named arrays: support vectors, dual
/// coefficients, weights; scalars ride in the header metadata).
pub fn classical_to_checkpoint(model: &ClassicalModel) -> Result<Checkpoint> {
    match model {
        ClassicalModel::Svm(svm) => {
            let mut ck = Checkpoint::new("svm");
            ck.header.extra = serde_json::json!({
                "c": svm.c,
                "gamma": svm.gamma,
                "num_classes": svm.num_classes,
                "dim": svm.dim,
                "tolerance": svm.tolerance,
                "scheme": match svm.scheme {
                    MulticlassScheme::OneVsOne => "one_vs_one",
                    MulticlassScheme::OneVsRest => "one_vs_rest",
                },
                "problems": svm.problems.iter().map(|p| serde_json::json!({
                    "class_a": p.class_a,
                    "class_b": p.class_b,
                    "bias": p.svm.bias,
                    "dual_objective": p.svm.dual_objective,
                    "kkt_residual": p.svm.kkt_residual,
                })).collect::<Vec<_>>(),
            });
            for (i, p) in svm.problems.iter().enumerate() {
                let n = p.svm.support.len();
                let mut flat = Vec::with_capacity(n * svm.dim);
                for row in &p.svm.support {
                    flat.extend_from_slice(row);
                }
                ck.push_f64(&format!("p{i}.support"), vec![n, svm.dim], flat)?;
                ck.push_f64(&format!("p{i}.coef"), vec![n], p.svm.coef.clone())?;
            }
            Ok(ck)
        }
        ClassicalModel::Knn(knn) => {
            let mut ck = Checkpoint::new("knn");
            ck.header.extra = serde_json::json!({
                "k": knn.k,
                "num_classes": knn.num_classes,
            });
            let (n, d) = (knn.features.len(), knn.features[0].len());
            let mut flat = Vec::with_capacity(n * d);
            for row in &knn.features {
                flat.extend_from_slice(row);
            }
            ck.push_f64("features", vec![n, d], flat)?;
            ck.push_f64("labels", vec![n], knn.labels.iter().map(|&l| l as f64).collect())?;
            Ok(ck)
        }
        ClassicalModel::LogReg(lr) => {
            let mut ck = Checkpoint::new("logreg");
            ck.header.extra = serde_json::json!({
                "c": lr.c,
                "num_classes": lr.num_classes,
                "dim": lr.dim,
                "iterations": lr.iterations,
                "converged": lr.converged,
                "final_grad_norm": lr.final_grad_norm,
            });
            ck.push_f64("weights", vec![lr.num_classes, lr.dim], lr.weights.clone())?;
            ck.push_f64("biases", vec![lr.num_classes], lr.biases.clone())?;
            Ok(ck)
        }
    }
}

fn extra_u64(extra: &serde_json::Value, key: &str) -> Result<u64> {
    extra
        .get(key)
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Incompatible(format!("metadata field '{key}' missing or invalid")))
}

fn extra_f64(extra: &serde_json::Value, key: &str) -> Result<f64> {
    extra
        .get(key)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::Incompatible(format!("metadata field '{key}' missing or invalid")))
}

pub fn classical_from_checkpoint(ck: &Checkpoint) -> Result<ClassicalModel> {
    match ck.header.kind.as_str() {
        "svm" => {
            let extra = &ck.header.extra;
            let dim = extra_u64(extra, "dim")? as usize;
            let scheme = match extra.get("scheme").and_then(|v| v.as_str()) {
                Some("one_vs_one") => MulticlassScheme::OneVsOne,
                Some("one_vs_rest") => MulticlassScheme::OneVsRest,
                other => {
                    return Err(Error::Incompatible(format!(
                        "unknown multiclass scheme {other:?}"
                    )))
                }
            };
            let problems_meta = extra
                .get("problems")
                .and_then(|v| v.as_array())
                .ok_or_else(|| Error::Incompatible("svm metadata lacks problems".into()))?;
            let mut problems = Vec::with_capacity(problems_meta.len());
            for (i, meta) in problems_meta.iter().enumerate() {
                let (shape, flat) = ck.f64_array(&format!("p{i}.support"))?;
                if shape.len() != 2 || shape[1] != dim {
                    return Err(Error::Incompatible(format!(
                        "array 'p{i}.support' has shape {shape:?}, expected [_, {dim}]"
                    )));
                }
                let support: Vec<Vec<f64>> =
                    flat.chunks_exact(dim.max(1)).map(|c| c.to_vec()).collect();
                let (_, coef) = ck.f64_array(&format!("p{i}.coef"))?;
                if coef.len() != support.len() {
                    return Err(Error::Incompatible(format!(
                        "array 'p{i}.coef' length does not match its support vectors"
                    )));
                }
                problems.push(PairProblem {
                    class_a: extra_u64(meta, "class_a")? as usize,
                    class_b: extra_u64(meta, "class_b")? as usize,
                    svm: BinarySvm {
                        support,
                        coef: coef.to_vec(),
                        bias: extra_f64(meta, "bias")?,
                        dual_objective: extra_f64(meta, "dual_objective")?,
                        kkt_residual: extra_f64(meta, "kkt_residual")?,
                        iterations: 0,
                        max_alpha: 0.0,
                        equality_residual: 0.0,
                    },
                });
            }
            Ok(ClassicalModel::Svm(SvmModel {
                c: extra_f64(extra, "c")?,
                gamma: extra_f64(extra, "gamma")?,
                num_classes: extra_u64(extra, "num_classes")? as usize,
                dim,
                scheme,
                problems,
                tolerance: extra_f64(extra, "tolerance")?,
            }))
        }
        "knn" => {
            let (shape, flat) = ck.f64_array("features")?;
            if shape.len() != 2 {
                return Err(Error::Incompatible("knn features must be 2-d".into()));
            }
            let d = shape[1];
            let features: Vec<Vec<f64>> = flat.chunks_exact(d.max(1)).map(|c| c.to_vec()).collect();
            let (_, raw_labels) = ck.f64_array("labels")?;
            Ok(ClassicalModel::Knn(KnnModel {
                features,
                labels: raw_labels.iter().map(|&v| v as usize).collect(),
                k: extra_u64(&ck.header.extra, "k")? as usize,
                num_classes: extra_u64(&ck.header.extra, "num_classes")? as usize,
            }))
        }
        "logreg" => {
            let (shape, weights) = ck.f64_array("weights")?;
            if shape.len() != 2 {
                return Err(Error::Incompatible("logreg weights must be 2-d".into()));
            }
            let (_, biases) = ck.f64_array("biases")?;
            Ok(ClassicalModel::LogReg(LogRegModel {
                weights: weights.to_vec(),
                biases: biases.to_vec(),
                num_classes: shape[0],
                dim: shape[1],
                c: extra_f64(&ck.header.extra, "c")?,
                iterations: extra_u64(&ck.header.extra, "iterations")? as usize,
                converged: ck
                    .header
                    .extra
                    .get("converged")
                    .and_then(|v| v.as_bool())
                    .unwrap_or(false),
                final_grad_norm: extra_f64(&ck.header.extra, "final_grad_norm")?,
            }))
        }
        other => Err(Error::Incompatible(format!(
            "container holds '{other}', not a classical model"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::rng::RngStream;
    use crate::tensor::{Mode, Tensor};

    fn tiny_model() -> ModelState {
        ModelState::build(ModelSpec::efficientsign("tiny", 8).unwrap(), 5).unwrap()
    }

    #[test]
    fn model_round_trip_restores_bit_identical_logits() {
        let mut model = tiny_model();
        // Make running stats nontrivial so they participate in the trip.
        for s in model.bn_stats_mut() {
            for v in &mut s.mean {
                *v = 0.25;
            }
        }
        let bytes = model_to_checkpoint(&model, None).unwrap().to_bytes().unwrap();
        let restored = model_from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        let images = Tensor::from_fn(vec![2, 3, 32, 32], |i| ((i % 23) as f32 - 11.0) * 0.08);
        let a = model.forward(&images, Mode::Eval, &mut RngStream::seed(0)).unwrap();
        let b = restored.forward(&images, Mode::Eval, &mut RngStream::seed(0)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let mut bytes = model_to_checkpoint(&tiny_model(), None).unwrap().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_is_a_corruption_error_without_partial_model() {
        let bytes = model_to_checkpoint(&tiny_model(), None).unwrap().to_bytes().unwrap();
        for cut in [bytes.len() / 2, bytes.len() - 5, 20] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Corruption(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn bit_flip_in_payload_fails_crc() {
        let bytes = model_to_checkpoint(&tiny_model(), None).unwrap().to_bytes().unwrap();
        let mut corrupted = bytes.clone();
        let mid = corrupted.len() - 100;
        corrupted[mid] ^= 0x40;
        let err = Checkpoint::from_bytes(&corrupted).unwrap_err();
        assert!(matches!(err, Error::Corruption(_)), "{err}");
        assert!(err.to_string().contains("CRC"), "{err}");
    }

    #[test]
    fn wrong_kind_is_an_incompatibility_error() {
        let model = ModelState::build(ModelSpec::resnet18(26), 1).unwrap();
        let bytes = model_to_checkpoint(&model, None).unwrap().to_bytes().unwrap();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        let err = crate::checkpoint::load_model_as_bytes_helper(&ck).unwrap_err();
        assert!(matches!(err, Error::Incompatible(_)), "{err}");
        assert!(err.to_string().contains("resnet18"), "{err}");
    }

    #[test]
    fn unsupported_version_is_incompatible() {
        let mut bytes = model_to_checkpoint(&tiny_model(), None).unwrap().to_bytes().unwrap();
        bytes[4] = 99;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn features_round_trip() {
        let features = vec![vec![1.5, -2.25, 0.125], vec![0.0, 3.75, -1.0]];
        let labels = vec![2usize, 0];
        let ck = features_to_checkpoint(&features, &labels).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let (f, l) = features_from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(f, features);
        assert_eq!(l, labels);
    }

    #[test]
    fn classical_models_round_trip_predictions() {
        use crate::classical::{fit_classical, ClassicalKind};
        let features: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![(i % 3) as f64 * 2.0 + (i as f64) * 0.01, (i % 3) as f64 - 1.0])
            .collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let queries: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 0.5, (i % 3) as f64 - 1.0]).collect();
        for kind in [ClassicalKind::Svm, ClassicalKind::Knn, ClassicalKind::LogReg] {
            let model = fit_classical(kind, &features, &labels).unwrap();
            let before = model.predict(&queries).unwrap();
            let bytes = classical_to_checkpoint(&model).unwrap().to_bytes().unwrap();
            let restored = classical_from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
            let after = restored.predict(&queries).unwrap();
            assert_eq!(before, after, "{kind:?}");
        }
    }

    #[test]
    fn from_bytes_handles_garbage_without_panicking() {
        let mut rng = RngStream::seed(77);
        for len in [0usize, 3, 4, 15, 16, 64, 500] {
            let junk: Vec<u8> = (0..len).map(|_| rng.below(256) as u8).collect();
            let _ = Checkpoint::from_bytes(&junk);
        }
        // Valid prefix, hostile manifest: huge shape must not allocate.
        let mut ck = Checkpoint::new("model");
        ck.header.arrays.push(ArrayDesc {
            name: "huge".into(),
            dtype: "f64".into(),
            shape: vec![usize::MAX, 2],
        });
        let bytes = ck.to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Corruption(_))
        ));
    }
}

#[cfg(test)]
fn load_model_as_bytes_helper(ck: &Checkpoint) -> Result<ModelState> {
    let model = model_from_checkpoint(ck)?;
    if model.spec().kind != ModelKind::EfficientSign {
        return Err(Error::Incompatible(format!(
            "checkpoint holds a {} model, expected efficientsign",
            model.spec().kind.as_str()
        )));
    }
    Ok(model)
}
