//! Fixed-extractor classical classification over cross-validation folds.

use super::{gamma_scale, knn_fit, knn_predict, logreg_train, svm_predict, svm_train};
use super::{KnnModel, LogRegModel, MulticlassScheme, SvmModel};
use crate::data::kfold::FoldPlan;
use crate::data::preprocess::AugmentConfig;
use crate::data::DecodedDataset;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::train::{eval_tensors, EvalResult};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassicalKind {
    Svm,
    Knn,
    LogReg,
}

impl ClassicalKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClassicalKind::Svm => "svm",
            ClassicalKind::Knn => "knn",
            ClassicalKind::LogReg => "logreg",
        }
    }
}

#[derive(Clone, Debug)]
pub enum ClassicalModel {
    Svm(SvmModel),
    Knn(KnnModel),
    LogReg(LogRegModel),
}

impl ClassicalModel {
    pub fn kind(&self) -> ClassicalKind {
        match self {
            ClassicalModel::Svm(_) => ClassicalKind::Svm,
            ClassicalModel::Knn(_) => ClassicalKind::Knn,
            ClassicalModel::LogReg(_) => ClassicalKind::LogReg,
        }
    }

    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<usize>> {
        match self {
            ClassicalModel::Svm(m) => svm_predict(m, features),
            ClassicalModel::Knn(m) => knn_predict(m, features),
            ClassicalModel::LogReg(m) => m.predict(features),
        }
    }
}

/// Eval-mode deep features for the given items, upcast to f64 rows.
pub fn extract_feature_matrix(
    extractor: &ModelState,
    data: &DecodedDataset,
    indices: &[usize],
    aug: &AugmentConfig,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let tensors = eval_tensors(data, indices, aug)?;
    let mut rows = Vec::with_capacity(indices.len());
    for chunk in tensors.chunks(batch_size.max(1)) {
        let batch = Tensor::stack_images(chunk)?;
        let feats = extractor.extract_features(&batch)?;
        let d = feats.shape()[1];
        for r in 0..chunk.len() {
            rows.push(feats.data()[r * d..(r + 1) * d].iter().map(|&v| v as f64).collect());
        }
    }
    Ok(rows)
}

/// Fits one classifier with the published hyperparameters:
/// SVM C=10 γ=scale, KNN k=5, logistic regression C=1 with ≤1000 iterations.
pub fn fit_classical(
    kind: ClassicalKind,
    features: &[Vec<f64>],
    labels: &[usize],
) -> Result<ClassicalModel> {
    Ok(match kind {
        ClassicalKind::Svm => {
            let gamma = gamma_scale(features)?;
            ClassicalModel::Svm(svm_train(features, labels, 10.0, gamma, MulticlassScheme::OneVsOne)?)
        }
        ClassicalKind::Knn => ClassicalModel::Knn(knn_fit(features.to_vec(), labels.to_vec(), 5)?),
        ClassicalKind::LogReg => ClassicalModel::LogReg(logreg_train(features, labels, 1.0, 1000)?),
    })
}

pub fn confusion_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> EvalResult {
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    let mut correct = 0;
    for (&p, &t) in predictions.iter().zip(labels) {
        confusion[t][p] += 1;
        if p == t {
            correct += 1;
        }
    }
    EvalResult {
        accuracy: correct as f64 / labels.len() as f64,
        confusion,
        total: labels.len(),
    }
}

/// Per fold: extract train/test features with the fixed extractor, fit the
/// chosen classifier on the train rows, score on the test rows.
pub fn classical_pipeline(
    extractor: &ModelState,
    plan: &FoldPlan,
    data: &DecodedDataset,
    kind: ClassicalKind,
    aug: &AugmentConfig,
    batch_size: usize,
) -> Result<Vec<EvalResult>> {
    if data.is_empty() {
        return Err(Error::Input("classical pipeline needs a nonempty dataset".into()));
    }
    let mut results = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let train_idx = plan.train_indices(fold);
        let test_idx = plan.test_indices(fold);
        let train_x = extract_feature_matrix(extractor, data, &train_idx, aug, batch_size)?;
        let train_y: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
        let test_x = extract_feature_matrix(extractor, data, test_idx, aug, batch_size)?;
        let test_y: Vec<usize> = test_idx.iter().map(|&i| data.labels[i]).collect();
        let model = fit_classical(kind, &train_x, &train_y)?;
        let preds = model.predict(&test_x)?;
        results.push(confusion_from_predictions(&preds, &test_y, data.num_classes()));
    }
    Ok(results)
}
