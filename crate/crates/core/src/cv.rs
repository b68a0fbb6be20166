//! Cross-validation orchestration: fold planning, per-fold training or
//! classical fitting, artifact writing, and report assembly.

use crate::checkpoint::{classical_to_checkpoint, load_model, save_model};
use crate::classical::{classical_pipeline, extract_feature_matrix, fit_classical, ClassicalKind};
use crate::data::kfold::{stratified_kfold, FoldPlan};
use crate::data::preprocess::AugmentConfig;
use crate::data::DecodedDataset;
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec, ModelState};
use crate::report::{FoldReport, MetricsReport};
use crate::train::{train_fold, AdamConfig, TrainConfig};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Deep(ModelKind),
    Classical(ClassicalKind),
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        Ok(match s {
            "efficientsign" => Method::Deep(ModelKind::EfficientSign),
            "resnet18" => Method::Deep(ModelKind::Resnet18),
            "mobilenetv2" => Method::Deep(ModelKind::MobileNetV2),
            "svm" => Method::Classical(ClassicalKind::Svm),
            "knn" => Method::Classical(ClassicalKind::Knn),
            "logreg" => Method::Classical(ClassicalKind::LogReg),
            other => {
                return Err(Error::Config(format!(
                    "unknown method '{other}'; expected one of \
                     efficientsign, resnet18, mobilenetv2, svm, knn, logreg"
                )))
            }
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Deep(k) => k.as_str(),
            Method::Classical(k) => k.as_str(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CvConfig {
    pub method: Method,
    pub preset: String,
    pub folds: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    /// Where per-fold checkpoints, report.json, and folds.csv go; nothing is
    /// written when absent.
    pub out_dir: Option<PathBuf>,
    /// Feature-extractor checkpoint for classical methods. Without one, a
    /// freshly initialized extractor is built from the preset.
    pub extractor: Option<PathBuf>,
    pub parallel_folds: bool,
}

impl CvConfig {
    pub fn new(method: Method) -> Self {
        CvConfig {
            method,
            preset: "b0".into(),
            folds: 5,
            seed: 42,
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            out_dir: None,
            extractor: None,
            parallel_folds: false,
        }
    }

    pub fn model_spec(&self, num_classes: usize) -> Result<ModelSpec> {
        let kind = match self.method {
            Method::Deep(k) => k,
            Method::Classical(_) => ModelKind::EfficientSign,
        };
        Ok(match kind {
            ModelKind::EfficientSign => ModelSpec::efficientsign(&self.preset, num_classes)?,
            ModelKind::Resnet18 => ModelSpec::resnet18(num_classes),
            ModelKind::MobileNetV2 => ModelSpec::mobilenetv2(num_classes),
        })
    }

    /// Every resolved setting, for the report's config echo.
    pub fn echo(&self, num_classes: usize) -> serde_json::Value {
        serde_json::json!({
            "method": self.method.as_str(),
            "preset": self.preset,
            "folds": self.folds,
            "seed": self.seed,
            "num_classes": num_classes,
            "train": self.train,
            "augment": self.augment,
            "adam": AdamConfig::default(),
            "bn_momentum": crate::model::BN_MOMENTUM,
            "bn_eps": crate::model::BN_EPS,
            "std_convention": "population",
            "classical": {
                "svm": {"c": 10.0, "gamma": "scale", "multiclass": "one_vs_one"},
                "knn": {"k": 5, "weights": "uniform", "metric": "euclidean"},
                "logreg": {"c": 1.0, "max_iter": 1000, "solver": "lbfgs"},
            },
            "extractor": self.extractor.as_ref().map(|p| p.display().to_string()),
            "parallel_folds": self.parallel_folds,
        })
    }
}

pub fn plan_folds(data: &DecodedDataset, cfg: &CvConfig) -> Result<FoldPlan> {
    stratified_kfold(&data.labels, cfg.folds, cfg.seed)
}

fn fold_context<T>(fold: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(io),
        other => Error::Training(format!("fold {fold}: {other}")),
    })
}

fn run_deep_fold(
    data: &DecodedDataset,
    plan: &FoldPlan,
    spec: &ModelSpec,
    cfg: &CvConfig,
    fold: usize,
) -> Result<(FoldReport, Vec<Vec<usize>>, ModelState)> {
    let started = Instant::now();
    let train_idx = plan.train_indices(fold);
    let test_idx = plan.test_indices(fold);
    let result = train_fold(
        spec,
        data,
        &train_idx,
        test_idx,
        &cfg.train,
        &cfg.augment,
        fold,
    )?;
    let report = FoldReport {
        fold,
        accuracy: result.best_val_accuracy,
        best_epoch: Some(result.best_epoch),
        train_loss: result.train_loss,
        val_accuracy: result.val_accuracy,
        wall_secs: started.elapsed().as_secs_f64(),
    };
    Ok((report, result.confusion, result.best_model))
}

/// The full protocol: stratified folds, per-fold training or classical
/// fitting, checkpoints and report on disk, and a printed table row.
pub fn run_cv(data: &DecodedDataset, cfg: &CvConfig) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Input("cross-validation needs a nonempty dataset".into()));
    }
    let num_classes = data.num_classes();
    let plan = plan_folds(data, cfg)?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let (fold_reports, confusions, params): (Vec<FoldReport>, Vec<Vec<Vec<usize>>>, Option<usize>) =
        match cfg.method {
            Method::Deep(_) => {
                let spec = cfg.model_spec(num_classes)?;
                let run = |fold: usize| -> Result<(FoldReport, Vec<Vec<usize>>, ModelState)> {
                    fold_context(fold, run_deep_fold(data, &plan, &spec, cfg, fold))
                };
                let outcomes: Vec<(FoldReport, Vec<Vec<usize>>, ModelState)> =
                    if cfg.parallel_folds {
                        (0..cfg.folds)
                            .into_par_iter()
                            .map(run)
                            .collect::<Result<_>>()?
                    } else {
                        (0..cfg.folds).map(run).collect::<Result<_>>()?
                    };
                let mut reports = Vec::new();
                let mut confusions = Vec::new();
                let mut total_params = None;
                for (report, confusion, model) in outcomes {
                    if let Some(dir) = &cfg.out_dir {
                        save_model(
                            &model,
                            Some(&cfg.train),
                            &dir.join(format!("fold{}.efsn", report.fold)),
                        )?;
                    }
                    total_params = Some(model.count_params().total);
                    reports.push(report);
                    confusions.push(confusion);
                }
                (reports, confusions, total_params)
            }
            Method::Classical(kind) => {
                let extractor = match &cfg.extractor {
                    Some(path) => load_model(path)?,
                    None => ModelState::build(cfg.model_spec(num_classes)?, cfg.seed)?,
                };
                let mut reports = Vec::new();
                let mut confusions = Vec::new();
                for fold in 0..cfg.folds {
                    let started = Instant::now();
                    let outcome = fold_context(fold, {
                        let train_idx = plan.train_indices(fold);
                        let test_idx = plan.test_indices(fold);
                        let batch = cfg.train.batch_size;
                        (|| {
                            let train_x = extract_feature_matrix(
                                &extractor, data, &train_idx, &cfg.augment, batch,
                            )?;
                            let train_y: Vec<usize> =
                                train_idx.iter().map(|&i| data.labels[i]).collect();
                            let test_x = extract_feature_matrix(
                                &extractor, data, test_idx, &cfg.augment, batch,
                            )?;
                            let test_y: Vec<usize> =
                                test_idx.iter().map(|&i| data.labels[i]).collect();
                            let model = fit_classical(kind, &train_x, &train_y)?;
                            let preds = model.predict(&test_x)?;
                            Ok((
                                crate::classical::pipeline::confusion_from_predictions(
                                    &preds, &test_y, num_classes,
                                ),
                                model,
                            ))
                        })()
                    })?;
                    let (eval, model) = outcome;
                    if let Some(dir) = &cfg.out_dir {
                        classical_to_checkpoint(&model)?
                            .write(&dir.join(format!("fold{fold}.{}.efsn", kind.as_str())))?;
                    }
                    reports.push(FoldReport {
                        fold,
                        accuracy: eval.accuracy,
                        best_epoch: None,
                        train_loss: vec![],
                        val_accuracy: vec![],
                        wall_secs: started.elapsed().as_secs_f64(),
                    });
                    confusions.push(eval.confusion);
                }
                (reports, confusions, None)
            }
        };

    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for c in &confusions {
        for (row_sum, row) in confusion.iter_mut().zip(c) {
            for (cell_sum, cell) in row_sum.iter_mut().zip(row) {
                *cell_sum += cell;
            }
        }
    }

    let report = MetricsReport::build(
        cfg.method.as_str(),
        params,
        fold_reports,
        confusion,
        data.class_names.clone(),
        cfg.echo(num_classes),
    )?;

    if let Some(dir) = &cfg.out_dir {
        write_artifacts(&report, dir)?;
    }
    println!("{}", report.table_header());
    println!("{}", report.table_row());
    Ok(report)
}

pub fn write_artifacts(report: &MetricsReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json_string()?)?;
    std::fs::write(dir.join("folds.csv"), report.folds_csv())?;
    Ok(())
}

/// Verifies that every classifier in the comparison arm can run end to end
/// on a shared plan; used by the classical CLI path.
pub fn classical_over_plan(
    extractor: &ModelState,
    plan: &FoldPlan,
    data: &DecodedDataset,
    kind: ClassicalKind,
    aug: &AugmentConfig,
    batch: usize,
) -> Result<Vec<crate::train::EvalResult>> {
    classical_pipeline(extractor, plan, data, kind, aug, batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_parse_round_trips() {
        for name in ["efficientsign", "resnet18", "mobilenetv2", "svm", "knn", "logreg"] {
            assert_eq!(Method::parse(name).unwrap().as_str(), name);
        }
        assert!(matches!(Method::parse("vgg"), Err(Error::Config(_))));
    }

    #[test]
    fn config_echo_contains_all_protocol_defaults() {
        let cfg = CvConfig::new(Method::Deep(ModelKind::EfficientSign));
        let echo = cfg.echo(26);
        assert_eq!(echo["folds"], 5);
        assert_eq!(echo["seed"], 42);
        assert_eq!(echo["train"]["epochs"], 12);
        assert_eq!(echo["train"]["base_lr"], 1e-4);
        assert_eq!(echo["augment"]["max_rotation_deg"], 15.0);
        assert_eq!(echo["classical"]["svm"]["c"], 10.0);
        assert_eq!(echo["std_convention"], "population");
    }
}
