//! Command-line surface for the efficientsign library.

use clap::{Args, Parser, Subcommand};
use efficientsign::checkpoint::{
    features_from_checkpoint, features_to_checkpoint, load_model, save_model, Checkpoint,
};
use efficientsign::classical::{extract_feature_matrix, fit_classical, ClassicalKind};
use efficientsign::cv::{run_cv, write_artifacts, CvConfig, Method};
use efficientsign::data::kfold::stratified_kfold;
use efficientsign::data::preprocess::AugmentConfig;
use efficientsign::data::synth::synth_generate;
use efficientsign::data::{load_dataset, DecodedDataset};
use efficientsign::error::Error;
use efficientsign::gradcheck::{check_model_end_to_end, standard_layer_checks};
use efficientsign::model::{ModelSpec, ModelState};
use efficientsign::report::{FoldReport, MetricsReport};
use efficientsign::train::{evaluate, train_fold, TrainConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "efficientsign",
    about = "Attention-enhanced sign-language classifier: training, cross-validation, \
             classical baselines, and verification tools",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Training epochs
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    /// Base learning rate for the cosine schedule
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Minibatch size
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Seed for folds, init, shuffling, and augmentation
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl TrainFlags {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            base_lr: self.lr,
            batch_size: self.batch,
            lr_min: 0.0,
            seed: self.seed,
        }
    }
}

#[derive(Args, Clone)]
struct DataFlags {
    /// Dataset root: one subdirectory per class
    #[arg(long)]
    data: PathBuf,
    /// Preprocessing output size
    #[arg(long, default_value_t = 224)]
    target_size: usize,
    /// Disable training-time augmentation (resize+normalize only)
    #[arg(long, default_value_t = false)]
    no_augment: bool,
}

impl DataFlags {
    fn augment(&self) -> AugmentConfig {
        if self.no_augment {
            AugmentConfig::none(self.target_size)
        } else {
            AugmentConfig {
                target_size: self.target_size,
                ..AugmentConfig::default()
            }
        }
    }

    fn load(&self) -> Result<DecodedDataset, Error> {
        let ds = load_dataset(&self.data)?;
        for w in &ds.warnings {
            eprintln!("warning: {w}");
        }
        let decoded = ds.decode();
        for (path, err) in &decoded.decode_failures {
            eprintln!("warning: skipping {}: {err}", path.display());
        }
        if decoded.is_empty() {
            return Err(Error::Input("no decodable images in the dataset".into()));
        }
        Ok(decoded)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic glyph dataset
    Synth {
        #[arg(long, default_value_t = 26)]
        classes: usize,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output directory for the class folders
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stratified split (fold 0 is the validation split)
    Train {
        #[command(flatten)]
        data: DataFlags,
        #[arg(long, default_value = "efficientsign")]
        method: String,
        #[arg(long, default_value = "b0")]
        preset: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[command(flatten)]
        train: TrainFlags,
        /// Output directory for the best checkpoint
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full stratified k-fold cross-validation protocol
    Cv {
        #[command(flatten)]
        data: DataFlags,
        #[arg(long, default_value = "efficientsign")]
        method: String,
        #[arg(long, default_value = "b0")]
        preset: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[command(flatten)]
        train: TrainFlags,
        /// Output directory for checkpoints, report.json, folds.csv
        #[arg(long)]
        out: Option<PathBuf>,
        /// Feature-extractor checkpoint (classical methods)
        #[arg(long)]
        extractor: Option<PathBuf>,
        /// Run folds in parallel (results identical; logs interleave)
        #[arg(long, default_value_t = false)]
        parallel_folds: bool,
    },
    /// Evaluate a checkpoint on a dataset
    Eval {
        #[command(flatten)]
        data: DataFlags,
        /// Model checkpoint to evaluate
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 32)]
        batch: usize,
    },
    /// Extract deep features into a container file
    Features {
        #[command(flatten)]
        data: DataFlags,
        /// Extractor checkpoint; a fresh seeded model is built when absent
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "b0")]
        preset: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        /// Output container path
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit and score a classical classifier over CV folds
    Classical {
        /// Feature container produced by `features`
        #[arg(long, conflicts_with = "data")]
        features: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 224)]
        target_size: usize,
        #[arg(long, default_value = "svm")]
        method: String,
        /// Feature-extractor checkpoint (dataset mode)
        #[arg(long)]
        extractor: Option<PathBuf>,
        #[arg(long, default_value = "b0")]
        preset: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter count and per-component breakdown for a model spec
    Params {
        #[arg(long, default_value = "efficientsign")]
        method: String,
        #[arg(long, default_value = "b0")]
        preset: String,
        #[arg(long, default_value_t = 26)]
        classes: usize,
    },
    /// Run the finite-difference gradient verification suite
    Gradcheck {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Synth {
            classes,
            per_class,
            size,
            seed,
            out,
        } => {
            let ds = synth_generate(classes, per_class, size, seed, &out)?;
            println!(
                "wrote {} images across {} classes to {}",
                ds.len(),
                ds.num_classes(),
                out.display()
            );
            Ok(())
        }
        Cmd::Train {
            data,
            method,
            preset,
            folds,
            train,
            out,
        } => {
            let method = Method::parse(&method)?;
            let Method::Deep(kind) = method else {
                return Err(Error::Config(
                    "train handles deep methods; use `classical` for svm/knn/logreg".into(),
                ));
            };
            let decoded = data.load()?;
            let mut cfg = CvConfig::new(Method::Deep(kind));
            cfg.preset = preset;
            cfg.folds = folds;
            cfg.seed = train.seed;
            cfg.train = train.to_config();
            cfg.augment = data.augment();
            let spec = cfg.model_spec(decoded.num_classes())?;
            let plan = stratified_kfold(&decoded.labels, folds, cfg.seed)?;
            let train_idx = plan.train_indices(0);
            let result = train_fold(
                &spec,
                &decoded,
                &train_idx,
                plan.test_indices(0),
                &cfg.train,
                &cfg.augment,
                0,
            )?;
            println!(
                "best epoch {} with validation accuracy {:.4}",
                result.best_epoch, result.best_val_accuracy
            );
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let path = dir.join("model.efsn");
                save_model(&result.best_model, Some(&cfg.train), &path)?;
                println!("saved checkpoint to {}", path.display());
            }
            Ok(())
        }
        Cmd::Cv {
            data,
            method,
            preset,
            folds,
            train,
            out,
            extractor,
            parallel_folds,
        } => {
            let decoded = data.load()?;
            let mut cfg = CvConfig::new(Method::parse(&method)?);
            cfg.preset = preset;
            cfg.folds = folds;
            cfg.seed = train.seed;
            cfg.train = train.to_config();
            cfg.augment = data.augment();
            cfg.out_dir = out;
            cfg.extractor = extractor;
            cfg.parallel_folds = parallel_folds;
            run_cv(&decoded, &cfg)?;
            Ok(())
        }
        Cmd::Eval {
            data,
            checkpoint,
            batch,
        } => {
            let decoded = data.load()?;
            let model = load_model(&checkpoint)?;
            let indices: Vec<usize> = (0..decoded.len()).collect();
            let result = evaluate(&model, &decoded, &indices, &data.augment(), batch)?;
            println!("accuracy {:.4} over {} items", result.accuracy, result.total);
            for (i, name) in decoded.class_names.iter().enumerate() {
                let total: usize = result.confusion[i].iter().sum();
                if total == 0 {
                    continue;
                }
                println!(
                    "  {name}: {}/{} correct",
                    result.confusion[i][i], total
                );
            }
            Ok(())
        }
        Cmd::Features {
            data,
            checkpoint,
            preset,
            seed,
            batch,
            out,
        } => {
            let decoded = data.load()?;
            let extractor = match checkpoint {
                Some(path) => load_model(&path)?,
                None => ModelState::build(
                    ModelSpec::efficientsign(&preset, decoded.num_classes())?,
                    seed,
                )?,
            };
            let indices: Vec<usize> = (0..decoded.len()).collect();
            let rows =
                extract_feature_matrix(&extractor, &decoded, &indices, &data.augment(), batch)?;
            features_to_checkpoint(&rows, &decoded.labels)?.write(&out)?;
            println!(
                "wrote {}×{} feature matrix to {}",
                rows.len(),
                rows.first().map(|r| r.len()).unwrap_or(0),
                out.display()
            );
            Ok(())
        }
        Cmd::Classical {
            features,
            data,
            target_size,
            method,
            extractor,
            preset,
            folds,
            seed,
            out,
        } => {
            let Method::Classical(kind) = Method::parse(&method)? else {
                return Err(Error::Config(
                    "classical handles svm, knn, and logreg; use `cv` for deep methods".into(),
                ));
            };
            match (features, data) {
                (Some(path), None) => {
                    let ck = Checkpoint::read(&path)?;
                    let (rows, labels) = features_from_checkpoint(&ck)?;
                    classical_on_features(kind, &rows, &labels, folds, seed, out)
                }
                (None, Some(root)) => {
                    let flags = DataFlags {
                        data: root,
                        target_size,
                        no_augment: true,
                    };
                    let decoded = flags.load()?;
                    let mut cfg = CvConfig::new(Method::Classical(kind));
                    cfg.preset = preset;
                    cfg.folds = folds;
                    cfg.seed = seed;
                    cfg.augment = flags.augment();
                    cfg.out_dir = out;
                    cfg.extractor = extractor;
                    run_cv(&decoded, &cfg)?;
                    Ok(())
                }
                _ => Err(Error::Config(
                    "provide exactly one of --features or --data".into(),
                )),
            }
        }
        Cmd::Params {
            method,
            preset,
            classes,
        } => {
            let method = Method::parse(&method)?;
            let Method::Deep(_) = method else {
                println!("{}: N/A (classical method has no fixed parameter count)", method.as_str());
                return Ok(());
            };
            let cfg = {
                let mut c = CvConfig::new(method);
                c.preset = preset;
                c
            };
            let model = ModelState::build(cfg.model_spec(classes)?, 0)?;
            let count = model.count_params();
            println!("method    {}", method.as_str());
            println!("total     {}", count.total);
            println!("backbone  {}", count.backbone);
            println!("se        {}", count.se);
            println!("spatial   {}", count.spatial);
            println!("head      {}", count.head);
            Ok(())
        }
        Cmd::Gradcheck { seed } => {
            let mut all_pass = true;
            for check in standard_layer_checks(seed)? {
                println!(
                    "[{}] {:<24} max_rel_err {:.3e} (tol {:.0e}, {} coords)",
                    if check.passed() { "pass" } else { "FAIL" },
                    check.name,
                    check.max_rel_err,
                    check.tolerance,
                    check.coords_checked
                );
                all_pass &= check.passed();
            }
            let spec = ModelSpec::efficientsign("tiny", 8)?;
            let e2e = check_model_end_to_end(&spec, 2, 32, 5, 4, 1e-3, seed)?;
            println!(
                "[{}] {:<24} max_rel_err {:.3e} (tol {:.0e}, {} coords)",
                if e2e.passed() { "pass" } else { "FAIL" },
                e2e.name,
                e2e.max_rel_err,
                e2e.tolerance,
                e2e.coords_checked
            );
            all_pass &= e2e.passed();
            if all_pass {
                println!("all gradient checks passed");
                Ok(())
            } else {
                Err(Error::Numeric("gradient checks failed".into()))
            }
        }
    }
}

/// CV over a precomputed feature matrix.
fn classical_on_features(
    kind: ClassicalKind,
    rows: &[Vec<f64>],
    labels: &[usize],
    folds: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<(), Error> {
    let plan = stratified_kfold(labels, folds, seed)?;
    let num_classes = labels.iter().max().map(|&m| m + 1).unwrap_or(0);
    let mut fold_reports = Vec::new();
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for fold in 0..folds {
        let started = std::time::Instant::now();
        let train_idx = plan.train_indices(fold);
        let test_idx = plan.test_indices(fold);
        let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| rows[i].clone()).collect();
        let train_y: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let test_x: Vec<Vec<f64>> = test_idx.iter().map(|&i| rows[i].clone()).collect();
        let test_y: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
        let model = fit_classical(kind, &train_x, &train_y)?;
        let preds = model.predict(&test_x)?;
        let mut correct = 0usize;
        for (&p, &t) in preds.iter().zip(&test_y) {
            confusion[t][p] += 1;
            if p == t {
                correct += 1;
            }
        }
        fold_reports.push(FoldReport {
            fold,
            accuracy: correct as f64 / test_y.len() as f64,
            best_epoch: None,
            train_loss: vec![],
            val_accuracy: vec![],
            wall_secs: started.elapsed().as_secs_f64(),
        });
    }
    let class_names: Vec<String> = (0..num_classes).map(|i| format!("class{i}")).collect();
    let report = MetricsReport::build(
        kind.as_str(),
        None,
        fold_reports,
        confusion,
        class_names,
        serde_json::json!({
            "source": "feature container",
            "folds": folds,
            "seed": seed,
        }),
    )?;
    println!("{}", report.table_header());
    println!("{}", report.table_row());
    if let Some(dir) = out {
        write_artifacts(&report, &dir)?;
    }
    Ok(())
}
