//! Machine-readable cross-validation reports and their table rendering.
//!
//! Accuracies are stored as fractions at full precision; rounding to the
//! two-decimal percent style happens only at display time. The spread is the
//! population standard deviation (divide by k): that convention reproduces
//! the published ±0.05 from the printed fold values, where the sample
//! deviation would give 0.06.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Mean and population standard deviation of fold accuracies.
pub fn aggregate(fold_accuracies: &[f64]) -> Result<(f64, f64)> {
    if fold_accuracies.is_empty() {
        return Err(Error::Input("cannot aggregate an empty fold list".into()));
    }
    let k = fold_accuracies.len() as f64;
    let mean = fold_accuracies.iter().sum::<f64>() / k;
    let var = fold_accuracies
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / k;
    Ok((mean, var.sqrt()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    /// Fraction in [0, 1].
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_loss: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub val_accuracy: Vec<f64>,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    /// Total trainable parameters; absent for classical methods ("N/A").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<usize>,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over the folds.
    pub std: f64,
    pub class_names: Vec<String>,
    /// Confusion counts summed over all folds: confusion[true][pred].
    pub confusion: Vec<Vec<usize>>,
    pub folds: Vec<FoldReport>,
    /// Every resolved setting that produced this report.
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn build(
        method: &str,
        params: Option<usize>,
        folds: Vec<FoldReport>,
        confusion: Vec<Vec<usize>>,
        class_names: Vec<String>,
        config: serde_json::Value,
    ) -> Result<MetricsReport> {
        let fold_accuracies: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let (mean, std) = aggregate(&fold_accuracies)?;
        Ok(MetricsReport {
            method: method.to_string(),
            params,
            fold_accuracies,
            mean,
            std,
            class_names,
            confusion,
            folds,
            config,
        })
    }

    pub fn params_display(&self) -> String {
        match self.params {
            Some(p) => format!("{:.1}M", p as f64 / 1e6),
            None => "N/A".to_string(),
        }
    }

    pub fn table_header(&self) -> String {
        let mut s = format!("{:<14} {:>7} {:>7} {:>6}", "Method", "Params", "Mean %", "Std %");
        for i in 1..=self.fold_accuracies.len() {
            s.push_str(&format!(" {:>6}", format!("F{i}")));
        }
        s
    }

    /// One Table-style line: method, params, mean ± std, per-fold percents.
    pub fn table_row(&self) -> String {
        let mut s = format!(
            "{:<14} {:>7} {:>7.2} {:>6.2}",
            self.method,
            self.params_display(),
            self.mean * 100.0,
            self.std * 100.0
        );
        for a in &self.fold_accuracies {
            s.push_str(&format!(" {:>6.2}", a * 100.0));
        }
        s
    }

    /// The per-fold accuracy data in CSV form.
    pub fn folds_csv(&self) -> String {
        let mut out = String::from("method,fold,accuracy_percent\n");
        for f in &self.folds {
            out.push_str(&format!("{},{},{:.6}\n", self.method, f.fold, f.accuracy * 100.0));
        }
        out
    }

    pub fn to_json_string(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("report serialization failed: {e}")))
    }

    pub fn from_json_str(s: &str) -> Result<MetricsReport> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("bad report JSON: {e}")))
    }

    /// Mean/std must be recomputable from the stored fold list.
    pub fn consistent(&self) -> bool {
        match aggregate(&self.fold_accuracies) {
            Ok((m, s)) => (m - self.mean).abs() < 1e-9 && (s - self.std).abs() < 1e-9,
            Err(_) => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_fold_values_reproduce_the_printed_row() {
        // Percent-scale values straight from the comparison table.
        let folds = [100.0, 99.88, 99.88, 100.0, 99.92];
        let (mean, std) = aggregate(&folds).unwrap();
        assert!((mean - 99.936).abs() < 1e-9);
        assert!((std - 0.054259f64).abs() < 1e-4, "{std}");
        assert_eq!(format!("{mean:.2}"), "99.94");
        assert_eq!(format!("{std:.2}"), "0.05");
        // The sample (k−1) convention would print 0.06 instead.
        let sample_std = (folds.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 4.0).sqrt();
        assert_eq!(format!("{sample_std:.2}"), "0.06");
    }

    #[test]
    fn identical_folds_have_zero_std() {
        let (mean, std) = aggregate(&[0.97, 0.97, 0.97]).unwrap();
        assert!((mean - 0.97).abs() < 1e-15);
        assert!(std.abs() < 1e-9);
    }

    #[test]
    fn two_point_case() {
        let (mean, std) = aggregate(&[0.0, 1.0]).unwrap();
        assert_eq!(mean, 0.5);
        assert_eq!(std, 0.5);
    }

    #[test]
    fn empty_fold_list_is_an_input_error() {
        assert!(matches!(aggregate(&[]), Err(Error::Input(_))));
    }

    #[test]
    fn report_round_trips_and_stays_consistent() {
        let folds: Vec<FoldReport> = [0.95, 0.97, 0.96, 0.99, 0.94]
            .iter()
            .enumerate()
            .map(|(i, &a)| FoldReport {
                fold: i,
                accuracy: a,
                best_epoch: Some(i),
                train_loss: vec![1.0, 0.5],
                val_accuracy: vec![0.8, a],
                wall_secs: 1.5,
            })
            .collect();
        let report = MetricsReport::build(
            "efficientsign",
            Some(4_247_113),
            folds,
            vec![vec![10, 0], vec![1, 9]],
            vec!["A".into(), "B".into()],
            serde_json::json!({"seed": 42}),
        )
        .unwrap();
        assert!(report.consistent());
        let json = report.to_json_string().unwrap();
        let back = MetricsReport::from_json_str(&json).unwrap();
        assert!(back.consistent());
        assert_eq!(back.fold_accuracies, report.fold_accuracies);
        assert_eq!(back.params, Some(4_247_113));
        let row = report.table_row();
        assert!(row.contains("4.2M"), "{row}");
        let csv = report.folds_csv();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with("method,fold,accuracy_percent"));
    }

    #[test]
    fn classical_reports_show_na_params() {
        let report = MetricsReport::build(
            "svm",
            None,
            vec![FoldReport {
                fold: 0,
                accuracy: 0.9,
                best_epoch: None,
                train_loss: vec![],
                val_accuracy: vec![],
                wall_secs: 0.1,
            }],
            vec![vec![1]],
            vec!["A".into()],
            serde_json::Value::Null,
        )
        .unwrap();
        assert!(report.table_row().contains("N/A"));
    }
}
