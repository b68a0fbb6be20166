//! Classical classifiers over deep features: RBF SVM (SMO), KNN, and
//! L2-regularized multinomial logistic regression (L-BFGS).
//!
//! Features are upcast to f64 before any solver runs.

pub mod knn;
pub mod logreg;
pub mod pipeline;
pub mod svm;

pub use knn::{knn_fit, knn_predict, knn_predict_one, KnnModel};
pub use logreg::{logreg_train, LogRegModel};
pub use pipeline::{classical_pipeline, extract_feature_matrix, fit_classical, ClassicalKind, ClassicalModel};
pub use svm::{smo_solve, svm_predict, svm_train, BinarySvm, MulticlassScheme, PairProblem, SvmModel};

use crate::error::{Error, Result};

/// The γ behind the "scale" keyword: 1/(D · Var) with the population
/// variance taken over every entry of the feature matrix.
pub fn gamma_scale(features: &[Vec<f64>]) -> Result<f64> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Input("gamma scale needs at least two feature rows".into()));
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::Input("gamma scale needs nonempty feature rows".into()));
    }
    let count = (n * d) as f64;
    let mut mean = 0.0f64;
    for row in features {
        for &v in row {
            mean += v;
        }
    }
    mean /= count;
    let mut var = 0.0f64;
    for row in features {
        for &v in row {
            var += (v - mean) * (v - mean);
        }
    }
    var /= count;
    if var <= 0.0 {
        return Err(Error::Input("features have zero variance; gamma scale is undefined".into()));
    }
    Ok(1.0 / (d as f64 * var))
}

/// exp(−γ‖x−y‖²).
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Input(format!(
            "RBF kernel length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-gamma * d2).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_scale_unit_variance() {
        // Two rows of ±1 in every coordinate: mean 0, variance 1 → γ = 1/D.
        let d = 1280;
        let features = vec![vec![1.0; d], vec![-1.0; d]];
        let g = gamma_scale(&features).unwrap();
        assert!((g - 1.0 / d as f64).abs() < 1e-15);
    }

    #[test]
    fn gamma_scale_shrinks_with_feature_scale() {
        let features = vec![vec![0.3, -1.2, 0.7], vec![1.9, 0.2, -0.4], vec![-0.6, 0.9, 1.1]];
        let doubled: Vec<Vec<f64>> = features
            .iter()
            .map(|r| r.iter().map(|v| v * 2.0).collect())
            .collect();
        let g1 = gamma_scale(&features).unwrap();
        let g2 = gamma_scale(&doubled).unwrap();
        assert!((g2 * 4.0 - g1).abs() / g1 < 1e-12);
    }

    #[test]
    fn gamma_scale_1d_pm_one() {
        let g = gamma_scale(&[vec![-1.0], vec![1.0]]).unwrap();
        assert!((g - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_scale_zero_variance_is_input_error() {
        let err = gamma_scale(&[vec![2.0, 2.0], vec![2.0, 2.0]]).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn rbf_kernel_identity_and_known_point() {
        let x = vec![0.4, -0.9, 2.2];
        assert_eq!(rbf_kernel(&x, &x, 0.7).unwrap(), 1.0);
        // ‖x−y‖² = 1/γ → e⁻¹.
        let gamma = 0.5;
        let y = vec![0.4 + (1.0f64 / gamma).sqrt(), -0.9, 2.2];
        let k = rbf_kernel(&x, &y, gamma).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-12);
        assert!((k - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn rbf_kernel_is_symmetric() {
        let x = vec![1.0, 2.0, 3.0];
        let y = vec![-0.5, 0.0, 4.0];
        assert_eq!(
            rbf_kernel(&x, &y, 0.3).unwrap(),
            rbf_kernel(&y, &x, 0.3).unwrap()
        );
    }

    #[test]
    fn rbf_kernel_length_mismatch_is_input_error() {
        assert!(matches!(
            rbf_kernel(&[1.0], &[1.0, 2.0], 1.0),
            Err(Error::Input(_))
        ));
    }
}
