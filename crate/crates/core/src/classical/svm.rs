//! Soft-margin RBF SVM trained by sequential minimal optimization.
//!
//! Each binary problem minimizes ½αᵀQα − eᵀα subject to 0 ≤ α ≤ C and
//! yᵀα = 0, with Q_ij = y_i y_j K(x_i, x_j). Working pairs are the maximal
//! KKT violator and its best second-order partner; the pair subproblem is
//! solved analytically under the box constraints.

use super::rbf_kernel;
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;
/// Dual coefficients at or below this magnitude are not retained as support
/// vectors.
pub const ALPHA_CUTOFF: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct BinarySvm {
    pub support: Vec<Vec<f64>>,
    /// α_i·y_i for each retained support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    /// Σα − ½αᵀQα at the solution (the maximization-form objective).
    pub dual_objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Largest |α| at the solution, for feasibility checks.
    pub max_alpha: f64,
    /// |Σ αᵢyᵢ| at the solution.
    pub equality_residual: f64,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64], gamma: f64) -> Result<f64> {
        let mut acc = self.bias;
        for (sv, &c) in self.support.iter().zip(&self.coef) {
            acc += c * rbf_kernel(sv, x, gamma)?;
        }
        Ok(acc)
    }
}

/// Solves one binary soft-margin dual. `y` entries must be ±1.
pub fn smo_solve(
    x: &[Vec<f64>],
    y: &[f64],
    c: f64,
    gamma: f64,
    tol: f64,
    max_iter: usize,
) -> Result<BinarySvm> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::Input("SMO needs matching, nonempty x and y".into()));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Input("SMO labels must be +1 or -1".into()));
    }
    if c <= 0.0 || gamma <= 0.0 {
        return Err(Error::Config(format!("C and gamma must be positive, got C={c}, gamma={gamma}")));
    }

    // Full kernel matrix; binary subproblems stay small.
    let mut q = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let k = rbf_kernel(&x[i], &x[j], gamma)?;
            q[i * n + j] = y[i] * y[j] * k;
            q[j * n + i] = q[i * n + j];
        }
    }

    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let mut iterations = 0;

    let kkt = loop {
        // m over the "up" set, M over the "low" set.
        let mut m = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            let in_up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            if in_up && -y[t] * grad[t] > m {
                m = -y[t] * grad[t];
                i_sel = t;
            }
        }
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let in_low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            if in_low {
                m_low = m_low.min(-y[t] * grad[t]);
            }
        }
        let gap = m - m_low;
        if gap <= tol || iterations >= max_iter {
            break gap;
        }

        // Second-order partner: maximal guaranteed decrease.
        let i = i_sel;
        let mut j_sel = usize::MAX;
        let mut best_gain = f64::NEG_INFINITY;
        for t in 0..n {
            let in_low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            if !in_low {
                continue;
            }
            let b = m + y[t] * grad[t];
            if b <= 0.0 {
                continue;
            }
            let a = (q[i * n + i] + q[t * n + t] - 2.0 * y[i] * y[t] * q[i * n + t]).max(TAU);
            let gain = b * b / a;
            if gain > best_gain {
                best_gain = gain;
                j_sel = t;
            }
        }
        if j_sel == usize::MAX {
            break gap;
        }
        let j = j_sel;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let a = (q[i * n + i] + q[j * n + j] + 2.0 * q[i * n + j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / a;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else {
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            }
        } else {
            let a = (q[i * n + i] + q[j * n + j] - 2.0 * q[i * n + j]).max(TAU);
            let delta = (grad[i] - grad[j]) / a;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if alpha[i] > c {
                alpha[i] = c;
                alpha[j] = sum - c;
            }
            if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = sum - c;
            }
            if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q[t * n + i] * di + q[t * n + j] * dj;
        }
        iterations += 1;
    };

    // Bias from the free support vectors; midpoint of the KKT bounds if none.
    let mut b_sum = 0.0;
    let mut b_count = 0usize;
    for t in 0..n {
        if alpha[t] > ALPHA_CUTOFF && alpha[t] < c - ALPHA_CUTOFF {
            b_sum += -y[t] * grad[t];
            b_count += 1;
        }
    }
    let bias = if b_count > 0 {
        b_sum / b_count as f64
    } else {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let in_up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let in_low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            if in_up {
                lb = lb.max(v);
            }
            if in_low {
                ub = ub.min(v);
            }
        }
        (ub + lb) / 2.0
    };

    // Objective: f = ½αᵀQα − eᵀα; gradient identity gives αᵀ(grad − e)/2... use
    // direct evaluation via grad: f = ½Σαᵢ(gradᵢ − 1), so dual = −f.
    let f: f64 = alpha
        .iter()
        .zip(&grad)
        .map(|(&a, &g)| 0.5 * a * (g - 1.0))
        .sum();
    let dual_objective = -f;

    let equality_residual = alpha
        .iter()
        .zip(y)
        .map(|(&a, &yi)| a * yi)
        .sum::<f64>()
        .abs();
    let max_alpha = alpha.iter().cloned().fold(0.0, f64::max);

    let mut support = Vec::new();
    let mut coef = Vec::new();
    for t in 0..n {
        if alpha[t] > ALPHA_CUTOFF {
            support.push(x[t].clone());
            coef.push(alpha[t] * y[t]);
        }
    }
    Ok(BinarySvm {
        support,
        coef,
        bias,
        dual_objective,
        kkt_residual: kkt,
        iterations,
        max_alpha,
        equality_residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MulticlassScheme {
    /// K(K−1)/2 pairwise problems with majority voting (the default).
    OneVsOne,
    /// K class-vs-rest problems, argmax decision value.
    OneVsRest,
}

#[derive(Clone, Debug)]
pub struct PairProblem {
    /// Positive class of this binary problem.
    pub class_a: usize,
    /// Negative class; `class_a` itself for one-vs-rest problems.
    pub class_b: usize,
    pub svm: BinarySvm,
}

#[derive(Clone, Debug)]
pub struct SvmModel {
    pub c: f64,
    pub gamma: f64,
    pub num_classes: usize,
    pub dim: usize,
    pub scheme: MulticlassScheme,
    pub problems: Vec<PairProblem>,
    pub tolerance: f64,
}

pub const SVM_TOLERANCE: f64 = 1e-3;
const SVM_MAX_ITER: usize = 200_000;

pub fn svm_train(
    features: &[Vec<f64>],
    labels: &[usize],
    c: f64,
    gamma: f64,
    scheme: MulticlassScheme,
) -> Result<SvmModel> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Input("SVM needs matching, nonempty features and labels".into()));
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    if num_classes < 2 || (0..num_classes).any(|k| !labels.contains(&k)) {
        return Err(Error::Input(
            "SVM needs at least two classes, each with at least one sample".into(),
        ));
    }
    let dim = features[0].len();

    let mut problems = Vec::new();
    match scheme {
        MulticlassScheme::OneVsOne => {
            for a in 0..num_classes {
                for b in (a + 1)..num_classes {
                    let mut x = Vec::new();
                    let mut y = Vec::new();
                    for (f, &l) in features.iter().zip(labels) {
                        if l == a {
                            x.push(f.clone());
                            y.push(1.0);
                        } else if l == b {
                            x.push(f.clone());
                            y.push(-1.0);
                        }
                    }
                    let svm = smo_solve(&x, &y, c, gamma, SVM_TOLERANCE, SVM_MAX_ITER)?;
                    problems.push(PairProblem {
                        class_a: a,
                        class_b: b,
                        svm,
                    });
                }
            }
        }
        MulticlassScheme::OneVsRest => {
            for a in 0..num_classes {
                let x: Vec<Vec<f64>> = features.to_vec();
                let y: Vec<f64> = labels.iter().map(|&l| if l == a { 1.0 } else { -1.0 }).collect();
                let svm = smo_solve(&x, &y, c, gamma, SVM_TOLERANCE, SVM_MAX_ITER)?;
                problems.push(PairProblem {
                    class_a: a,
                    class_b: a,
                    svm,
                });
            }
        }
    }
    Ok(SvmModel {
        c,
        gamma,
        num_classes,
        dim,
        scheme,
        problems,
        tolerance: SVM_TOLERANCE,
    })
}

pub fn svm_predict_one(model: &SvmModel, x: &[f64]) -> Result<usize> {
    if x.len() != model.dim {
        return Err(Error::Input(format!(
            "feature dimension {} does not match the model's {}",
            x.len(),
            model.dim
        )));
    }
    match model.scheme {
        MulticlassScheme::OneVsOne => {
            let mut votes = vec![0usize; model.num_classes];
            let mut margin = vec![0.0f64; model.num_classes];
            for p in &model.problems {
                let d = p.svm.decision(x, model.gamma)?;
                if d > 0.0 {
                    votes[p.class_a] += 1;
                } else {
                    votes[p.class_b] += 1;
                }
                margin[p.class_a] += d.abs();
                margin[p.class_b] += d.abs();
            }
            let top = *votes.iter().max().unwrap();
            let mut best = usize::MAX;
            let mut best_margin = f64::NEG_INFINITY;
            for k in 0..model.num_classes {
                if votes[k] == top && margin[k] > best_margin {
                    best_margin = margin[k];
                    best = k;
                }
            }
            Ok(best)
        }
        MulticlassScheme::OneVsRest => {
            let mut best = 0;
            let mut best_d = f64::NEG_INFINITY;
            for p in &model.problems {
                let d = p.svm.decision(x, model.gamma)?;
                if d > best_d {
                    best_d = d;
                    best = p.class_a;
                }
            }
            Ok(best)
        }
    }
}

pub fn svm_predict(model: &SvmModel, features: &[Vec<f64>]) -> Result<Vec<usize>> {
    features.iter().map(|x| svm_predict_one(model, x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_trains_to_perfection_with_four_support_vectors() {
        let x = vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ];
        let y = vec![1.0, 1.0, -1.0, -1.0];
        let svm = smo_solve(&x, &y, 10.0, 1.0, 1e-3, 100_000).unwrap();
        assert_eq!(svm.support.len(), 4, "XOR needs all four support vectors");
        for (xi, yi) in x.iter().zip(&y) {
            let d = svm.decision(xi, 1.0).unwrap();
            assert!(d * yi > 0.0, "point {xi:?}: decision {d}, label {yi}");
        }
        assert!(svm.kkt_residual <= 1e-3);
        assert!(svm.equality_residual <= 1e-6);
        assert!(svm.max_alpha <= 10.0 + 1e-12);
    }

    #[test]
    fn two_points_get_equal_alphas_and_midway_boundary() {
        let x = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        let y = vec![1.0, -1.0];
        let svm = smo_solve(&x, &y, 10.0, 0.5, 1e-6, 10_000).unwrap();
        assert_eq!(svm.coef.len(), 2);
        // α₁ = α₂ by the equality constraint; coefficients differ only in sign.
        assert!((svm.coef[0] + svm.coef[1]).abs() < 1e-9, "{:?}", svm.coef);
        // Midpoint of the two points must sit on the boundary.
        let d = svm.decision(&[0.0, 0.0], 0.5).unwrap();
        assert!(d.abs() < 1e-9, "midpoint decision {d}");
        let d_pos = svm.decision(&[-1.0, 0.0], 0.5).unwrap();
        assert!(d_pos > 0.0);
    }

    #[test]
    fn binary_multiclass_reduces_to_single_problem() {
        let features = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![3.0, 3.0],
            vec![3.1, 3.0],
        ];
        let labels = vec![0, 0, 1, 1];
        let model = svm_train(&features, &labels, 10.0, 1.0, MulticlassScheme::OneVsOne).unwrap();
        assert_eq!(model.problems.len(), 1);
        let preds = svm_predict(&model, &features).unwrap();
        assert_eq!(preds, labels);
    }

    #[test]
    fn predicting_support_vectors_of_separable_set_returns_own_labels() {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..6 {
            features.push(vec![i as f64 * 0.1, 1.0 + i as f64 * 0.05]);
            labels.push(0);
            features.push(vec![4.0 + i as f64 * 0.1, -2.0]);
            labels.push(1);
            features.push(vec![-3.0, -3.0 - i as f64 * 0.1]);
            labels.push(2);
        }
        let model = svm_train(&features, &labels, 10.0, 0.7, MulticlassScheme::OneVsOne).unwrap();
        assert_eq!(model.problems.len(), 3);
        let preds = svm_predict(&model, &features).unwrap();
        assert_eq!(preds, labels);
    }

    #[test]
    fn training_order_permutation_leaves_predictions_unchanged() {
        let features: Vec<Vec<f64>> = (0..14)
            .map(|i| {
                let a = i as f64 * 0.9;
                vec![a.sin() + if i % 2 == 0 { 2.0 } else { -2.0 }, a.cos()]
            })
            .collect();
        let labels: Vec<usize> = (0..14).map(|i| i % 2).collect();
        let model = svm_train(&features, &labels, 10.0, 0.8, MulticlassScheme::OneVsOne).unwrap();

        let perm: Vec<usize> = (0..14).map(|i| (i * 5) % 14).collect();
        let pf: Vec<Vec<f64>> = perm.iter().map(|&i| features[i].clone()).collect();
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let permuted = svm_train(&pf, &pl, 10.0, 0.8, MulticlassScheme::OneVsOne).unwrap();

        let queries: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64 - 10.0) * 0.4, (i as f64 * 0.77).sin()])
            .collect();
        assert_eq!(
            svm_predict(&model, &queries).unwrap(),
            svm_predict(&permuted, &queries).unwrap()
        );
    }

    #[test]
    fn one_vs_rest_also_separates() {
        let features = vec![
            vec![0.0, 0.0],
            vec![0.2, 0.1],
            vec![5.0, 5.0],
            vec![5.2, 5.1],
            vec![-5.0, 5.0],
            vec![-5.2, 5.1],
        ];
        let labels = vec![0, 0, 1, 1, 2, 2];
        let model = svm_train(&features, &labels, 10.0, 0.5, MulticlassScheme::OneVsRest).unwrap();
        assert_eq!(model.problems.len(), 3);
        assert_eq!(svm_predict(&model, &features).unwrap(), labels);
    }

    #[test]
    fn single_class_is_an_input_error() {
        let features = vec![vec![1.0], vec![2.0]];
        let labels = vec![0, 0];
        assert!(matches!(
            svm_train(&features, &labels, 10.0, 1.0, MulticlassScheme::OneVsOne),
            Err(Error::Input(_))
        ));
    }
}
