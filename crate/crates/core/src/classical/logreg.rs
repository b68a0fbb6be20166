//! Multinomial logistic regression optimized by limited-memory BFGS with a
//! backtracking (sufficient-decrease) line search.
//!
//! Objective: mean softmax cross-entropy plus ‖W‖²/(2·C·N); biases are not
//! regularized.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LogRegModel {
    /// K×D row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub num_classes: usize,
    pub dim: usize,
    pub c: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_grad_norm: f64,
}

pub const LBFGS_HISTORY: usize = 10;
pub const GRAD_TOLERANCE: f64 = 1e-5;
const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MIN_STEP: f64 = 1e-20;

/// Objective and gradient at θ = [W (K×D), b (K)].
pub(crate) fn objective(
    theta: &[f64],
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    dim: usize,
    c: f64,
) -> (f64, Vec<f64>) {
    let n = features.len();
    let (w, b) = theta.split_at(num_classes * dim);
    let mut grad = vec![0.0f64; theta.len()];
    let (gw, gb) = grad.split_at_mut(num_classes * dim);
    let mut loss = 0.0f64;
    let inv_n = 1.0 / n as f64;

    let mut logits = vec![0.0f64; num_classes];
    for (x, &label) in features.iter().zip(labels) {
        for k in 0..num_classes {
            let row = &w[k * dim..(k + 1) * dim];
            let mut acc = b[k];
            for d in 0..dim {
                acc += row[d] * x[d];
            }
            logits[k] = acc;
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - mx).exp();
            sum += *l;
        }
        loss += -(logits[label] / sum).ln() * inv_n;
        for k in 0..num_classes {
            let p = logits[k] / sum;
            let err = (p - if k == label { 1.0 } else { 0.0 }) * inv_n;
            gb[k] += err;
            let grow = &mut gw[k * dim..(k + 1) * dim];
            for d in 0..dim {
                grow[d] += err * x[d];
            }
        }
    }

    // L2 on the weights only.
    let reg = 1.0 / (c * n as f64);
    for (wi, gwi) in w.iter().zip(gw.iter_mut()) {
        loss += 0.5 * reg * wi * wi;
        *gwi += reg * wi;
    }
    (loss, grad)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn logreg_train(
    features: &[Vec<f64>],
    labels: &[usize],
    c: f64,
    max_iter: usize,
) -> Result<LogRegModel> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Input(
            "logistic regression needs matching, nonempty features and labels".into(),
        ));
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    if num_classes < 2 {
        return Err(Error::Input("logistic regression needs at least two classes".into()));
    }
    if c <= 0.0 {
        return Err(Error::Config(format!("C must be positive, got {c}")));
    }
    let dim = features[0].len();
    let n_vars = num_classes * dim + num_classes;

    let mut theta = vec![0.0f64; n_vars];
    let (mut loss, mut grad) = objective(&theta, features, labels, num_classes, dim, c);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = norm(&grad) <= GRAD_TOLERANCE;

    while iterations < max_iter && !converged {
        // Two-loop recursion for the search direction.
        let mut q = grad.clone();
        let m = s_hist.len();
        let mut alphas = vec![0.0f64; m];
        for i in (0..m).rev() {
            alphas[i] = rho_hist[i] * dot(&s_hist[i], &q);
            for (qv, yv) in q.iter_mut().zip(&y_hist[i]) {
                *qv -= alphas[i] * yv;
            }
        }
        if m > 0 {
            let last = m - 1;
            let gamma = dot(&s_hist[last], &y_hist[last]) / dot(&y_hist[last], &y_hist[last]);
            for qv in q.iter_mut() {
                *qv *= gamma;
            }
        }
        for i in 0..m {
            let beta = rho_hist[i] * dot(&y_hist[i], &q);
            for (qv, sv) in q.iter_mut().zip(&s_hist[i]) {
                *qv += (alphas[i] - beta) * sv;
            }
        }
        let direction: Vec<f64> = q.iter().map(|&v| -v).collect();
        let mut slope = dot(&grad, &direction);
        let descent = if slope < 0.0 {
            direction
        } else {
            // Fall back to steepest descent if curvature info is stale.
            slope = -dot(&grad, &grad);
            grad.iter().map(|&g| -g).collect()
        };

        // Backtracking line search with the Armijo condition.
        let mut step = 1.0f64;
        let mut accepted = None;
        while step >= MIN_STEP {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(&descent)
                .map(|(t, d)| t + step * d)
                .collect();
            let (new_loss, new_grad) =
                objective(&candidate, features, labels, num_classes, dim, c);
            if !new_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite objective during line search at iteration {iterations}"
                )));
            }
            if new_loss <= loss + ARMIJO_C1 * step * slope {
                accepted = Some((candidate, new_loss, new_grad));
                break;
            }
            step *= BACKTRACK;
        }
        let Some((new_theta, new_loss, new_grad)) = accepted else {
            break; // line search failed at machine precision; gradient is flat
        };

        let s: Vec<f64> = new_theta.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if s_hist.len() == LBFGS_HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }
        theta = new_theta;
        loss = new_loss;
        grad = new_grad;
        iterations += 1;
        converged = norm(&grad) <= GRAD_TOLERANCE;
    }

    let (weights, biases) = theta.split_at(num_classes * dim);
    Ok(LogRegModel {
        weights: weights.to_vec(),
        biases: biases.to_vec(),
        num_classes,
        dim,
        c,
        iterations,
        converged,
        final_grad_norm: norm(&grad),
    })
}

impl LogRegModel {
    /// Softmax class probabilities for one feature row.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Input(format!(
                "feature dimension {} does not match the model's {}",
                x.len(),
                self.dim
            )));
        }
        let mut logits = vec![0.0f64; self.num_classes];
        for k in 0..self.num_classes {
            let row = &self.weights[k * self.dim..(k + 1) * self.dim];
            logits[k] = self.biases[k] + dot(row, x);
        }
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - mx).exp();
            sum += *l;
        }
        for l in logits.iter_mut() {
            *l /= sum;
        }
        Ok(logits)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<usize> {
        let p = self.predict_proba(x)?;
        let mut best = 0;
        for (i, &v) in p.iter().enumerate().skip(1) {
            if v > p[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<usize>> {
        features.iter().map(|x| self.predict_one(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn zero_iterations_gives_uniform_probabilities() {
        let features = vec![vec![1.0, -2.0], vec![0.5, 3.0]];
        let labels = vec![0, 2];
        let model = logreg_train(&features, &labels, 1.0, 0).unwrap();
        let p = model.predict_proba(&[10.0, -7.0]).unwrap();
        for &v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn mirrored_1d_data_converges_to_zero_bias() {
        let features: Vec<Vec<f64>> = (1..=20)
            .flat_map(|i| {
                let v = i as f64 * 0.2;
                [vec![v], vec![-v]]
            })
            .collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let model = logreg_train(&features, &labels, 1.0, 1000).unwrap();
        assert!(model.converged, "grad norm {}", model.final_grad_norm);
        // Symmetric data: bias difference ≈ 0 and the boundary sits at x = 0.
        let p = model.predict_proba(&[0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-6, "{p:?}");
        assert_eq!(model.predict_one(&[0.4]).unwrap(), 0);
        assert_eq!(model.predict_one(&[-0.4]).unwrap(), 1);
    }

    #[test]
    fn converged_gradient_norm_meets_tolerance() {
        let mut rng = RngStream::seed(17);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..50 {
            let class = i % 3;
            let center = [(class as f64) * 2.0, -(class as f64)];
            features.push(vec![
                center[0] + rng.uniform_in(-0.5, 0.5),
                center[1] + rng.uniform_in(-0.5, 0.5),
            ]);
            labels.push(class);
        }
        let model = logreg_train(&features, &labels, 1.0, 1000).unwrap();
        assert!(model.converged, "iterations {}", model.iterations);
        // Re-evaluate the gradient independently at the returned solution.
        let mut theta = model.weights.clone();
        theta.extend_from_slice(&model.biases);
        let (_, grad) = objective(&theta, &features, &labels, 3, 2, 1.0);
        assert!(norm(&grad) <= GRAD_TOLERANCE * 1.0001, "{}", norm(&grad));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = RngStream::seed(23);
        let features: Vec<Vec<f64>> = (0..12)
            .map(|_| vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)])
            .collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let (k, d, c) = (3, 3, 1.0);
        let theta: Vec<f64> = (0..k * d + k).map(|_| rng.uniform_in(-0.5, 0.5)).collect();
        let (_, grad) = objective(&theta, &features, &labels, k, d, c);
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut tp = theta.clone();
            tp[i] += h;
            let mut tm = theta.clone();
            tm[i] -= h;
            let (lp, _) = objective(&tp, &features, &labels, k, d, c);
            let (lm, _) = objective(&tm, &features, &labels, k, d, c);
            let fd = (lp - lm) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-8);
            assert!(
                (grad[i] - fd).abs() / denom <= 1e-5,
                "coord {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn objective_at_solution_beats_random_points() {
        let mut rng = RngStream::seed(29);
        let features: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![i as f64 * 0.1 + rng.uniform_in(-0.2, 0.2)])
            .collect();
        let labels: Vec<usize> = (0..30).map(|i| usize::from(i >= 15)).collect();
        let model = logreg_train(&features, &labels, 1.0, 500).unwrap();
        let mut theta = model.weights.clone();
        theta.extend_from_slice(&model.biases);
        let (fstar, _) = objective(&theta, &features, &labels, 2, 1, 1.0);
        for _ in 0..100 {
            let random: Vec<f64> = (0..theta.len()).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let (f, _) = objective(&random, &features, &labels, 2, 1, 1.0);
            assert!(fstar <= f + 1e-9, "solution {fstar} vs random {f}");
        }
    }
}
