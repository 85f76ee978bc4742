//! Logistic regression (IRLS) and linear discriminant analysis.

use crate::error::{Error, Result};
use crate::nn::Mat;

/// Solve A x = b by Gaussian elimination with partial pivoting. A is square
/// and small (meta-feature or base-score dimensionality).
pub(crate) fn solve_linear(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows;
    assert_eq!(a.cols, n);
    assert_eq!(b.len(), n);
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            m.at(i, col)
                .abs()
                .partial_cmp(&m.at(j, col).abs())
                .unwrap()
        })?;
        if m.at(pivot, col).abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                let tmp = m.at(col, c);
                *m.at_mut(col, c) = m.at(pivot, c);
                *m.at_mut(pivot, c) = tmp;
            }
            rhs.swap(col, pivot);
        }
        for row in col + 1..n {
            let factor = m.at(row, col) / m.at(col, col);
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                let v = m.at(col, c);
                *m.at_mut(row, c) -= factor * v;
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for c in row + 1..n {
            acc -= m.at(row, c) * x[c];
        }
        x[row] = acc / m.at(row, row);
    }
    Some(x)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Binary logistic regression fit by iteratively reweighted least squares.
/// The ridge penalty applies to weights only, never the intercept.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LogisticRegression {
    pub fn fit(x: &Mat, y: &[u8], ridge: f64, max_iter: usize, tol: f64) -> Result<Self> {
        let (n, d) = x.shape();
        if y.len() != n {
            return Err(Error::dim("LogisticRegression::fit labels", n, y.len()));
        }
        // Augmented design: last column is the intercept.
        let mut beta = vec![0.0; d + 1];
        for _ in 0..max_iter {
            // Gradient and Hessian of the penalized log-loss.
            let mut grad = vec![0.0; d + 1];
            let mut hess = Mat::zeros(d + 1, d + 1);
            for i in 0..n {
                let row = x.row(i);
                let z: f64 =
                    row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + beta[d];
                let p = sigmoid(z).clamp(1e-12, 1.0 - 1e-12);
                let resid = p - f64::from(y[i]);
                let w = p * (1.0 - p);
                for a in 0..d {
                    grad[a] += resid * row[a];
                    for b in a..d {
                        *hess.at_mut(a, b) += w * row[a] * row[b];
                    }
                    *hess.at_mut(a, d) += w * row[a];
                }
                grad[d] += resid;
                *hess.at_mut(d, d) += w;
            }
            for a in 0..d {
                grad[a] += ridge * beta[a];
                *hess.at_mut(a, a) += ridge;
                for b in a + 1..=d {
                    let v = hess.at(a, b);
                    *hess.at_mut(b, a) = v;
                }
            }
            // Tiny extra damping keeps the Newton system solvable when
            // columns are duplicated or the data is near-separable.
            for a in 0..=d {
                *hess.at_mut(a, a) += 1e-12;
            }

            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if grad_norm < tol {
                break;
            }
            let step = solve_linear(&hess, &grad).ok_or_else(|| {
                Error::model("logistic_regression", "singular Newton system")
            })?;
            for (b, s) in beta.iter_mut().zip(&step) {
                *b -= s;
            }
            if !beta.iter().all(|b| b.is_finite()) {
                return Err(Error::model("logistic_regression", "diverged"));
            }
        }
        Ok(LogisticRegression {
            weights: beta[..d].to_vec(),
            intercept: beta[d],
        })
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.intercept
    }

    pub fn predict_proba_rows(&self, x: &Mat) -> Vec<f64> {
        (0..x.rows).map(|i| sigmoid(self.decision(x.row(i)))).collect()
    }
}

/// Two-class LDA with pooled covariance and a ridge for stability. Scores are
/// the Gaussian posterior for class 1.
#[derive(Debug, Clone)]
pub struct LinearDiscriminant {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearDiscriminant {
    pub fn fit(x: &Mat, y: &[u8], ridge: f64) -> Result<Self> {
        let (n, d) = x.shape();
        let n1 = y.iter().filter(|&&l| l == 1).count();
        let n0 = n - n1;
        if n0 == 0 || n1 == 0 {
            return Err(Error::model("lda", "single-class training data"));
        }
        let mut mean0 = vec![0.0; d];
        let mut mean1 = vec![0.0; d];
        for i in 0..n {
            let target = if y[i] == 1 { &mut mean1 } else { &mut mean0 };
            for (m, v) in target.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean0 {
            *m /= n0 as f64;
        }
        for m in &mut mean1 {
            *m /= n1 as f64;
        }

        let mut cov = Mat::zeros(d, d);
        for i in 0..n {
            let mean = if y[i] == 1 { &mean1 } else { &mean0 };
            let row = x.row(i);
            for a in 0..d {
                let da = row[a] - mean[a];
                for b in a..d {
                    *cov.at_mut(a, b) += da * (row[b] - mean[b]);
                }
            }
        }
        let denom = (n.saturating_sub(2)).max(1) as f64;
        for a in 0..d {
            for b in a..d {
                let v = cov.at(a, b) / denom;
                *cov.at_mut(a, b) = v;
                *cov.at_mut(b, a) = v;
            }
            *cov.at_mut(a, a) += ridge;
        }

        let diff: Vec<f64> = mean1.iter().zip(&mean0).map(|(a, b)| a - b).collect();
        let weights = solve_linear(&cov, &diff)
            .ok_or_else(|| Error::model("lda", "singular pooled covariance"))?;
        let mid: f64 = weights
            .iter()
            .zip(mean0.iter().zip(&mean1))
            .map(|(w, (m0, m1))| w * (m0 + m1) / 2.0)
            .sum();
        let prior = (n1 as f64 / n0 as f64).ln();
        Ok(LinearDiscriminant {
            weights,
            intercept: prior - mid,
        })
    }

    pub fn predict_proba_rows(&self, x: &Mat) -> Vec<f64> {
        (0..x.rows)
            .map(|i| {
                let z: f64 = x
                    .row(i)
                    .iter()
                    .zip(&self.weights)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + self.intercept;
                sigmoid(z)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solver_inverts_small_system() {
        let a = Mat::from_vec(2, 2, vec![2.0, 1.0, 1.0, 3.0]);
        let x = solve_linear(&a, &[5.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_separates_a_toy_set() {
        let x = Mat::from_rows(&[
            vec![-2.0],
            vec![-1.5],
            vec![-1.0],
            vec![1.0],
            vec![1.5],
            vec![2.0],
        ]);
        let y = [0, 0, 0, 1, 1, 1];
        let model = LogisticRegression::fit(&x, &y, 1e-6, 100, 1e-10).unwrap();
        let p = model.predict_proba_rows(&x);
        assert!(p[0] < 0.5 && p[5] > 0.5);
        assert!(p.iter().zip(&y).all(|(p, &l)| (p > &0.5) == (l == 1)));
    }

    #[test]
    fn duplicate_columns_match_single_column_predictions() {
        // Noisy toy set (not separable) so the unpenalized optimum exists.
        let raw: Vec<(f64, u8)> = (0..50)
            .map(|i| {
                let v = (i as f64 - 25.0) / 10.0;
                let label = u8::from((i * 7 + 3) % 11 < 5) ^ u8::from(v > 0.0);
                (v, label ^ 1)
            })
            .collect();
        let x1 = Mat::from_rows(&raw.iter().map(|(v, _)| vec![*v]).collect::<Vec<_>>());
        let x2 = Mat::from_rows(&raw.iter().map(|(v, _)| vec![*v, *v]).collect::<Vec<_>>());
        let y: Vec<u8> = raw.iter().map(|(_, l)| *l).collect();
        let single = LogisticRegression::fit(&x1, &y, 1e-10, 200, 1e-12).unwrap();
        let dup = LogisticRegression::fit(&x2, &y, 1e-10, 200, 1e-12).unwrap();
        let p1 = single.predict_proba_rows(&x1);
        let p2 = dup.predict_proba_rows(&x2);
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn lda_matches_direction_on_gaussian_blobs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..60 {
            rows.push(vec![rng.gen::<f64>() - 2.0, rng.gen::<f64>()]);
            y.push(0u8);
            rows.push(vec![rng.gen::<f64>() + 2.0, rng.gen::<f64>()]);
            y.push(1u8);
        }
        let x = Mat::from_rows(&rows);
        let model = LinearDiscriminant::fit(&x, &y, 1e-6).unwrap();
        let p = model.predict_proba_rows(&x);
        let correct = p
            .iter()
            .zip(&y)
            .filter(|(p, &l)| (**p > 0.5) == (l == 1))
            .count();
        assert!(correct as f64 / y.len() as f64 > 0.95);
    }

    #[test]
    fn lda_single_class_is_model_error() {
        let x = Mat::from_rows(&[vec![1.0], vec![2.0]]);
        assert!(LinearDiscriminant::fit(&x, &[0, 0], 1e-6).is_err());
    }
}
