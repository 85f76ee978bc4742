//! The remaining classical learners: k-nearest-neighbors, Gaussian naive
//! Bayes, and a linear SVM trained with the Pegasos subgradient scheme.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Mat;

#[derive(Debug, Clone)]
pub struct Knn {
    x: Mat,
    y: Vec<u8>,
    k: usize,
}

impl Knn {
    pub fn fit(x: &Mat, y: &[u8], k: usize) -> Result<Self> {
        if x.rows == 0 {
            return Err(Error::model("knn", "empty training data"));
        }
        Ok(Knn {
            x: x.clone(),
            y: y.to_vec(),
            k: k.clamp(1, x.rows),
        })
    }

    pub fn predict_proba_rows(&self, x: &Mat) -> Vec<f64> {
        (0..x.rows)
            .map(|q| {
                let row = x.row(q);
                let mut dists: Vec<(f64, usize)> = (0..self.x.rows)
                    .map(|i| {
                        let d: f64 = self
                            .x
                            .row(i)
                            .iter()
                            .zip(row)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        (d, i)
                    })
                    .collect();
                // Index tiebreak keeps neighbor choice deterministic.
                dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let pos = dists[..self.k]
                    .iter()
                    .filter(|(_, i)| self.y[*i] == 1)
                    .count();
                pos as f64 / self.k as f64
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GaussianNb {
    log_prior: [f64; 2],
    means: [Vec<f64>; 2],
    vars: [Vec<f64>; 2],
}

impl GaussianNb {
    pub fn fit(x: &Mat, y: &[u8], var_smoothing: f64) -> Result<Self> {
        let d = x.cols;
        let n1 = y.iter().filter(|&&l| l == 1).count();
        let n0 = y.len() - n1;
        if n0 == 0 || n1 == 0 {
            return Err(Error::model("gaussian_nb", "single-class training data"));
        }
        let mut means = [vec![0.0; d], vec![0.0; d]];
        let mut vars = [vec![0.0; d], vec![0.0; d]];
        for i in 0..x.rows {
            let c = usize::from(y[i]);
            for (m, v) in means[c].iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        for (c, n) in [(0, n0), (1, n1)] {
            for m in &mut means[c] {
                *m /= n as f64;
            }
        }
        for i in 0..x.rows {
            let c = usize::from(y[i]);
            for f in 0..d {
                let diff = x.at(i, f) - means[c][f];
                vars[c][f] += diff * diff;
            }
        }
        let mut max_var = 0.0f64;
        for (c, n) in [(0, n0), (1, n1)] {
            for v in &mut vars[c] {
                *v /= n as f64;
                max_var = max_var.max(*v);
            }
        }
        let floor = var_smoothing * max_var.max(1e-12);
        for c in 0..2 {
            for v in &mut vars[c] {
                *v += floor;
            }
        }
        let n = y.len() as f64;
        Ok(GaussianNb {
            log_prior: [(n0 as f64 / n).ln(), (n1 as f64 / n).ln()],
            means,
            vars,
        })
    }

    pub fn predict_proba_rows(&self, x: &Mat) -> Vec<f64> {
        (0..x.rows)
            .map(|i| {
                let row = x.row(i);
                let ll = |c: usize| -> f64 {
                    self.log_prior[c]
                        + row
                            .iter()
                            .zip(self.means[c].iter().zip(&self.vars[c]))
                            .map(|(v, (m, var))| {
                                -0.5 * ((v - m) * (v - m) / var + var.ln())
                            })
                            .sum::<f64>()
                };
                let (l0, l1) = (ll(0), ll(1));
                let m = l0.max(l1);
                let e0 = (l0 - m).exp();
                let e1 = (l1 - m).exp();
                e1 / (e0 + e1)
            })
            .collect()
    }
}

/// Linear SVM trained with Pegasos (stochastic subgradient on the hinge loss
/// with lambda = 1/(C n)), averaging iterates over the second half of
/// training. Scores are a sigmoid of the margin, which preserves ranking.
#[derive(Debug, Clone)]
pub struct LinearSvm {
    weights: Vec<f64>,
    bias: f64,
}

impl LinearSvm {
    pub fn fit(x: &Mat, y: &[u8], c: f64, epochs: usize, seed: u64) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 {
            return Err(Error::model("svm", "empty training data"));
        }
        let lambda = 1.0 / (c * n as f64);
        let steps = epochs * n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut w_avg = vec![0.0; d];
        let mut b_avg = 0.0;
        let mut n_avg = 0.0f64;
        for t in 1..=steps {
            let i = rng.gen_range(0..n);
            let eta = 1.0 / (lambda * t as f64);
            let target = if y[i] == 1 { 1.0 } else { -1.0 };
            let margin: f64 =
                target * (x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b);
            for wj in w.iter_mut() {
                *wj *= 1.0 - eta * lambda;
            }
            if margin < 1.0 {
                for (wj, xj) in w.iter_mut().zip(x.row(i)) {
                    *wj += eta * target * xj;
                }
                b += eta * target * 0.1;
            }
            if t > steps / 2 {
                for (a, wj) in w_avg.iter_mut().zip(&w) {
                    *a += wj;
                }
                b_avg += b;
                n_avg += 1.0;
            }
        }
        for a in &mut w_avg {
            *a /= n_avg.max(1.0);
        }
        Ok(LinearSvm {
            weights: w_avg,
            bias: b_avg / n_avg.max(1.0),
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
                    + self.bias;
                1.0 / (1.0 + (-z).exp())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, gap: f64, seed: u64) -> (Mat, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let label = rng.gen_range(0..2) as u8;
            let shift = if label == 1 { gap } else { -gap };
            rows.push(vec![rng.gen::<f64>() + shift, rng.gen::<f64>()]);
            y.push(label);
        }
        (Mat::from_rows(&rows), y)
    }

    fn accuracy(p: &[f64], y: &[u8]) -> f64 {
        p.iter()
            .zip(y)
            .filter(|(p, &l)| (**p > 0.5) == (l == 1))
            .count() as f64
            / y.len() as f64
    }

    #[test]
    fn knn_classifies_blobs() {
        let (x, y) = blobs(120, 1.5, 2);
        let model = Knn::fit(&x, &y, 5).unwrap();
        assert!(accuracy(&model.predict_proba_rows(&x), &y) > 0.95);
    }

    #[test]
    fn gaussian_nb_classifies_blobs() {
        let (x, y) = blobs(120, 1.5, 3);
        let model = GaussianNb::fit(&x, &y, 1e-9).unwrap();
        assert!(accuracy(&model.predict_proba_rows(&x), &y) > 0.95);
    }

    #[test]
    fn svm_classifies_blobs_deterministically() {
        let (x, y) = blobs(120, 1.5, 4);
        let a = LinearSvm::fit(&x, &y, 1.0, 30, 5).unwrap();
        let b = LinearSvm::fit(&x, &y, 1.0, 30, 5).unwrap();
        let pa = a.predict_proba_rows(&x);
        assert_eq!(pa, b.predict_proba_rows(&x));
        assert!(accuracy(&pa, &y) > 0.9);
    }
}
