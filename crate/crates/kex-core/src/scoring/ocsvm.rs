//! One-class support vector machine trained with a two-variable SMO loop.
//!
//! Solves `min 1/2 a^T Q a` subject to `0 <= a_i <= 1`, `sum a = nu * n`,
//! with `Q_ij = k(x_i, x_j)`. The sigmoid kernel is indefinite, so the
//! second-derivative term along a working pair is floored at a small tau,
//! matching the usual practice for tanh kernels.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    Sigmoid { gamma: f64, coef0: f64 },
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    pub fn eval(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
        match *self {
            Kernel::Sigmoid { gamma, coef0 } => (gamma * x.dot(&y) + coef0).tanh(),
            Kernel::Rbf { gamma } => {
                let mut d2 = 0.0;
                for (a, b) in x.iter().zip(y.iter()) {
                    d2 += (a - b) * (a - b);
                }
                (-gamma * d2).exp()
            }
            Kernel::Linear => x.dot(&y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OneClassSvm {
    kernel: Kernel,
    /// Support vectors (training rows with alpha > 0).
    support: Array2<f64>,
    alphas: Vec<f64>,
    rho: f64,
    /// Training-row indices of the support vectors, in ascending order.
    pub support_indices: Vec<usize>,
    pub iterations: usize,
}

const SMO_TOL: f64 = 1e-6;
const TAU: f64 = 1e-12;

impl OneClassSvm {
    /// Fits on training rows. Deterministic: fixed initialization and
    /// first-order working-set selection scanned in index order.
    pub fn fit(features: ArrayView2<'_, f64>, nu: f64, kernel: Kernel) -> Result<Self> {
        let n = features.nrows();
        if !(0.0..=1.0).contains(&nu) || nu <= 0.0 {
            return Err(Error::validation(format!("nu must be in (0, 1], got {nu}")));
        }
        if n < 2 {
            return Err(Error::validation("one-class SVM needs at least 2 rows"));
        }

        let q = kernel_matrix(features, kernel);

        // libsvm-style init: fill the first floor(nu*n) alphas, fractional rest
        let total = nu * n as f64;
        let mut alphas = vec![0.0f64; n];
        let full = total.floor() as usize;
        for a in alphas.iter_mut().take(full.min(n)) {
            *a = 1.0;
        }
        if full < n {
            alphas[full] = total - full as f64;
        }

        // gradient G = Q a
        let mut grad = vec![0.0f64; n];
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                sum += q[[i, j]] * alphas[j];
            }
            grad[i] = sum;
        }

        let max_iter = 100_000.max(100 * n);
        let mut iterations = 0;
        while iterations < max_iter {
            // maximal violating pair: raise mass where the gradient is lowest,
            // take it from where the gradient is highest
            let mut up: Option<usize> = None; // alpha < 1
            let mut down: Option<usize> = None; // alpha > 0
            for i in 0..n {
                if alphas[i] < 1.0 - 1e-12 && up.is_none_or(|u| grad[i] < grad[u]) {
                    up = Some(i);
                }
                if alphas[i] > 1e-12 && down.is_none_or(|d| grad[i] > grad[d]) {
                    down = Some(i);
                }
            }
            let (Some(i), Some(j)) = (up, down) else { break };
            if i == j || grad[j] - grad[i] <= SMO_TOL {
                break;
            }
            let a = (q[[i, i]] + q[[j, j]] - 2.0 * q[[i, j]]).max(TAU);
            let mut delta = (grad[j] - grad[i]) / a;
            delta = delta.min(1.0 - alphas[i]).min(alphas[j]);
            alphas[i] += delta;
            alphas[j] -= delta;
            for t in 0..n {
                grad[t] += delta * (q[[t, i]] - q[[t, j]]);
            }
            iterations += 1;
        }
        if iterations >= max_iter {
            log::warn!("one-class SVM stopped at iteration cap {max_iter}");
        }

        // rho from KKT: free vectors satisfy (Q a)_i = rho
        let free: Vec<usize> = (0..n)
            .filter(|&i| alphas[i] > 1e-12 && alphas[i] < 1.0 - 1e-12)
            .collect();
        let rho = if !free.is_empty() {
            free.iter().map(|&i| grad[i]).sum::<f64>() / free.len() as f64
        } else {
            let ub = (0..n)
                .filter(|&i| alphas[i] <= 1e-12)
                .map(|i| grad[i])
                .fold(f64::INFINITY, f64::min);
            let lb = (0..n)
                .filter(|&i| alphas[i] >= 1.0 - 1e-12)
                .map(|i| grad[i])
                .fold(f64::NEG_INFINITY, f64::max);
            match (ub.is_finite(), lb.is_finite()) {
                (true, true) => 0.5 * (ub + lb),
                (true, false) => ub,
                (false, true) => lb,
                (false, false) => 0.0,
            }
        };

        let support_indices: Vec<usize> = (0..n).filter(|&i| alphas[i] > 1e-12).collect();
        let mut support = Array2::zeros((support_indices.len(), features.ncols()));
        let mut kept = Vec::with_capacity(support_indices.len());
        for (row, &i) in support_indices.iter().enumerate() {
            support.row_mut(row).assign(&features.row(i));
            kept.push(alphas[i]);
        }
        Ok(OneClassSvm {
            kernel,
            support,
            alphas: kept,
            rho,
            support_indices,
            iterations,
        })
    }

    /// Signed decision value; positive means inside the normal region.
    pub fn decision(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut sum = 0.0;
        for (row, alpha) in self.support.rows().into_iter().zip(&self.alphas) {
            sum += alpha * self.kernel.eval(row, x);
        }
        sum - self.rho
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

fn kernel_matrix(features: ArrayView2<'_, f64>, kernel: Kernel) -> Array2<f64> {
    use rayon::prelude::*;
    let n = features.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| kernel.eval(features.row(i), features.row(j)))
                .collect()
        })
        .collect();
    let mut q = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            q[[i, j]] = v;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_cluster(n: usize, d: usize, center: f64, sigma: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        Array2::from_shape_fn((n, d), |(_, j)| {
            center * ((j % 3) as f64 + 1.0) + normal.sample(&mut rng)
        })
    }

    #[test]
    fn nu_bounds_training_rejections() {
        for (nu, seed) in [(0.1, 1u64), (0.2, 2), (0.5, 3)] {
            let data = gaussian_cluster(120, 6, 1.0, 0.05, seed);
            let model = OneClassSvm::fit(data.view(), nu, Kernel::Rbf { gamma: 0.5 }).unwrap();
            let rejected = data
                .rows()
                .into_iter()
                .filter(|row| model.decision(row.view()) < 0.0)
                .count();
            let fraction = rejected as f64 / 120.0;
            assert!(
                fraction <= nu + 0.05,
                "nu={nu}: rejected fraction {fraction}"
            );
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let data = gaussian_cluster(60, 4, 1.0, 0.2, 9);
        let kernel = Kernel::Sigmoid { gamma: 0.25, coef0: 0.0 };
        let a = OneClassSvm::fit(data.view(), 0.15, kernel).unwrap();
        let b = OneClassSvm::fit(data.view(), 0.15, kernel).unwrap();
        assert_eq!(a.support_indices, b.support_indices);
        assert_eq!(a.rho(), b.rho());
    }

    #[test]
    fn far_points_score_outside() {
        let data = gaussian_cluster(80, 5, 1.0, 0.05, 4);
        let model = OneClassSvm::fit(data.view(), 0.1, Kernel::Rbf { gamma: 1.0 }).unwrap();
        let centroid = data.mean_axis(ndarray::Axis(0)).unwrap();
        assert!(model.decision(centroid.view()) > 0.0, "centroid is inside");
        let far = &centroid + 100.0;
        assert!(model.decision(far.view()) < 0.0, "far point is outside");
    }
}
