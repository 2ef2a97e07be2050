//! Multi-positive contrastive objective.
//!
//! For an anchor representation `a` with K positives `p_k` and K negatives
//! `n_k`, all L2-normalized so the dot product is the cosine similarity:
//!
//! ```text
//! L = -(1/K) * log( sum_k exp(<a,p_k>/tau) /
//!                   (sum_k exp(<a,p_k>/tau) + sum_k exp(<a,n_k>/tau)) )
//! ```
//!
//! The denominator covers exactly the anchor's own positives and negatives;
//! other anchors in the batch do not enter the sum. The batch loss is the
//! mean over anchors, and the analytic gradients here treat the inputs as
//! free vectors with `sim = dot` (callers own the normalization chain rule).

use ndarray::{Array2, Array3, ArrayView1};

use crate::error::{Error, Result};

pub struct InfonceOutput {
    pub loss: f64,
    pub per_anchor: Vec<f64>,
    pub d_anchors: Array2<f64>,
    pub d_positives: Array3<f64>,
    pub d_negatives: Array3<f64>,
}

/// Loss of a single anchor against its positives and negatives.
pub fn per_anchor_loss(
    anchor: ArrayView1<'_, f64>,
    positives: &[ArrayView1<'_, f64>],
    negatives: &[ArrayView1<'_, f64>],
    tau: f64,
) -> Result<f64> {
    validate_tau(tau)?;
    let k = positives.len();
    if k == 0 || negatives.len() != k {
        return Err(Error::validation(format!(
            "need K positives and K negatives per anchor, got {} and {}",
            k,
            negatives.len()
        )));
    }
    let pos_sims: Vec<f64> = positives.iter().map(|p| anchor.dot(p) / tau).collect();
    let neg_sims: Vec<f64> = negatives.iter().map(|n| anchor.dot(n) / tau).collect();
    let m = pos_sims
        .iter()
        .chain(neg_sims.iter())
        .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
    if !m.is_finite() {
        return Err(Error::numerical("non-finite similarity in contrastive loss"));
    }
    let pos_sum: f64 = pos_sims.iter().map(|s| (s - m).exp()).sum();
    let all_sum: f64 = pos_sum + neg_sims.iter().map(|s| (s - m).exp()).sum::<f64>();
    Ok(-(1.0 / k as f64) * (pos_sum / all_sum).ln())
}

/// Batch loss and gradients with respect to every representation.
///
/// Shapes: anchors `(B, D)`, positives and negatives `(B, K, D)`. Gradients
/// include the `1/B` factor from the batch mean.
pub fn loss_and_grads(
    anchors: &Array2<f64>,
    positives: &Array3<f64>,
    negatives: &Array3<f64>,
    tau: f64,
) -> Result<InfonceOutput> {
    validate_tau(tau)?;
    let (b, d) = anchors.dim();
    let (bp, k, dp) = positives.dim();
    let (bn, kn, dn) = negatives.dim();
    if b == 0 {
        return Err(Error::validation("empty batch"));
    }
    if bp != b || bn != b || dp != d || dn != d || kn != k || k == 0 {
        return Err(Error::validation(format!(
            "shape mismatch: anchors {:?}, positives {:?}, negatives {:?}",
            anchors.dim(),
            positives.dim(),
            negatives.dim()
        )));
    }
    for v in anchors.iter().chain(positives.iter()).chain(negatives.iter()) {
        if !v.is_finite() {
            return Err(Error::numerical("non-finite representation in contrastive loss"));
        }
    }

    let mut per_anchor = Vec::with_capacity(b);
    let mut d_anchors = Array2::zeros((b, d));
    let mut d_positives = Array3::zeros((b, k, d));
    let mut d_negatives = Array3::zeros((b, k, d));
    let inv_b = 1.0 / b as f64;
    let inv_k = 1.0 / k as f64;

    for i in 0..b {
        let anchor = anchors.row(i);
        let pos_sims: Vec<f64> = (0..k)
            .map(|j| {
                positives
                    .index_axis(ndarray::Axis(0), i)
                    .row(j)
                    .dot(&anchor)
                    / tau
            })
            .collect();
        let neg_sims: Vec<f64> = (0..k)
            .map(|j| {
                negatives
                    .index_axis(ndarray::Axis(0), i)
                    .row(j)
                    .dot(&anchor)
                    / tau
            })
            .collect();
        let m = pos_sims
            .iter()
            .chain(neg_sims.iter())
            .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        let pos_exp: Vec<f64> = pos_sims.iter().map(|s| (s - m).exp()).collect();
        let neg_exp: Vec<f64> = neg_sims.iter().map(|s| (s - m).exp()).collect();
        let p_sum: f64 = pos_exp.iter().sum();
        let s_sum: f64 = p_sum + neg_exp.iter().sum::<f64>();
        per_anchor.push(-inv_k * (p_sum / s_sum).ln());

        // dL/d(sim_p) = -(1/K) * (e_p/P - e_p/S) / tau
        // dL/d(sim_n) =  (1/K) * (e_n/S) / tau
        for j in 0..k {
            let coeff_p = -inv_k * (pos_exp[j] / p_sum - pos_exp[j] / s_sum) / tau * inv_b;
            let coeff_n = inv_k * (neg_exp[j] / s_sum) / tau * inv_b;
            let p_row = positives.index_axis(ndarray::Axis(0), i);
            let n_row = negatives.index_axis(ndarray::Axis(0), i);
            for t in 0..d {
                d_anchors[[i, t]] += coeff_p * p_row[[j, t]] + coeff_n * n_row[[j, t]];
                d_positives[[i, j, t]] = coeff_p * anchor[t];
                d_negatives[[i, j, t]] = coeff_n * anchor[t];
            }
        }
    }

    let loss = per_anchor.iter().sum::<f64>() * inv_b;
    Ok(InfonceOutput {
        loss,
        per_anchor,
        d_anchors,
        d_positives,
        d_negatives,
    })
}

fn validate_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::validation(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2, Array3};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_sims(k: usize) -> (Array2<f64>, Array3<f64>, Array3<f64>) {
        // anchor and all pairs identical: every similarity equals 1
        let d = 4;
        let mut v = Array1::zeros(d);
        v[0] = 1.0;
        let anchors = Array2::from_shape_fn((1, d), |(_, t)| v[t]);
        let positives = Array3::from_shape_fn((1, k, d), |(_, _, t)| v[t]);
        let negatives = Array3::from_shape_fn((1, k, d), |(_, _, t)| v[t]);
        (anchors, positives, negatives)
    }

    #[test]
    fn equal_similarities_hit_the_indifference_point() {
        for (k, expected) in [(1, (2.0f64).ln()), (2, 0.5 * (2.0f64).ln())] {
            let (a, p, n) = constant_sims(k);
            let out = loss_and_grads(&a, &p, &n, 0.2).unwrap();
            assert!(
                (out.loss - expected).abs() < 1e-12,
                "K={k}: got {}, want {expected}",
                out.loss
            );
        }
    }

    #[test]
    fn saturated_similarities_drive_loss_to_zero() {
        // positive sim 1, negative sim -1, tau = 0.2 -> ln(1 + e^{-10})
        let d = 3;
        let mut a = Array2::zeros((1, d));
        a[[0, 0]] = 1.0;
        let mut p = Array3::zeros((1, 1, d));
        p[[0, 0, 0]] = 1.0;
        let mut n = Array3::zeros((1, 1, d));
        n[[0, 0, 0]] = -1.0;
        let out = loss_and_grads(&a, &p, &n, 0.2).unwrap();
        let expected = (1.0 + (-10.0f64).exp()).ln();
        assert!((out.loss - expected).abs() < 1e-12, "got {}", out.loss);
        assert!((out.loss - 4.54e-5).abs() < 1e-6);
    }

    #[test]
    fn loss_decreases_as_positive_similarity_rises() {
        let d = 2;
        let mut prev = f64::INFINITY;
        for step in 0..5 {
            let a = Array2::from_shape_fn((1, d), |(_, t)| if t == 0 { 1.0 } else { 0.0 });
            let cos = -0.8 + 0.4 * step as f64;
            let p = Array3::from_shape_fn((1, 1, d), |(_, _, t)| {
                if t == 0 { cos } else { (1.0 - cos * cos).sqrt() }
            });
            let n = Array3::from_shape_fn((1, 1, d), |(_, _, t)| if t == 1 { 1.0 } else { 0.0 });
            let out = loss_and_grads(&a, &p, &n, 0.2).unwrap();
            assert!(out.loss < prev, "loss must fall as positive sim rises");
            prev = out.loss;
        }
    }

    #[test]
    fn permuting_positives_or_negatives_leaves_loss_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (b, k, d) = (3, 3, 5);
        let a = Array2::from_shape_fn((b, d), |_| rng.random_range(-1.0..1.0));
        let p = Array3::from_shape_fn((b, k, d), |_| rng.random_range(-1.0..1.0));
        let n = Array3::from_shape_fn((b, k, d), |_| rng.random_range(-1.0..1.0));
        let base = loss_and_grads(&a, &p, &n, 0.2).unwrap().loss;

        let mut p_perm = p.clone();
        for i in 0..b {
            let row0 = p.index_axis(ndarray::Axis(0), i).row(0).to_owned();
            let row2 = p.index_axis(ndarray::Axis(0), i).row(2).to_owned();
            p_perm.index_axis_mut(ndarray::Axis(0), i).row_mut(0).assign(&row2);
            p_perm.index_axis_mut(ndarray::Axis(0), i).row_mut(2).assign(&row0);
        }
        let permuted = loss_and_grads(&a, &p_perm, &n, 0.2).unwrap().loss;
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn denominator_covers_only_the_anchors_own_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (b, k, d) = (4, 2, 6);
        let a = Array2::from_shape_fn((b, d), |_| rng.random_range(-1.0..1.0));
        let p = Array3::from_shape_fn((b, k, d), |_| rng.random_range(-1.0..1.0));
        let n = Array3::from_shape_fn((b, k, d), |_| rng.random_range(-1.0..1.0));
        let base = loss_and_grads(&a, &p, &n, 0.2).unwrap();

        // rewriting every other anchor's rows must not move anchor 0's loss
        let mut a2 = a.clone();
        let mut p2 = p.clone();
        let mut n2 = n.clone();
        for i in 1..b {
            for t in 0..d {
                a2[[i, t]] = rng.random_range(-1.0..1.0);
                for j in 0..k {
                    p2[[i, j, t]] = rng.random_range(-1.0..1.0);
                    n2[[i, j, t]] = rng.random_range(-1.0..1.0);
                }
            }
        }
        let moved = loss_and_grads(&a2, &p2, &n2, 0.2).unwrap();
        assert!((base.per_anchor[0] - moved.per_anchor[0]).abs() < 1e-12);
    }

    /// Norm-wise relative error between the full analytic gradient and its
    /// central finite-difference estimate. Per-component comparison drowns in
    /// f64 cancellation noise where a component is near zero, so the vector
    /// norm is the meaningful yardstick.
    pub(crate) fn gradcheck_relative_error(
        a: &Array2<f64>,
        p: &Array3<f64>,
        n: &Array3<f64>,
        tau: f64,
    ) -> f64 {
        let out = loss_and_grads(a, p, n, tau).unwrap();
        let eps = 1e-6;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();

        let (b, d) = a.dim();
        let k = p.dim().1;
        for i in 0..b {
            for t in 0..d {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[[i, t]] += eps;
                am[[i, t]] -= eps;
                analytic.push(out.d_anchors[[i, t]]);
                numeric.push(
                    (loss_and_grads(&ap, p, n, tau).unwrap().loss
                        - loss_and_grads(&am, p, n, tau).unwrap().loss)
                        / (2.0 * eps),
                );
            }
            for j in 0..k {
                for t in 0..d {
                    let mut pp = p.clone();
                    let mut pm = p.clone();
                    pp[[i, j, t]] += eps;
                    pm[[i, j, t]] -= eps;
                    analytic.push(out.d_positives[[i, j, t]]);
                    numeric.push(
                        (loss_and_grads(a, &pp, n, tau).unwrap().loss
                            - loss_and_grads(a, &pm, n, tau).unwrap().loss)
                            / (2.0 * eps),
                    );
                    let mut np = n.clone();
                    let mut nm = n.clone();
                    np[[i, j, t]] += eps;
                    nm[[i, j, t]] -= eps;
                    analytic.push(out.d_negatives[[i, j, t]]);
                    numeric.push(
                        (loss_and_grads(a, p, &np, tau).unwrap().loss
                            - loss_and_grads(a, p, &nm, tau).unwrap().loss)
                            / (2.0 * eps),
                    );
                }
            }
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let norm_a: f64 = analytic.iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm_n: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / norm_a.max(norm_n).max(1e-12)
    }

    #[test]
    fn analytic_gradients_match_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..10 {
            let b = rng.random_range(1..=4);
            let k = rng.random_range(1..=3);
            let d = rng.random_range(2..=8);
            let a = Array2::from_shape_fn((b, d), |_| rng.random_range(-1.0..1.0));
            let p = Array3::from_shape_fn((b, k, d), |_| rng.random_range(-1.0..1.0));
            let n = Array3::from_shape_fn((b, k, d), |_| rng.random_range(-1.0..1.0));
            let rel = gradcheck_relative_error(&a, &p, &n, 0.2);
            assert!(rel <= 1e-4, "trial {trial}: gradient relative error {rel}");
        }
    }

    #[test]
    fn invalid_inputs_rejected() {
        let (a, p, n) = constant_sims(1);
        assert!(loss_and_grads(&a, &p, &n, 0.0).is_err());
        assert!(loss_and_grads(&a, &p, &n, -1.0).is_err());
        let mut bad = a.clone();
        bad[[0, 0]] = f64::NAN;
        assert!(matches!(
            loss_and_grads(&bad, &p, &n, 0.2),
            Err(Error::Numerical(_))
        ));
    }
}
