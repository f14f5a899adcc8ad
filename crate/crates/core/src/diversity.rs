//! Pairwise feature diversity.
//!
//! For a feature vector `φ(x) ∈ ℝᴰ` the diversity statistic is
//! `½ Σ_{i≠j} (φᵢ − φⱼ)²`, the sum of squared differences over unordered
//! pairs. A feature set is (ϑ, τ)-diverse when the statistic is at least
//! `ϑ²` with probability `τ`; [`estimate_theta_tau`] measures that pair on
//! a finite sample.

use crate::error::{ensure_finite, Error, Result};
use crate::numerics::Matrix;

/// Feature activations for a batch, one row per input.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch {
    values: Matrix,
}

impl FeatureBatch {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.cols() == 0 {
            return Err(Error::Contract("feature batch needs D >= 1".into()));
        }
        ensure_finite("features", values.data())?;
        Ok(FeatureBatch { values })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn n_features(&self) -> usize {
        self.values.cols()
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.row_iter()
    }

    /// L2 norm of each row.
    pub fn row_norms(&self) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// Measured (ϑ, τ) together with the empirical feature-norm bound `A`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiversityEstimate {
    pub theta: f64,
    /// The quantile itself; `theta * theta` can differ from it in the last
    /// bit, which matters for exact coverage counts.
    pub theta_sq: f64,
    pub tau: f64,
    /// Largest row L2 norm in the sample.
    pub a_bound: f64,
    pub d: usize,
}

/// `½ Σ_{i≠j} (φᵢ − φⱼ)²`, summed over unordered pairs.
pub fn diversity_statistic(row: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..row.len() {
        for j in (i + 1)..row.len() {
            let d = row[i] - row[j];
            s += d * d;
        }
    }
    s
}

/// Estimates ϑ as the lower empirical `(1−τ)`-quantile of the diversity
/// statistic, so that at least a `τ` fraction of the rows satisfy
/// `statistic ≥ ϑ²`. `A` is the largest row norm.
pub fn estimate_theta_tau(batch: &FeatureBatch, tau: f64) -> Result<DiversityEstimate> {
    if batch.is_empty() {
        return Err(Error::Contract("cannot estimate diversity of an empty batch".into()));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Contract(format!("tau must lie in (0, 1], got {tau}")));
    }
    let mut stats: Vec<f64> = batch.rows().map(diversity_statistic).collect();
    stats.sort_by(f64::total_cmp);
    let n = stats.len();
    let mut k = ((n as f64) * (1.0 - tau)).floor() as usize;
    k = k.min(n - 1);
    // rounding in n(1-τ) must never cost coverage
    while k > 0 && ((n - k) as f64) / (n as f64) < tau {
        k -= 1;
    }
    let theta_sq = stats[k].max(0.0);
    let a_bound = batch.row_norms().into_iter().fold(0.0, f64::max);
    Ok(DiversityEstimate {
        theta: theta_sq.sqrt(),
        theta_sq,
        tau,
        a_bound,
        d: batch.n_features(),
    })
}

/// `Σ_x Σ_{i≠j} (φᵢ(x) − φⱼ(x))²` over ordered pairs, i.e. twice the summed
/// diversity statistic.
pub fn diversity_penalty(batch: &FeatureBatch) -> f64 {
    batch.rows().map(|r| 2.0 * diversity_statistic(r)).sum()
}

/// `∂ penalty / ∂φᵢ(x) = 4 (D·φᵢ(x) − Σⱼ φⱼ(x))`.
pub fn diversity_penalty_grad(batch: &FeatureBatch) -> Matrix {
    let d = batch.n_features() as f64;
    let mut grad = Matrix::zeros(batch.len(), batch.n_features());
    for (r, row) in batch.rows().enumerate() {
        let total: f64 = row.iter().sum();
        for (g, &v) in grad.row_mut(r).iter_mut().zip(row) {
            *g = 4.0 * (d * v - total);
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error, rng_from_seed};
    use proptest::prelude::*;
    use rand::Rng;

    fn batch(rows: &[Vec<f64>]) -> FeatureBatch {
        FeatureBatch::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    /// `D Σφ² − (Σφ)²`, the closed form of the pair sum.
    fn closed_form(row: &[f64]) -> f64 {
        let d = row.len() as f64;
        let sq: f64 = row.iter().map(|v| v * v).sum();
        let s: f64 = row.iter().sum();
        d * sq - s * s
    }

    #[test]
    fn statistic_examples() {
        assert_eq!(diversity_statistic(&[1.0, 2.0, 3.0]), 6.0);
        assert_eq!(closed_form(&[1.0, 2.0, 3.0]), 6.0);
        assert_eq!(diversity_statistic(&[2.5; 7]), 0.0);
        assert_eq!(diversity_statistic(&[4.0]), 0.0);
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(diversity_penalty(&batch(&[vec![1.0, 2.0, 3.0]])), 12.0);
        assert_eq!(
            diversity_penalty(&batch(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]])),
            24.0
        );
        assert_eq!(diversity_penalty(&batch(&[vec![3.0; 4], vec![-1.0; 4]])), 0.0);
    }

    #[test]
    fn penalty_gradient_examples() {
        let g = diversity_penalty_grad(&batch(&[vec![1.0, 2.0, 3.0], vec![5.0; 3]]));
        assert_eq!(g.row(0), &[-12.0, 0.0, 12.0]);
        assert_eq!(g.row(1), &[0.0; 3]);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        for seed in 0..50 {
            let mut rng = rng_from_seed(seed, 7);
            let (n, d) = (rng.random_range(1..6), rng.random_range(1..9));
            let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let fb = FeatureBatch::new(Matrix::from_vec(n, d, data.clone()).unwrap()).unwrap();
            let analytic = diversity_penalty_grad(&fb);
            let numeric = finite_diff_grad(
                |p| diversity_penalty(&FeatureBatch::new(Matrix::from_vec(n, d, p.to_vec()).unwrap()).unwrap()),
                &data,
                1e-5,
            )
            .unwrap();
            for (a, b) in analytic.data().iter().zip(&numeric) {
                if a.abs().max(b.abs()) > 1e-8 {
                    assert!(relative_error(*a, *b) <= 1e-4, "seed {seed}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn theta_of_constant_statistic() {
        let rows = vec![vec![1.0, 2.0, 3.0]; 20];
        let est = estimate_theta_tau(&batch(&rows), 0.95).unwrap();
        assert!((est.theta - 6f64.sqrt()).abs() < 1e-15);
        assert_eq!(est.d, 3);
        assert!((est.a_bound - 14f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn theta_lower_quantile_four_points() {
        // statistics 0, 10, 10, 10 for D = 2 rows [a, a ± √10]
        let s = 10f64.sqrt();
        let rows = vec![
            vec![1.0, 1.0],
            vec![0.0, s],
            vec![s, 0.0],
            vec![1.0, 1.0 + s],
        ];
        let fb = batch(&rows);
        let est = estimate_theta_tau(&fb, 0.75).unwrap();
        assert!((est.theta_sq - 10.0).abs() < 1e-12);
        // τ = 1 takes the minimum
        let est = estimate_theta_tau(&fb, 1.0).unwrap();
        assert_eq!(est.theta, 0.0);
    }

    #[test]
    fn estimate_rejects_bad_input() {
        let empty = FeatureBatch::new(Matrix::zeros(0, 3)).unwrap();
        assert!(matches!(estimate_theta_tau(&empty, 0.9), Err(Error::Contract(_))));
        let fb = batch(&[vec![1.0, 2.0]]);
        assert!(estimate_theta_tau(&fb, 0.0).is_err());
        assert!(estimate_theta_tau(&fb, 1.5).is_err());
        assert!(FeatureBatch::new(Matrix::zeros(3, 0)).is_err());
    }

    proptest! {
        #[test]
        fn pair_sum_equals_closed_form(row in prop::collection::vec(-10.0f64..10.0, 1..16)) {
            let a = diversity_statistic(&row);
            let b = closed_form(&row);
            // the closed form cancels; its rounding scales with D·Σφ²
            let scale = row.len() as f64 * row.iter().map(|v| v * v).sum::<f64>();
            prop_assert!((a - b).abs() <= 1e-12 * scale.max(1e-300));
        }

        #[test]
        fn permutation_invariant(row in prop::collection::vec(-5.0f64..5.0, 2..10), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let mut perm = row.clone();
            perm.shuffle(&mut rng_from_seed(seed, 0));
            let a = diversity_statistic(&row);
            let b = diversity_statistic(&perm);
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            let pa = diversity_penalty(&batch(&[row.clone()]));
            let pb = diversity_penalty(&batch(&[perm]));
            prop_assert!((pa - pb).abs() <= 1e-12 * pa.max(1.0));
        }

        #[test]
        fn nonnegative_and_zero_iff_equal(row in prop::collection::vec(-5.0f64..5.0, 1..10)) {
            let s = diversity_statistic(&row);
            prop_assert!(s >= 0.0);
            let all_equal = row.iter().all(|&v| v == row[0]);
            prop_assert_eq!(s == 0.0, all_equal);
        }

        #[test]
        fn scales_quadratically(row in prop::collection::vec(-5.0f64..5.0, 1..10), c in -4.0f64..4.0) {
            let scaled: Vec<f64> = row.iter().map(|v| c * v).collect();
            let a = diversity_statistic(&scaled);
            let b = c * c * diversity_statistic(&row);
            prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }

        #[test]
        fn quantile_covers_tau(
            data in prop::collection::vec(0.0f64..3.0, 12..240),
            tau in 0.05f64..=1.0,
        ) {
            let d = 4;
            let n = data.len() / d;
            let fb = FeatureBatch::new(Matrix::from_vec(n, d, data[..n * d].to_vec()).unwrap()).unwrap();
            let est = estimate_theta_tau(&fb, tau).unwrap();
            let covered = fb.rows().filter(|r| diversity_statistic(r) >= est.theta_sq).count();
            prop_assert!(covered as f64 / n as f64 >= tau);
            prop_assert!(est.theta_sq <= d as f64 * est.a_bound * est.a_bound * (1.0 + 1e-12));
        }
    }
}
