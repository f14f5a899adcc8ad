//! Conditional densities on a y-grid, approximate KL divergence and NLL.
//!
//! A model defines `p(y | x) ∝ exp(−E(x, y))`. On an evenly spaced grid
//! the normalized cell masses `pᵢ = exp(−Eᵢ − logsumexp(−E))` sum to one;
//! dividing by the spacing gives the density form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Generator};
use crate::energy::EbmModel;
use crate::error::{ensure_finite, Error, Result};
use crate::numerics::Matrix;

/// Model probabilities below this are raised to it inside the KL sum.
pub const MASS_FLOOR: f64 = 1e-12;

/// How to place the evaluation grid around a set of targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_points: usize,
    /// Padding on each side, in standard deviations of the targets.
    pub pad_sd: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_points: 1024,
            pad_sd: 3.0,
        }
    }
}

impl GridSpec {
    /// `[min y − pad·sd(y), max y + pad·sd(y)]` with `n_points` points.
    pub fn axis(&self, y: &[f64]) -> Result<GridAxis> {
        if y.is_empty() {
            return Err(Error::Contract("grid needs at least one target".into()));
        }
        ensure_finite("grid targets", y)?;
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // a constant target still needs a non-empty range
        let pad = (self.pad_sd * sd).max(1e-6 * (1.0 + lo.abs().max(hi.abs())));
        GridAxis::new(lo - pad, hi + pad, self.n_points)
    }
}

/// Evenly spaced points `lo = y₀ < … < y_{n−1} = hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Contract(format!(
                "grid needs n_points >= 2 and lo < hi, got {n_points} on [{lo}, {hi}]"
            )));
        }
        Ok(GridAxis { lo, hi, n_points })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.hi
        } else {
            self.lo + self.step() * i as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }

    /// Cell `i` and fraction `t ∈ [0, 1]` with `y = (1−t)·yᵢ + t·yᵢ₊₁`;
    /// `None` outside `[lo, hi]`.
    pub fn locate(&self, y: f64) -> Option<(usize, f64)> {
        if !(y >= self.lo && y <= self.hi) {
            return None;
        }
        let u = (y - self.lo) / self.step();
        let i = (u.floor() as usize).min(self.n_points - 2);
        Some((i, (u - i as f64).clamp(0.0, 1.0)))
    }
}

/// A normalized distribution over the points of a [`GridAxis`].
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub axis: GridAxis,
    /// Log weights before normalization (`−E` for a model).
    pub log_unnormalized: Vec<f64>,
    mass: Vec<f64>,
}

impl DensityGrid {
    pub fn from_log_weights(axis: GridAxis, log_unnormalized: Vec<f64>) -> Result<Self> {
        if log_unnormalized.len() != axis.n_points {
            return Err(Error::Dimension(format!(
                "{} log weights for {} grid points",
                log_unnormalized.len(),
                axis.n_points
            )));
        }
        let max = log_unnormalized
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() || log_unnormalized.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite("log weights on density grid".into()));
        }
        let lse = max + log_unnormalized.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let mass = log_unnormalized.iter().map(|v| (v - lse).exp()).collect();
        Ok(DensityGrid {
            axis,
            log_unnormalized,
            mass,
        })
    }

    /// Cell masses, summing to one.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Mass divided by the grid spacing.
    pub fn density(&self) -> Vec<f64> {
        let h = self.axis.step();
        self.mass.iter().map(|m| m / h).collect()
    }

    /// Mass at `y`, linear between neighbouring points.
    pub fn mass_at(&self, y: f64) -> Option<f64> {
        let (i, t) = self.axis.locate(y)?;
        Some((1.0 - t) * self.mass[i] + t * self.mass[i + 1])
    }

    /// `−Σ pᵢ log pᵢ` of the masses.
    pub fn entropy(&self) -> f64 {
        self.mass
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    }

    /// CSV with columns `y,density,mass`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("y,density,mass\n");
        let h = self.axis.step();
        for (i, m) in self.mass.iter().enumerate() {
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", self.axis.point(i), m / h, m);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `p(y | x) ∝ exp(−E(x, y))` on the grid.
pub fn model_density(model: &EbmModel, x: &[f64], axis: &GridAxis) -> Result<DensityGrid> {
    let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let ys = axis.points();
    let e = model.energies(&xm, &vec![0; ys.len()], &ys)?;
    DensityGrid::from_log_weights(*axis, e.into_iter().map(|v| -v).collect())
}

/// The generator's conditional density at `x`, discretized on the grid.
pub fn true_density(generator: Generator, x: f64, axis: &GridAxis) -> Result<DensityGrid> {
    let logs = axis.points().into_iter().map(|y| generator.log_density(x, y)).collect();
    DensityGrid::from_log_weights(*axis, logs)
}

/// `Σ p log(p / q)` over cells with `p > 0`, with `q` floored at
/// [`MASS_FLOOR`].
pub fn kl_divergence_grid(p_true: &DensityGrid, p_model: &DensityGrid) -> Result<f64> {
    if p_true.axis != p_model.axis {
        return Err(Error::Contract("KL between densities on different grids".into()));
    }
    let kl = p_true
        .mass()
        .iter()
        .zip(p_model.mass())
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * (p / q.max(MASS_FLOOR)).ln())
        .sum::<f64>();
    Ok(kl.max(0.0))
}

/// Mean KL from the generator's conditional to the model's, over `xs`.
pub fn mean_kl(model: &EbmModel, generator: Generator, xs: &[f64], axis: &GridAxis) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Contract("mean KL over no inputs".into()));
    }
    let mut total = 0.0;
    for &x in xs {
        let p = true_density(generator, x, axis)?;
        let q = model_density(model, &[x], axis)?;
        total += kl_divergence_grid(&p, &q)?;
    }
    Ok(total / xs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NllResult {
    pub mean: f64,
    pub n_used: usize,
    /// Test targets outside the grid, left out of the mean.
    pub n_excluded: usize,
}

/// Mean `−log p(y | x)` over the test set, using interpolated grid mass.
pub fn nll_grid(model: &EbmModel, test: &Dataset, axis: &GridAxis) -> Result<NllResult> {
    if test.is_empty() {
        return Err(Error::Contract("NLL over an empty test set".into()));
    }
    let mut total = 0.0;
    let mut used = 0;
    for (&x, &y) in test.x.iter().zip(&test.y) {
        if axis.locate(y).is_none() {
            continue;
        }
        let grid = model_density(model, &[x], axis)?;
        let m = grid.mass_at(y).expect("located above");
        total += -m.max(f64::MIN_POSITIVE).ln();
        used += 1;
    }
    if used == 0 {
        return Err(Error::Contract("every test target lies outside the grid".into()));
    }
    Ok(NllResult {
        mean: total / used as f64,
        n_used: used,
        n_excluded: test.len() - used,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::energy::{Architecture, EnergyKind};
    use crate::numerics::rng_from_seed;
    use rand::Rng;

    /// A joint model whose output layer is zero: constant energy.
    pub(crate) fn flat_joint_model() -> EbmModel {
        let mut model = EbmModel::new(EnergyKind::JointMlp, &Architecture::default(), &mut rng_from_seed(0, 0));
        let out = model.trunk.as_mut().unwrap().layers_mut().last_mut().unwrap();
        out.weights = Matrix::zeros(1, out.in_dim());
        out.bias = vec![0.25];
        model
    }

    fn axis(n: usize) -> GridAxis {
        GridAxis::new(-2.0, 3.0, n).unwrap()
    }

    #[test]
    fn constant_energy_is_uniform() {
        let g = DensityGrid::from_log_weights(axis(50), vec![-7.5; 50]).unwrap();
        for &m in g.mass() {
            assert!((m - 1.0 / 50.0).abs() < 1e-15);
        }
        assert!((g.entropy() - 50f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn e2_density_peaks_at_inner_value() {
        let mut rng = rng_from_seed(3, 0);
        let model = EbmModel::new(EnergyKind::E2Regression, &Architecture::default(), &mut rng);
        let x = [0.4];
        let (g, _) = model.inner_value(&Matrix::column(&x).unwrap()).unwrap();
        let ax = GridAxis::new(g[0] - 2.0, g[0] + 2.0, 801).unwrap();
        let d = model_density(&model, &x, &ax).unwrap();
        let mode = (0..ax.n_points)
            .max_by(|&a, &b| d.mass()[a].total_cmp(&d.mass()[b]))
            .unwrap();
        assert!((ax.point(mode) - g[0]).abs() <= ax.step());
    }

    #[test]
    fn normalization_and_shift_invariance() {
        for seed in 0..10 {
            let mut rng = rng_from_seed(seed, 0);
            let model = EbmModel::new(EnergyKind::JointMlp, &Architecture::default(), &mut rng);
            let x = [rng.random_range(-3.0..3.0)];
            let d = model_density(&model, &x, &axis(1024)).unwrap();
            let s: f64 = d.mass().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = d.log_unnormalized.iter().map(|v| v + 123.0).collect();
            let d2 = DensityGrid::from_log_weights(d.axis, shifted).unwrap();
            for (a, b) in d.mass().iter().zip(d2.mass()) {
                assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
            }
        }
    }

    #[test]
    fn two_cell_kl() {
        let ax = GridAxis::new(0.0, 1.0, 2).unwrap();
        let p = DensityGrid::from_log_weights(ax, vec![0.5f64.ln(), 0.5f64.ln()]).unwrap();
        let q = DensityGrid::from_log_weights(ax, vec![0.25f64.ln(), 0.75f64.ln()]).unwrap();
        let expect = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        let kl = kl_divergence_grid(&p, &q).unwrap();
        assert!((kl - expect).abs() < 1e-15);
        assert!((kl - 0.14384).abs() < 1e-5);
        assert_eq!(kl_divergence_grid(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kl_grid_mismatch() {
        let p = DensityGrid::from_log_weights(axis(4), vec![0.0; 4]).unwrap();
        let q = DensityGrid::from_log_weights(GridAxis::new(-2.0, 3.5, 4).unwrap(), vec![0.0; 4]).unwrap();
        assert!(matches!(kl_divergence_grid(&p, &q), Err(Error::Contract(_))));
    }

    #[test]
    fn kl_is_nonnegative() {
        let mut rng = rng_from_seed(11, 0);
        for _ in 0..200 {
            let n = rng.random_range(2..40);
            let ax = axis(n);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p = DensityGrid::from_log_weights(ax, a).unwrap();
            let q = DensityGrid::from_log_weights(ax, b).unwrap();
            assert!(kl_divergence_grid(&p, &q).unwrap() >= 0.0);
        }
    }

    #[test]
    fn uniform_model_nll_is_log_n() {
        let model = flat_joint_model();
        let ax = axis(64);
        let test = Dataset::from_xy(vec![0.1, 0.5, -1.0], vec![ax.point(3), ax.point(40), ax.point(63)]).unwrap();
        let r = nll_grid(&model, &test, &ax).unwrap();
        assert!((r.mean - 64f64.ln()).abs() < 1e-12);
        assert_eq!(r.n_excluded, 0);
        let outside = Dataset::from_xy(vec![0.0, 0.0], vec![10.0, 0.0]).unwrap();
        let r = nll_grid(&model, &outside, &ax).unwrap();
        assert_eq!((r.n_used, r.n_excluded), (1, 1));
    }

    #[test]
    fn nll_of_own_samples_matches_entropy() {
        let model = EbmModel::new(EnergyKind::JointMlp, &Architecture::default(), &mut rng_from_seed(5, 0));
        let ax = axis(256);
        let x = 0.7;
        let d = model_density(&model, &[x], &ax).unwrap();
        let mut rng = rng_from_seed(5, 1);
        let cdf: Vec<f64> = d
            .mass()
            .iter()
            .scan(0.0, |c, m| {
                *c += m;
                Some(*c)
            })
            .collect();
        let n = 10_000;
        let ys: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let i = cdf.partition_point(|&c| c < u).min(ax.n_points - 1);
                ax.point(i)
            })
            .collect();
        let test = Dataset::from_xy(vec![x; n], ys).unwrap();
        let r = nll_grid(&model, &test, &ax).unwrap();
        // per-sample spread of −log p bounds the Monte Carlo error
        let lp: Vec<f64> = d.mass().iter().map(|m| -m.ln()).collect();
        let var: f64 = d.mass().iter().zip(&lp).map(|(m, l)| m * (l - d.entropy()).powi(2)).sum();
        let se = (var / n as f64).sqrt();
        assert!((r.mean - d.entropy()).abs() <= 4.0 * se + 1e-9, "{} vs {} (se {se})", r.mean, d.entropy());
    }

    #[test]
    fn generator_densities_integrate_to_one() {
        let cases = [
            (Generator::A, -4.0, 4.0, [-2.5, -0.3, 0.0, 0.2, 2.0]),
            (Generator::B, -3.0, 4.0, [0.0, 0.1, 0.25, 0.5, 1.0]),
        ];
        for (generator, lo, hi, xs) in cases {
            for x in xs {
                let ax = GridAxis::new(lo, hi, 4096).unwrap();
                let total: f64 = ax.points().iter().map(|&y| generator.log_density(x, y).exp()).sum::<f64>() * ax.step();
                assert!((total - 1.0).abs() < 1e-4, "{generator:?} x={x}: {total}");
            }
        }
    }

    #[test]
    fn axis_locate() {
        let ax = GridAxis::new(0.0, 1.0, 11).unwrap();
        assert_eq!(ax.locate(1.0), Some((9, 1.0)));
        assert_eq!(ax.locate(0.0), Some((0, 0.0)));
        let (i, t) = ax.locate(0.25).unwrap();
        assert_eq!(i, 2);
        assert!((t - 0.5).abs() < 1e-12);
        assert!(ax.locate(-0.01).is_none());
        assert!(GridAxis::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn grid_refinement_is_stable() {
        let model = EbmModel::new(EnergyKind::JointMlp, &Architecture::default(), &mut rng_from_seed(8, 0));
        let ys = [-1.5, 1.4];
        let coarse = GridSpec { n_points: 1024, pad_sd: 3.0 }.axis(&ys).unwrap();
        let fine = GridSpec { n_points: 2048, pad_sd: 3.0 }.axis(&ys).unwrap();
        let xs = [-2.0, 0.0, 1.5];
        let a = mean_kl(&model, Generator::A, &xs, &coarse).unwrap();
        let b = mean_kl(&model, Generator::A, &xs, &fine).unwrap();
        assert!((a - b).abs() < 0.01 * a, "{a} vs {b}");
    }
}
