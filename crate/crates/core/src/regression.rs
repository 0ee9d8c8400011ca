//! Interpolating regression on a Legendre feature map of the core input
//! concatenated with the raw example-specific coordinates.
//!
//! The minimum-norm least-squares solution is what gradient descent from zero
//! converges to, and with n ≪ number of features it is cheapest in the dual:
//! coef = Aᵀ (AAᵀ)⁺ y.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::dot;
use crate::synthdata::{GroundTruth, RegressionDataset};

/// Training loss the fit must reach.
pub const LOSS_TARGET: f64 = 1e-6;
/// Points of the evaluation grid over the input range.
pub const GRID_POINTS: usize = 1001;

/// P₀(t) … P_degree(t) for t ∈ [−1, 1].
pub fn legendre(t: f64, degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(degree + 1);
    out.push(1.0);
    if degree >= 1 {
        out.push(t);
    }
    for k in 1..degree {
        let kf = k as f64;
        out.push(((2.0 * kf + 1.0) * t * out[k] - kf * out[k - 1]) / (kf + 1.0));
    }
    out
}

fn to_unit(x: f64, range: (f64, f64)) -> f64 {
    2.0 * (x - range.0) / (range.1 - range.0) - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    /// Legendre coefficients (degree + 1 entries).
    pub basis_coef: Vec<f64>,
    /// Coefficients on the ε coordinates.
    pub eps_coef: Vec<f64>,
    pub train_loss: f64,
    pub grid_x: Vec<f64>,
    /// g(x_y, ε = 0) on the grid.
    pub grid_pred: Vec<f64>,
    /// Share of the fitted training signal carried by the ε coordinates.
    pub eps_fraction: f64,
}

impl RegressionFit {
    /// Concatenated [basis ⧺ ε] coefficient vector.
    pub fn coefficients(&self) -> Vec<f64> {
        self.basis_coef.iter().chain(&self.eps_coef).copied().collect()
    }

    pub fn predict_clean(&self, x: f64, range: (f64, f64)) -> f64 {
        dot(&legendre(to_unit(x, range), self.basis_coef.len() - 1), &self.basis_coef)
    }

    pub fn clean_mse(&self, truth: &GroundTruth) -> f64 {
        let n = self.grid_x.len() as f64;
        self.grid_x.iter().zip(&self.grid_pred).map(|(&x, p)| (p - truth.eval(x)).powi(2)).sum::<f64>() / n
    }

    pub fn total_variation(&self) -> f64 {
        total_variation(&self.grid_pred)
    }

    /// Columns x, truth, prediction.
    pub fn write_grid_csv(&self, truth: &GroundTruth, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "truth", "prediction"])?;
        for (&x, p) in self.grid_x.iter().zip(&self.grid_pred) {
            w.write_record([format!("{x:?}"), format!("{:?}", truth.eval(x)), format!("{p:?}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn total_variation(v: &[f64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// The grid used for clean-input evaluation.
pub fn grid(range: (f64, f64)) -> Vec<f64> {
    (0..GRID_POINTS).map(|i| range.0 + (range.1 - range.0) * i as f64 / (GRID_POINTS - 1) as f64).collect()
}

/// Minimum-norm interpolating fit. Fails with a budget error when the
/// feature map cannot drive the training loss below [`LOSS_TARGET`].
pub fn fit_min_norm(data: &RegressionDataset) -> Result<RegressionFit> {
    let cfg = &data.config;
    let n = data.y.len();
    if n == 0 || data.x.len() != n {
        return Err(Error::Dimension { expected: n, got: data.x.len() });
    }
    let degree = cfg.basis_size;
    let basis: Vec<Vec<f64>> = data.x.iter().map(|r| legendre(to_unit(r[0], cfg.x_range), degree)).collect();
    let eps: Vec<&[f64]> = data.x.iter().map(|r| &r[1..]).collect();

    let mut kp = DMatrix::<f64>::zeros(n, n);
    let mut ke = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let b = dot(&basis[i], &basis[j]);
            let e = dot(eps[i], eps[j]);
            kp[(i, j)] = b;
            kp[(j, i)] = b;
            ke[(i, j)] = e;
            ke[(j, i)] = e;
        }
    }
    let k = &kp + &ke;
    let y = DVector::from_column_slice(&data.y);
    // Numerical-rank cutoff, as in LAPACK-style pseudo-inverses.
    let svd = k.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let alpha = svd.solve(&y, f64::EPSILON * n as f64 * smax).map_err(|e| Error::Contract(e.to_string()))?;

    let fit_basis = &kp * &alpha;
    let fit_eps = &ke * &alpha;
    let resid = &fit_basis + &fit_eps - &y;
    let train_loss = resid.norm_squared() / n as f64;
    if !(train_loss < LOSS_TARGET) {
        return Err(Error::Budget(format!("training loss {train_loss:.3e} stays above {LOSS_TARGET:e}")));
    }

    let mut basis_coef = vec![0.0; degree + 1];
    for (i, row) in basis.iter().enumerate() {
        crate::matrix::axpy(alpha[i], row, &mut basis_coef);
    }
    let dim = eps.first().map_or(0, |r| r.len());
    let mut eps_coef = vec![0.0; dim];
    for (i, row) in eps.iter().enumerate() {
        crate::matrix::axpy(alpha[i], row, &mut eps_coef);
    }
    let centered_ss = |v: &DVector<f64>| {
        let m = v.mean();
        v.iter().map(|e| (e - m).powi(2)).sum::<f64>()
    };
    let (sb, se) = (centered_ss(&fit_basis), centered_ss(&fit_eps));
    let grid_x = grid(cfg.x_range);
    let grid_pred = grid_x.iter().map(|&x| dot(&legendre(to_unit(x, cfg.x_range), degree), &basis_coef)).collect();
    Ok(RegressionFit {
        basis_coef,
        eps_coef,
        train_loss,
        grid_x,
        grid_pred,
        eps_fraction: if sb + se > 0.0 { se / (sb + se) } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSummary {
    pub sigma_eps: f64,
    pub train_loss: f64,
    pub clean_mse: f64,
    pub total_variation: f64,
    pub truth_total_variation: f64,
    pub eps_fraction: f64,
}

pub fn summarize(fit: &RegressionFit, data: &RegressionDataset) -> RegressionSummary {
    let truth = &data.config.truth;
    let tv_truth = total_variation(&fit.grid_x.iter().map(|&x| truth.eval(x)).collect::<Vec<_>>());
    RegressionSummary {
        sigma_eps: data.config.sigma_eps,
        train_loss: fit.train_loss,
        clean_mse: fit.clean_mse(truth),
        total_variation: fit.total_variation(),
        truth_total_variation: tv_truth,
        eps_fraction: fit.eps_fraction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{gen_regression, seeded_rng, RegressionConfig};

    #[test]
    fn legendre_closed_forms() {
        for &t in &[-1.0, -0.3, 0.0, 0.7, 1.0] {
            let p = legendre(t, 4);
            assert!((p[2] - 0.5 * (3.0 * t * t - 1.0)).abs() < 1e-14);
            assert!((p[3] - 0.5 * (5.0 * t * t * t - 3.0 * t)).abs() < 1e-14);
            assert!((p[4] - (35.0 * t.powi(4) - 30.0 * t * t + 3.0) / 8.0).abs() < 1e-14);
        }
        assert!(legendre(1.0, 25).iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert_eq!(legendre(0.5, 0), vec![1.0]);
    }

    #[test]
    fn noiseless_realizable_fit_is_exact() {
        let cfg = RegressionConfig {
            n: 30,
            d: 10,
            sigma_eps: 0.0,
            sigma_xi: 0.0,
            basis_size: 5,
            truth: GroundTruth::Polynomial { coeffs: vec![0.5, -1.0, 0.0, 2.0] },
            ..Default::default()
        };
        let data = gen_regression(&cfg, &mut seeded_rng(0)).unwrap();
        let fit = fit_min_norm(&data).unwrap();
        assert!(fit.clean_mse(&cfg.truth) < 1e-8);
        assert!(fit.eps_coef.iter().all(|&c| c == 0.0));
        assert_eq!(fit.eps_fraction, 0.0);
    }

    #[test]
    fn unreachable_target_is_a_budget_error() {
        let cfg = RegressionConfig { n: 40, d: 5, sigma_eps: 0.0, sigma_xi: 0.1, basis_size: 3, ..Default::default() };
        let data = gen_regression(&cfg, &mut seeded_rng(1)).unwrap();
        assert!(matches!(fit_min_norm(&data), Err(Error::Budget(_))));
    }

    #[test]
    fn interpolates_and_is_minimum_norm() {
        let cfg = RegressionConfig { n: 12, d: 50, sigma_eps: 0.3, basis_size: 4, ..Default::default() };
        let data = gen_regression(&cfg, &mut seeded_rng(2)).unwrap();
        let fit = fit_min_norm(&data).unwrap();
        let coef = fit.coefficients();
        for (row, y) in data.x.iter().zip(&data.y) {
            let mut feats = legendre(row[0], 4);
            feats.extend_from_slice(&row[1..]);
            assert!((dot(&feats, &coef) - y).abs() < 1e-8);
        }
        // Adding a null-space direction keeps the fit but grows the norm; the
        // min-norm coefficients lie in the row span, so they are orthogonal to it.
        let m = nalgebra::DMatrix::from_fn(12, 55, |i, j| {
            if j < 5 { legendre(data.x[i][0], 4)[j] } else { data.x[i][j - 4] }
        });
        let c = nalgebra::DVector::from_vec(coef);
        let svd = m.clone().svd(false, true);
        let vt = svd.v_t.unwrap();
        let in_span = vt.transpose() * (&vt * &c);
        assert!((in_span - c).norm() < 1e-8);
    }

    #[test]
    fn grid_statistics() {
        let g = grid((-1.0, 1.0));
        assert_eq!(g.len(), GRID_POINTS);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[GRID_POINTS - 1], 1.0);
        let sine: Vec<f64> = g.iter().map(|&x| GroundTruth::Sine { cycles: 1.0 }.eval(x)).collect();
        assert!((total_variation(&sine) - 8.0).abs() < 1e-3);
    }
}
