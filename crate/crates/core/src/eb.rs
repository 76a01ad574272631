//! Empirical-Bayes marginal-likelihood cost and scalar hyper-parameter tuner.
//!
//! The cost `F(eta) = Y^T Q(eta)^{-1} Y + log det Q(eta)` with
//! `Q(eta) = eta Phi Phi^T + sigma2 I_N` reduces, through the SVD cache, to
//! an O(n) sum per evaluation. The minimizer is located by a coarse
//! log-spaced grid scan followed by golden-section refinement of the
//! bracketing interval; the cost is one-dimensional, cheap and possibly
//! multi-modal, so grid-then-refine is both robust and easy to validate
//! against a dense grid.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::estimators::{regularized_theta, EstimateRecord, Method, SvdCache};
use crate::{Error, Result};

/// Grid and refinement settings for the hyper-parameter search. The grid
/// spans `sigma2 * 10^[log10_eta_min, log10_eta_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EbTunerConfig {
    pub grid_points: usize,
    pub log10_eta_min: f64,
    pub log10_eta_max: f64,
    /// Refinement stops when the bracket width shrinks below this fraction
    /// of the full log-range.
    pub refine_tol: f64,
    pub max_refine_iters: usize,
}

impl Default for EbTunerConfig {
    fn default() -> Self {
        Self {
            grid_points: 81,
            log10_eta_min: -8.0,
            log10_eta_max: 8.0,
            refine_tol: 1e-10,
            max_refine_iters: 200,
        }
    }
}

impl EbTunerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 3 {
            return Err(Error::InvalidConfig("eb_tuner.grid_points must be at least 3".into()));
        }
        if !(self.log10_eta_min < self.log10_eta_max) {
            return Err(Error::InvalidConfig(
                "eb_tuner.log10_eta_min must be below log10_eta_max".into(),
            ));
        }
        if !(self.refine_tol > 0.0) {
            return Err(Error::InvalidConfig("eb_tuner.refine_tol must be positive".into()));
        }
        if self.max_refine_iters == 0 {
            return Err(Error::InvalidConfig("eb_tuner.max_refine_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Marginal-likelihood cost `F(eta)` evaluated through the SVD cache:
/// `sum_i [c_i^2/(eta s_i^2 + sigma2) + log(eta s_i^2 + sigma2)]
///  + (||Y||^2 - ||c||^2)/sigma2 + (N - n) log sigma2`.
pub fn eb_cost(cache: &SvdCache, eta: f64, sigma2: f64, n_rows: usize) -> f64 {
    assert!(eta > 0.0 && sigma2 > 0.0);
    let n = cache.n();
    let s = cache.s();
    let c = cache.c();
    let mut acc = 0.0;
    let mut c_norm2 = 0.0;
    for i in 0..n {
        let q = eta * s[i] * s[i] + sigma2;
        let ci2 = c[i] * c[i];
        acc += ci2 / q + q.ln();
        c_norm2 += ci2;
    }
    acc + (cache.y_norm2() - c_norm2) / sigma2 + (n_rows - n) as f64 * sigma2.ln()
}

/// Analytic derivative `dF/deta = sum_i s_i^2 [(eta s_i^2 + sigma2) - c_i^2]
/// / (eta s_i^2 + sigma2)^2`.
pub fn eb_cost_derivative(cache: &SvdCache, eta: f64, sigma2: f64) -> f64 {
    let s = cache.s();
    let c = cache.c();
    let mut acc = 0.0;
    for i in 0..cache.n() {
        let s2 = s[i] * s[i];
        let q = eta * s2 + sigma2;
        acc += s2 * (q - c[i] * c[i]) / (q * q);
    }
    acc
}

/// Result of the hyper-parameter search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EbOptimum {
    pub eta_hat: f64,
    pub cost: f64,
    /// `|dF/deta|` at the minimizer, reported for the first-order
    /// optimality condition assumed by the asymptotic theory.
    pub stationarity: f64,
    /// The grid minimum sat on the search-range edge; the effective
    /// minimizer may lie outside the configured range.
    pub at_boundary: bool,
}

/// Minimizes `F(eta)` over `eta > 0`: coarse log-grid scan, then
/// golden-section refinement of the bracketing interval in log space.
pub fn eb_optimize(cache: &SvdCache, sigma2: f64, n_rows: usize, config: &EbTunerConfig) -> EbOptimum {
    let eta_of = |x: f64| sigma2 * 10f64.powf(x);
    let cost_of = |x: f64| eb_cost(cache, eta_of(x), sigma2, n_rows);

    let (lo, hi) = (config.log10_eta_min, config.log10_eta_max);
    let points = config.grid_points;
    let step = (hi - lo) / (points - 1) as f64;

    let mut best_idx = 0usize;
    let mut best_cost = f64::INFINITY;
    let mut grid_costs = Vec::with_capacity(points);
    for i in 0..points {
        let f = cost_of(lo + step * i as f64);
        grid_costs.push(f);
        if f < best_cost {
            best_cost = f;
            best_idx = i;
        }
    }
    let at_boundary = best_idx == 0 || best_idx == points - 1;

    // Golden-section refinement inside the grid bracket around the minimum.
    let mut a = lo + step * best_idx.saturating_sub(1) as f64;
    let mut b = lo + step * (best_idx + 1).min(points - 1) as f64;
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = cost_of(c);
    let mut fd = cost_of(d);
    let tol = config.refine_tol * (hi - lo);
    for _ in 0..config.max_refine_iters {
        if (b - a).abs() <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = cost_of(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = cost_of(d);
        }
    }
    let x_mid = 0.5 * (a + b);
    let f_mid = cost_of(x_mid);

    // Keep whichever evaluation came out lowest; refinement of a non-unimodal
    // bracket must never return something worse than the grid scan.
    let mut x_best = x_mid;
    let mut f_best = f_mid;
    for (x, f) in [(c, fc), (d, fd), (lo + step * best_idx as f64, best_cost)] {
        if f < f_best {
            x_best = x;
            f_best = f;
        }
    }

    let eta_hat = eta_of(x_best);
    EbOptimum {
        eta_hat,
        cost: f_best,
        stationarity: eb_cost_derivative(cache, eta_hat, sigma2).abs(),
        at_boundary,
    }
}

/// EB-tuned ridge estimate: optimize the marginal likelihood, then solve the
/// regularized problem at the tuned scale.
pub fn eb_regularized_estimate(
    cache: &SvdCache,
    sigma2: f64,
    n_rows: usize,
    config: &EbTunerConfig,
) -> EstimateRecord {
    let started = Instant::now();
    let opt = eb_optimize(cache, sigma2, n_rows, config);
    let theta = regularized_theta(cache, opt.eta_hat, sigma2);
    let mut rec = EstimateRecord::new(theta, Method::EbReg, started);
    rec.eta_hat = Some(opt.eta_hat);
    rec.eta_at_boundary = opt.at_boundary;
    rec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{ml_theta, PhiSvd, SvdCache};
    use crate::streams::{substream, Purpose};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_instance(rows: usize, cols: usize, key: u64) -> (DMatrix<f64>, DVector<f64>, SvdCache) {
        let mut rng = substream(key, Purpose::Check, 0, 0);
        let phi = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cache = PhiSvd::new(&phi).unwrap().cache_for(&y);
        (phi, y, cache)
    }

    /// Synthetic cache with `Phi^T Phi = N I` and the ML estimate pinned at
    /// `theta0`; `y_norm2` carries the expected residual energy.
    fn pinned_cache(theta0: &DVector<f64>, n_rows: usize, sigma2: f64) -> SvdCache {
        let n = theta0.len();
        let s = DVector::from_element(n, (n_rows as f64).sqrt());
        let c = theta0 * (n_rows as f64).sqrt();
        let y_norm2 = c.norm_squared() + (n_rows - n) as f64 * sigma2;
        SvdCache::from_parts(s, DMatrix::identity(n, n), c, y_norm2).unwrap()
    }

    #[test]
    fn cost_matches_dense_oracle() {
        let (phi, y, cache) = random_instance(12, 3, 31);
        let dense = crate::checks::eb_cost_dense(&phi, &y, 0.7, 1.3);
        let fast = eb_cost(&cache, 0.7, 1.3, 12);
        assert_relative_eq!(fast, dense, max_relative = 1e-9);
    }

    #[test]
    fn cost_limit_at_vanishing_eta() {
        let (_, y, cache) = random_instance(10, 4, 32);
        let sigma2 = 0.8;
        let limit = y.norm_squared() / sigma2 + 10.0 * sigma2.ln();
        assert_relative_eq!(eb_cost(&cache, 1e-300, sigma2, 10), limit, max_relative = 1e-9);
    }

    #[test]
    fn cost_identity_phi_reduction() {
        // Phi = I_n, sigma2 = 1: F = sum_i [y_i^2/(eta+1) + log(eta+1)].
        let n = 5;
        let mut rng = substream(33, Purpose::Check, 0, 0);
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cache = PhiSvd::new(&DMatrix::identity(n, n)).unwrap().cache_for(&y);
        let eta = 0.37;
        let expected: f64 = y.iter().map(|yi| yi * yi / (eta + 1.0) + (eta + 1.0).ln()).sum();
        assert_relative_eq!(eb_cost(&cache, eta, 1.0, n), expected, max_relative = 1e-12);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let (_, _, cache) = random_instance(14, 4, 34);
        let mut rng = substream(35, Purpose::Check, 0, 0);
        for _ in 0..10 {
            let eta = 10f64.powf(rng.gen_range(-3.0..3.0));
            let h = 1e-6 * eta;
            let fd = (eb_cost(&cache, eta + h, 1.0, 14) - eb_cost(&cache, eta - h, 1.0, 14)) / (2.0 * h);
            let an = eb_cost_derivative(&cache, eta, 1.0);
            assert_relative_eq!(an, fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn identity_phi_analytic_minimizer() {
        // All y_i^2 = v > 1: stationary point of sum[v/(eta+1) + log(eta+1)]
        // at eta = v - 1.
        let n = 4;
        let v = 6.25f64;
        let y = DVector::from_element(n, v.sqrt());
        let cache = PhiSvd::new(&DMatrix::identity(n, n)).unwrap().cache_for(&y);
        let opt = eb_optimize(&cache, 1.0, n, &EbTunerConfig::default());
        assert_relative_eq!(opt.eta_hat, v - 1.0, max_relative = 1e-6);
        assert!(!opt.at_boundary);
        assert!(opt.stationarity < 1e-6);

        // v < 1: no interior stationary point, the tuner shrinks to the edge.
        let y = DVector::from_element(n, 0.5);
        let cache = PhiSvd::new(&DMatrix::identity(n, n)).unwrap().cache_for(&y);
        let opt = eb_optimize(&cache, 1.0, n, &EbTunerConfig::default());
        assert!(opt.at_boundary);
        assert!(opt.eta_hat < 1e-7);
    }

    #[test]
    fn optimize_beats_heuristic_scale_on_strong_signal() {
        // Noiseless-dominant data: eta_hat grows with signal energy and the
        // tuned cost undercuts the plug-in scale sigma2 ||theta_ml||^2 / n.
        let mut rng = substream(36, Purpose::Check, 0, 0);
        let n = 4;
        let rows = 40;
        let phi = DMatrix::from_fn(rows, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let theta0 = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)) * 10.0;
        let y = &phi * &theta0;
        let cache = PhiSvd::new(&phi).unwrap().cache_for(&y);
        let sigma2 = 1.0;
        let opt = eb_optimize(&cache, sigma2, rows, &EbTunerConfig::default());
        let theta_ml = ml_theta(&cache);
        let heuristic = sigma2 * theta_ml.norm_squared() / n as f64;
        let f_heuristic = eb_cost(&cache, heuristic, sigma2, rows);
        assert!(opt.cost <= f_heuristic + 1e-9 * f_heuristic.abs());
        assert!(opt.eta_hat > 1.0);
    }

    #[test]
    fn optimum_beats_validation_grid() {
        let config = EbTunerConfig::default();
        for key in 0..20u64 {
            let (_, _, cache) = random_instance(16, 5, 200 + key);
            let opt = eb_optimize(&cache, 1.0, 16, &config);
            let mut grid_min = f64::INFINITY;
            let points = 20_000;
            for i in 0..points {
                let x = config.log10_eta_min
                    + (config.log10_eta_max - config.log10_eta_min) * i as f64 / (points - 1) as f64;
                grid_min = grid_min.min(eb_cost(&cache, 10f64.powf(x), 1.0, 16));
            }
            assert!(
                opt.cost <= grid_min + 1e-9 * grid_min.abs(),
                "key {key}: {} vs grid {grid_min}",
                opt.cost
            );
        }
    }

    #[test]
    fn eta_hat_approaches_signal_energy_over_n() {
        // With Phi^T Phi = N I and theta_ml pinned at theta0, eta_hat tends
        // to ||theta0||^2 / n as N grows.
        let mut rng = substream(37, Purpose::Check, 0, 0);
        let n = 5;
        let theta0 = {
            let raw = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            raw.clone() / raw.norm()
        };
        let target = theta0.norm_squared() / n as f64;
        let mut errs = Vec::new();
        for n_rows in [1_000usize, 10_000] {
            let cache = pinned_cache(&theta0, n_rows, 1.0);
            let opt = eb_optimize(&cache, 1.0, n_rows, &EbTunerConfig::default());
            errs.push((opt.eta_hat - target).abs() / target);
        }
        assert!(errs[1] < 0.05, "relative error {}", errs[1]);
        assert!(errs[1] < errs[0]);
    }

    #[test]
    fn optimizer_is_deterministic() {
        let (_, _, cache) = random_instance(18, 6, 38);
        let a = eb_optimize(&cache, 1.0, 18, &EbTunerConfig::default());
        let b = eb_optimize(&cache, 1.0, 18, &EbTunerConfig::default());
        assert_eq!(a, b);
    }

    #[test]
    fn estimate_composes_optimize_and_solve() {
        let (_, _, cache) = random_instance(15, 4, 39);
        let rec = eb_regularized_estimate(&cache, 1.0, 15, &EbTunerConfig::default());
        let eta = rec.eta_hat.expect("eta recorded");
        assert_eq!(rec.theta_hat, regularized_theta(&cache, eta, 1.0));
        assert_eq!(rec.method, Method::EbReg);
    }

    #[test]
    fn config_validation() {
        let mut cfg = EbTunerConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.grid_points = 2;
        assert!(cfg.validate().is_err());
        cfg = EbTunerConfig { log10_eta_min: 3.0, log10_eta_max: -3.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
