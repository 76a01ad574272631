//! Independent numerical cross-checks: dense-route oracles, finite
//! differences, and the identity suite behind `check-identities`.
//!
//! Everything here recomputes quantities along a route the main code never
//! takes — dense N x N solves for the marginal-likelihood cost, normal
//! equations for ML, central differences for the family derivatives — so a
//! bug in the SVD fast paths cannot hide in its own verification.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::eb::{eb_cost, eb_optimize, EbTunerConfig};
use crate::estimators::PhiSvd;
use crate::prior::{euler_residual, euler_scale, grad_log_pi, hessian_log_pi, log_pi, WeightingParams};
use crate::streams::{substream, Purpose};
use crate::xmse::{xmse_bayes_numeric, xmse_biased_numeric, xmse_eb_theoretical};

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(n, |i, _| {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[i] += h;
        minus[i] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    })
}

/// Central-difference Hessian of a scalar function.
pub fn fd_hessian<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut pp = x.clone();
            let mut pm = x.clone();
            let mut mp = x.clone();
            let mut mm = x.clone();
            pp[i] += h;
            pp[j] += h;
            pm[i] += h;
            pm[j] -= h;
            mp[i] -= h;
            mp[j] += h;
            mm[i] -= h;
            mm[j] -= h;
            hess[(i, j)] = (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h * h);
        }
    }
    hess
}

/// ML oracle: solve the normal equations `(Phi^T Phi) theta = Phi^T y`
/// directly with a Cholesky factorization.
pub fn normal_equations_solve(phi: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let gram = phi.transpose() * phi;
    let rhs = phi.transpose() * y;
    gram.cholesky().expect("gram matrix SPD").solve(&rhs)
}

/// Ridge oracle: dense solve of `[Phi^T Phi + (sigma2/eta) I] theta = Phi^T y`.
pub fn dense_ridge_solve(phi: &DMatrix<f64>, y: &DVector<f64>, eta: f64, sigma2: f64) -> DVector<f64> {
    let n = phi.ncols();
    let gram = phi.transpose() * phi + DMatrix::identity(n, n) * (sigma2 / eta);
    let rhs = phi.transpose() * y;
    gram.cholesky().expect("ridge matrix SPD").solve(&rhs)
}

/// Marginal-likelihood oracle: `Y^T Q^{-1} Y + log det Q` computed on the
/// full `Q = eta Phi Phi^T + sigma2 I_N`.
pub fn eb_cost_dense(phi: &DMatrix<f64>, y: &DVector<f64>, eta: f64, sigma2: f64) -> f64 {
    let n_rows = phi.nrows();
    let q = phi * phi.transpose() * eta + DMatrix::identity(n_rows, n_rows) * sigma2;
    let chol = q.cholesky().expect("Q SPD for eta > 0");
    let solved = chol.solve(y);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    y.dot(&solved) + log_det
}

/// Outcome of one identity check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error and the tolerance it was held against.
    pub worst: f64,
    pub tolerance: f64,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} (worst {:.3e}, tolerance {:.3e})",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.worst,
            self.tolerance
        )
    }
}

fn outcome(name: &'static str, worst: f64, tolerance: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: worst.is_finite() && worst <= tolerance,
        worst,
        tolerance,
    }
}

fn random_params<R: Rng>(n: usize, rng: &mut R) -> WeightingParams {
    // Nonnegative constants keep the family pole-free; mixed signs are
    // covered by dedicated pole tests.
    loop {
        let c1 = rng.gen_range(0.0..2.0);
        let c2 = rng.gen_range(0.0..2.0);
        if let Ok(p) = WeightingParams::new(c1, c2, n) {
            return p;
        }
    }
}

fn random_point<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    // Radii well above the guard: the family is evaluated at ML estimates,
    // whose radius sits near ||theta0|| = 1. Very small radii blow up the
    // higher derivatives and with them the finite-difference truncation
    // error, drowning the comparison in stencil noise.
    loop {
        let theta = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        if theta.norm() > 0.5 {
            return theta;
        }
    }
}

/// Gradient of `log pi` vs central differences on `count` random points.
pub fn gradient_fd_check(count: usize, seed: u64) -> CheckOutcome {
    let mut rng = substream(seed, Purpose::Check, 10, 0);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let n = rng.gen_range(1..=10);
        let theta = random_point(n, &mut rng);
        let params = random_params(n, &mut rng);
        let h = 1e-6 * theta.norm().max(1.0);
        let fd = fd_gradient(|t| log_pi(t, &params).unwrap(), &theta, h);
        let an = grad_log_pi(&theta, &params).unwrap();
        let rel = (&an - fd).norm() / an.norm().max(1e-6);
        worst = worst.max(rel);
    }
    outcome("grad_log_pi vs central differences", worst, 1e-6)
}

/// Hessian of `log pi` vs central differences on `count` random points.
pub fn hessian_fd_check(count: usize, seed: u64) -> CheckOutcome {
    let mut rng = substream(seed, Purpose::Check, 11, 0);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let n = rng.gen_range(1..=8);
        let theta = random_point(n, &mut rng);
        let params = random_params(n, &mut rng);
        let h = 1e-4 * theta.norm().max(1.0);
        let fd = fd_hessian(|t| log_pi(t, &params).unwrap(), &theta, h);
        let an = hessian_log_pi(&theta, &params).unwrap();
        let abs = (&an - fd).amax();
        worst = worst.max(abs);
    }
    outcome("hessian_log_pi vs central differences", worst, 1e-5)
}

/// Correction term vs `sigma2 N (Phi^T Phi)^{-1}` times the
/// finite-difference gradient, on random problems.
pub fn bias_term_fd_check(count: usize, seed: u64) -> CheckOutcome {
    let mut rng = substream(seed, Purpose::Check, 12, 0);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let n = rng.gen_range(2..=6);
        let rows = rng.gen_range(n + 4..=24);
        let phi = DMatrix::from_fn(rows, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(StandardNormal));
        let svd = match PhiSvd::new(&phi) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let cache = svd.cache_for(&y);
        let theta_ml = crate::estimators::ml_theta(&cache);
        if theta_ml.norm() < 0.1 {
            continue;
        }
        let params = random_params(n, &mut rng);
        let sigma2 = rng.gen_range(0.2..2.0);
        let analytic = crate::biased::bias_term(&theta_ml, &cache, sigma2, rows, &params).unwrap();
        let h = 1e-6 * theta_ml.norm().max(1.0);
        let fd = fd_gradient(|t| log_pi(t, &params).unwrap(), &theta_ml, h);
        let oracle = cache.apply_gram_inverse(&fd) * (sigma2 * rows as f64);
        let rel = (&analytic - &oracle).norm() / oracle.norm().max(1e-9);
        worst = worst.max(rel);
    }
    outcome("bias_term vs finite-difference gradient", worst, 1e-6)
}

/// Euler-equation residual of `sqrt(pi)` on a log radius grid, normalized by
/// the derivative scale.
pub fn euler_residual_check(families: usize, seed: u64) -> CheckOutcome {
    let mut rng = substream(seed, Purpose::Check, 13, 0);
    let mut worst = 0.0f64;
    for _ in 0..families {
        let n = rng.gen_range(1..=80);
        let params = random_params(n, &mut rng);
        for i in 0..100 {
            let lo = (10.0 * params.delta).log10();
            let r = 10f64.powf(lo + (3.0 - lo) * i as f64 / 99.0);
            let res = euler_residual(r, &params).unwrap().abs();
            let scale = euler_scale(r, &params).unwrap();
            worst = worst.max(res / scale);
        }
    }
    outcome("euler equation residual", worst, 1e-9)
}

/// SVD marginal-likelihood cost vs the dense N x N evaluation.
pub fn eb_cost_dense_check(count: usize, seed: u64) -> CheckOutcome {
    let mut rng = substream(seed, Purpose::Check, 14, 0);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < count {
        let n = rng.gen_range(1..=6);
        let rows = rng.gen_range(n.max(2)..=30);
        let phi = DMatrix::from_fn(rows, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(StandardNormal));
        let svd = match PhiSvd::new(&phi) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let cache = svd.cache_for(&y);
        let sigma2 = rng.gen_range(0.3..2.0);
        let eta = 10f64.powf(rng.gen_range(-4.0..4.0));
        let fast = eb_cost(&cache, eta, sigma2, rows);
        let dense = eb_cost_dense(&phi, &y, eta, sigma2);
        worst = worst.max((fast - dense).abs() / dense.abs().max(1e-12));
        done += 1;
    }
    outcome("eb_cost SVD vs dense N x N", worst, 1e-9)
}

/// Tuned minimum vs a dense validation grid over the same log range.
pub fn eb_optimum_grid_check(count: usize, grid: usize, seed: u64) -> CheckOutcome {
    let mut rng = substream(seed, Purpose::Check, 15, 0);
    let config = EbTunerConfig::default();
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < count {
        let n = rng.gen_range(1..=8);
        let rows = rng.gen_range(n.max(4)..=40);
        let phi = DMatrix::from_fn(rows, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(StandardNormal));
        let svd = match PhiSvd::new(&phi) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let cache = svd.cache_for(&y);
        let sigma2 = rng.gen_range(0.3..2.0);
        let opt = eb_optimize(&cache, sigma2, rows, &config);
        let mut grid_min = f64::INFINITY;
        for i in 0..grid {
            let x = config.log10_eta_min
                + (config.log10_eta_max - config.log10_eta_min) * i as f64 / (grid - 1) as f64;
            grid_min = grid_min.min(eb_cost(&cache, sigma2 * 10f64.powf(x), sigma2, rows));
        }
        // Positive excess means the tuner lost to the grid.
        let excess = (opt.cost - grid_min) / grid_min.abs().max(1e-12);
        worst = worst.max(excess);
        done += 1;
    }
    outcome("eb_optimize vs dense validation grid", worst.max(0.0), 1e-9)
}

/// Three-way agreement of the theoretical XMSE routes on nonnegative-weight
/// family draws.
pub fn xmse_equality_check(count: usize, seed: u64) -> CheckOutcome {
    let mut rng = substream(seed, Purpose::Check, 16, 0);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let n = rng.gen_range(2..=80);
        let theta0 = random_point(n, &mut rng);
        let sigma2 = rng.gen_range(0.1..3.0);
        let params = random_params(n, &mut rng);
        let reference = xmse_eb_theoretical(n, sigma2, theta0.norm_squared(), 1.0).total;
        let bayes = xmse_bayes_numeric(&theta0, sigma2, &params, 1.0).unwrap();
        let biased = xmse_biased_numeric(&theta0, sigma2, &params, 1.0).unwrap().total;
        let denom = reference.abs().max(1e-12);
        worst = worst.max((bayes - reference).abs() / denom);
        worst = worst.max((biased - reference).abs() / denom);
    }
    outcome("three-way theoretical XMSE equality", worst, 1e-8)
}

/// Runs the full identity suite with study-grade sample counts.
pub fn run_identity_checks(seed: u64) -> Vec<CheckOutcome> {
    vec![
        gradient_fd_check(1000, seed),
        hessian_fd_check(1000, seed),
        bias_term_fd_check(200, seed),
        euler_residual_check(10, seed),
        eb_cost_dense_check(100, seed),
        eb_optimum_grid_check(50, 100_000, seed),
        xmse_equality_check(20, seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_helpers_on_quadratic() {
        // f(x) = x^T A x / 2 with A symmetric: grad = A x, hess = A.
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]);
        let f = |x: &DVector<f64>| 0.5 * (x.transpose() * &a * x)[(0, 0)];
        let x = DVector::from_vec(vec![0.7, -1.1]);
        let g = fd_gradient(f, &x, 1e-6);
        assert!((&g - &a * &x).norm() < 1e-7);
        let h = fd_hessian(f, &x, 1e-4);
        assert!((&h - &a).norm() < 1e-6);
    }

    #[test]
    fn identity_suite_passes_quickly() {
        // Reduced sample counts; the full counts run in the acceptance suite.
        let outcomes = vec![
            gradient_fd_check(50, 3),
            hessian_fd_check(20, 3),
            bias_term_fd_check(10, 3),
            euler_residual_check(3, 3),
            eb_cost_dense_check(10, 3),
            eb_optimum_grid_check(5, 10_000, 3),
            xmse_equality_check(5, 3),
        ];
        for o in &outcomes {
            assert!(o.passed, "{o}");
        }
    }
}
