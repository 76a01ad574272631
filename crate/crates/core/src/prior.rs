//! The radial weighting-function family and its log-derivatives.
//!
//! The family is `pi(theta) = r^(2-n) (C1 r + C2/r)^2` with `r = ||theta||`,
//! used only through `log pi`, its gradient and its Hessian: raw values of
//! `pi` underflow for `n` around 80. All derivatives are closed-form; a
//! second-order Euler-equation residual is exposed as a numerical invariant
//! of the family (`sqrt(pi)` solves `r^2 w'' + (n-1) r w' + (n^2-4n)/4 w = 0`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Radius proximity (relative) at which evaluation near a weight zero is
/// refused instead of returning infinities.
const POLE_TOL: f64 = 1e-12;

/// Family constants and the small-radius guard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightingParams {
    pub c1: f64,
    pub c2: f64,
    /// Radii below this are clamped before evaluating the family.
    pub delta: f64,
    /// Parameter dimension `n`.
    pub n: usize,
}

pub const DEFAULT_DELTA: f64 = 1e-8;

impl WeightingParams {
    pub fn new(c1: f64, c2: f64, n: usize) -> Result<Self> {
        Self::with_delta(c1, c2, n, DEFAULT_DELTA)
    }

    pub fn with_delta(c1: f64, c2: f64, n: usize, delta: f64) -> Result<Self> {
        if c1 == 0.0 && c2 == 0.0 {
            return Err(Error::InvalidConfig("weighting constants (C1, C2) must not both be zero".into()));
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidConfig("weighting guard delta must be positive".into()));
        }
        if n == 0 {
            return Err(Error::InvalidConfig("weighting dimension n must be at least 1".into()));
        }
        if !(c1.is_finite() && c2.is_finite()) {
            return Err(Error::InvalidConfig("weighting constants must be finite".into()));
        }
        Ok(Self { c1, c2, delta, n })
    }

    /// Radius at which `C1 r + C2/r` vanishes, when one exists (`C1 C2 < 0`).
    pub fn pole_radius(&self) -> Option<f64> {
        if self.c1 * self.c2 < 0.0 {
            Some((-self.c2 / self.c1).sqrt())
        } else {
            None
        }
    }

    /// Errors out when `r` sits within `1e-12` (relative) of the weight zero.
    pub fn check_pole_at(&self, r: f64) -> Result<()> {
        if let Some(pole) = self.pole_radius() {
            if (r - pole).abs() <= POLE_TOL * r.max(pole) {
                return Err(Error::PoleRadius { r, pole });
            }
        }
        Ok(())
    }

    /// Clamped radius `max(||theta||, delta)`.
    pub fn guarded_radius(&self, theta: &DVector<f64>) -> f64 {
        theta.norm().max(self.delta)
    }

    /// The radial factor of the log-gradient:
    /// `g(r) = (2 - n) + 2 (C1 r - C2/r) / (C1 r + C2/r)`.
    pub fn bracket(&self, r: f64) -> f64 {
        let a = self.c1 * r + self.c2 / r;
        let b = self.c1 * r - self.c2 / r;
        (2.0 - self.n as f64) + 2.0 * b / a
    }

    /// Derivative of the bracket, `g'(r) = 8 C1 C2 / (r (C1 r + C2/r)^2)`.
    pub fn bracket_deriv(&self, r: f64) -> f64 {
        let a = self.c1 * r + self.c2 / r;
        8.0 * self.c1 * self.c2 / (r * a * a)
    }
}

/// `log pi(theta) = (2 - n) log r + 2 log |C1 r + C2/r|` at the guarded radius.
pub fn log_pi(theta: &DVector<f64>, params: &WeightingParams) -> Result<f64> {
    let r = params.guarded_radius(theta);
    params.check_pole_at(r)?;
    let a = params.c1 * r + params.c2 / r;
    Ok((2.0 - params.n as f64) * r.ln() + 2.0 * a.abs().ln())
}

/// Closed-form gradient `g(r) theta / r^2`; the zero vector at `theta = 0`.
pub fn grad_log_pi(theta: &DVector<f64>, params: &WeightingParams) -> Result<DVector<f64>> {
    let norm = theta.norm();
    if norm == 0.0 {
        return Ok(DVector::zeros(theta.len()));
    }
    let r = norm.max(params.delta);
    params.check_pole_at(r)?;
    let scale = params.bracket(r) / (r * norm);
    Ok(theta * scale)
}

/// Closed-form Hessian of `log pi`: with `dir = theta/||theta||`,
/// `H = g(r)/r^2 I + (g'(r)/r - 2 g(r)/r^2) dir dir^T`.
pub fn hessian_log_pi(theta: &DVector<f64>, params: &WeightingParams) -> Result<DMatrix<f64>> {
    let n = theta.len();
    let norm = theta.norm();
    if norm == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let r = norm.max(params.delta);
    params.check_pole_at(r)?;
    let g = params.bracket(r);
    let gp = params.bracket_deriv(r);
    let dir = theta / norm;
    let iso = g / (r * r);
    let radial = gp / r - 2.0 * g / (r * r);
    // Rank-1 update written symmetrically so H == H^T holds bitwise.
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = radial * (dir[i] * dir[j]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
        h[(i, i)] += iso;
    }
    Ok(h)
}

/// Residual of the Euler equation satisfied by `w(r) = sqrt(pi)`:
/// `r^2 w'' + (n - 1) r w' + (n^2 - 4n)/4 w`, from analytic derivatives of
/// the two monomials `C1 r^(p+1) + C2 r^(p-1)` with `p = (2 - n)/2`.
pub fn euler_residual(r: f64, params: &WeightingParams) -> Result<f64> {
    let (w, wp, wpp) = euler_monomials(r, params)?;
    let n = params.n as f64;
    Ok(r * r * wpp + (n - 1.0) * r * wp + (n * n - 4.0 * n) / 4.0 * w)
}

/// Magnitude scale `|w| + r |w'| + r^2 |w''|` used to normalize the residual.
pub fn euler_scale(r: f64, params: &WeightingParams) -> Result<f64> {
    let (w, wp, wpp) = euler_monomials(r, params)?;
    Ok(w.abs() + r * wp.abs() + r * r * wpp.abs())
}

fn euler_monomials(r: f64, params: &WeightingParams) -> Result<(f64, f64, f64)> {
    assert!(r > params.delta, "euler residual requires r > delta");
    params.check_pole_at(r)?;
    let p = (2.0 - params.n as f64) / 2.0;
    let (c1, c2) = (params.c1, params.c2);
    let w = c1 * r.powf(p + 1.0) + c2 * r.powf(p - 1.0);
    let wp = c1 * (p + 1.0) * r.powf(p) + c2 * (p - 1.0) * r.powf(p - 2.0);
    let wpp = c1 * (p + 1.0) * p * r.powf(p - 1.0) + c2 * (p - 1.0) * (p - 2.0) * r.powf(p - 3.0);
    Ok((w, wp, wpp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checks::{fd_gradient, fd_hessian};
    use crate::streams::{substream, Purpose};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn vecn(vals: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(vals)
    }

    #[test]
    fn log_pi_hand_values() {
        // n=2, C1=1, C2=0, theta=(3,4): r=5, pi = 5^0 * 25.
        let p = WeightingParams::new(1.0, 0.0, 2).unwrap();
        assert_relative_eq!(log_pi(&vecn(&[3.0, 4.0]), &p).unwrap(), 25.0f64.ln(), max_relative = 1e-14);

        // n=4, C1=1, C2=0: constant weight pi = 1.
        let p = WeightingParams::new(1.0, 0.0, 4).unwrap();
        for theta in [vecn(&[1.0, 0.0, 0.0, 0.0]), vecn(&[0.2, -3.0, 1.0, 0.5])] {
            assert!(log_pi(&theta, &p).unwrap().abs() < 1e-13);
        }

        // n=1, C1=0, C2=1, theta=(2): pi = 2 * (1/2)^2 = 1/2.
        let p = WeightingParams::new(0.0, 1.0, 1).unwrap();
        assert_relative_eq!(log_pi(&vecn(&[2.0]), &p).unwrap(), 0.5f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn gradient_special_cases() {
        let p = WeightingParams::new(1.0, 0.0, 4).unwrap();
        let g = grad_log_pi(&vecn(&[0.3, -1.0, 2.0, 0.7]), &p).unwrap();
        assert!(g.norm() < 1e-14);

        // C1=0: bracket = -n, gradient = -n theta / r^2.
        for n in [1usize, 3, 7] {
            let p = WeightingParams::new(0.0, 1.0, n).unwrap();
            let theta = vecn(&(0..n).map(|i| 0.5 + i as f64).collect::<Vec<_>>());
            let r2 = theta.norm_squared();
            let expected = &theta * (-(n as f64) / r2);
            assert_relative_eq!(grad_log_pi(&theta, &p).unwrap(), expected, max_relative = 1e-13);
        }

        let p = WeightingParams::new(1.0, 2.0, 5).unwrap();
        assert_eq!(grad_log_pi(&DVector::zeros(5), &p).unwrap(), DVector::zeros(5));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = substream(21, Purpose::Check, 0, 0);
        for _ in 0..200 {
            let n = rng.gen_range(1..=8);
            let theta = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            if theta.norm() < 0.05 {
                continue;
            }
            let p = WeightingParams::new(
                rng.gen_range(0.1..3.0),
                rng.gen_range(0.0..3.0),
                n,
            )
            .unwrap();
            let h = 1e-6 * theta.norm().max(1.0);
            let fd = fd_gradient(|t| log_pi(t, &p).unwrap(), &theta, h);
            let an = grad_log_pi(&theta, &p).unwrap();
            let denom = an.norm().max(1e-6);
            assert!((an - fd).norm() / denom < 1e-6);
        }
    }

    #[test]
    fn hessian_matches_finite_differences_and_is_symmetric() {
        let mut rng = substream(22, Purpose::Check, 0, 0);
        for _ in 0..100 {
            let n = rng.gen_range(1..=6);
            let theta = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            if theta.norm() < 0.2 {
                continue;
            }
            let p = WeightingParams::new(rng.gen_range(0.2..2.0), rng.gen_range(0.2..2.0), n).unwrap();
            let h = 1e-4 * theta.norm().max(1.0);
            let fd = fd_hessian(|t| log_pi(t, &p).unwrap(), &theta, h);
            let an = hessian_log_pi(&theta, &p).unwrap();
            assert_eq!(an, an.transpose());
            for i in 0..n {
                for j in 0..n {
                    assert!((an[(i, j)] - fd[(i, j)]).abs() < 1e-5, "entry ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn constant_prior_hessian_vanishes() {
        let p = WeightingParams::new(1.0, 0.0, 4).unwrap();
        let h = hessian_log_pi(&vecn(&[1.0, -2.0, 0.5, 3.0]), &p).unwrap();
        assert!(h.norm() < 1e-14);
    }

    #[test]
    fn scale_invariance_of_derivatives() {
        let theta = vecn(&[0.4, -1.2, 0.9]);
        let base = WeightingParams::new(0.7, 1.9, 3).unwrap();
        let g0 = grad_log_pi(&theta, &base).unwrap();
        let h0 = hessian_log_pi(&theta, &base).unwrap();
        // Power-of-two scalings keep every product exact, so derivatives are
        // bitwise identical; log_pi shifts by the theta-independent 2 log|k|.
        for k in [2.0, 0.5, -4.0] {
            let scaled = WeightingParams::new(k * base.c1, k * base.c2, 3).unwrap();
            assert_eq!(grad_log_pi(&theta, &scaled).unwrap(), g0);
            assert_eq!(hessian_log_pi(&theta, &scaled).unwrap(), h0);
            let shift = log_pi(&theta, &scaled).unwrap() - log_pi(&theta, &base).unwrap();
            let other = vecn(&[5.0, 0.1, -0.3]);
            let shift2 = log_pi(&other, &scaled).unwrap() - log_pi(&other, &base).unwrap();
            assert_relative_eq!(shift, shift2, max_relative = 1e-12);
            assert_relative_eq!(shift, 2.0 * k.abs().ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn pole_detection_for_mixed_signs() {
        // C1=1, C2=-4: zero at r = 2.
        let p = WeightingParams::new(1.0, -4.0, 3).unwrap();
        assert_relative_eq!(p.pole_radius().unwrap(), 2.0, max_relative = 1e-15);
        let on_pole = vecn(&[2.0, 0.0, 0.0]);
        assert!(matches!(log_pi(&on_pole, &p), Err(Error::PoleRadius { .. })));
        assert!(matches!(grad_log_pi(&on_pole, &p), Err(Error::PoleRadius { .. })));
        // Off the pole the family evaluates fine.
        assert!(log_pi(&vecn(&[3.0, 0.0, 0.0]), &p).is_ok());
    }

    #[test]
    fn euler_residual_vanishes_on_radius_grid() {
        let mut rng = substream(23, Purpose::Check, 0, 0);
        for _ in 0..10 {
            let n = rng.gen_range(1..=80);
            let p = WeightingParams::new(rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0), n);
            let p = match p {
                Ok(p) => p,
                Err(_) => continue,
            };
            for i in 0..100 {
                // Log grid over [10 delta, 1e3].
                let lo = (10.0 * p.delta).log10();
                let hi = 3.0;
                let r = 10f64.powf(lo + (hi - lo) * i as f64 / 99.0);
                let res = euler_residual(r, &p).unwrap();
                let scale = euler_scale(r, &p).unwrap();
                assert!(res.abs() <= 1e-9 * scale, "n={n} r={r} res={res} scale={scale}");
            }
        }
    }

    #[test]
    fn euler_hand_cases() {
        // n=2, C1=1, C2=0, r=3: w = r^(1/2+1)... p = 0, w = r.
        let p = WeightingParams::new(1.0, 0.0, 2).unwrap();
        let res = euler_residual(3.0, &p).unwrap();
        assert!(res.abs() < 1e-12 * euler_scale(3.0, &p).unwrap());

        let p = WeightingParams::new(0.0, 1.0, 5).unwrap();
        let res = euler_residual(1.0, &p).unwrap();
        assert!(res.abs() < 1e-12 * euler_scale(1.0, &p).unwrap());
    }

    #[test]
    fn euler_exponent_gap_is_one() {
        // mu = sqrt(|(1-a)^2 - 4b|)/2 with a = n-1, b = (n^2-4n)/4 equals 1,
        // matching the r^(+1)/r^(-1) split around the leading power.
        for n in 1..=80 {
            let a = n as f64 - 1.0;
            let b = (n as f64 * n as f64 - 4.0 * n as f64) / 4.0;
            let mu = ((1.0 - a).powi(2) - 4.0 * b).abs().sqrt() / 2.0;
            assert_relative_eq!(mu, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn small_radius_is_clamped() {
        let p = WeightingParams::new(0.0, 1.0, 5).unwrap();
        let tiny = vecn(&[1e-12, 0.0, 0.0, 0.0, 0.0]);
        // Gradient is evaluated at the guard radius along theta's direction.
        let g = grad_log_pi(&tiny, &p).unwrap();
        let expected = -(5.0) / p.delta;
        assert_relative_eq!(g[0], expected, max_relative = 1e-12);
        assert!(log_pi(&tiny, &p).unwrap().is_finite());
    }
}
