//! ML and fixed-`eta` ridge estimators over a shared thin-SVD cache.
//!
//! The SVD of the regression matrix is computed once per problem; every
//! downstream estimator (ML, ridge, EB tuner, Bayes sampler, biased
//! correction) works from the cached singular values, right singular
//! vectors and the projected measurement `c = U^T Y`, which makes each
//! marginal-likelihood evaluation O(n) and each solve O(n^2).

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};
use std::time::Instant;

use crate::{Error, Result};

const RANK_TOL: f64 = 1e-12;

/// Estimator identity tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
pub enum Method {
    #[serde(rename = "ML")]
    Ml,
    #[serde(rename = "EB_REG")]
    EbReg,
    #[serde(rename = "BAYES_EB")]
    BayesEb,
    #[serde(rename = "BIASED_EB")]
    BiasedEb,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ml => "ML",
            Method::EbReg => "EB_REG",
            Method::BayesEb => "BAYES_EB",
            Method::BiasedEb => "BIASED_EB",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Thin SVD of a regression matrix, reusable across measurement vectors of
/// the same collection.
#[derive(Debug, Clone)]
pub struct PhiSvd {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v: DMatrix<f64>,
}

impl PhiSvd {
    /// Factors `phi` and rejects numerically rank-deficient matrices
    /// (smallest singular value below `1e-12 x` the largest).
    pub fn new(phi: &DMatrix<f64>) -> Result<Self> {
        let svd = phi.clone().svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let s = svd.singular_values;
        let largest = s.max();
        let smallest = s.min();
        if !(smallest > RANK_TOL * largest) || largest == 0.0 {
            return Err(Error::RankDeficient { smallest, largest });
        }
        Ok(Self {
            u,
            s,
            v: v_t.transpose(),
        })
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Attaches one measurement vector, producing the per-replication cache.
    pub fn cache_for(&self, y: &DVector<f64>) -> SvdCache {
        SvdCache {
            s: self.s.clone(),
            v: self.v.clone(),
            c: self.u.tr_mul(y),
            y_norm2: y.norm_squared(),
        }
    }
}

/// Per-measurement factorization cache consumed by every estimator.
#[derive(Debug, Clone)]
pub struct SvdCache {
    s: DVector<f64>,
    v: DMatrix<f64>,
    c: DVector<f64>,
    y_norm2: f64,
}

impl SvdCache {
    /// Builds a cache from explicit parts; used for synthetic instances
    /// where the factorization is known in closed form.
    pub fn from_parts(
        s: DVector<f64>,
        v: DMatrix<f64>,
        c: DVector<f64>,
        y_norm2: f64,
    ) -> Result<Self> {
        let n = s.len();
        if v.nrows() != n || v.ncols() != n || c.len() != n {
            return Err(Error::InvalidConfig(
                "svd cache parts have inconsistent dimensions".into(),
            ));
        }
        if s.iter().any(|&si| !(si > 0.0)) {
            return Err(Error::InvalidConfig("singular values must be positive".into()));
        }
        if s.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig("singular values must be descending".into()));
        }
        let c_norm2 = c.norm_squared();
        if c_norm2 > y_norm2 * (1.0 + 1e-9) {
            return Err(Error::InvalidConfig(
                "projected energy exceeds measurement energy".into(),
            ));
        }
        Ok(Self { s, v, c, y_norm2 })
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn y_norm2(&self) -> f64 {
        self.y_norm2
    }

    /// Applies `(Phi^T Phi)^{-1}` to a vector via `V diag(1/s^2) V^T`.
    pub fn apply_gram_inverse(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut w = self.v.tr_mul(x);
        for i in 0..w.len() {
            w[i] /= self.s[i] * self.s[i];
        }
        &self.v * w
    }
}

/// Factors the problem's regression matrix and attaches its measurements.
pub fn build_svd_cache(problem: &crate::simulate::RegressionProblem) -> Result<SvdCache> {
    Ok(PhiSvd::new(problem.matrix())?.cache_for(problem.y()))
}

fn serialize_theta<S: Serializer>(theta: &DVector<f64>, ser: S) -> std::result::Result<S::Ok, S::Error> {
    ser.collect_seq(theta.iter())
}

/// One estimator output: the estimate, its method tag, the tuned
/// hyper-parameter when one exists, and the wall-clock cost.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateRecord {
    #[serde(serialize_with = "serialize_theta")]
    pub theta_hat: DVector<f64>,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_hat: Option<f64>,
    /// Wall-clock seconds spent producing this estimate.
    pub elapsed: f64,
    /// True when the EB tuner's grid minimum sat on the search boundary.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub eta_at_boundary: bool,
    /// Posterior draws skipped because they hit a weighting-function pole.
    #[serde(skip_serializing_if = "is_zero")]
    pub pole_skips: u64,
    /// Effective sample size `(sum w)^2 / sum w^2` of the Bayes weights.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl EstimateRecord {
    pub(crate) fn new(theta_hat: DVector<f64>, method: Method, started: Instant) -> Self {
        Self {
            theta_hat,
            method,
            eta_hat: None,
            elapsed: started.elapsed().as_secs_f64(),
            eta_at_boundary: false,
            pole_skips: 0,
            ess: None,
        }
    }
}

/// ML estimate `V diag(1/s) c`, equal to `(Phi^T Phi)^{-1} Phi^T Y`.
pub fn ml_estimate(cache: &SvdCache) -> EstimateRecord {
    let started = Instant::now();
    EstimateRecord::new(ml_theta(cache), Method::Ml, started)
}

/// The bare ML solution, for internal composition without record plumbing.
pub fn ml_theta(cache: &SvdCache) -> DVector<f64> {
    let mut w = cache.c.clone();
    for i in 0..w.len() {
        w[i] /= cache.s[i];
    }
    &cache.v * w
}

/// `MSE(theta_ml) = sigma2 Tr[(Phi^T Phi)^{-1}] = sigma2 sum 1/s_i^2`.
pub fn ml_mse_theoretical(cache: &SvdCache, sigma2: f64) -> f64 {
    sigma2 * cache.s.iter().map(|si| 1.0 / (si * si)).sum::<f64>()
}

/// Ridge estimate `[Phi^T Phi + (sigma2/eta) I]^{-1} Phi^T Y` for a fixed
/// prior scale `eta > 0`.
pub fn regularized_estimate(cache: &SvdCache, eta: f64, sigma2: f64) -> EstimateRecord {
    let started = Instant::now();
    EstimateRecord::new(regularized_theta(cache, eta, sigma2), Method::EbReg, started)
}

pub fn regularized_theta(cache: &SvdCache, eta: f64, sigma2: f64) -> DVector<f64> {
    assert!(eta > 0.0, "eta must be positive");
    let ridge = sigma2 / eta;
    let mut w = cache.c.clone();
    for i in 0..w.len() {
        let si = cache.s[i];
        w[i] *= si / (si * si + ridge);
    }
    &cache.v * w
}
