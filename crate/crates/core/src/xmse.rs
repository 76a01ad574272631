//! Excess-MSE calculators: closed-form asymptotics and a paired-difference
//! Monte Carlo estimator.
//!
//! XMSE is the limit of `N^2 [MSE(theta_hat) - MSE(theta_ml)]`. Three
//! theoretical routes are implemented: the closed form for the EB-tuned
//! ridge estimator with its three-term decomposition, the generalized-Bayes
//! expression built from the weighting function's log-derivatives, and the
//! biased-estimator expression built from the correction term's limits. For
//! the weighting family all three agree.
//!
//! The empirical route evaluates both the candidate and the ML estimator on
//! the same noise realization and averages the squared-error differences;
//! pairing drops the variance of the difference by an order of `N`, which is
//! what makes desk-scale verification feasible.

use nalgebra::DVector;
use serde::Serialize;

use crate::bayes::{bayes_estimate, SamplerConfig};
use crate::biased::biased_estimate;
use crate::eb::{eb_regularized_estimate, EbTunerConfig};
use crate::estimators::{ml_theta, Method, PhiSvd};
use crate::prior::{grad_log_pi, hessian_log_pi, WeightingParams};
use crate::simulate::{generate_collection, InputScaling};
use crate::streams::{substream, Purpose};
use crate::{Error, Result};

/// Three-term XMSE decomposition: excess squared bias, excess variance, and
/// the hyper-parameter-estimation variance term (zero for estimators without
/// a tuned hyper-parameter).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct XmseBreakdown {
    pub xbias_sq: f64,
    pub tr_xvar: f64,
    pub tr_xvar_hpe: f64,
    pub total: f64,
}

/// Closed-form XMSE of the EB-tuned ridge estimator:
/// `(-n^2 + 4n) sigma2^2 / ||theta0||^2`, decomposed as
/// `n^2 - 2n^2 + 4n` times `sigma2^2 / ||theta0||^2`, all divided by
/// `sigma_u2^2` when the Gram limit is `sigma_u2 I`.
pub fn xmse_eb_theoretical(
    n: usize,
    sigma2: f64,
    theta0_norm2: f64,
    sigma_u2: f64,
) -> XmseBreakdown {
    assert!(n >= 1 && sigma2 > 0.0 && theta0_norm2 > 0.0 && sigma_u2 > 0.0);
    let nf = n as f64;
    let unit = sigma2 * sigma2 / theta0_norm2 / (sigma_u2 * sigma_u2);
    let xbias_sq = nf * nf * unit;
    let tr_xvar = -2.0 * nf * nf * unit;
    let tr_xvar_hpe = 4.0 * nf * unit;
    XmseBreakdown {
        xbias_sq,
        tr_xvar,
        tr_xvar_hpe,
        total: xbias_sq + tr_xvar + tr_xvar_hpe,
    }
}

/// XMSE of a generalized Bayes estimator at `theta0`:
/// `-sigma2^2 ||grad pi / pi||^2 + 2 sigma2^2 Tr[hess pi / pi]`, with the
/// derivative ratios reconstructed from log-derivatives
/// (`grad pi/pi = grad log pi`, `hess pi/pi = hess log pi + g g^T`) so the
/// raw weight never under- or overflows.
pub fn xmse_bayes_numeric(
    theta0: &DVector<f64>,
    sigma2: f64,
    params: &WeightingParams,
    sigma_u2: f64,
) -> Result<f64> {
    let g = grad_log_pi(theta0, params)?;
    let h = hessian_log_pi(theta0, params)?;
    let grad_ratio_norm2 = g.norm_squared();
    let hess_ratio_trace = h.trace() + grad_ratio_norm2;
    let s4 = sigma2 * sigma2;
    Ok((-s4 * grad_ratio_norm2 + 2.0 * s4 * hess_ratio_trace) / (sigma_u2 * sigma_u2))
}

/// XMSE of the closed-form biased estimator via its correction limits
/// `b* = (sigma2/sigma_u2) grad log pi` and `b*' = (sigma2/sigma_u2) hess
/// log pi`: excess squared bias `||b*||^2` plus excess variance
/// `2 (sigma2/sigma_u2) Tr[b*']`. No hyper-parameter term.
pub fn xmse_biased_numeric(
    theta0: &DVector<f64>,
    sigma2: f64,
    params: &WeightingParams,
    sigma_u2: f64,
) -> Result<XmseBreakdown> {
    let scale = sigma2 / sigma_u2;
    let b_star = grad_log_pi(theta0, params)? * scale;
    let b_star_deriv = hessian_log_pi(theta0, params)? * scale;
    let xbias_sq = b_star.norm_squared();
    let tr_xvar = 2.0 * scale * b_star_deriv.trace();
    Ok(XmseBreakdown {
        xbias_sq,
        tr_xvar,
        tr_xvar_hpe: 0.0,
        total: xbias_sq + tr_xvar,
    })
}

/// Which estimator the empirical run compares against ML.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorSelect {
    Ml,
    EbReg { tuner: EbTunerConfig },
    BayesEb { c1: f64, c2: f64, m_s: usize },
    BiasedEb { c1: f64, c2: f64 },
}

impl EstimatorSelect {
    pub fn method(&self) -> Method {
        match self {
            EstimatorSelect::Ml => Method::Ml,
            EstimatorSelect::EbReg { .. } => Method::EbReg,
            EstimatorSelect::BayesEb { .. } => Method::BayesEb,
            EstimatorSelect::BiasedEb { .. } => Method::BiasedEb,
        }
    }
}

/// Result of one empirical XMSE run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EmpiricalXmse {
    /// `N^2 * mean(d)` over paired squared-error differences `d`.
    pub estimate: f64,
    /// `N^2 * sd(d) / sqrt(reps)`.
    pub std_error: f64,
    pub reps: usize,
    /// Gram scale the run is compared against: 1 for unit-variance input,
    /// the mean realized `Tr(Phi^T Phi)/(N n)` for SNR-scaled input.
    pub sigma_u2: f64,
    /// The common theoretical XMSE at `||theta0|| = 1` and this Gram scale.
    pub theory: f64,
}

const CHUNK: usize = 1024;

/// Whether the empirical run fixes one test instance or redraws it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceDraw {
    /// Fresh `(theta0, u)` every replication. Conditional on one finite-`N`
    /// regression matrix the squared-error difference concentrates around
    /// that instance's own XMSE, which fluctuates around the limit with the
    /// Gram matrix's `O(1/sqrt(N))` deviations; redrawing averages that
    /// fluctuation out at no extra variance cost, so the mean converges to
    /// the theoretical value.
    PerRep,
    /// One `(theta0, u)` drawn from the run seed, noise redrawn per rep.
    /// Estimates the conditional XMSE of that single instance, which
    /// approaches the limit only as `N` grows.
    Fixed,
}

/// Paired-difference empirical XMSE: per rep, both the candidate estimator
/// and ML are evaluated on the same noisy measurement and the squared-error
/// difference is accumulated.
pub fn xmse_empirical(
    select: &EstimatorSelect,
    n: usize,
    n_samples: usize,
    scaling: InputScaling,
    sigma2: f64,
    reps: usize,
    instance: InstanceDraw,
    seed: u64,
) -> Result<EmpiricalXmse> {
    if reps < 1000 {
        return Err(Error::InvalidConfig(
            "empirical XMSE needs at least 1000 paired reps".into(),
        ));
    }
    if reps as u64 >= crate::streams::MAX_COLLECTION.min(crate::streams::MAX_REP) {
        return Err(Error::InvalidConfig("rep count exceeds the random-stream space".into()));
    }
    let convention = crate::simulate::DelayConvention::A;

    let fixed = match instance {
        InstanceDraw::PerRep => None,
        InstanceDraw::Fixed => {
            let coll = generate_collection(n, n_samples, scaling, sigma2, convention, seed, 0)?;
            let svd = PhiSvd::new(&coll.phi)?;
            Some((coll, svd))
        }
    };

    let run_chunk = |chunk_idx: usize| -> Result<ChunkOut> {
        let start = chunk_idx * CHUNK;
        let end = (start + CHUNK).min(reps);
        let mut out = ChunkOut::default();
        let mut scratch: Option<(crate::simulate::Collection, PhiSvd)> = None;
        for rep in start..end {
            let (coll, svd) = match &fixed {
                Some(pair) => pair,
                None => {
                    let coll = generate_collection(
                        n,
                        n_samples,
                        scaling,
                        sigma2,
                        convention,
                        seed,
                        rep as u64,
                    )?;
                    let svd = PhiSvd::new(&coll.phi)?;
                    &*scratch.insert((coll, svd))
                }
            };
            // Noise stream: collection index matches the instance in use.
            let noise_collection = match instance {
                InstanceDraw::PerRep => rep as u64,
                InstanceDraw::Fixed => 0,
            };
            let (noise_rep, sampler_key) = match instance {
                InstanceDraw::PerRep => (0, (rep as u64, 0)),
                InstanceDraw::Fixed => (rep as u64, (0, rep as u64)),
            };
            let theta0 = coll.theta0.theta0();
            let y = crate::simulate::noisy_output(
                &coll.noise_free,
                sigma2,
                seed,
                noise_collection,
                noise_rep,
            );
            let cache = svd.cache_for(&y);
            let theta_ml = ml_theta(&cache);
            let d = match select {
                EstimatorSelect::Ml => 0.0,
                EstimatorSelect::EbReg { tuner } => {
                    let rec = eb_regularized_estimate(&cache, sigma2, n_samples, tuner);
                    paired_diff(&rec.theta_hat, &theta_ml, theta0)
                }
                EstimatorSelect::BayesEb { c1, c2, m_s } => {
                    let params = WeightingParams::new(*c1, *c2, n)?;
                    let sampler = SamplerConfig::new(*m_s)?;
                    let mut rng = substream(seed, Purpose::Sampler, sampler_key.0, sampler_key.1);
                    let rec = bayes_estimate(&cache, sigma2, &params, &sampler, &mut rng)?;
                    paired_diff(&rec.theta_hat, &theta_ml, theta0)
                }
                EstimatorSelect::BiasedEb { c1, c2 } => {
                    let params = WeightingParams::new(*c1, *c2, n)?;
                    let rec = biased_estimate(&cache, sigma2, n_samples, &params)?;
                    paired_diff(&rec.theta_hat, &theta_ml, theta0)
                }
            };
            out.d.push(d);
            out.gram_scale_sum +=
                svd.singular_values().iter().map(|s| s * s).sum::<f64>() / (n_samples * n) as f64;
        }
        Ok(out)
    };

    let n_chunks = reps.div_ceil(CHUNK);
    let chunks = map_chunks(n_chunks, run_chunk)?;
    // Ordered combination keeps the result identical across thread counts.
    let mut total = ChunkOut::default();
    for c in &chunks {
        total.merge(c);
    }

    let sigma_u2 = match scaling {
        InputScaling::UnitVariance => 1.0,
        InputScaling::Snr(_) => total.gram_scale_sum / reps as f64,
    };
    let scale = (n_samples * n_samples) as f64;
    Ok(EmpiricalXmse {
        estimate: scale * total.d.mean,
        std_error: scale * total.d.std_error(),
        reps,
        sigma_u2,
        theory: xmse_eb_theoretical(n, sigma2, 1.0, sigma_u2).total,
    })
}

#[derive(Debug, Clone, Copy, Default)]
struct ChunkOut {
    d: Moments,
    gram_scale_sum: f64,
}

impl ChunkOut {
    fn merge(&mut self, other: &ChunkOut) {
        self.d.merge(&other.d);
        self.gram_scale_sum += other.gram_scale_sum;
    }
}

fn paired_diff(theta_hat: &DVector<f64>, theta_ml: &DVector<f64>, theta0: &DVector<f64>) -> f64 {
    (theta_hat - theta0).norm_squared() - (theta_ml - theta0).norm_squared()
}

#[cfg(feature = "parallel")]
fn map_chunks<F: Fn(usize) -> Result<ChunkOut> + Sync + Send>(
    n_chunks: usize,
    f: F,
) -> Result<Vec<ChunkOut>> {
    use rayon::prelude::*;
    (0..n_chunks).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_chunks<F: Fn(usize) -> Result<ChunkOut> + Sync + Send>(
    n_chunks: usize,
    f: F,
) -> Result<Vec<ChunkOut>> {
    (0..n_chunks).map(f).collect()
}

/// Running mean and squared deviation (Welford), mergeable across chunks.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / total as f64;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / total as f64;
        self.count = total;
    }

    fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt()
    }
}
