//! Test-system, input and output generation for the FIR benchmark protocol.
//!
//! A collection is one `(theta0, u)` pair: the true parameters are drawn
//! standard normal and scaled to unit norm, the white input is scaled so the
//! sample SNR (sample variance of the noise-free output over the noise
//! variance) hits its target exactly, and measurement noise is added per
//! replication from an independent stream.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::streams::{substream, Purpose};
use crate::{Error, Result};

/// How input samples map onto the columns of the regression matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DelayConvention {
    /// Entry `(t, k) = u(t - k + 1)`: column `k` is the input delayed by
    /// `k - 1` steps, so column 1 starts at `u(1)`. Full column rank for
    /// generic inputs as soon as `N = n`.
    #[default]
    #[serde(rename = "a")]
    A,
    /// Entry `(t, k) = u(t - k)`: one extra delay step everywhere, so column
    /// 1 is `[u(0), ..., u(N-1)]` with `u(0) = 0`.
    #[serde(rename = "b")]
    B,
}

impl DelayConvention {
    /// Lag of column `k` (1-based): the column holds `u(t - lag)`.
    fn lag(self, k: usize) -> usize {
        match self {
            DelayConvention::A => k - 1,
            DelayConvention::B => k,
        }
    }
}

impl std::str::FromStr for DelayConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "A" => Ok(DelayConvention::A),
            "b" | "B" => Ok(DelayConvention::B),
            other => Err(Error::InvalidConfig(format!(
                "unknown delay convention {other:?}, expected \"a\" or \"b\""
            ))),
        }
    }
}

/// Known deterministic input sequence `u(1..=N)`, with `u(t) = 0` for `t <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    samples: Vec<f64>,
}

impl InputSignal {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidConfig("input signal must be non-empty".into()));
        }
        if samples.iter().any(|u| !u.is_finite()) {
            return Err(Error::InvalidConfig("input signal contains non-finite samples".into()));
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `u(t)` with the pre/post-sample convention: zero outside `1..=N`.
    pub fn at(&self, t: i64) -> f64 {
        if t < 1 || t > self.samples.len() as i64 {
            0.0
        } else {
            self.samples[(t - 1) as usize]
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.samples
    }
}

/// Ground-truth parameter vector, scaled to a target Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueSystem {
    theta0: DVector<f64>,
    norm_target: f64,
}

impl TrueSystem {
    /// Scales `raw` so its Euclidean norm equals `norm_target`.
    pub fn from_raw(raw: DVector<f64>, norm_target: f64) -> Result<Self> {
        if !(norm_target > 0.0) {
            return Err(Error::InvalidConfig("norm target must be positive".into()));
        }
        let norm = raw.norm();
        if norm == 0.0 {
            return Err(Error::DegenerateSignal);
        }
        Ok(Self {
            theta0: raw * (norm_target / norm),
            norm_target,
        })
    }

    pub fn theta0(&self) -> &DVector<f64> {
        &self.theta0
    }

    pub fn n(&self) -> usize {
        self.theta0.len()
    }

    pub fn norm_target(&self) -> f64 {
        self.norm_target
    }
}

/// One identification problem: input, model order, measurements and noise
/// variance, with the regression matrix built once at construction.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    input: InputSignal,
    n: usize,
    y: DVector<f64>,
    sigma2: f64,
    phi: DMatrix<f64>,
}

impl RegressionProblem {
    pub fn new(
        input: InputSignal,
        n: usize,
        y: DVector<f64>,
        sigma2: f64,
        convention: DelayConvention,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("model order n must be at least 1".into()));
        }
        if input.len() < n {
            return Err(Error::InvalidConfig(format!(
                "need N >= n, got N = {} and n = {}",
                input.len(),
                n
            )));
        }
        if y.len() != input.len() {
            return Err(Error::InvalidConfig(format!(
                "output length {} does not match input length {}",
                y.len(),
                input.len()
            )));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidConfig("sigma2 must be positive".into()));
        }
        let phi = build_regression_matrix(&input, n, convention);
        Ok(Self {
            input,
            n,
            y,
            sigma2,
            phi,
        })
    }

    pub fn input(&self) -> &InputSignal {
        &self.input
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }
}

/// Draws `theta0` as `n` independent standard normals scaled to unit norm.
pub fn generate_true_system<R: Rng>(n: usize, rng: &mut R) -> TrueSystem {
    assert!(n >= 1, "model order must be at least 1");
    loop {
        let raw = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        // A zero draw has probability zero; redraw rather than error out.
        if let Ok(sys) = TrueSystem::from_raw(raw, 1.0) {
            return sys;
        }
    }
}

/// Sample variance with divisor `N - 1` (mean subtracted).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
}

/// Draws a white standard-normal input and scales it so the sample SNR —
/// the sample variance of the noise-free output over `sigma2` — equals
/// `snr` exactly.
pub fn generate_scaled_input<R: Rng>(
    n_samples: usize,
    theta0: &TrueSystem,
    snr: f64,
    sigma2: f64,
    convention: DelayConvention,
    rng: &mut R,
) -> Result<InputSignal> {
    assert!(n_samples >= theta0.n(), "need N >= n");
    assert!(snr > 0.0 && sigma2 > 0.0);
    let raw: Vec<f64> = (0..n_samples)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let unscaled = InputSignal::new(raw)?;
    let phi = build_regression_matrix(&unscaled, theta0.n(), convention);
    let z = phi * theta0.theta0();
    let var_z = sample_variance(z.as_slice());
    if var_z <= 0.0 || !var_z.is_finite() {
        return Err(Error::DegenerateSignal);
    }
    let scale = (snr * sigma2 / var_z).sqrt();
    InputSignal::new(unscaled.as_slice().iter().map(|u| u * scale).collect())
}

/// Builds the `N x n` FIR regression matrix: lower triangular, Toeplitz,
/// with column `k` the input delayed per the chosen convention.
pub fn build_regression_matrix(
    input: &InputSignal,
    n: usize,
    convention: DelayConvention,
) -> DMatrix<f64> {
    let n_samples = input.len();
    assert!(n >= 1 && n_samples >= n, "need N >= n >= 1");
    DMatrix::from_fn(n_samples, n, |row, col| {
        let t = (row + 1) as i64;
        let lag = convention.lag(col + 1) as i64;
        input.at(t - lag)
    })
}

/// Corrupts a noise-free output with `n_mc` independent Gaussian noise
/// realizations. Realization `r` depends only on `(seed, collection, r)`.
pub fn generate_noisy_outputs(
    noise_free: &DVector<f64>,
    sigma2: f64,
    n_mc: usize,
    seed: u64,
    collection: u64,
) -> Vec<DVector<f64>> {
    (0..n_mc)
        .map(|rep| noisy_output(noise_free, sigma2, seed, collection, rep as u64))
        .collect()
}

/// Single noise realization `Y = noise_free + E`, `E ~ N(0, sigma2 I)`.
pub fn noisy_output(
    noise_free: &DVector<f64>,
    sigma2: f64,
    seed: u64,
    collection: u64,
    rep: u64,
) -> DVector<f64> {
    let mut rng = substream(seed, Purpose::Noise, collection, rep);
    let sd = sigma2.sqrt();
    DVector::from_fn(noise_free.len(), |i, _| {
        noise_free[i] + sd * rng.sample::<f64, _>(StandardNormal)
    })
}

/// One generated collection: true system, scaled input, regression matrix
/// and noise-free output, all deterministic in `(seed, index)`.
#[derive(Debug, Clone)]
pub struct Collection {
    pub theta0: TrueSystem,
    pub input: InputSignal,
    pub phi: DMatrix<f64>,
    pub noise_free: DVector<f64>,
}

/// Input scaling used when generating a collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputScaling {
    /// Raw standard-normal input, no rescaling; the Gram limit is the
    /// identity.
    UnitVariance,
    /// Scale so the sample SNR equals the given target.
    Snr(f64),
}

/// Generates collection `index` of a study: steps 1-3 of the protocol.
pub fn generate_collection(
    n: usize,
    n_samples: usize,
    scaling: InputScaling,
    sigma2: f64,
    convention: DelayConvention,
    seed: u64,
    index: u64,
) -> Result<Collection> {
    let mut sys_rng = substream(seed, Purpose::System, index, 0);
    let theta0 = generate_true_system(n, &mut sys_rng);
    let mut input_rng = substream(seed, Purpose::Input, index, 0);
    let input = match scaling {
        InputScaling::UnitVariance => InputSignal::new(
            (0..n_samples)
                .map(|_| input_rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )?,
        InputScaling::Snr(snr) => {
            generate_scaled_input(n_samples, &theta0, snr, sigma2, convention, &mut input_rng)?
        }
    };
    let phi = build_regression_matrix(&input, n, convention);
    let noise_free = &phi * theta0.theta0();
    Ok(Collection {
        theta0,
        input,
        phi,
        noise_free,
    })
}

/// Writes a dataset as CSV, one row per sample: `t,u,y`.
pub fn write_dataset_csv<W: Write>(mut w: W, input: &InputSignal, y: &DVector<f64>) -> std::io::Result<()> {
    writeln!(w, "t,u,y")?;
    for (i, u) in input.as_slice().iter().enumerate() {
        writeln!(w, "{},{},{}", i + 1, u, y[i])?;
    }
    Ok(())
}
