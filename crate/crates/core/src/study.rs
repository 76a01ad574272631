//! Monte Carlo benchmark study: config ingestion, seeded generation,
//! estimator execution, metric aggregation, timing and export.
//!
//! One study runs `n_collections` independent test systems; each collection
//! fixes `(theta0, u, Phi)` and corrupts the noise-free output with `n_mc`
//! noise realizations. Every configured estimator consumes the identical
//! measurement per replication, so cross-method differences are pure method
//! effects. Per-estimate wall times are accumulated per method; with one
//! thread the totals are wall-clock, with several they are CPU-time
//! attributions.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::bayes::{bayes_estimate, default_sample_count, SamplerConfig};
use crate::biased::biased_estimate;
use crate::eb::{eb_regularized_estimate, EbTunerConfig};
use crate::estimators::{ml_estimate, Method, PhiSvd};
use crate::prior::{WeightingParams, DEFAULT_DELTA};
use crate::simulate::{generate_collection, noisy_output, DelayConvention, InputScaling};
use crate::streams::{substream, Purpose, MAX_COLLECTION, MAX_REP};
use crate::{Error, Result};

/// Full study configuration; the JSON document mirrors these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Model order.
    pub n: usize,
    /// Sample size per realization.
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub n_collections: usize,
    /// Noise realizations per collection.
    pub n_mc: usize,
    /// Target sample SNR of the noise-free output.
    pub snr: f64,
    pub sigma2: f64,
    /// Bayes sampler draw count; defaults per `n` when absent.
    pub m_s: Option<usize>,
    /// Weighting-family combos run by the Bayes and biased estimators.
    pub c1_c2_list: Vec<(f64, f64)>,
    pub seed: u64,
    pub eb_tuner: EbTunerConfig,
    /// Small-radius guard of the weighting family.
    pub delta: f64,
    pub deterministic_reduction: bool,
    pub delay_convention: DelayConvention,
    /// Which estimators to run.
    pub methods: Vec<Method>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n: 5,
            n_samples: 15,
            n_collections: 100,
            n_mc: 200,
            snr: 5.0,
            sigma2: 1.0,
            m_s: None,
            c1_c2_list: vec![(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)],
            seed: 0,
            eb_tuner: EbTunerConfig::default(),
            delta: DEFAULT_DELTA,
            deterministic_reduction: true,
            delay_convention: DelayConvention::A,
            methods: vec![Method::Ml, Method::EbReg, Method::BayesEb, Method::BiasedEb],
        }
    }
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig =
            serde_json::from_str(text).map_err(|e| Error::json("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if self.n_samples < self.n {
            return Err(Error::InvalidConfig("need N >= n".into()));
        }
        if self.n_collections == 0 || self.n_mc == 0 {
            return Err(Error::InvalidConfig("n_collections and n_mc must be positive".into()));
        }
        if self.n_collections as u64 >= MAX_COLLECTION || self.n_mc as u64 >= MAX_REP {
            return Err(Error::InvalidConfig("study size exceeds the random-stream space".into()));
        }
        if !(self.snr > 0.0) || !(self.sigma2 > 0.0) {
            return Err(Error::InvalidConfig("snr and sigma2 must be positive".into()));
        }
        if let Some(m_s) = self.m_s {
            if m_s < 2 {
                return Err(Error::InvalidConfig("m_s must be at least 2".into()));
            }
        }
        if self.c1_c2_list.is_empty() {
            return Err(Error::InvalidConfig("c1_c2_list must not be empty".into()));
        }
        for &(c1, c2) in &self.c1_c2_list {
            if c1 == 0.0 && c2 == 0.0 {
                return Err(Error::InvalidConfig("(C1, C2) = (0, 0) is not a valid combo".into()));
            }
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidConfig("delta must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method must be enabled".into()));
        }
        self.eb_tuner.validate()?;
        Ok(())
    }

    /// Draw count actually used by the Bayes sampler.
    pub fn sample_count(&self) -> usize {
        self.m_s.unwrap_or_else(|| default_sample_count(self.n))
    }
}

/// Aggregated per-method results of one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    /// Mean over collections of the per-collection mean of `||e||^2`.
    pub sample_mse_mean: f64,
    /// Mean over collections of the per-collection mean of `||e||`.
    pub sample_norm_mean: f64,
    /// Mean over collections of the per-collection average FIT; absent when
    /// FIT is undefined (constant `theta0`, always at `n = 1`).
    pub fit_mean: Option<f64>,
    pub total_time_s: f64,
    /// Fraction of replications whose tuned `eta` sat on the grid boundary.
    pub boundary_flag_rate: f64,
    pub failures: u64,
}

/// Study output: config echo plus one report per method/combo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub n: usize,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub n_collections: usize,
    pub n_mc: usize,
    pub m_s: usize,
    pub seed: u64,
    pub reports: Vec<MetricsReport>,
}

/// FIT score `100 (1 - ||theta_hat - theta0|| / ||theta0 - mean(theta0)||)`.
pub fn fit_metric(theta_hat: &DVector<f64>, theta0: &DVector<f64>) -> Result<f64> {
    let denom = fit_denominator(theta0)?;
    Ok(100.0 * (1.0 - (theta_hat - theta0).norm() / denom))
}

fn fit_denominator(theta0: &DVector<f64>) -> Result<f64> {
    let mean = theta0.mean();
    let norm = theta0.map(|v| v - mean).norm();
    if norm < 1e-14 {
        return Err(Error::UndefinedFit { norm });
    }
    Ok(norm)
}

/// One estimator slot of the study: a method plus its combo, when it has one.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Slot {
    method: Method,
    combo: Option<(f64, f64)>,
}

fn slots(config: &StudyConfig) -> Vec<Slot> {
    let mut out = Vec::new();
    for &method in &[Method::Ml, Method::EbReg] {
        if config.methods.contains(&method) {
            out.push(Slot { method, combo: None });
        }
    }
    for &method in &[Method::BayesEb, Method::BiasedEb] {
        if config.methods.contains(&method) {
            for &combo in &config.c1_c2_list {
                out.push(Slot { method, combo: Some(combo) });
            }
        }
    }
    out
}

/// Per-slot accumulator over one collection's replications.
#[derive(Debug, Clone, Copy, Default)]
struct SlotStats {
    sum_sq: f64,
    sum_norm: f64,
    sum_fit: f64,
    ok: u64,
    failures: u64,
    boundary: u64,
    time: f64,
}

impl SlotStats {
    fn record(&mut self, err_norm: f64, fit_denom: Option<f64>, elapsed: f64, boundary: bool) {
        self.sum_sq += err_norm * err_norm;
        self.sum_norm += err_norm;
        if let Some(denom) = fit_denom {
            self.sum_fit += 100.0 * (1.0 - err_norm / denom);
        }
        self.ok += 1;
        self.time += elapsed;
        if boundary {
            self.boundary += 1;
        }
    }
}

/// Runs the full Monte Carlo study.
///
/// `threads == 1` forces the sequential path (single-threaded timing mode);
/// `threads == 0` uses all cores; anything else pins the pool size. Without
/// the `parallel` feature every value runs sequentially. Results are
/// identical for any thread count.
pub fn run_mc_study(config: &StudyConfig, threads: usize) -> Result<StudyResult> {
    config.validate()?;
    let slot_list = slots(config);
    let per_collection: Vec<CollectionOutcome> = run_collections(config, &slot_list, threads)?;
    let fit_defined = per_collection.iter().all(|c| c.fit_defined);

    let attempted = (config.n_collections * config.n_mc) as u64;
    let mut reports = Vec::with_capacity(slot_list.len());
    for (idx, slot) in slot_list.iter().enumerate() {
        let mut mse_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut fit_sum = 0.0;
        let mut collections_ok = 0u64;
        let mut failures = 0u64;
        let mut boundary = 0u64;
        let mut time = 0.0;
        for stats in per_collection.iter().map(|c| &c.stats[idx]) {
            failures += stats.failures;
            boundary += stats.boundary;
            time += stats.time;
            if stats.ok > 0 {
                mse_sum += stats.sum_sq / stats.ok as f64;
                norm_sum += stats.sum_norm / stats.ok as f64;
                fit_sum += stats.sum_fit / stats.ok as f64;
                collections_ok += 1;
            }
        }
        let rate = failures as f64 / attempted as f64;
        if rate > 0.01 {
            return Err(Error::FailureRate {
                method: slot.method.as_str().to_string(),
                rate,
            });
        }
        let denom = collections_ok.max(1) as f64;
        reports.push(MetricsReport {
            method: slot.method,
            c1: slot.combo.map(|c| c.0),
            c2: slot.combo.map(|c| c.1),
            sample_mse_mean: mse_sum / denom,
            sample_norm_mean: norm_sum / denom,
            fit_mean: fit_defined.then_some(fit_sum / denom),
            total_time_s: time,
            boundary_flag_rate: boundary as f64 / attempted as f64,
            failures,
        });
    }

    Ok(StudyResult {
        n: config.n,
        n_samples: config.n_samples,
        n_collections: config.n_collections,
        n_mc: config.n_mc,
        m_s: config.sample_count(),
        seed: config.seed,
        reports,
    })
}

struct CollectionOutcome {
    stats: Vec<SlotStats>,
    fit_defined: bool,
}

fn run_collections(
    config: &StudyConfig,
    slot_list: &[Slot],
    threads: usize,
) -> Result<Vec<CollectionOutcome>> {
    let run = |c: usize| run_one_collection(config, slot_list, c as u64);

    #[cfg(feature = "parallel")]
    if threads != 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        return pool.install(|| (0..config.n_collections).into_par_iter().map(run).collect());
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;

    (0..config.n_collections).map(run).collect()
}

fn run_one_collection(
    config: &StudyConfig,
    slot_list: &[Slot],
    collection: u64,
) -> Result<CollectionOutcome> {
    let coll = generate_collection(
        config.n,
        config.n_samples,
        InputScaling::Snr(config.snr),
        config.sigma2,
        config.delay_convention,
        config.seed,
        collection,
    )?;
    let svd = PhiSvd::new(&coll.phi)?;
    let theta0 = coll.theta0.theta0();
    let fit_denom = fit_denominator(theta0).ok();
    let sampler = SamplerConfig {
        m_s: config.sample_count(),
        deterministic_reduction: config.deterministic_reduction,
    };

    let mut stats = vec![SlotStats::default(); slot_list.len()];
    for rep in 0..config.n_mc as u64 {
        let y = noisy_output(&coll.noise_free, config.sigma2, config.seed, collection, rep);
        let cache = svd.cache_for(&y);
        for (slot, acc) in slot_list.iter().zip(stats.iter_mut()) {
            let outcome = match slot.method {
                Method::Ml => Ok(ml_estimate(&cache)),
                Method::EbReg => Ok(eb_regularized_estimate(
                    &cache,
                    config.sigma2,
                    config.n_samples,
                    &config.eb_tuner,
                )),
                Method::BayesEb => {
                    let (c1, c2) = slot.combo.expect("bayes slot has a combo");
                    WeightingParams::with_delta(c1, c2, config.n, config.delta).and_then(|params| {
                        let mut rng = substream(config.seed, Purpose::Sampler, collection, rep);
                        bayes_estimate(&cache, config.sigma2, &params, &sampler, &mut rng)
                    })
                }
                Method::BiasedEb => {
                    let (c1, c2) = slot.combo.expect("biased slot has a combo");
                    WeightingParams::with_delta(c1, c2, config.n, config.delta).and_then(|params| {
                        biased_estimate(&cache, config.sigma2, config.n_samples, &params)
                    })
                }
            };
            match outcome {
                Ok(rec) => {
                    let err_norm = (&rec.theta_hat - theta0).norm();
                    acc.record(err_norm, fit_denom, rec.elapsed, rec.eta_at_boundary);
                }
                Err(_) => acc.failures += 1,
            }
        }
    }
    Ok(CollectionOutcome {
        stats,
        fit_defined: fit_denom.is_some(),
    })
}

/// Output format for result files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::InvalidConfig(format!(
                "unknown format {other:?}, expected \"csv\" or \"json\""
            ))),
        }
    }
}

fn opt_to_string(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders the report table as CSV.
pub fn results_csv(result: &StudyResult) -> String {
    let mut out = String::from(
        "method,c1,c2,sample_mse_mean,fit_mean,total_time_s,boundary_flag_rate,failures\n",
    );
    for r in &result.reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method,
            opt_to_string(r.c1),
            opt_to_string(r.c2),
            r.sample_mse_mean,
            opt_to_string(r.fit_mean),
            r.total_time_s,
            r.boundary_flag_rate,
            r.failures
        ));
    }
    out
}

/// Plot-data table: one row per (method, combo) with the two headline
/// statistics, for external plotting.
pub fn plot_data_csv(result: &StudyResult) -> String {
    let mut out = String::from("method,c1,c2,sample_mse_mean,fit_mean\n");
    for r in &result.reports {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method,
            opt_to_string(r.c1),
            opt_to_string(r.c2),
            r.sample_mse_mean,
            opt_to_string(r.fit_mean)
        ));
    }
    out
}

/// Writes the result table plus the per-`(n, N)` plot-data file into `dir`.
/// Returns the written paths.
pub fn export_results(result: &StudyResult, dir: &Path, format: ExportFormat) -> Result<Vec<PathBuf>> {
    if result.reports.is_empty() {
        return Err(Error::InvalidConfig("no reports to export".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut written = Vec::new();

    let main_path = dir.join(match format {
        ExportFormat::Csv => "results.csv",
        ExportFormat::Json => "results.json",
    });
    let payload = match format {
        ExportFormat::Csv => results_csv(result),
        ExportFormat::Json => {
            serde_json::to_string_pretty(result).map_err(|e| Error::json("results", e))? + "\n"
        }
    };
    write_file(&main_path, payload.as_bytes())?;
    written.push(main_path);

    let plot_path = dir.join(format!("plot_n{}_N{}.csv", result.n, result.n_samples));
    write_file(&plot_path, plot_data_csv(result).as_bytes())?;
    written.push(plot_path);
    Ok(written)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(bytes)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads a previously exported JSON result back.
pub fn read_results_json(path: &Path) -> Result<StudyResult> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json("results", e))
}
