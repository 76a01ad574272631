//! Batch benchmark CLI: Monte Carlo studies, XMSE calculators and the
//! identity-check suite. Errors leave as machine-readable JSON on stderr
//! with a nonzero exit code.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ebridge::simulate::{self, DelayConvention, InputScaling};
use ebridge::study::{self, ExportFormat, StudyConfig};
use ebridge::xmse::{self, EstimatorSelect};

#[derive(Parser)]
#[command(name = "ebridge", version, about = "Ridge estimator benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Study configuration JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's delay convention (a | b).
    #[arg(long)]
    delay_convention: Option<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<StudyConfig> {
        let text = std::fs::read_to_string(&self.config)
            .with_context(|| format!("reading {}", self.config.display()))?;
        let mut cfg = StudyConfig::from_json(&text)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(conv) = &self.delay_convention {
            cfg.delay_convention = conv.parse::<DelayConvention>()?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full Monte Carlo study and export the report table.
    RunMc {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for result files.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Result format: csv | json.
        #[arg(long, default_value = "csv")]
        format: String,
        /// Worker threads: 1 = single-threaded timing mode, 0 = all cores.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Print the closed-form XMSE of the EB-tuned ridge estimator.
    XmseTheory {
        /// Model order.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        /// Squared norm of the true parameter vector.
        #[arg(long, default_value_t = 1.0)]
        theta0_norm2: f64,
        /// Gram-limit scale.
        #[arg(long, default_value_t = 1.0)]
        sigma_u2: f64,
    },
    /// Estimate an estimator's XMSE by paired-difference Monte Carlo.
    XmseEmpirical {
        #[command(flatten)]
        config: ConfigArgs,
        /// Estimator: ML | EB_REG | BAYES_EB | BIASED_EB.
        #[arg(long)]
        estimator: String,
        /// Paired noise replications (at least 1000).
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        /// Use raw unit-variance input instead of SNR scaling, matching the
        /// identity Gram limit assumed by the theory.
        #[arg(long, default_value_t = true)]
        unit_input: bool,
        /// Fix one (theta0, u) instance for the whole run instead of
        /// redrawing it per rep; estimates that instance's conditional XMSE.
        #[arg(long, default_value_t = false)]
        fixed_instance: bool,
        /// Weighting constants; default to the config's first combo.
        #[arg(long)]
        c1: Option<f64>,
        #[arg(long)]
        c2: Option<f64>,
    },
    /// Run the finite-difference / dense-oracle / ODE identity suite.
    CheckIdentities {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-export results or dump a generated dataset.
    Export {
        #[command(subcommand)]
        what: ExportCommand,
    },
}

#[derive(Subcommand)]
enum ExportCommand {
    /// Convert a results JSON file into csv or json under --out.
    Results {
        /// Previously exported results.json.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Generate one collection/replication dataset as CSV rows `t,u,y`.
    Dataset {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        collection: u64,
        #[arg(long, default_value_t = 0)]
        rep: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("{}", json!({ "error": format!("{err:#}") }));
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::RunMc {
            config,
            out,
            format,
            threads,
        } => {
            let cfg = config.load()?;
            let format: ExportFormat = format.parse()?;
            let result = study::run_mc_study(&cfg, threads)?;
            let paths = study::export_results(&result, &out, format)?;
            for r in &result.reports {
                println!(
                    "{:<10} c1={:<4} c2={:<4} sample_mse={:.4e} fit={} time={:.3}s",
                    r.method.as_str(),
                    opt(r.c1),
                    opt(r.c2),
                    r.sample_mse_mean,
                    r.fit_mean.map_or_else(|| "n/a".into(), |f| format!("{f:.2}")),
                    r.total_time_s
                );
            }
            for p in paths {
                println!("wrote {}", p.display());
            }
            Ok(0)
        }
        Command::XmseTheory {
            n,
            sigma2,
            theta0_norm2,
            sigma_u2,
        } => {
            if n == 0 || sigma2 <= 0.0 || theta0_norm2 <= 0.0 || sigma_u2 <= 0.0 {
                bail!("n, sigma2, theta0_norm2 and sigma_u2 must be positive");
            }
            let b = xmse::xmse_eb_theoretical(n, sigma2, theta0_norm2, sigma_u2);
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "n": n,
                    "sigma2": sigma2,
                    "theta0_norm2": theta0_norm2,
                    "sigma_u2": sigma_u2,
                    "xbias_sq": b.xbias_sq,
                    "tr_xvar": b.tr_xvar,
                    "tr_xvar_hpe": b.tr_xvar_hpe,
                    "total": b.total,
                }))?
            );
            Ok(0)
        }
        Command::XmseEmpirical {
            config,
            estimator,
            reps,
            unit_input,
            fixed_instance,
            c1,
            c2,
        } => {
            let cfg = config.load()?;
            let combo = cfg.c1_c2_list.first().copied().unwrap_or((0.0, 1.0));
            let c1 = c1.unwrap_or(combo.0);
            let c2 = c2.unwrap_or(combo.1);
            let select = match estimator.as_str() {
                "ML" => EstimatorSelect::Ml,
                "EB_REG" => EstimatorSelect::EbReg { tuner: cfg.eb_tuner },
                "BAYES_EB" => EstimatorSelect::BayesEb {
                    c1,
                    c2,
                    m_s: cfg.sample_count(),
                },
                "BIASED_EB" => EstimatorSelect::BiasedEb { c1, c2 },
                other => bail!("unknown estimator {other:?}"),
            };
            let scaling = if unit_input {
                InputScaling::UnitVariance
            } else {
                InputScaling::Snr(cfg.snr)
            };
            let instance = if fixed_instance {
                xmse::InstanceDraw::Fixed
            } else {
                xmse::InstanceDraw::PerRep
            };
            let out = xmse::xmse_empirical(
                &select,
                cfg.n,
                cfg.n_samples,
                scaling,
                cfg.sigma2,
                reps,
                instance,
                cfg.seed,
            )?;
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "estimator": select.method().as_str(),
                    "n": cfg.n,
                    "N": cfg.n_samples,
                    "reps": out.reps,
                    "estimate": out.estimate,
                    "std_error": out.std_error,
                    "theory": out.theory,
                    "sigma_u2": out.sigma_u2,
                }))?
            );
            Ok(0)
        }
        Command::CheckIdentities { seed } => {
            let outcomes = ebridge::checks::run_identity_checks(seed);
            let mut failed = false;
            for o in &outcomes {
                println!("{o}");
                failed |= !o.passed;
            }
            Ok(if failed { 2 } else { 0 })
        }
        Command::Export { what } => match what {
            ExportCommand::Results { input, out, format } => {
                let result = study::read_results_json(&input)?;
                let format: ExportFormat = format.parse()?;
                let paths = study::export_results(&result, &out, format)?;
                for p in paths {
                    println!("wrote {}", p.display());
                }
                Ok(0)
            }
            ExportCommand::Dataset {
                config,
                collection,
                rep,
                out,
            } => {
                let cfg = config.load()?;
                let coll = simulate::generate_collection(
                    cfg.n,
                    cfg.n_samples,
                    InputScaling::Snr(cfg.snr),
                    cfg.sigma2,
                    cfg.delay_convention,
                    cfg.seed,
                    collection,
                )?;
                let y = simulate::noisy_output(&coll.noise_free, cfg.sigma2, cfg.seed, collection, rep);
                let file = std::fs::File::create(&out)
                    .with_context(|| format!("creating {}", out.display()))?;
                simulate::write_dataset_csv(file, &coll.input, &y)?;
                println!("wrote {}", out.display());
                Ok(0)
            }
        },
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}
