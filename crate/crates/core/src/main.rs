//! Command-line interface: each stage of the recovery procedure is a
//! subcommand operating on the CSV/JSON formats, plus a synthetic experiment
//! runner. Exit codes: 0 success, 2 input error, 3 numerical failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::json;

use nlmix_core::error::{Error, Result};
use nlmix_core::eval::aligned_mse;
use nlmix_core::feasibility::balancing_vector;
use nlmix_core::io::{read_matrix, write_dataset, write_matrix};
use nlmix_core::model::{apply_model, generate_mixing_matrix, sample_dirichlet, MixingMatrix};
use nlmix_core::mves::{mves, MvesOptions};
use nlmix_core::nonlinear::{NonlinearKind, NonlinearSpec};
use nlmix_core::pipeline::{
    run_pipeline, run_synthetic_experiment, write_experiment_outputs, ExperimentConfig,
    PipelineOptions,
};
use nlmix_core::solver::{fit_nonlinearity, SolveOptions};

#[derive(Parser)]
#[command(name = "nlmix", version, about = "Latent factor recovery under unknown per-feature nonlinear distortion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SolveArgs {
    /// Neurons per learned function.
    #[arg(long, default_value_t = 40)]
    neurons: usize,
    /// Tie all features to one parameter set.
    #[arg(long, default_value_t = false)]
    shared: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    n_starts: usize,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
}

impl SolveArgs {
    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            max_iterations: self.max_iterations,
            n_starts: self.n_starts,
            seed: self.seed,
            ..SolveOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory {X.csv, A.csv, S.csv, phi.json, meta.json}.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 4)]
        r: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Comma-separated Dirichlet parameters; one value is broadcast to r.
        #[arg(long, default_value = "0.1")]
        mu: String,
        /// Comma-separated nonlinearity names; one name is broadcast to all
        /// features.
        #[arg(long, default_value = "identity")]
        phi: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use scale * identity as the mixing matrix (forces M = r).
        #[arg(long)]
        scaled_identity: Option<f64>,
    },
    /// Learn the sum-to-one functions from X.csv and write params.json.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long)]
        out: PathBuf,
        /// Optional fit diagnostics JSON (cost, iterations, per-start costs).
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Enclosing-simplex factorization of Y.csv at the given rank.
    Unmix {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Permutation-aligned MSE between an estimate and the truth.
    Eval {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Full procedure: fit, transform, factorize.
    Pipeline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        rank: usize,
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded multi-trial sweep against the raw-data baseline.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides output_dir from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config trial count.
        #[arg(long)]
        n_trials: Option<usize>,
    },
    /// Balancing-vector certificate for a mixing matrix.
    Feasibility {
        #[arg(long)]
        matrix: PathBuf,
    },
}

fn parse_mu(text: &str, r: usize) -> Result<Vec<f64>> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parameter(format!("bad Dirichlet parameter {p:?}")))
        })
        .collect::<Result<_>>()?;
    if parts.len() == 1 {
        Ok(vec![parts[0]; r])
    } else if parts.len() == r {
        Ok(parts)
    } else {
        Err(Error::Parameter(format!(
            "{} Dirichlet parameters for r = {r}",
            parts.len()
        )))
    }
}

fn parse_phi(text: &str, m: usize) -> Result<NonlinearSpec> {
    let kinds: Vec<NonlinearKind> = text
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_>>()?;
    if kinds.len() == 1 {
        Ok(NonlinearSpec::uniform(kinds[0], m))
    } else if kinds.len() == m {
        Ok(NonlinearSpec::new(kinds))
    } else {
        Err(Error::Parameter(format!(
            "{} nonlinearities for M = {m}",
            kinds.len()
        )))
    }
}

fn unmix_to_dir(y: &DMatrix<f64>, rank: usize, out: &PathBuf) -> Result<()> {
    let fac = mves(y, rank, &MvesOptions::default())?;
    fs::create_dir_all(out)?;
    write_matrix(&out.join("B.csv"), &fac.b)?;
    write_matrix(&out.join("H.csv"), &fac.h)?;
    let diag = json!({
        "volume_proxy": fac.volume_proxy,
        "volume_trace": fac.volume_trace,
        "reconstruction_error": fac.reconstruction_error,
        "max_enclosure_violation": fac.max_enclosure_violation,
        "converged": fac.converged,
    });
    fs::write(out.join("diagnostics.json"), serde_json::to_string_pretty(&diag)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            out,
            m,
            r,
            n,
            mu,
            phi,
            seed,
            scaled_identity,
        } => {
            let mu = parse_mu(&mu, r)?;
            let mixing = match scaled_identity {
                Some(scale) => MixingMatrix::scaled_identity(r, scale),
                None => generate_mixing_matrix(m, r, seed)?,
            };
            let m_actual = mixing.nrows();
            let phi = parse_phi(&phi, m_actual)?;
            let sources = sample_dirichlet(&mu, n, seed.wrapping_add(1))?;
            let dataset = apply_model(&mixing, &sources, &phi)?;
            write_dataset(&out, &dataset)?;
            println!(
                "wrote dataset: M={m_actual} r={r} N={n} -> {}",
                out.display()
            );
            Ok(())
        }
        Command::Fit {
            input,
            solve,
            out,
            diagnostics,
        } => {
            let x = read_matrix(&input)?;
            let fit = fit_nonlinearity(&x, solve.neurons, solve.shared, &solve.solve_options())?;
            fs::write(&out, serde_json::to_string_pretty(&fit.params)?)?;
            if let Some(path) = diagnostics {
                let diag = json!({
                    "final_cost": fit.final_cost,
                    "iterations": fit.iterations,
                    "start_index": fit.start_index,
                    "converged": fit.converged,
                    "per_start_costs": fit.per_start_costs,
                });
                fs::write(path, serde_json::to_string_pretty(&diag)?)?;
            }
            println!(
                "fit cost {:.6e} (start {}, converged {})",
                fit.final_cost, fit.start_index, fit.converged
            );
            Ok(())
        }
        Command::Unmix { input, rank, out } => {
            let y = read_matrix(&input)?;
            unmix_to_dir(&y, rank, &out)?;
            println!("wrote factorization -> {}", out.display());
            Ok(())
        }
        Command::Eval { estimate, truth } => {
            let s_hat = read_matrix(&estimate)?;
            let s = read_matrix(&truth)?;
            let (mse, perm) = aligned_mse(&s_hat, &s)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({ "mse": mse, "perm": perm }))?
            );
            Ok(())
        }
        Command::Pipeline {
            input,
            rank,
            solve,
            out,
        } => {
            let x = read_matrix(&input)?;
            let opts = PipelineOptions {
                shared: solve.shared,
                solve: solve.solve_options(),
                mves: MvesOptions::default(),
            };
            let result = run_pipeline(&x, solve.neurons, rank, &opts)?;
            fs::create_dir_all(&out)?;
            fs::write(
                out.join("params.json"),
                serde_json::to_string_pretty(&result.fit.params)?,
            )?;
            write_matrix(&out.join("Y.csv"), &result.y)?;
            write_matrix(&out.join("B.csv"), &result.factorization.b)?;
            write_matrix(&out.join("S_hat.csv"), result.s_hat())?;
            let diag = json!({
                "fit": {
                    "final_cost": result.fit.final_cost,
                    "iterations": result.fit.iterations,
                    "start_index": result.fit.start_index,
                    "converged": result.fit.converged,
                    "per_start_costs": result.fit.per_start_costs,
                },
                "mves": {
                    "volume_proxy": result.factorization.volume_proxy,
                    "volume_trace": result.factorization.volume_trace,
                    "reconstruction_error": result.factorization.reconstruction_error,
                    "max_enclosure_violation": result.factorization.max_enclosure_violation,
                    "converged": result.factorization.converged,
                },
            });
            fs::write(
                out.join("diagnostics.json"),
                serde_json::to_string_pretty(&diag)?,
            )?;
            println!(
                "pipeline done: fit cost {:.6e} -> {}",
                result.fit.final_cost,
                out.display()
            );
            Ok(())
        }
        Command::Experiment {
            config,
            out,
            seed,
            n_trials,
        } => {
            let mut config: ExperimentConfig =
                serde_json::from_str(&fs::read_to_string(&config)?)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            if let Some(n_trials) = n_trials {
                config.n_trials = n_trials;
            }
            let out = out
                .or_else(|| config.output_dir.clone().map(PathBuf::from))
                .ok_or_else(|| {
                    Error::Input("no output directory: pass --out or set output_dir".into())
                })?;
            let report = run_synthetic_experiment(&config)?;
            write_experiment_outputs(&out, &report)?;
            let failures = report.trials.iter().filter(|t| t.error.is_some()).count();
            println!(
                "experiment done: {} trials, {failures} failures -> {}",
                report.trials.len(),
                out.display()
            );
            Ok(())
        }
        Command::Feasibility { matrix } => {
            let a = read_matrix(&matrix)?;
            let bal = balancing_vector(&a)?;
            println!("{}", serde_json::to_string_pretty(&bal)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
