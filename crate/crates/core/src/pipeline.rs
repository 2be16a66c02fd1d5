//! End-to-end factor recovery and the synthetic experiment protocol.
//!
//! The pipeline learns the sum-to-one network, applies it column-wise, and
//! factorizes the transformed data with the enclosing-simplex solver. The
//! experiment runner repeats this over seeded trials against the baseline
//! that factorizes the raw data directly, and aggregates paired errors.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{aligned_mse, empirical_cdf};
use crate::model::{apply_model, generate_mixing_matrix, sample_dirichlet};
use crate::mves::{mves, MvesOptions, SimplexFactorization};
use crate::nonlinear::{NonlinearKind, NonlinearSpec};
use crate::seeds::derive_seed;
use crate::solver::{fit_nonlinearity, FitResult, SolveOptions};

/// Controls for one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub shared: bool,
    pub solve: SolveOptions,
    pub mves: MvesOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            shared: true,
            solve: SolveOptions::default(),
            mves: MvesOptions::default(),
        }
    }
}

/// Outputs of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub fit: FitResult,
    /// Transformed data Y with Y(i, j) = f_i(X(i, j)).
    pub y: DMatrix<f64>,
    pub factorization: SimplexFactorization,
}

impl PipelineResult {
    pub fn s_hat(&self) -> &DMatrix<f64> {
        &self.factorization.h
    }
}

/// Learn the per-feature functions, transform the data, and factorize.
pub fn run_pipeline(
    x: &DMatrix<f64>,
    k: usize,
    r: usize,
    opts: &PipelineOptions,
) -> Result<PipelineResult> {
    if r < 3 {
        return Err(Error::Dimension(format!("need r >= 3, got {r}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("data matrix contains non-finite entries".into()));
    }

    let fit = fit_nonlinearity(x, k, opts.shared, &opts.solve)
        .map_err(|e| stage_error("fit-nonlinearity", e))?;
    let y = fit
        .params
        .transform(x)
        .map_err(|e| stage_error("transform", e))?;
    let factorization = mves(&y, r, &opts.mves).map_err(|e| stage_error("mves", e))?;

    Ok(PipelineResult {
        fit,
        y,
        factorization,
    })
}

fn stage_error(stage: &str, e: Error) -> Error {
    match e {
        Error::SolverFailure(msg) => Error::SolverFailure(format!("stage {stage}: {msg}")),
        Error::Structure(msg) => Error::Structure(format!("stage {stage}: {msg}")),
        Error::Numerical(msg) => Error::Numerical(format!("stage {stage}: {msg}")),
        other => other,
    }
}

fn default_max_iterations() -> usize {
    SolveOptions::default().max_iterations
}

/// Configuration of the synthetic experiment sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(rename = "M")]
    pub m: usize,
    pub r: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub mu: Vec<f64>,
    pub nonlinearity: Vec<NonlinearKind>,
    pub n_trials: usize,
    pub n_starts: usize,
    pub seed: u64,
    pub shared_network: bool,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Optional default output directory; never serialized back so reports
    /// stay independent of where they were written.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r < 3 || self.m < self.r {
            return Err(Error::Dimension(format!(
                "need M >= r >= 3, got M={} r={}",
                self.m, self.r
            )));
        }
        if self.n == 0 {
            return Err(Error::Parameter("need N >= 1".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::Parameter("need at least one trial".into()));
        }
        if self.mu.len() != self.r {
            return Err(Error::Dimension(format!(
                "{} Dirichlet parameters for r = {}",
                self.mu.len(),
                self.r
            )));
        }
        if self.nonlinearity.is_empty() {
            return Err(Error::Parameter("need at least one nonlinearity".into()));
        }
        Ok(())
    }
}

/// Outcome of one trial; `None` metrics mean the stage failed and `error`
/// says why.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialReport {
    pub nonlinearity: NonlinearKind,
    pub trial: usize,
    pub seed: u64,
    pub mse_proposed: Option<f64>,
    pub mse_baseline: Option<f64>,
    pub fit_cost: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

/// One empirical CDF over log10(MSE) for a nonlinearity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CdfGroup {
    pub nonlinearity: NonlinearKind,
    /// (log10 mse, fraction of trials at or below it)
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub nonlinearity: NonlinearKind,
    pub method: String,
    pub trials: usize,
    pub median_mse: f64,
    pub q10_mse: f64,
    pub q90_mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialReport>,
    pub cdf_proposed: Vec<CdfGroup>,
    pub cdf_baseline: Vec<CdfGroup>,
    pub summary: Vec<SummaryEntry>,
}

fn run_trial(config: &ExperimentConfig, kind: NonlinearKind, trial: usize, seed: u64) -> TrialReport {
    let mut report = TrialReport {
        nonlinearity: kind,
        trial,
        seed,
        mse_proposed: None,
        mse_baseline: None,
        fit_cost: None,
        converged: false,
        error: None,
    };

    let attempt = (|| -> Result<()> {
        let mixing = generate_mixing_matrix(config.m, config.r, derive_seed(seed, 0))?;
        let sources = sample_dirichlet(&config.mu, config.n, derive_seed(seed, 1))?;
        let phi = NonlinearSpec::uniform(kind, config.m);
        let dataset = apply_model(&mixing, &sources, &phi)?;

        let opts = PipelineOptions {
            shared: config.shared_network,
            solve: SolveOptions {
                max_iterations: config.max_iterations,
                n_starts: config.n_starts,
                seed: derive_seed(seed, 2),
                ..SolveOptions::default()
            },
            mves: MvesOptions::default(),
        };

        // Baseline first: enclosing-simplex factorization of the raw data.
        let baseline = mves(&dataset.x, config.r, &MvesOptions::default())?;
        let (mse_base, _) = aligned_mse(&baseline.h, &sources.s)?;
        report.mse_baseline = Some(mse_base);

        let result = run_pipeline(&dataset.x, config.k, config.r, &opts)?;
        let (mse_prop, _) = aligned_mse(result.s_hat(), &sources.s)?;
        report.mse_proposed = Some(mse_prop);
        report.fit_cost = Some(result.fit.final_cost);
        report.converged = result.fit.converged && result.factorization.converged;
        Ok(())
    })();

    if let Err(e) = attempt {
        report.error = Some(e.to_string());
        report.converged = false;
    }
    report
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn cdf_group(kind: NonlinearKind, mses: &[f64]) -> Option<CdfGroup> {
    if mses.is_empty() {
        return None;
    }
    let logs: Vec<f64> = mses.iter().map(|&v| v.max(1e-300).log10()).collect();
    let points = empirical_cdf(&logs).ok()?;
    Some(CdfGroup {
        nonlinearity: kind,
        points,
    })
}

/// Run the full sweep: per nonlinearity, `n_trials` seeded trials with the
/// pipeline and the raw-data baseline on identical data. Trials run in
/// parallel under per-trial seeds, so the report is a pure function of the
/// configuration. Individual trial failures are recorded, never fatal.
pub fn run_synthetic_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;

    let jobs: Vec<(usize, NonlinearKind, usize)> = config
        .nonlinearity
        .iter()
        .enumerate()
        .flat_map(|(ki, &kind)| (0..config.n_trials).map(move |t| (ki, kind, t)))
        .collect();

    let trials: Vec<TrialReport> = jobs
        .par_iter()
        .map(|&(ki, kind, t)| {
            let trial_seed = derive_seed(config.seed, (ki * config.n_trials + t) as u64);
            run_trial(config, kind, t, trial_seed)
        })
        .collect();

    let mut cdf_proposed = Vec::new();
    let mut cdf_baseline = Vec::new();
    let mut summary = Vec::new();
    for &kind in &config.nonlinearity {
        let prop: Vec<f64> = trials
            .iter()
            .filter(|t| t.nonlinearity == kind)
            .filter_map(|t| t.mse_proposed)
            .collect();
        let base: Vec<f64> = trials
            .iter()
            .filter(|t| t.nonlinearity == kind)
            .filter_map(|t| t.mse_baseline)
            .collect();
        if let Some(g) = cdf_group(kind, &prop) {
            cdf_proposed.push(g);
        }
        if let Some(g) = cdf_group(kind, &base) {
            cdf_baseline.push(g);
        }
        for (method, values) in [("proposed", &prop), ("baseline", &base)] {
            if values.is_empty() {
                continue;
            }
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            summary.push(SummaryEntry {
                nonlinearity: kind,
                method: method.to_string(),
                trials: sorted.len(),
                median_mse: quantile(&sorted, 0.5),
                q10_mse: quantile(&sorted, 0.1),
                q90_mse: quantile(&sorted, 0.9),
            });
        }
    }

    Ok(ExperimentReport {
        config: config.clone(),
        trials,
        cdf_proposed,
        cdf_baseline,
        summary,
    })
}

fn write_cdf_csv(path: &Path, groups: &[CdfGroup]) -> Result<()> {
    let mut out = String::from("nonlinearity,log10_mse,cdf\n");
    for g in groups {
        let name = serde_json::to_value(g.nonlinearity)?
            .as_str()
            .unwrap_or("unknown")
            .to_string();
        for (x, f) in &g.points {
            out.push_str(&format!("{name},{x:.16e},{f:.16e}\n"));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write report.json plus the plot-ready CSV companions.
pub fn write_experiment_outputs(dir: &Path, report: &ExperimentReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    write_cdf_csv(&dir.join("cdf_proposed.csv"), &report.cdf_proposed)?;
    write_cdf_csv(&dir.join("cdf_baseline.csv"), &report.cdf_baseline)?;

    let mut out =
        String::from("nonlinearity,trial,seed,mse_proposed,mse_baseline,fit_cost,converged\n");
    for t in &report.trials {
        let name = serde_json::to_value(t.nonlinearity)?
            .as_str()
            .unwrap_or("unknown")
            .to_string();
        let fmt = |v: Option<f64>| v.map_or(String::from(""), |x| format!("{x:.16e}"));
        out.push_str(&format!(
            "{name},{},{},{},{},{},{}\n",
            t.trial,
            t.seed,
            fmt(t.mse_proposed),
            fmt(t.mse_baseline),
            fmt(t.fit_cost),
            t.converged
        ));
    }
    fs::write(dir.join("trials.csv"), out)?;
    Ok(())
}
