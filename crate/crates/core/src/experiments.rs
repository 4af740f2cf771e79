//! Seeded Monte Carlo harnesses for the three reference experiments:
//! filter matrices of the scalar random walk, the observer comparison grid
//! on a ten-state marginally stable system, and joint state/parameter
//! recovery of the Hénon map.
//!
//! Every trial draws its randomness from [`trial_seed`], which depends only
//! on the master seed, the cell's parameter values and the trial index.
//! Cells and trials run in parallel; results do not depend on scheduling.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::{filter_matrix, solve_estimate, NormalSystem};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_filter_matrix_csv};
use crate::model::{example2_model, simulate, LinearModel, NoiseSpec};
use crate::nonlinear::{
    bounded_initial_condition, fit, henon_simulate, theta_summary, FitConfig, FitReport,
    HenonParams,
};
use crate::observers::{deadbeat_full, deadbeat_sliding, relative_error};
use crate::seed::{derive_seed, substream};

/// Seed of one trial. The cell is identified by its parameter values so a
/// cell keeps its seeds when the surrounding grid changes.
pub fn trial_seed(master: u64, cell_params: &[f64], trial: usize) -> u64 {
    let cell = cell_params
        .iter()
        .fold(0u64, |acc, p| substream(acc, p.to_bits()));
    derive_seed(master, cell, trial as u64)
}

// ---------------------------------------------------------------------------
// Filter matrices

#[derive(Debug, Clone)]
pub struct FilterMatrix {
    pub rho: f64,
    pub h: DMatrix<f64>,
}

impl FilterMatrix {
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        write_filter_matrix_csv(&self.h, 1, writer)
    }
}

pub const EXAMPLE1_RHOS: [f64; 3] = [0.1, 1.0, 10.0];
pub const EXAMPLE1_HORIZON: usize = 5;

/// `H*` of the scalar model `A = C = 1` for each weight.
pub fn run_example1(rhos: &[f64], horizon: usize) -> Result<Vec<FilterMatrix>> {
    if horizon < 1 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let model = LinearModel::scalar(1.0, 1.0)?;
    rhos.iter()
        .map(|&rho| {
            Ok(FilterMatrix {
                rho,
                h: filter_matrix(&model, horizon, rho)?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Observer comparison grid

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Closed-form batch estimate.
    Batch,
    /// Dead-beat observer over the whole window.
    Db,
    /// Sliding-window dead-beat observer.
    Sdb,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Batch, Method::Db, Method::Sdb];

    pub fn label(self) -> &'static str {
        match self {
            Method::Batch => "batch",
            Method::Db => "db",
            Method::Sdb => "sdb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub sigma_nu: Vec<f64>,
    pub horizons: Vec<usize>,
    pub trials: usize,
    pub master_seed: u64,
    pub rho: f64,
    /// `σ_μ = noise_ratio · σ_ν`.
    pub noise_ratio: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            sigma_nu: (0..=10).map(|i| i as f64 / 10.0).collect(),
            horizons: (1..=10).map(|i| 10 * i).collect(),
            trials: 100,
            master_seed: 0,
            rho: 1.0,
            noise_ratio: 10.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_nu.is_empty() || self.horizons.is_empty() {
            return Err(Error::invalid("grid needs at least one sigma_nu and one N"));
        }
        if let Some(s) = self
            .sigma_nu
            .iter()
            .find(|s| !(s.is_finite() && **s >= 0.0))
        {
            return Err(Error::invalid(format!("sigma_nu must be >= 0, got {s}")));
        }
        if self.horizons.contains(&0) {
            return Err(Error::invalid("grid horizons must be positive"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be positive"));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::invalid(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        if !(self.noise_ratio.is_finite() && self.noise_ratio >= 0.0) {
            return Err(Error::invalid("noise_ratio must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodStats {
    pub method: Method,
    pub mean_err: f64,
    pub std_err: f64,
    pub trials_ok: usize,
    pub failures: usize,
    /// Message of the first failure, if any.
    pub first_error: Option<String>,
}

impl MethodStats {
    fn from_outcomes(method: Method, outcomes: &[std::result::Result<f64, String>]) -> Self {
        let errs: Vec<f64> = outcomes
            .iter()
            .filter_map(|o| o.as_ref().ok().copied())
            .collect();
        let first_error = outcomes.iter().find_map(|o| o.as_ref().err().cloned());
        let (mean_err, std_err) = mean_std(&errs);
        Self {
            method,
            mean_err,
            std_err,
            trials_ok: errs.len(),
            failures: outcomes.len() - errs.len(),
            first_error,
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub sigma_nu: f64,
    pub sigma_mu: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub methods: Vec<MethodStats>,
    /// Noise seed of every trial, in trial order.
    pub seeds: Vec<u64>,
}

impl GridCell {
    pub fn stats(&self, method: Method) -> &MethodStats {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .expect("every cell carries all methods")
    }

    /// Every trial failed for at least one method.
    pub fn fully_failed(&self) -> bool {
        self.methods.iter().any(|m| m.trials_ok == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    pub config: GridSpec,
    /// Ordered by `sigma_nu`, then `N`, in the order given by the grid.
    pub cells: Vec<GridCell>,
}

impl GridReport {
    pub fn cell(&self, sigma_nu: f64, horizon: usize) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.sigma_nu == sigma_nu && c.horizon == horizon)
    }

    /// `sigma_nu,N,method,mean_err,std_err,trials_ok`.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "sigma_nu",
            "N",
            "method",
            "mean_err",
            "std_err",
            "trials_ok",
        ])?;
        for cell in &self.cells {
            for m in &cell.methods {
                w.write_record([
                    fmt_f64(cell.sigma_nu),
                    cell.horizon.to_string(),
                    m.method.label().to_string(),
                    fmt_f64(m.mean_err),
                    fmt_f64(m.std_err),
                    m.trials_ok.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Mean errors of one method in gnuplot's nonuniform matrix layout:
    /// the first row is the column count followed by the `N` values, every
    /// following row is a `σ_ν` value followed by its errors.
    pub fn write_matrix(&self, method: Method, mut writer: impl Write) -> Result<()> {
        let spec = &self.config;
        write!(writer, "{}", spec.horizons.len())?;
        for n in &spec.horizons {
            write!(writer, " {n}")?;
        }
        writeln!(writer)?;
        for &s in &spec.sigma_nu {
            write!(writer, "{}", fmt_f64(s))?;
            for &n in &spec.horizons {
                let cell = self.cell(s, n).expect("cell exists for every grid point");
                write!(writer, " {}", fmt_f64(cell.stats(method).mean_err))?;
            }
            writeln!(writer)?;
        }
        Ok(())
    }
}

/// Compare the batch estimator against both dead-beat observers on the
/// ten-state comparison system.
pub fn run_example2(grid: &GridSpec) -> Result<GridReport> {
    run_grid(&example2_model(), grid)
}

/// The comparison grid for an arbitrary model, starting from the all-ones
/// initial state.
pub fn run_grid(model: &LinearModel, grid: &GridSpec) -> Result<GridReport> {
    grid.validate()?;
    let x1 = DVector::from_element(model.n(), 1.0);

    // One factorization per horizon, shared by every trial at that horizon.
    let normals: Vec<std::result::Result<NormalSystem, String>> = grid
        .horizons
        .par_iter()
        .map(|&n| NormalSystem::for_model(model, n, grid.rho).map_err(|e| e.to_string()))
        .collect();

    let points: Vec<(f64, usize, usize)> = grid
        .sigma_nu
        .iter()
        .flat_map(|&s| {
            grid.horizons
                .iter()
                .enumerate()
                .map(move |(k, &n)| (s, n, k))
        })
        .collect();

    let cells = points
        .par_iter()
        .map(|&(sigma_nu, horizon, k)| {
            let sigma_mu = grid.noise_ratio * sigma_nu;
            let mut outcomes: [Vec<std::result::Result<f64, String>>; 3] = Default::default();
            let mut seeds = Vec::with_capacity(grid.trials);
            for trial in 0..grid.trials {
                let seed = trial_seed(grid.master_seed, &[sigma_nu, horizon as f64], trial);
                seeds.push(seed);
                let noise = NoiseSpec {
                    sigma_nu,
                    sigma_mu,
                    seed,
                };
                let (x, y) = simulate(model, &x1, &noise, horizon)?;
                let batch = normals[k]
                    .as_ref()
                    .map_err(Clone::clone)
                    .and_then(|sys| solve_estimate(sys, &y).map_err(|e| e.to_string()))
                    .and_then(|r| relative_error(&r.xhat, &x).map_err(|e| e.to_string()));
                let db = deadbeat_full(model, &y)
                    .and_then(|xh| relative_error(&xh, &x))
                    .map_err(|e| e.to_string());
                let sdb = deadbeat_sliding(model, &y)
                    .and_then(|xh| relative_error(&xh, &x))
                    .map_err(|e| e.to_string());
                outcomes[0].push(batch);
                outcomes[1].push(db);
                outcomes[2].push(sdb);
            }
            let methods = Method::ALL
                .iter()
                .zip(&outcomes)
                .map(|(&m, o)| MethodStats::from_outcomes(m, o))
                .collect();
            Ok(GridCell {
                sigma_nu,
                sigma_mu,
                horizon,
                methods,
                seeds,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(GridReport {
        config: grid.clone(),
        cells,
    })
}

// ---------------------------------------------------------------------------
// Hénon recovery table

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Example3Spec {
    pub sigmas: Vec<f64>,
    pub trials: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub master_seed: u64,
    pub params: HenonParams,
    /// `init_seed` is overridden per trial.
    pub fit: FitConfig,
}

impl Default for Example3Spec {
    fn default() -> Self {
        Self {
            sigmas: vec![0.0, 0.1, 0.2, 0.5, 1.0],
            trials: 10,
            horizon: 100,
            master_seed: 0,
            params: HenonParams::default(),
            fit: FitConfig::default(),
        }
    }
}

impl Example3Spec {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(Error::invalid("at least one noise level is required"));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::invalid(format!("sigma_mu must be >= 0, got {s}")));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be positive"));
        }
        if self.horizon < 3 {
            return Err(Error::invalid("N must be at least 3"));
        }
        self.fit.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub sigma_mu: f64,
    pub trial: usize,
    pub err_x: f64,
    pub err_theta: f64,
    pub iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialFailure {
    pub sigma_mu: f64,
    pub trial: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseLevelSummary {
    pub sigma_mu: f64,
    pub mean_err_x: f64,
    pub mean_err_theta: f64,
    pub trials_ok: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Example3Report {
    pub config: Example3Spec,
    pub levels: Vec<NoiseLevelSummary>,
    pub rows: Vec<TrialRow>,
    pub failures: Vec<TrialFailure>,
    #[serde(skip)]
    pub fits: Vec<(f64, usize, FitReport)>,
}

impl Example3Report {
    pub fn level(&self, sigma_mu: f64) -> Option<&NoiseLevelSummary> {
        self.levels.iter().find(|l| l.sigma_mu == sigma_mu)
    }

    /// `sigma_mu,trial,err_X,err_Theta,iters`.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["sigma_mu", "trial", "err_X", "err_Theta", "iters"])?;
        for r in &self.rows {
            w.write_record([
                fmt_f64(r.sigma_mu),
                r.trial.to_string(),
                fmt_f64(r.err_x),
                fmt_f64(r.err_theta),
                r.iters.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Number of loss samples kept per saved fit.
pub const SAVED_HISTORY_POINTS: usize = 200;

/// One Hénon trial: draw a bounded initial condition, simulate, fit and
/// score.
pub fn example3_trial(
    spec: &Example3Spec,
    sigma_mu: f64,
    trial: usize,
) -> Result<(TrialRow, FitReport)> {
    let seed = trial_seed(spec.master_seed, &[sigma_mu, spec.horizon as f64], trial);
    let x1 = bounded_initial_condition(&spec.params, spec.horizon, substream(seed, 0))?;
    let run = henon_simulate(&spec.params, x1, sigma_mu, spec.horizon, substream(seed, 1))?;
    let config = FitConfig {
        init_seed: substream(seed, 2),
        ..spec.fit.clone()
    };
    let estimate = fit(&run.measurements, &config)?;
    let summary = theta_summary(
        &estimate.state,
        &run.first_state(),
        &spec.params.library_coefficients(),
    )?;
    Ok((
        TrialRow {
            sigma_mu,
            trial,
            err_x: summary.err_x,
            err_theta: summary.err_theta,
            iters: estimate.iterations_used,
        },
        FitReport::new(&estimate, &config, SAVED_HISTORY_POINTS),
    ))
}

/// Mean recovery errors per noise level. Failed trials are listed and
/// excluded from the means.
pub fn run_example3(spec: &Example3Spec, keep_fits: bool) -> Result<Example3Report> {
    spec.validate()?;
    let jobs: Vec<(f64, usize)> = spec
        .sigmas
        .iter()
        .flat_map(|&s| (0..spec.trials).map(move |t| (s, t)))
        .collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(s, t)| (s, t, example3_trial(spec, s, t)))
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut fits = Vec::new();
    for (sigma_mu, trial, outcome) in outcomes {
        match outcome {
            Ok((row, report)) => {
                rows.push(row);
                if keep_fits {
                    fits.push((sigma_mu, trial, report));
                }
            }
            Err(e) => failures.push(TrialFailure {
                sigma_mu,
                trial,
                error: e.to_string(),
            }),
        }
    }

    let levels = spec
        .sigmas
        .iter()
        .map(|&s| {
            let ok: Vec<&TrialRow> = rows.iter().filter(|r| r.sigma_mu == s).collect();
            let (mean_err_x, _) = mean_std(&ok.iter().map(|r| r.err_x).collect::<Vec<_>>());
            let (mean_err_theta, _) = mean_std(&ok.iter().map(|r| r.err_theta).collect::<Vec<_>>());
            NoiseLevelSummary {
                sigma_mu: s,
                mean_err_x,
                mean_err_theta,
                trials_ok: ok.len(),
                failures: failures.iter().filter(|f| f.sigma_mu == s).count(),
            }
        })
        .collect();

    Ok(Example3Report {
        config: spec.clone(),
        levels,
        rows,
        failures,
        fits,
    })
}
