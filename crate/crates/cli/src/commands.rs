use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use batchstate::experiments::{
    run_example1, run_example2, run_example3, Example3Spec, GridSpec, Method, EXAMPLE1_HORIZON,
    EXAMPLE1_RHOS,
};
use batchstate::io::{
    fmt_f64, read_measurements_csv, read_model_json, read_trajectory_csv, write_measurements_csv,
    write_trajectory_csv, EstimateDocument,
};
use batchstate::model::{observability_rank, DEFAULT_RANK_TOL};
use batchstate::{
    deadbeat_full, deadbeat_sliding, evaluate_estimate, example2_model, relative_error, simulate,
    solve_estimate, Error, LinearModel, NoiseSpec, NormalSystem,
};
use nalgebra::DVector;
use serde::Serialize;

use crate::cli::{EstimateArgs, Ex1Args, Ex2Args, Ex3Args, MethodArg, ModelSource, SimulateArgs};
use crate::config::{resolve_seed, ConfigFile};
use crate::error::CliError;

const DEFAULT_SIM_HORIZON: usize = 50;

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::file(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::file(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::file(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    writeln!(w).map_err(|e| CliError::file(path, e))?;
    finish(w, path)
}

/// `<prefix><suffix>`, keeping the prefix's directory.
fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn out_dir(dir: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = dir.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::file(&dir, e))?;
    Ok(dir)
}

fn load_model(
    source: &ModelSource,
    cfg_model: Option<PathBuf>,
    cfg_example2: Option<bool>,
) -> Result<LinearModel, CliError> {
    let (path, example2) = if source.model.is_some() || source.example2 {
        (source.model.clone(), source.example2)
    } else {
        (cfg_model, cfg_example2.unwrap_or(false))
    };
    match (path, example2) {
        (Some(_), true) => Err(CliError::Usage(
            "--model and --example2 are mutually exclusive".into(),
        )),
        (Some(p), false) => Ok(read_model_json(open(&p)?)?),
        (None, true) => Ok(example2_model()),
        (None, false) => Err(CliError::Usage(
            "one of --model or --example2 is required".into(),
        )),
    }
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

fn check_rho(rho: f64) -> Result<f64, CliError> {
    if rho.is_finite() && rho > 0.0 {
        Ok(rho)
    } else {
        Err(CliError::Usage(format!("rho must be positive, got {rho}")))
    }
}

pub fn simulate_cmd(args: SimulateArgs, cfg: ConfigFile) -> Result<(), CliError> {
    let c = cfg.simulate;
    let model = load_model(&args.source, c.model, c.example2)?;
    let horizon = args.horizon.or(c.horizon).unwrap_or(DEFAULT_SIM_HORIZON);
    let noise = NoiseSpec::new(
        args.sigma_nu.or(c.sigma_nu).unwrap_or(0.0),
        args.sigma_mu.or(c.sigma_mu).unwrap_or(0.0),
        resolve_seed(args.seed, c.seed)?,
    )?;
    let out = require(args.out.or(c.out), "--out")?;
    let x1 = match args.x1.or(c.x1) {
        Some(v) => DVector::from_vec(v),
        None => DVector::from_element(model.n(), 1.0),
    };
    let (x, y) = simulate(&model, &x1, &noise, horizon)?;

    let x_path = with_suffix(&out, "_x.csv");
    let y_path = with_suffix(&out, "_y.csv");
    let mut w = create(&x_path)?;
    write_trajectory_csv(&x, &mut w)?;
    finish(w, &x_path)?;
    let mut w = create(&y_path)?;
    write_measurements_csv(&y, &mut w)?;
    finish(w, &y_path)?;
    println!(
        "simulate n={} N={horizon} seed={} -> {} {}",
        model.n(),
        noise.seed,
        x_path.display(),
        y_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EstimateSummary {
    method: &'static str,
    #[serde(flatten)]
    estimate: EstimateDocument,
    relative_error: Option<f64>,
}

pub fn estimate_cmd(args: EstimateArgs, cfg: ConfigFile) -> Result<(), CliError> {
    let c = cfg.estimate;
    let method = args.method.or(c.method).unwrap_or(MethodArg::Batch);
    let rho = check_rho(args.rho.or(c.rho).unwrap_or(1.0))?;
    let model = load_model(&args.source, c.model, c.example2)?;
    let y_path = require(args.y.or(c.y), "--y")?;
    let out = require(args.out.or(c.out), "--out")?;
    let truth_path = args.truth.or(c.truth);

    let (rank, observable) = observability_rank(&model, DEFAULT_RANK_TOL)?;
    if !observable {
        return Err(Error::RankDeficient { rank, n: model.n() }.into());
    }
    let y = read_measurements_csv(open(&y_path)?)?;
    let report = match method {
        MethodArg::Batch => solve_estimate(&NormalSystem::for_model(&model, y.len(), rho)?, &y)?,
        MethodArg::Db => evaluate_estimate(deadbeat_full(&model, &y)?, &y, &model, rho)?,
        MethodArg::Sdb => evaluate_estimate(deadbeat_sliding(&model, &y)?, &y, &model, rho)?,
    };
    let relative_error = match truth_path {
        Some(p) => Some(relative_error(
            &report.xhat,
            &read_trajectory_csv(open(&p)?)?,
        )?),
        None => None,
    };

    let xhat_path = with_suffix(&out, "_xhat.csv");
    let json_path = with_suffix(&out, ".json");
    let mut w = create(&xhat_path)?;
    write_trajectory_csv(&report.xhat, &mut w)?;
    finish(w, &xhat_path)?;
    write_json(
        &json_path,
        &EstimateSummary {
            method: method.label(),
            estimate: EstimateDocument::from(&report),
            relative_error,
        },
    )?;

    let mut line = format!(
        "estimate method={} N={} loss={}",
        method.label(),
        y.len(),
        fmt_f64(report.loss)
    );
    if let Some(e) = relative_error {
        line.push_str(&format!(" relative_error={}", fmt_f64(e)));
    }
    println!("{line} -> {} {}", xhat_path.display(), json_path.display());
    Ok(())
}

#[derive(Serialize)]
struct Ex1Summary {
    rhos: Vec<f64>,
    #[serde(rename = "N")]
    horizon: usize,
    files: Vec<String>,
}

pub fn ex1_cmd(args: Ex1Args, cfg: ConfigFile) -> Result<(), CliError> {
    let c = cfg.ex1;
    let rhos = args
        .rhos
        .or(c.rhos)
        .unwrap_or_else(|| EXAMPLE1_RHOS.to_vec());
    let horizon = args.horizon.or(c.horizon).unwrap_or(EXAMPLE1_HORIZON);
    if rhos.is_empty() {
        return Err(CliError::Usage("at least one rho is required".into()));
    }
    for &rho in &rhos {
        check_rho(rho)?;
    }
    let dir = out_dir(args.out_dir.or(c.out_dir))?;
    let filters = run_example1(&rhos, horizon)?;

    let mut files = Vec::new();
    for f in &filters {
        let name = format!("ex1_H_rho{}.csv", f.rho);
        let path = dir.join(&name);
        let mut w = create(&path)?;
        f.write_csv(&mut w)?;
        finish(w, &path)?;
        let row_sum_dev =
            f.h.row_iter()
                .map(|r| (r.sum() - 1.0).abs())
                .fold(0.0, f64::max);
        println!(
            "ex1 rho={} N={horizon} diag_min={} max_row_sum_dev={} -> {}",
            f.rho,
            fmt_f64(f.h.diagonal().min()),
            fmt_f64(row_sum_dev),
            path.display()
        );
        files.push(name);
    }
    write_json(
        &dir.join("ex1_summary.json"),
        &Ex1Summary {
            rhos,
            horizon,
            files,
        },
    )
}

pub fn ex2_cmd(args: Ex2Args, cfg: ConfigFile) -> Result<(), CliError> {
    let c = cfg.ex2;
    let defaults = GridSpec::default();
    let grid = GridSpec {
        sigma_nu: args.sigma_nu.or(c.sigma_nu).unwrap_or(defaults.sigma_nu),
        horizons: args.grid_n.or(c.grid_n).unwrap_or(defaults.horizons),
        trials: args.trials.or(c.trials).unwrap_or(defaults.trials),
        master_seed: resolve_seed(args.master_seed, c.master_seed)?,
        rho: check_rho(args.rho.or(c.rho).unwrap_or(defaults.rho))?,
        noise_ratio: defaults.noise_ratio,
    };
    let matrix = args.matrix || c.matrix.unwrap_or(false);
    let dir = out_dir(args.out_dir.or(c.out_dir))?;
    let report = run_example2(&grid)?;

    let path = dir.join("ex2_grid.csv");
    let mut w = create(&path)?;
    report.write_csv(&mut w)?;
    finish(w, &path)?;
    write_json(&dir.join("ex2_summary.json"), &report)?;
    if matrix {
        for m in Method::ALL {
            let path = dir.join(format!("ex2_matrix_{}.txt", m.label()));
            let mut w = create(&path)?;
            report.write_matrix(m, &mut w)?;
            finish(w, &path)?;
        }
    }

    let mut failed_cells = 0;
    for cell in &report.cells {
        let mut line = format!("ex2 sigma_nu={} N={}", fmt_f64(cell.sigma_nu), cell.horizon);
        for m in &cell.methods {
            line.push_str(&format!(
                " {}={} ({}/{})",
                m.method.label(),
                fmt_f64(m.mean_err),
                m.trials_ok,
                grid.trials
            ));
        }
        println!("{line}");
        for m in cell.methods.iter().filter(|m| m.failures > 0) {
            log::warn!(
                "sigma_nu={} N={}: {} of {} {} trials failed; first error: {}",
                cell.sigma_nu,
                cell.horizon,
                m.failures,
                grid.trials,
                m.method.label(),
                m.first_error.as_deref().unwrap_or("unknown")
            );
        }
        if cell.fully_failed() {
            failed_cells += 1;
        }
    }
    if failed_cells > 0 {
        return Err(CliError::AllTrialsFailed(format!(
            "{failed_cells} cell(s) had a method where every trial failed"
        )));
    }
    Ok(())
}

pub fn ex3_cmd(args: Ex3Args, cfg: ConfigFile) -> Result<(), CliError> {
    let c = cfg.ex3;
    let defaults = Example3Spec::default();
    let mut fit = defaults.fit.clone();
    fit.rho = args.rho.or(c.rho).unwrap_or(fit.rho);
    fit.lambda = args.lambda.or(c.lambda).unwrap_or(fit.lambda);
    fit.eta = args.eta.or(c.eta).unwrap_or(fit.eta);
    fit.max_iters = args.max_iters.or(c.max_iters).unwrap_or(fit.max_iters);
    let spec = Example3Spec {
        sigmas: args.sigmas.or(c.sigmas).unwrap_or(defaults.sigmas),
        trials: args.trials.or(c.trials).unwrap_or(defaults.trials),
        horizon: args.horizon.or(c.horizon).unwrap_or(defaults.horizon),
        master_seed: resolve_seed(args.master_seed, c.master_seed)?,
        params: defaults.params,
        fit,
    };
    let save_fits = args.save_fits || c.save_fits.unwrap_or(false);
    let dir = out_dir(args.out_dir.or(c.out_dir))?;
    let report = run_example3(&spec, save_fits)?;

    let path = dir.join("ex3_trials.csv");
    let mut w = create(&path)?;
    report.write_csv(&mut w)?;
    finish(w, &path)?;
    write_json(&dir.join("ex3_summary.json"), &report)?;
    for (sigma, trial, fit) in &report.fits {
        write_json(
            &dir.join(format!("ex3_fit_sigma{sigma}_trial{trial}.json")),
            fit,
        )?;
    }

    for f in &report.failures {
        log::warn!(
            "sigma_mu={} trial {} failed: {}",
            f.sigma_mu,
            f.trial,
            f.error
        );
    }
    let mut failed_levels = 0;
    for l in &report.levels {
        println!(
            "ex3 sigma_mu={} err_X={} err_Theta={} ({}/{})",
            fmt_f64(l.sigma_mu),
            fmt_f64(l.mean_err_x),
            fmt_f64(l.mean_err_theta),
            l.trials_ok,
            spec.trials
        );
        if l.trials_ok == 0 {
            failed_levels += 1;
        }
    }
    if failed_levels > 0 {
        return Err(CliError::AllTrialsFailed(format!(
            "{failed_levels} noise level(s) where every trial failed"
        )));
    }
    Ok(())
}
