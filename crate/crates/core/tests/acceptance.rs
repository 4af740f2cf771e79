//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test -p batchstate-core --test acceptance`.

use std::time::{Duration, Instant};

use batchstate::batch::{expected_loss_report, filter_matrix, loss, solve_estimate, NormalSystem};
use batchstate::experiments::{
    run_example1, run_example2, run_example3, Example3Spec, GridSpec, Method,
};
use batchstate::model::{companion_from_angles, example2_model, simulate, LinearModel, NoiseSpec};
use batchstate::nonlinear::{
    henon_simulate, loss_gradient, smooth_loss, AugmentedState, HenonParams,
};
use batchstate::observers::{deadbeat_full, deadbeat_sliding, relative_error};
use batchstate::seed::derive_seed;
use nalgebra::{dmatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_time(limit: Duration, elapsed: Duration, detail: String) -> Outcome {
    if elapsed > limit {
        return Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}"));
    }
    Ok(format!("{detail}; {elapsed:.2?}"))
}

fn noiseless_exactness() -> Outcome {
    let start = Instant::now();
    let model = example2_model();
    let x1 = DVector::from_element(model.n(), 1.0);
    let (x, y) = simulate(&model, &x1, &NoiseSpec::noiseless(), 50).map_err(|e| e.to_string())?;
    let sys = NormalSystem::for_model(&model, 50, 1.0).map_err(|e| e.to_string())?;
    let report = solve_estimate(&sys, &y).map_err(|e| e.to_string())?;
    let batch = relative_error(&report.xhat, &x).map_err(|e| e.to_string())?;
    let db = deadbeat_full(&model, &y)
        .and_then(|xh| relative_error(&xh, &x))
        .map_err(|e| e.to_string())?;
    let sdb = deadbeat_sliding(&model, &y)
        .and_then(|xh| relative_error(&xh, &x))
        .map_err(|e| e.to_string())?;
    let detail = format!(
        "err batch {batch:.2e}, db {db:.2e}, sdb {sdb:.2e}; batch loss {:.2e}",
        report.loss
    );
    check(
        batch < 1e-6 && db < 1e-6 && sdb < 1e-6 && report.loss < 1e-10,
        detail,
    )
    .and_then(|d| within_time(Duration::from_secs(1), start.elapsed(), d))
}

fn hand_oracle() -> Outcome {
    let model = LinearModel::scalar(1.0, 1.0).map_err(|e| e.to_string())?;
    let h = filter_matrix(&model, 2, 1.0).map_err(|e| e.to_string())?;
    let expected = dmatrix![2.0, 1.0; 1.0, 2.0] / 3.0;
    // Independent route: dense LU on the explicitly assembled normal matrix.
    let a = dmatrix![-1.0, 1.0];
    let c = dmatrix![1.0, 0.0; 0.0, 1.0];
    let o = a.transpose() * &a + c.transpose() * &c;
    let dense = o.lu().solve(&c.transpose()).ok_or("dense solve failed")?;
    let err_closed = (&h - &expected).amax();
    let err_dense = (&h - &dense).amax();
    check(
        err_closed <= 1e-12 && err_dense <= 1e-12,
        format!("max |H − H_exact| {err_closed:.1e}, max |H − H_dense| {err_dense:.1e}"),
    )
}

fn filter_matrix_shape() -> Outcome {
    let filters = run_example1(&[0.1, 1.0, 10.0], 5).map_err(|e| e.to_string())?;
    let mut worst_sum: f64 = 0.0;
    for f in &filters {
        for row in f.h.row_iter() {
            worst_sum = worst_sum.max((row.sum() - 1.0).abs());
        }
    }
    let h10 = &filters[2].h;
    let dominant = (0..5).all(|i| (0..5).all(|j| i == j || h10[(i, i)] > h10[(i, j)]));
    // Flatness: spread between the largest and smallest entry of each row.
    let spread = |h: &nalgebra::DMatrix<f64>, i: usize| h.row(i).max() - h.row(i).min();
    let flatter = (0..5).all(|i| spread(&filters[0].h, i) < spread(h10, i));
    check(
        worst_sum <= 1e-10 && dominant && flatter,
        format!(
            "max |row sum − 1| {worst_sum:.1e}; diagonal dominant at ρ=10: {dominant}; \
             ρ=0.1 rows flatter: {flatter}"
        ),
    )
}

fn expected_loss_identity() -> Outcome {
    const TRIALS: u64 = 100_000;
    let start = Instant::now();
    let model = LinearModel::scalar(1.0, 1.0).map_err(|e| e.to_string())?;
    let sys = NormalSystem::for_model(&model, 3, 1.0).map_err(|e| e.to_string())?;
    let x1 = DVector::from_element(1, 0.0);
    let mut sum_true = 0.0;
    let mut sum_opt = 0.0;
    for trial in 0..TRIALS {
        let noise =
            NoiseSpec::new(0.1, 1.0, derive_seed(4, 0, trial)).map_err(|e| e.to_string())?;
        let (x, y) = simulate(&model, &x1, &noise, 3).map_err(|e| e.to_string())?;
        sum_true += loss(&x, &y, &model, 1.0).map_err(|e| e.to_string())?;
        sum_opt += solve_estimate(&sys, &y).map_err(|e| e.to_string())?.loss;
    }
    let mean_true = sum_true / TRIALS as f64;
    let mean_opt = sum_opt / TRIALS as f64;
    let predicted = expected_loss_report(&model, &NoiseSpec::new(0.1, 1.0, 0).unwrap(), 1.0, 3)
        .map_err(|e| e.to_string())?;
    let rel_true = (mean_true - 3.02).abs() / 3.02;
    let gap = mean_true - mean_opt;
    let rel_gap = (gap - predicted.gap()).abs() / predicted.gap();
    check(
        rel_true <= 0.02 && mean_opt <= mean_true && rel_gap <= 0.05,
        format!(
            "mean ℓ(X) {mean_true:.4} (closed form 3.02, off {:.2}%), mean ℓ(X̂*) {mean_opt:.4}, \
             gap {gap:.4} vs predicted {:.4} (off {:.2}%)",
            100.0 * rel_true,
            predicted.gap(),
            100.0 * rel_gap
        ),
    )
    .and_then(|d| within_time(Duration::from_secs(30), start.elapsed(), d))
}

fn per_trial_optimality() -> Outcome {
    const TRIALS: u64 = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0u64;
    let mut worst: f64 = f64::NEG_INFINITY;
    for trial in 0..TRIALS {
        let model = match trial % 3 {
            0 => LinearModel::scalar(rng.random_range(-1.5..1.5), rng.random_range(0.2..2.0)),
            1 => Ok(example2_model()),
            _ => {
                let angles = [rng.random_range(0.1..3.0), rng.random_range(0.1..3.0)];
                companion_from_angles(&angles, rng.random_range(0.5..1.1))
            }
        }
        .map_err(|e| e.to_string())?;
        let horizon = rng.random_range(model.n().max(2)..=40);
        let rho = 10f64.powf(rng.random_range(-2.0..2.0));
        let noise = NoiseSpec::new(
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            derive_seed(5, 0, trial),
        )
        .map_err(|e| e.to_string())?;
        let x1 = DVector::from_fn(model.n(), |_, _| rng.random_range(-1.0..1.0));
        let (x, y) = simulate(&model, &x1, &noise, horizon).map_err(|e| e.to_string())?;
        let sys = NormalSystem::for_model(&model, horizon, rho).map_err(|e| e.to_string())?;
        let opt = solve_estimate(&sys, &y).map_err(|e| e.to_string())?.loss;
        let truth = loss(&x, &y, &model, rho).map_err(|e| e.to_string())?;
        worst = worst.max(opt - truth);
        // Only rounding-level slack; any real violation is far larger.
        if opt > truth + 1e-12 * truth.max(1.0) {
            violations += 1;
        }
    }
    check(
        violations == 0,
        format!(
            "{violations} of {TRIALS} trials with ℓ(X̂*) > ℓ(X); max ℓ(X̂*) − ℓ(X) = {worst:.2e}"
        ),
    )
}

fn example2_grid() -> Outcome {
    let start = Instant::now();
    let report = run_example2(&GridSpec::default()).map_err(|e| e.to_string())?;
    let mut zero_worst: f64 = 0.0;
    let mut wins = 0;
    let mut noisy = 0;
    for cell in &report.cells {
        if cell
            .methods
            .iter()
            .any(|m| m.trials_ok != report.config.trials)
        {
            return Err(format!(
                "failed trials in cell σ_ν={} N={}",
                cell.sigma_nu, cell.horizon
            ));
        }
        if cell.sigma_nu == 0.0 {
            for m in &cell.methods {
                zero_worst = zero_worst.max(m.mean_err);
            }
        } else {
            noisy += 1;
            if cell.stats(Method::Batch).mean_err <= cell.stats(Method::Sdb).mean_err {
                wins += 1;
            }
        }
    }
    let mut db_growth = true;
    for &s in report.config.sigma_nu.iter().filter(|&&s| s >= 0.3) {
        let at = |n| report.cell(s, n).map(|c| c.stats(Method::Db).mean_err);
        match (at(100), at(20)) {
            (Some(e100), Some(e20)) => db_growth &= e100 > e20,
            _ => return Err("grid is missing N=20 or N=100".into()),
        }
    }
    let share = wins as f64 / noisy as f64;
    check(
        zero_worst < 1e-6 && share >= 0.7 && db_growth,
        format!(
            "σ_ν=0 worst error {zero_worst:.2e}; batch ≤ sdb in {wins}/{noisy} noisy cells; \
             db error grows from N=20 to N=100 for σ_ν ≥ 0.3: {db_growth}"
        ),
    )
    .and_then(|d| within_time(Duration::from_secs(300), start.elapsed(), d))
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = HenonParams::default();
    let truth = params.library_coefficients();
    let rho = 0.1;
    let mut worst: f64 = 0.0;
    for horizon in [5usize, 10, 30] {
        let series = henon_simulate(&params, [0.3, 0.2], 0.1, horizon, horizon as u64)
            .map_err(|e| e.to_string())?;
        let y = &series.measurements;
        for _ in 0..20 {
            let mut z = AugmentedState::zeros(horizon);
            for ((yhat, th), &yt) in z.yhat.iter_mut().zip(z.theta.iter_mut()).zip(y) {
                *yhat = yt + rng.random_range(-0.3..0.3);
                for (v, &t) in th.iter_mut().zip(&truth) {
                    *v = t + rng.random_range(-0.5..0.5);
                }
            }
            let analytic = loss_gradient(&z, y, rho)
                .map_err(|e| e.to_string())?
                .to_flat();
            let flat = z.to_flat();
            let f = |v: &[f64]| -> Result<f64, String> {
                let s = AugmentedState::from_flat(v).map_err(|e| e.to_string())?;
                smooth_loss(&s, y, rho).map_err(|e| e.to_string())
            };
            for i in 0..flat.len() {
                let h = 1e-6 * flat[i].abs().max(1.0);
                let mut plus = flat.clone();
                let mut minus = flat.clone();
                plus[i] += h;
                minus[i] -= h;
                let fd = (f(&plus)? - f(&minus)?) / (2.0 * h);
                let scale = analytic[i].abs().max(fd.abs()).max(f64::MIN_POSITIVE);
                worst = worst.max((analytic[i] - fd).abs() / scale);
            }
        }
    }
    check(
        worst < 1e-5,
        format!("worst componentwise relative error {worst:.2e} over 60 points"),
    )
}

fn henon_table() -> Outcome {
    let start = Instant::now();
    let spec = Example3Spec {
        sigmas: vec![0.0, 0.5],
        trials: 10,
        horizon: 100,
        ..Example3Spec::default()
    };
    let report = run_example3(&spec, false).map_err(|e| e.to_string())?;
    if !report.failures.is_empty() {
        return Err(format!("{} failed trials", report.failures.len()));
    }
    let clean = report.level(0.0).ok_or("missing σ_μ=0")?;
    let noisy = report.level(0.5).ok_or("missing σ_μ=0.5")?;
    let ok = clean.mean_err_x <= 0.05
        && clean.mean_err_theta <= 0.05
        && (0.05..=0.30).contains(&noisy.mean_err_x)
        && (0.03..=0.20).contains(&noisy.mean_err_theta);
    check(
        ok,
        format!(
            "σ_μ=0: err_X {:.4}, err_Θ {:.4}; σ_μ=0.5: err_X {:.4}, err_Θ {:.4}",
            clean.mean_err_x, clean.mean_err_theta, noisy.mean_err_x, noisy.mean_err_theta
        ),
    )
    .and_then(|d| within_time(Duration::from_secs(600), start.elapsed(), d))
}

fn render_outputs(threads: usize) -> Result<Vec<Vec<u8>>, String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())?;
    pool.install(|| {
        let mut files = Vec::new();
        for f in run_example1(&[0.1, 1.0, 10.0], 5).map_err(|e| e.to_string())? {
            let mut buf = Vec::new();
            f.write_csv(&mut buf).map_err(|e| e.to_string())?;
            files.push(buf);
        }
        let grid = GridSpec {
            sigma_nu: vec![0.0, 0.4, 1.0],
            horizons: vec![10, 30, 60],
            trials: 20,
            master_seed: 11,
            ..GridSpec::default()
        };
        let report = run_example2(&grid).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        report.write_csv(&mut buf).map_err(|e| e.to_string())?;
        files.push(buf);
        for m in Method::ALL {
            let mut buf = Vec::new();
            report
                .write_matrix(m, &mut buf)
                .map_err(|e| e.to_string())?;
            files.push(buf);
        }
        let spec = Example3Spec {
            sigmas: vec![0.0, 0.2],
            trials: 3,
            horizon: 40,
            master_seed: 11,
            ..Example3Spec::default()
        };
        let report = run_example3(&spec, true).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        report.write_csv(&mut buf).map_err(|e| e.to_string())?;
        files.push(buf);
        files.push(serde_json::to_vec(&report).map_err(|e| e.to_string())?);
        for (_, _, fit) in &report.fits {
            files.push(serde_json::to_vec(fit).map_err(|e| e.to_string())?);
        }
        Ok(files)
    })
}

fn determinism() -> Outcome {
    let first = render_outputs(1)?;
    let second = render_outputs(4)?;
    let third = render_outputs(4)?;
    let same = first == second && second == third;
    check(
        same,
        format!(
            "{} outputs identical across three runs (1 and 4 threads): {same}",
            first.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 noiseless exactness", noiseless_exactness),
        ("2 hand oracle", hand_oracle),
        ("3 filter matrix shape", filter_matrix_shape),
        ("4 expected loss identity", expected_loss_identity),
        ("5 per-trial optimality", per_trial_optimality),
        ("6 example 2 grid", example2_grid),
        ("7 gradient correctness", gradient_correctness),
        ("8 henon table", henon_table),
        ("9 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
