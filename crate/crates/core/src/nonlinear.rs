//! Joint state and parameter estimation for a polynomial autoregressive
//! model class, demonstrated on the Hénon map.
//!
//! The model is `y_{t+1} = θ_tᵀ φ(y_t, y_{t−1})` with the six-term library
//! `φ = [1, y_t, y_{t−1}, y_t y_{t−1}, y_t², y_{t−1}²]`. The coefficients are
//! treated as states with trivial dynamics, so the unknowns are the whole
//! trajectories `ŷ_{1:N}` and `θ̂_{1:N}` (`7N` numbers). They are fitted by
//! minimizing
//!
//! ```text
//! Σ_{t=2}^{N−1} (ŷ_{t+1} − θ̂_tᵀφ(ŷ_t, ŷ_{t−1}))²  + ρ Σ_{t=1}^{N} (y_t − ŷ_t)²
//!   + Σ_{t=1}^{N−1} ‖θ̂_{t+1} − θ̂_t‖²             + λ Σ_{t=1}^{N} ‖θ̂_t‖₁
//! ```
//!
//! with proximal gradient descent: a gradient step on the smooth part and
//! soft-thresholding of the coefficient coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::substream;

pub const LIBRARY_SIZE: usize = 6;

/// Coefficients of the candidate library, in the order
/// `[1, y_t, y_{t−1}, y_t·y_{t−1}, y_t², y_{t−1}²]`.
pub type Coefficients = [f64; LIBRARY_SIZE];

/// Bound on `|x_1|` above which a simulation is declared divergent.
pub const DIVERGENCE_BOUND: f64 = 1e3;

/// Bound used when drawing initial conditions that stay near the attractor.
pub const BOUNDED_IC_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HenonParams {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl Default for HenonParams {
    /// The chaotic attractor.
    fn default() -> Self {
        Self {
            theta1: 1.0,
            theta2: -1.4,
            theta3: 0.3,
        }
    }
}

impl HenonParams {
    /// The map written in library coordinates: `y_{t+1} = Θ₁ + Θ₃ y_{t−1} + Θ₂ y_t²`.
    pub fn library_coefficients(&self) -> Coefficients {
        [self.theta1, 0.0, self.theta3, 0.0, self.theta2, 0.0]
    }

    /// Positive fixed point of `x = Θ₁ + Θ₃x + Θ₂x²`, if real.
    pub fn fixed_point(&self) -> Option<f64> {
        // Θ₂x² + (Θ₃ − 1)x + Θ₁ = 0
        let (a, b, c) = (self.theta2, self.theta3 - 1.0, self.theta1);
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 || a == 0.0 {
            return None;
        }
        let roots = [
            (-b + disc.sqrt()) / (2.0 * a),
            (-b - disc.sqrt()) / (2.0 * a),
        ];
        roots.into_iter().filter(|r| *r > 0.0).reduce(f64::max)
    }
}

/// A simulated Hénon run.
#[derive(Debug, Clone, PartialEq)]
pub struct HenonSeries {
    /// `(x_{1,t}, x_{2,t})`.
    pub states: Vec<[f64; 2]>,
    /// `y_t = (1 + μ_t) x_{1,t}`.
    pub measurements: Vec<f64>,
}

impl HenonSeries {
    /// The observed state sequence `x_{1,1:N}`.
    pub fn first_state(&self) -> Vec<f64> {
        self.states.iter().map(|s| s[0]).collect()
    }
}

/// Iterate `x₁' = Θ₁ + x₂ + Θ₂x₁²`, `x₂' = Θ₃x₁` and measure
/// `y_t = (1 + μ_t) x_{1,t}` with `μ_t ~ U[−σ, σ]`.
pub fn henon_simulate(
    params: &HenonParams,
    x1: [f64; 2],
    sigma_mu: f64,
    horizon: usize,
    seed: u64,
) -> Result<HenonSeries> {
    if horizon < 2 {
        return Err(Error::invalid("Hénon horizon must be at least 2"));
    }
    if !(sigma_mu.is_finite() && sigma_mu >= 0.0) {
        return Err(Error::invalid(format!(
            "sigma_mu must be >= 0, got {sigma_mu}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(horizon);
    let mut measurements = Vec::with_capacity(horizon);
    let mut x = x1;
    for step in 0..horizon {
        if x[0].is_nan() || x[0].abs() > DIVERGENCE_BOUND {
            return Err(Error::SimulationDiverged {
                step,
                value: x[0].abs(),
            });
        }
        let mu = if sigma_mu > 0.0 {
            rng.random_range(-sigma_mu..=sigma_mu)
        } else {
            0.0
        };
        states.push(x);
        measurements.push((1.0 + mu) * x[0]);
        x = [
            params.theta1 + x[1] + params.theta2 * x[0] * x[0],
            params.theta3 * x[0],
        ];
    }
    Ok(HenonSeries {
        states,
        measurements,
    })
}

/// Draw `x_{1,1}, x_{2,1} ~ U[0, 1]` until the noiseless orbit stays within
/// [`BOUNDED_IC_LIMIT`] for the whole horizon.
pub fn bounded_initial_condition(
    params: &HenonParams,
    horizon: usize,
    seed: u64,
) -> Result<[f64; 2]> {
    const MAX_ATTEMPTS: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let x1 = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        if let Ok(run) = henon_simulate(params, x1, 0.0, horizon, 0) {
            if run.states.iter().all(|s| s[0].abs() <= BOUNDED_IC_LIMIT) {
                return Ok(x1);
            }
        }
    }
    Err(Error::NoBoundedInitialCondition {
        attempts: MAX_ATTEMPTS,
    })
}

/// `φ(y_t, y_{t−1})`.
#[inline]
pub fn library_basis(y_t: f64, y_prev: f64) -> Coefficients {
    [1.0, y_t, y_prev, y_t * y_prev, y_t * y_t, y_prev * y_prev]
}

/// `θᵀφ(y_t, y_{t−1})`.
#[inline]
pub fn library_predict(y_t: f64, y_prev: f64, theta: &Coefficients) -> f64 {
    dot(theta, &library_basis(y_t, y_prev))
}

#[inline]
fn dot(a: &Coefficients, b: &Coefficients) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The augmented trajectory `Ẑ = (ŷ_{1:N}, θ̂_{1:N})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub yhat: Vec<f64>,
    pub theta: Vec<Coefficients>,
}

impl AugmentedState {
    pub fn zeros(horizon: usize) -> Self {
        Self {
            yhat: vec![0.0; horizon],
            theta: vec![[0.0; LIBRARY_SIZE]; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.yhat.len()
    }

    /// Flattened as `(ŷ_1, θ̂_1, ŷ_2, θ̂_2, …)`, length `7N`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.yhat
            .iter()
            .zip(&self.theta)
            .flat_map(|(y, th)| std::iter::once(*y).chain(th.iter().copied()))
            .collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        const STRIDE: usize = LIBRARY_SIZE + 1;
        if flat.is_empty() || !flat.len().is_multiple_of(STRIDE) {
            return Err(Error::invalid(format!(
                "flat augmented state length {} is not a positive multiple of {STRIDE}",
                flat.len()
            )));
        }
        let mut out = Self::zeros(flat.len() / STRIDE);
        for (t, chunk) in flat.chunks_exact(STRIDE).enumerate() {
            out.yhat[t] = chunk[0];
            out.theta[t].copy_from_slice(&chunk[1..]);
        }
        Ok(out)
    }

    fn copy_from(&mut self, other: &Self) {
        self.yhat.copy_from_slice(&other.yhat);
        self.theta.copy_from_slice(&other.theta);
    }

    fn l1(&self) -> f64 {
        self.theta.iter().flatten().map(|v| v.abs()).sum()
    }

    fn check(&self, y: &[f64]) -> Result<()> {
        if self.theta.len() != self.yhat.len() {
            return Err(Error::DimensionMismatch {
                context: "coefficient trajectory",
                expected: self.yhat.len(),
                found: self.theta.len(),
            });
        }
        if y.len() != self.yhat.len() {
            return Err(Error::DimensionMismatch {
                context: "measurement series",
                expected: self.yhat.len(),
                found: y.len(),
            });
        }
        Ok(())
    }
}

/// Smooth part of the loss, accumulating its gradient into `grad` (which is
/// overwritten).
fn smooth_loss_and_gradient(
    z: &AugmentedState,
    y: &[f64],
    rho: f64,
    mut grad: Option<&mut AugmentedState>,
) -> f64 {
    let horizon = z.horizon();
    if let Some(g) = grad.as_deref_mut() {
        g.yhat.iter_mut().for_each(|v| *v = 0.0);
        g.theta.iter_mut().for_each(|v| *v = [0.0; LIBRARY_SIZE]);
    }
    let mut total = 0.0;

    // Model residuals, 1-based t = 2..N−1.
    for i in 1..horizon.saturating_sub(1) {
        let (yt, yp) = (z.yhat[i], z.yhat[i - 1]);
        let th = &z.theta[i];
        let basis = library_basis(yt, yp);
        let r = z.yhat[i + 1] - dot(th, &basis);
        total += r * r;
        if let Some(g) = grad.as_deref_mut() {
            let two_r = 2.0 * r;
            let df_dyt = th[1] + th[3] * yp + 2.0 * th[4] * yt;
            let df_dyp = th[2] + th[3] * yt + 2.0 * th[5] * yp;
            g.yhat[i + 1] += two_r;
            g.yhat[i] -= two_r * df_dyt;
            g.yhat[i - 1] -= two_r * df_dyp;
            for (gk, bk) in g.theta[i].iter_mut().zip(basis) {
                *gk -= two_r * bk;
            }
        }
    }

    // Measurement fit.
    for (i, (&yi, &yhat)) in y.iter().zip(&z.yhat).enumerate() {
        let e = yi - yhat;
        total += rho * e * e;
        if let Some(g) = grad.as_deref_mut() {
            g.yhat[i] -= 2.0 * rho * e;
        }
    }

    // Coefficient smoothness.
    for i in 0..horizon.saturating_sub(1) {
        for k in 0..LIBRARY_SIZE {
            let d = z.theta[i + 1][k] - z.theta[i][k];
            total += d * d;
            if let Some(g) = grad.as_deref_mut() {
                g.theta[i + 1][k] += 2.0 * d;
                g.theta[i][k] -= 2.0 * d;
            }
        }
    }
    total
}

/// Smooth part of the loss (everything except the `λ‖θ‖₁` term).
pub fn smooth_loss(z: &AugmentedState, y: &[f64], rho: f64) -> Result<f64> {
    z.check(y)?;
    Ok(smooth_loss_and_gradient(z, y, rho, None))
}

/// Full regularized loss.
pub fn augmented_loss(z: &AugmentedState, y: &[f64], rho: f64, lambda: f64) -> Result<f64> {
    z.check(y)?;
    Ok(smooth_loss_and_gradient(z, y, rho, None) + lambda * z.l1())
}

/// Analytic gradient of [`smooth_loss`] with respect to all `7N` unknowns.
pub fn loss_gradient(z: &AugmentedState, y: &[f64], rho: f64) -> Result<AugmentedState> {
    z.check(y)?;
    let mut g = AugmentedState::zeros(z.horizon());
    smooth_loss_and_gradient(z, y, rho, Some(&mut g));
    Ok(g)
}

/// `sign(v) · max(|v| − t, 0)`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub rho: f64,
    pub lambda: f64,
    pub eta: f64,
    pub max_iters: usize,
    /// Stop once the relative loss change stays below this for
    /// `patience` consecutive iterations.
    pub rel_tol: f64,
    pub patience: usize,
    /// Standard deviation of the initial coefficients.
    pub init_scale: f64,
    pub init_seed: u64,
    /// Halve the step whenever a step would increase the loss.
    pub backtracking: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rho: 0.1,
            lambda: 0.001,
            eta: 0.05,
            max_iters: 200_000,
            rel_tol: 1e-9,
            patience: 50,
            init_scale: 0.01,
            init_seed: 0,
            backtracking: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rho", self.rho),
            ("lambda", self.lambda),
            ("rel_tol", self.rel_tol),
            ("init_scale", self.init_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::invalid(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEstimate {
    /// Best iterate found.
    pub state: AugmentedState,
    /// Total loss at the start and after every step.
    pub loss_history: Vec<f64>,
    pub iterations_used: usize,
    pub best_loss: f64,
    /// Step size in effect at the end (smaller than configured only after
    /// backtracking).
    pub final_eta: f64,
}

impl AugmentedEstimate {
    pub fn yhat(&self) -> &[f64] {
        &self.state.yhat
    }

    pub fn theta(&self) -> &[Coefficients] {
        &self.state.theta
    }
}

/// Loss growth relative to the initial loss that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Initial point: `ŷ = Y`, `θ̂` i.i.d. `N(0, init_scale²)`.
pub fn initial_state(y: &[f64], config: &FitConfig) -> AugmentedState {
    let mut rng = ChaCha8Rng::seed_from_u64(substream(config.init_seed, 0));
    let mut z = AugmentedState::zeros(y.len());
    z.yhat.copy_from_slice(y);
    for th in z.theta.iter_mut() {
        for v in th.iter_mut() {
            *v = config.init_scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    z
}

/// Proximal gradient descent from [`initial_state`].
pub fn fit(y: &[f64], config: &FitConfig) -> Result<AugmentedEstimate> {
    config.validate()?;
    if y.len() < 3 {
        return Err(Error::invalid("fitting needs at least 3 measurements"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("measurements must be finite"));
    }
    fit_from(y, initial_state(y, config), config)
}

/// Proximal gradient descent from a given starting point.
pub fn fit_from(y: &[f64], start: AugmentedState, config: &FitConfig) -> Result<AugmentedEstimate> {
    config.validate()?;
    start.check(y)?;
    let horizon = y.len();
    let rho = config.rho;
    let lambda = config.lambda;
    let mut eta = config.eta;
    let min_eta = config.eta * 2f64.powi(-40);

    let mut z = start;
    let mut grad = AugmentedState::zeros(horizon);
    let mut trial = z.clone();
    let mut best = z.clone();

    let mut current = smooth_loss_and_gradient(&z, y, rho, Some(&mut grad)) + lambda * z.l1();
    if !current.is_finite() {
        return Err(Error::invalid("initial loss is not finite"));
    }
    let initial = current;
    let divergence_limit = DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE);
    let mut best_loss = current;
    let mut history = vec![current];
    let mut stalled = 0usize;
    let mut iterations = 0usize;

    while iterations < config.max_iters {
        // Prox step into `trial`.
        for i in 0..horizon {
            trial.yhat[i] = z.yhat[i] - eta * grad.yhat[i];
            for k in 0..LIBRARY_SIZE {
                trial.theta[i][k] =
                    soft_threshold(z.theta[i][k] - eta * grad.theta[i][k], eta * lambda);
            }
        }
        let next = smooth_loss(&trial, y, rho)? + lambda * trial.l1();

        if !next.is_finite() || next > divergence_limit {
            if config.backtracking && eta > min_eta {
                eta *= 0.5;
                continue;
            }
            return Err(Error::FitDiverged {
                iteration: iterations + 1,
                loss: next,
                initial,
                factor: DIVERGENCE_FACTOR,
                eta,
            });
        }
        if config.backtracking && next > current * (1.0 + 1e-12) && eta > min_eta {
            eta *= 0.5;
            continue;
        }

        iterations += 1;
        std::mem::swap(&mut z, &mut trial);
        let prev = current;
        current = smooth_loss_and_gradient(&z, y, rho, Some(&mut grad)) + lambda * z.l1();
        history.push(current);
        if current < best_loss {
            best_loss = current;
            best.copy_from(&z);
        }

        let rel_change = (prev - current).abs() / prev.abs().max(f64::MIN_POSITIVE);
        if rel_change < config.rel_tol {
            stalled += 1;
            if stalled >= config.patience {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    Ok(AugmentedEstimate {
        state: best,
        loss_history: history,
        iterations_used: iterations,
        best_loss,
        final_eta: eta,
    })
}

/// Time-averaged coefficients and relative errors against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaSummary {
    pub theta_mean: Coefficients,
    pub err_x: f64,
    pub err_theta: f64,
}

/// `Θ̂ = mean_t θ̂_t`, `‖X̂ − X‖/‖X‖` with `X̂ = ŷ`, and `‖Θ̂ − Θ‖/‖Θ‖` with
/// `Θ` the true library coefficients.
pub fn theta_summary(
    estimate: &AugmentedState,
    x_true: &[f64],
    theta_true: &Coefficients,
) -> Result<ThetaSummary> {
    let theta_mean = theta_mean(estimate);
    let err_x = relative_norm(&estimate.yhat, x_true)?;
    let err_theta = relative_norm(&theta_mean, theta_true)?;
    Ok(ThetaSummary {
        theta_mean,
        err_x,
        err_theta,
    })
}

pub fn theta_mean(estimate: &AugmentedState) -> Coefficients {
    let mut mean = [0.0; LIBRARY_SIZE];
    for th in &estimate.theta {
        for (m, v) in mean.iter_mut().zip(th) {
            *m += v;
        }
    }
    let count = estimate.theta.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    mean
}

fn relative_norm(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "relative error",
            expected: truth.len(),
            found: estimate.len(),
        });
    }
    let denom = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::invalid(
            "relative error is undefined for a zero reference",
        ));
    }
    let num = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// Serializable record of one fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub yhat: Vec<f64>,
    pub theta_mean: Coefficients,
    pub theta_trajectory: Vec<Coefficients>,
    /// `(iteration, loss)` pairs, at most `max_points` of them, always
    /// including the first and last.
    pub loss_history_downsampled: Vec<(usize, f64)>,
    pub iterations_used: usize,
    /// Step size after any backtracking.
    pub final_eta: f64,
    pub config: FitConfig,
}

impl FitReport {
    pub fn new(estimate: &AugmentedEstimate, config: &FitConfig, max_points: usize) -> Self {
        Self {
            yhat: estimate.state.yhat.clone(),
            theta_mean: theta_mean(&estimate.state),
            theta_trajectory: estimate.state.theta.clone(),
            loss_history_downsampled: downsample(&estimate.loss_history, max_points),
            iterations_used: estimate.iterations_used,
            final_eta: estimate.final_eta,
            config: config.clone(),
        }
    }
}

fn downsample(history: &[f64], max_points: usize) -> Vec<(usize, f64)> {
    let len = history.len();
    if len == 0 || max_points == 0 {
        return Vec::new();
    }
    if len <= max_points || max_points == 1 {
        let step = if max_points == 1 { len } else { 1 };
        return history.iter().copied().enumerate().step_by(step).collect();
    }
    let stride = (len - 1).div_ceil(max_points - 1);
    let mut out: Vec<(usize, f64)> = (0..len).step_by(stride).map(|i| (i, history[i])).collect();
    if out.last().map(|(i, _)| *i) != Some(len - 1) {
        out.push((len - 1, history[len - 1]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn truth() -> Coefficients {
        HenonParams::default().library_coefficients()
    }

    fn x_star() -> f64 {
        (-0.7 + 6.09f64.sqrt()) / 2.8
    }

    fn noiseless_run(horizon: usize) -> HenonSeries {
        henon_simulate(&HenonParams::default(), [0.1, 0.2], 0.0, horizon, 0).unwrap()
    }

    fn truth_state(run: &HenonSeries) -> AugmentedState {
        AugmentedState {
            yhat: run.measurements.clone(),
            theta: vec![truth(); run.measurements.len()],
        }
    }

    #[test]
    fn fixed_point_orbit_is_constant() {
        let p = HenonParams::default();
        let xs = x_star();
        assert_abs_diff_eq!(p.fixed_point().unwrap(), xs, epsilon = 1e-14);
        assert_abs_diff_eq!(xs, 0.63135, epsilon = 1e-5);
        let run = henon_simulate(&p, [xs, 0.3 * xs], 0.0, 10, 1).unwrap();
        for y in run.measurements {
            assert_abs_diff_eq!(y, xs, epsilon = 1e-12);
        }
    }

    #[test]
    fn hand_iteration_from_origin() {
        let run = henon_simulate(&HenonParams::default(), [0.0, 0.0], 0.0, 3, 0).unwrap();
        assert_abs_diff_eq!(
            run.measurements.as_slice(),
            &[0.0, 1.0, -0.4][..],
            epsilon = 1e-15
        );
    }

    #[test]
    fn multiplicative_noise_is_bounded() {
        let run = henon_simulate(&HenonParams::default(), [0.1, 0.2], 0.5, 500, 99).unwrap();
        for (s, y) in run.states.iter().zip(&run.measurements) {
            assert!((y - s[0]).abs() <= 0.5 * s[0].abs() + 1e-15);
        }
        let again = henon_simulate(&HenonParams::default(), [0.1, 0.2], 0.5, 500, 99).unwrap();
        assert_eq!(run, again);
    }

    #[test]
    fn divergence_guard() {
        let r = henon_simulate(&HenonParams::default(), [5.0, 5.0], 0.0, 100, 0);
        assert!(matches!(r, Err(Error::SimulationDiverged { .. })));
        assert!(henon_simulate(&HenonParams::default(), [0.0, 0.0], 0.0, 1, 0).is_err());
    }

    #[test]
    fn bounded_initial_conditions_stay_bounded() {
        let p = HenonParams::default();
        for seed in 0..20 {
            let x1 = bounded_initial_condition(&p, 100, seed).unwrap();
            assert!((0.0..1.0).contains(&x1[0]) && (0.0..1.0).contains(&x1[1]));
            let run = henon_simulate(&p, x1, 0.0, 100, 0).unwrap();
            assert!(run.states.iter().all(|s| s[0].abs() <= BOUNDED_IC_LIMIT));
        }
    }

    #[test]
    fn library_examples() {
        let xs = x_star();
        assert_abs_diff_eq!(library_predict(xs, xs, &truth()), xs, epsilon = 1e-14);
        assert_eq!(library_predict(1.3, -0.2, &[0.0; 6]), 0.0);
        assert_eq!(
            library_predict(1.3, -0.2, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            1.0
        );
        assert_abs_diff_eq!(
            library_predict(2.0, 3.0, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            1.0 + 4.0 + 9.0 + 24.0 + 20.0 + 54.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn loss_examples() {
        let run = noiseless_run(100);
        let z = truth_state(&run);
        assert!(augmented_loss(&z, &run.measurements, 0.1, 0.0).unwrap() < 1e-24);
        assert_abs_diff_eq!(
            augmented_loss(&z, &run.measurements, 0.1, 0.001).unwrap(),
            0.27,
            epsilon = 1e-12
        );
        let zero = AugmentedState::zeros(10);
        assert_eq!(augmented_loss(&zero, &[0.0; 10], 0.1, 0.001).unwrap(), 0.0);
        assert!(augmented_loss(&zero, &[0.0; 9], 0.1, 0.0).is_err());
    }

    #[test]
    fn loss_term_ranges() {
        // A single perturbation of ŷ_1 only touches the t = 2 residual and the
        // measurement term; perturbing θ̂_1 only touches smoothness and ℓ1.
        let run = noiseless_run(6);
        let mut z = truth_state(&run);
        z.theta[0][0] += 0.5;
        let l = augmented_loss(&z, &run.measurements, 0.1, 0.0).unwrap();
        assert_abs_diff_eq!(l, 0.25, epsilon = 1e-14);
        let mut z = truth_state(&run);
        z.theta[5][0] += 0.5;
        let l = augmented_loss(&z, &run.measurements, 0.1, 0.0).unwrap();
        assert_abs_diff_eq!(l, 0.25, epsilon = 1e-14);
    }

    #[test]
    fn gradient_vanishes_at_truth() {
        let run = noiseless_run(100);
        let g = loss_gradient(&truth_state(&run), &run.measurements, 0.1).unwrap();
        let norm: f64 = g.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-10, "gradient norm {norm}");
    }

    #[test]
    fn measurement_gradient_is_linear_in_rho() {
        // Zero θ and ŷ: model residuals vanish, so only the measurement term acts.
        let y = [0.3, -0.2, 0.9, 0.4, -1.1];
        let z = AugmentedState::zeros(5);
        let g1 = loss_gradient(&z, &y, 0.1).unwrap();
        let g2 = loss_gradient(&z, &y, 0.2).unwrap();
        for (a, b) in g1.yhat.iter().zip(&g2.yhat) {
            assert_abs_diff_eq!(2.0 * a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(-0.3, 0.5), 0.0);
        assert_abs_diff_eq!(soft_threshold(1.5, 0.5), 1.0);
        assert_abs_diff_eq!(soft_threshold(-1.5, 0.5), -1.0);
    }

    #[test]
    fn proximal_step_zeroes_small_coefficients() {
        // With zero data and zero ŷ the gradient vanishes, so one step only
        // shrinks; every coefficient below ηλ must become exactly zero.
        let config = FitConfig {
            lambda: 0.5,
            eta: 0.05,
            max_iters: 1,
            backtracking: false,
            ..FitConfig::default()
        };
        let mut z = AugmentedState::zeros(5);
        for th in z.theta.iter_mut() {
            *th = [0.0, -0.02, 0.024, 0.0, 0.01, -0.1];
        }
        // constant in time → no smoothness gradient; ŷ = 0 → no model residual
        let est = fit_from(&[0.0; 5], z, &config).unwrap();
        for th in est.theta() {
            assert_eq!(&th[..5], &[0.0; 5]);
            assert_abs_diff_eq!(th[5], -0.075, epsilon = 1e-15);
        }
    }

    #[test]
    fn flat_round_trip() {
        let run = noiseless_run(4);
        let z = truth_state(&run);
        let flat = z.to_flat();
        assert_eq!(flat.len(), 28);
        assert_eq!(flat[7], run.measurements[1]);
        assert_eq!(AugmentedState::from_flat(&flat).unwrap(), z);
        assert!(AugmentedState::from_flat(&flat[..27]).is_err());
    }

    #[test]
    fn theta_summary_cases() {
        let run = noiseless_run(8);
        let z = truth_state(&run);
        let x = run.first_state();
        let s = theta_summary(&z, &x, &truth()).unwrap();
        assert_eq!(s.err_x, 0.0);
        assert_abs_diff_eq!(s.err_theta, 0.0, epsilon = 1e-15);

        let mut alt = z.clone();
        for (t, th) in alt.theta.iter_mut().enumerate() {
            th[0] += if t % 2 == 0 { 0.3 } else { -0.3 };
        }
        let s = theta_summary(&alt, &x, &truth()).unwrap();
        assert_abs_diff_eq!(s.theta_mean.as_slice(), truth().as_slice(), epsilon = 1e-15);

        let mut zero = z.clone();
        zero.theta.iter_mut().for_each(|th| *th = [0.0; 6]);
        let s = theta_summary(&zero, &x, &truth()).unwrap();
        assert_abs_diff_eq!(s.err_theta, 1.0, epsilon = 1e-15);
        let norm: f64 = truth().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_abs_diff_eq!(norm, 3.05f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn fit_validation() {
        assert!(fit(&[1.0, 2.0], &FitConfig::default()).is_err());
        let bad = FitConfig {
            eta: 0.0,
            ..FitConfig::default()
        };
        assert!(fit(&[1.0, 2.0, 3.0], &bad).is_err());
    }

    #[test]
    fn huge_step_without_backtracking_diverges() {
        let run = noiseless_run(30);
        let config = FitConfig {
            eta: 5.0,
            backtracking: false,
            max_iters: 1000,
            ..FitConfig::default()
        };
        match fit(&run.measurements, &config) {
            Err(Error::FitDiverged { eta, .. }) => assert_eq!(eta, 5.0),
            other => panic!("expected divergence, got {other:?}"),
        }
        // Backtracking recovers from the same step size.
        let config = FitConfig {
            backtracking: true,
            ..config
        };
        let est = fit(&run.measurements, &config).unwrap();
        assert!(est.final_eta < 5.0);
        assert!(est.best_loss <= est.loss_history[0]);
    }

    #[test]
    fn loss_history_is_monotone() {
        let run = henon_simulate(&HenonParams::default(), [0.1, 0.2], 0.2, 60, 5).unwrap();
        let config = FitConfig {
            max_iters: 5000,
            ..FitConfig::default()
        };
        let est = fit(&run.measurements, &config).unwrap();
        assert_eq!(est.loss_history.len(), est.iterations_used + 1);
        for w in est.loss_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn downsample_keeps_endpoints() {
        let h: Vec<f64> = (0..1001).map(|i| i as f64).collect();
        let d = downsample(&h, 50);
        assert!(d.len() <= 51);
        assert_eq!(d.first().unwrap().0, 0);
        assert_eq!(d.last().unwrap().0, 1000);
        assert_eq!(downsample(&h[..10], 50).len(), 10);
    }

    fn finite_difference_check(z: &AugmentedState, y: &[f64], rho: f64) {
        let analytic = loss_gradient(z, y, rho).unwrap().to_flat();
        let base = z.to_flat();
        let h = 1e-6;
        for (k, &g) in analytic.iter().enumerate() {
            let mut plus = base.clone();
            plus[k] += h;
            let mut minus = base.clone();
            minus[k] -= h;
            let lp = smooth_loss(&AugmentedState::from_flat(&plus).unwrap(), y, rho).unwrap();
            let lm = smooth_loss(&AugmentedState::from_flat(&minus).unwrap(), y, rho).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let scale = g.abs().max(fd.abs()).max(1e-3);
            assert!(
                (g - fd).abs() / scale < 1e-5,
                "component {k}: analytic {g}, fd {fd}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gradient_matches_finite_differences(
            values in prop::collection::vec(-1.0f64..1.0, 7 * 6 + 6),
            rho in 0.01f64..2.0,
        ) {
            let z = AugmentedState::from_flat(&values[..42]).unwrap();
            finite_difference_check(&z, &values[42..], rho);
        }
    }
}
