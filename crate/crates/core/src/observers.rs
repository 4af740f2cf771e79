//! Dead-beat observer baselines and the relative trajectory error.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{numerical_rank, LinearModel, MeasurementSeries, Trajectory};

/// Relative singular-value cutoff for observability pseudoinverses.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Pseudoinverse of a tall observability matrix with the relative
/// [`PINV_CUTOFF`]. Rank deficiency is an error since `x̂` would not be
/// determined by the data.
fn observability_pinv(obs: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = obs.ncols();
    let svd = obs.svd(true, true);
    let rank = numerical_rank(svd.singular_values.as_slice(), PINV_CUTOFF);
    if rank < n {
        return Err(Error::RankDeficient { rank, n });
    }
    let cutoff = PINV_CUTOFF * svd.singular_values.max();
    svd.pseudo_inverse(cutoff)
        .map_err(|e| Error::invalid(e.to_string()))
}

fn check_horizon(model: &LinearModel, y: &MeasurementSeries) -> Result<()> {
    if y.len() < model.n() {
        return Err(Error::invalid(format!(
            "dead-beat observers need at least n = {} measurements, got {}",
            model.n(),
            y.len()
        )));
    }
    Ok(())
}

fn propagate(model: &LinearModel, x1: DVector<f64>, horizon: usize) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(horizon);
    let mut x = x1;
    for _ in 0..horizon {
        let next = model.a() * &x;
        states.push(x);
        x = next;
    }
    Trajectory::from_states(&states)
}

/// Least-squares initial state over the whole window, propagated forward:
/// `x̂_1 = O_N⁺ Y`, `x̂_t = A^{t−1} x̂_1`.
pub fn deadbeat_full(model: &LinearModel, y: &MeasurementSeries) -> Result<Trajectory> {
    check_horizon(model, y)?;
    let pinv = observability_pinv(model.observability_matrix(y.len()))?;
    propagate(model, pinv * y.values(), y.len())
}

/// Sliding-window dead-beat observer.
///
/// For `t ≤ N−n+1`, `x̂_t = O_n⁺ [y_t, …, y_{t+n−1}]`; afterwards
/// `x̂_t = A x̂_{t−1}`. Windows do not overlap-average.
pub fn deadbeat_sliding(model: &LinearModel, y: &MeasurementSeries) -> Result<Trajectory> {
    check_horizon(model, y)?;
    let n = model.n();
    let horizon = y.len();
    let pinv = observability_pinv(model.observability_matrix(n))?;
    let windows = horizon - n + 1;

    let mut states: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    for t in 0..windows {
        states.push(&pinv * y.values().rows(t, n));
    }
    for _ in windows..horizon {
        let next = model.a() * states.last().expect("at least one window");
        states.push(next);
    }
    Trajectory::from_states(&states)
}

/// `‖X̂ − X‖ / ‖X‖` over the stacked trajectories.
pub fn relative_error(xhat: &Trajectory, x: &Trajectory) -> Result<f64> {
    relative_error_stacked(xhat.stacked(), x.stacked())
}

pub(crate) fn relative_error_stacked(xhat: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    if xhat.len() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "relative error",
            expected: x.len(),
            found: xhat.len(),
        });
    }
    let denom = x.norm();
    if denom == 0.0 {
        return Err(Error::invalid(
            "relative error is undefined for a zero reference",
        ));
    }
    Ok((xhat - x).norm() / denom)
}
