//! Linear time-invariant models with additive Gaussian noise.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, DVectorView, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance for numerical rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// `x_{t+1} = A x_t`, `y_t = C x_t` with a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    a: DMatrix<f64>,
    c: RowDVector<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, c: RowDVector<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::invalid(format!(
                "transition matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.nrows() == 0 {
            return Err(Error::invalid("state dimension must be at least 1"));
        }
        if c.ncols() != a.nrows() {
            return Err(Error::DimensionMismatch {
                context: "output row C",
                expected: a.nrows(),
                found: c.ncols(),
            });
        }
        if a.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("model entries must be finite"));
        }
        Ok(Self { a, c })
    }

    /// Scalar model `x_{t+1} = a x_t`, `y_t = c x_t`.
    pub fn scalar(a: f64, c: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            RowDVector::from_element(1, c),
        )
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &RowDVector<f64> {
        &self.c
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Stacked `[C; CA; …; CA^{rows-1}]`.
    pub fn observability_matrix(&self, rows: usize) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(rows, n);
        let mut row = self.c.clone();
        for r in 0..rows {
            out.row_mut(r).copy_from(&row);
            row = &row * &self.a;
        }
        out
    }
}

/// Gaussian noise levels and the generator seed for [`simulate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_nu: f64,
    pub sigma_mu: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma_nu: f64, sigma_mu: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            sigma_nu,
            sigma_mu,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn noiseless() -> Self {
        Self {
            sigma_nu: 0.0,
            sigma_mu: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_nu", self.sigma_nu), ("sigma_mu", self.sigma_mu)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// State trajectory stored in stacked form `X = (x_1ᵀ, …, x_Nᵀ)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    stacked: DVector<f64>,
}

impl Trajectory {
    pub fn from_stacked(n: usize, stacked: DVector<f64>) -> Result<Self> {
        if n == 0 || stacked.is_empty() || !stacked.len().is_multiple_of(n) {
            return Err(Error::invalid(format!(
                "stacked trajectory of length {} is not a positive multiple of n = {n}",
                stacked.len()
            )));
        }
        Ok(Self { n, stacked })
    }

    pub fn from_states(states: &[DVector<f64>]) -> Result<Self> {
        let n = states.first().map(|s| s.len()).unwrap_or(0);
        if n == 0 {
            return Err(Error::invalid(
                "trajectory needs at least one nonempty state",
            ));
        }
        let mut stacked = DVector::zeros(n * states.len());
        for (t, s) in states.iter().enumerate() {
            if s.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "trajectory state",
                    expected: n,
                    found: s.len(),
                });
            }
            stacked.rows_mut(t * n, n).copy_from(s);
        }
        Ok(Self { n, stacked })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.stacked.len() / self.n
    }

    /// State `x_{t+1}` (0-based index `t`).
    pub fn state(&self, t: usize) -> DVectorView<'_, f64> {
        self.stacked.rows(t * self.n, self.n)
    }

    pub fn states(&self) -> impl Iterator<Item = DVectorView<'_, f64>> + '_ {
        (0..self.horizon()).map(move |t| self.state(t))
    }

    pub fn stacked(&self) -> &DVector<f64> {
        &self.stacked
    }

    pub fn into_stacked(self) -> DVector<f64> {
        self.stacked
    }
}

/// Scalar measurements `Y = (y_1, …, y_N)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    values: DVector<f64>,
}

impl MeasurementSeries {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("measurement series must be nonempty"));
        }
        Ok(Self { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }
}

/// Companion matrix whose eigenvalues are `magnitude · e^{±iφ}` for each
/// angle φ.
///
/// Convention: ones on the superdiagonal and the negated coefficients of
/// the monic characteristic polynomial `z^n + c_{n-1} z^{n-1} + … + c_0`
/// in the last row, ordered `[-c_0, …, -c_{n-1}]`. `C = [1, 0, …, 0]`.
pub fn companion_from_angles(angles: &[f64], magnitude: f64) -> Result<LinearModel> {
    if angles.is_empty() {
        return Err(Error::invalid("at least one angle is required"));
    }
    if !(magnitude.is_finite() && magnitude > 0.0) {
        return Err(Error::invalid(format!(
            "magnitude must be positive, got {magnitude}"
        )));
    }
    if let Some(bad) = angles.iter().find(|&&phi| !(phi > 0.0 && phi < PI)) {
        return Err(Error::invalid(format!(
            "angle {bad} is outside the open interval (0, pi)"
        )));
    }

    // Coefficients in ascending order of power, monic.
    let mut poly = vec![1.0];
    for &phi in angles {
        // z² − 2 m cos φ z + m²
        let factor = [magnitude * magnitude, -2.0 * magnitude * phi.cos(), 1.0];
        let mut next = vec![0.0; poly.len() + 2];
        for (i, &p) in poly.iter().enumerate() {
            for (j, &f) in factor.iter().enumerate() {
                next[i + j] += p * f;
            }
        }
        poly = next;
    }

    let n = 2 * angles.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -poly[j];
    }
    let mut c = RowDVector::zeros(n);
    c[0] = 1.0;
    LinearModel::new(a, c)
}

/// Angles `π/2 + kπ/10`, `k = 0..4`, of the ten-state marginally stable
/// comparison system.
pub fn example2_angles() -> Vec<f64> {
    (0..5).map(|k| PI / 2.0 + PI / 10.0 * k as f64).collect()
}

/// The ten-state companion system with unit-magnitude eigenvalues.
pub fn example2_model() -> LinearModel {
    companion_from_angles(&example2_angles(), 1.0).expect("fixed angles are valid")
}

/// Iterate the model for `horizon` steps starting from `x1`.
///
/// Random draws happen in a fixed order per step: the `n` components of
/// `ν_t`, then `μ_t`. A zero standard deviation draws nothing, so noiseless
/// runs do not touch the generator.
pub fn simulate(
    model: &LinearModel,
    x1: &DVector<f64>,
    noise: &NoiseSpec,
    horizon: usize,
) -> Result<(Trajectory, MeasurementSeries)> {
    noise.validate()?;
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let n = model.n();
    if x1.len() != n {
        return Err(Error::DimensionMismatch {
            context: "initial state x1",
            expected: n,
            found: x1.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut stacked = DVector::zeros(n * horizon);
    let mut y = DVector::zeros(horizon);
    let mut x = x1.clone();
    let mut nu = DVector::zeros(n);

    for t in 0..horizon {
        if noise.sigma_nu > 0.0 {
            for v in nu.iter_mut() {
                *v = noise.sigma_nu * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let mu = if noise.sigma_mu > 0.0 {
            noise.sigma_mu * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };

        stacked.rows_mut(t * n, n).copy_from(&x);
        y[t] = model.c().dot(&x.transpose()) + mu;
        x = model.a() * &x + &nu;
    }

    Ok((Trajectory { n, stacked }, MeasurementSeries { values: y }))
}

/// Numerical rank of the `n`-step observability matrix.
///
/// Singular values at or below `tol · σ_max` count as zero.
pub fn observability_rank(model: &LinearModel, tol: f64) -> Result<(usize, bool)> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::invalid(format!(
            "rank tolerance must be positive, got {tol}"
        )));
    }
    let n = model.n();
    let obs = model.observability_matrix(n);
    let sv = obs.singular_values();
    let rank = numerical_rank(sv.as_slice(), tol);
    Ok((rank, rank == n))
}

pub(crate) fn numerical_rank(singular_values: &[f64], tol: f64) -> usize {
    let max = singular_values.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > tol * max).count()
}
