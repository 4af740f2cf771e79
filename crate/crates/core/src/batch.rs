//! Closed-form batch trajectory estimation for linear models.
//!
//! With `𝒜` the block-bidiagonal dynamics operator (block row `t` is
//! `[… −A  I …]`) and `𝒞 = diag(C, …, C)`, the loss
//! `‖𝒜X̂‖² + ρ‖Y − 𝒞X̂‖²` is minimized by the solution of
//! `𝒪 X̂ = ρ𝒞ᵀY`, `𝒪 = 𝒜ᵀ𝒜 + ρ𝒞ᵀ𝒞`. `𝒪` is symmetric block tridiagonal and
//! positive definite exactly when `(A, C)` is observable.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::linalg::{BlockCholesky, BlockTridiagonal};
use crate::model::{LinearModel, MeasurementSeries, NoiseSpec, Trajectory};

/// Default measurement weight.
pub const DEFAULT_RHO: f64 = 1.0;

/// The operator `𝒜 ∈ R^{n(N−1) × nN}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedDynamics {
    a: DMatrix<f64>,
    horizon: usize,
}

impl StackedDynamics {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn shape(&self) -> (usize, usize) {
        let n = self.n();
        (n * (self.horizon - 1), n * self.horizon)
    }

    /// `𝒜X`, i.e. the stacked model residuals `x_{t+1} − A x_t`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        assert_eq!(x.len(), n * self.horizon);
        let mut out = DVector::zeros(self.shape().0);
        for t in 0..self.horizon - 1 {
            let r = x.rows((t + 1) * n, n) - &self.a * x.rows(t * n, n);
            out.rows_mut(t * n, n).copy_from(&r);
        }
        out
    }

    /// `𝒜ᵀr`.
    pub fn apply_transpose(&self, r: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        assert_eq!(r.len(), self.shape().0);
        let mut out = DVector::zeros(n * self.horizon);
        for t in 0..self.horizon - 1 {
            let rt = r.rows(t * n, n);
            let back = self.a.tr_mul(&rt);
            let mut cur = out.rows_mut(t * n, n);
            cur -= back;
            let mut next = out.rows_mut((t + 1) * n, n);
            next += rt;
        }
        out
    }

    /// `𝒜ᵀ𝒜` applied to every column of `m`.
    pub fn gram_apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            let col = self.apply_transpose(&self.apply(&m.column(j).clone_owned()));
            out.set_column(j, &col);
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let (rows, cols) = self.shape();
        let mut out = DMatrix::zeros(rows, cols);
        for t in 0..self.horizon - 1 {
            out.view_mut((t * n, t * n), (n, n)).copy_from(&(-&self.a));
            out.view_mut((t * n, (t + 1) * n), (n, n))
                .copy_from(&DMatrix::identity(n, n));
        }
        out
    }
}

/// The operator `𝒞 ∈ R^{N × nN}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedOutput {
    c: RowDVector<f64>,
    horizon: usize,
}

impl StackedOutput {
    pub fn n(&self) -> usize {
        self.c.ncols()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.horizon, self.n() * self.horizon)
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        assert_eq!(x.len(), n * self.horizon);
        DVector::from_fn(self.horizon, |t, _| {
            self.c.dot(&x.rows(t * n, n).transpose())
        })
    }

    pub fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        assert_eq!(y.len(), self.horizon);
        let mut out = DVector::zeros(n * self.horizon);
        for t in 0..self.horizon {
            out.rows_mut(t * n, n)
                .copy_from(&(self.c.transpose() * y[t]));
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(self.horizon, n * self.horizon);
        for t in 0..self.horizon {
            out.view_mut((t, t * n), (1, n)).copy_from(&self.c);
        }
        out
    }
}

/// Build `𝒜` and `𝒞` for a horizon of `N ≥ 1` steps. For `N = 1`, `𝒜` has
/// no rows.
pub fn build_stacked(
    model: &LinearModel,
    horizon: usize,
) -> Result<(StackedDynamics, StackedOutput)> {
    if horizon < 1 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    Ok((
        StackedDynamics {
            a: model.a().clone(),
            horizon,
        },
        StackedOutput {
            c: model.c().clone(),
            horizon,
        },
    ))
}

/// `𝒪 = 𝒜ᵀ𝒜 + ρ𝒞ᵀ𝒞` together with its factorization.
///
/// Immutable once built; one instance can serve concurrent solves.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    dynamics: StackedDynamics,
    output: StackedOutput,
    rho: f64,
    matrix: BlockTridiagonal,
    factor: BlockCholesky,
}

impl NormalSystem {
    /// Build the stacked operators, assemble and factor in one call.
    pub fn for_model(model: &LinearModel, horizon: usize, rho: f64) -> Result<Self> {
        let (dynamics, output) = build_stacked(model, horizon)?;
        assemble_normal(&dynamics, &output, rho)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn horizon(&self) -> usize {
        self.dynamics.horizon
    }

    pub fn n(&self) -> usize {
        self.dynamics.n()
    }

    pub fn matrix(&self) -> &BlockTridiagonal {
        &self.matrix
    }

    pub fn factor(&self) -> &BlockCholesky {
        &self.factor
    }

    pub fn dynamics(&self) -> &StackedDynamics {
        &self.dynamics
    }

    pub fn output(&self) -> &StackedOutput {
        &self.output
    }

    pub fn model(&self) -> LinearModel {
        LinearModel::new(self.dynamics.a.clone(), self.output.c.clone())
            .expect("stacked operators come from a valid model")
    }

    /// `𝒪⁻¹ b`, refined against the unassembled operators.
    ///
    /// `𝒪` is formed in floating point, and for systems with large `‖A‖`
    /// its rounding alone limits a plain Cholesky solve. Each refinement
    /// step recomputes the residual `b − 𝒜ᵀ(𝒜x) − ρ𝒞ᵀ(𝒞x)` without
    /// touching the assembled matrix and corrects with the same factor.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = self.factor.solve(b);
        for _ in 0..REFINEMENT_STEPS {
            let r = b - self.apply(&x);
            x += self.factor.solve(&r);
        }
        x
    }

    /// `𝒪x` evaluated as `𝒜ᵀ(𝒜x) + ρ𝒞ᵀ(𝒞x)`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.dynamics.apply_transpose(&self.dynamics.apply(x))
            + self.output.apply_transpose(&self.output.apply(x)) * self.rho
    }
}

/// Refinement sweeps in [`NormalSystem::solve`].
pub const REFINEMENT_STEPS: usize = 2;

/// Assemble `𝒪` block by block and factor it.
///
/// Diagonal block `t` is `AᵀA·[t < N] + I·[t > 1] + ρCᵀC` (1-based `t`),
/// and block `(t+1, t)` is `−A`.
pub fn assemble_normal(
    dynamics: &StackedDynamics,
    output: &StackedOutput,
    rho: f64,
) -> Result<NormalSystem> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::invalid(format!("rho must be positive, got {rho}")));
    }
    if dynamics.n() != output.n() || dynamics.horizon != output.horizon {
        return Err(Error::DimensionMismatch {
            context: "stacked operators",
            expected: dynamics.n() * dynamics.horizon,
            found: output.n() * output.horizon,
        });
    }
    let n = dynamics.n();
    let horizon = dynamics.horizon;
    let a = &dynamics.a;
    let ata = a.tr_mul(a);
    let ctc = output.c.tr_mul(&output.c) * rho;
    let eye = DMatrix::<f64>::identity(n, n);

    let diag = (0..horizon)
        .map(|t| {
            let mut d = ctc.clone();
            if t + 1 < horizon {
                d += &ata;
            }
            if t > 0 {
                d += &eye;
            }
            d
        })
        .collect();
    let sub = vec![-a.clone(); horizon - 1];
    let matrix = BlockTridiagonal::new(diag, sub)?;
    let factor = matrix.cholesky()?;

    Ok(NormalSystem {
        dynamics: dynamics.clone(),
        output: output.clone(),
        rho,
        matrix,
        factor,
    })
}

/// Result of a batch solve.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub xhat: Trajectory,
    pub loss: f64,
    pub rho: f64,
    /// `x̂_{t+1} − A x̂_t`, `t = 1..N−1`.
    pub model_residuals: Vec<DVector<f64>>,
    /// `y_t − C x̂_t`, `t = 1..N`.
    pub output_residuals: Vec<f64>,
}

impl EstimateReport {
    pub fn model_residual_norm(&self) -> f64 {
        self.model_residuals
            .iter()
            .map(|r| r.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn output_residual_norm(&self) -> f64 {
        self.output_residuals
            .iter()
            .map(|r| r * r)
            .sum::<f64>()
            .sqrt()
    }
}

/// `X̂* = 𝒪⁻¹ ρ𝒞ᵀY` with its loss and residuals.
pub fn solve_estimate(normal: &NormalSystem, y: &MeasurementSeries) -> Result<EstimateReport> {
    check_len("measurement series", normal.horizon(), y.len())?;
    let rhs = normal.output.apply_transpose(y.values()) * normal.rho;
    let xhat = Trajectory::from_stacked(normal.n(), normal.solve(&rhs))?;
    evaluate_estimate(xhat, y, &normal.model(), normal.rho)
}

/// Loss and residuals of an arbitrary trajectory, e.g. a dead-beat estimate.
pub fn evaluate_estimate(
    xhat: Trajectory,
    y: &MeasurementSeries,
    model: &LinearModel,
    rho: f64,
) -> Result<EstimateReport> {
    check_len("trajectory state", model.n(), xhat.n())?;
    check_len("measurement series", xhat.horizon(), y.len())?;
    let (model_residuals, output_residuals) = residuals(&xhat, y, model);
    let loss = loss_from_residuals(&model_residuals, &output_residuals, rho);
    Ok(EstimateReport {
        xhat,
        loss,
        rho,
        model_residuals,
        output_residuals,
    })
}

fn residuals(
    xhat: &Trajectory,
    y: &MeasurementSeries,
    model: &LinearModel,
) -> (Vec<DVector<f64>>, Vec<f64>) {
    let model_res = (0..xhat.horizon().saturating_sub(1))
        .map(|t| xhat.state(t + 1) - model.a() * xhat.state(t))
        .collect();
    let out_res = xhat
        .states()
        .zip(y.values().iter())
        .map(|(x, &yt)| yt - model.c().dot(&x.transpose()))
        .collect();
    (model_res, out_res)
}

fn loss_from_residuals(model_res: &[DVector<f64>], out_res: &[f64], rho: f64) -> f64 {
    let dyn_term: f64 = model_res.iter().map(|r| r.norm_squared()).sum();
    let out_term: f64 = out_res.iter().map(|r| r * r).sum();
    dyn_term + rho * out_term
}

fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// `Σ_{t<N} ‖x̂_{t+1} − A x̂_t‖² + ρ Σ_t (y_t − C x̂_t)²`.
pub fn loss(
    xhat: &Trajectory,
    y: &MeasurementSeries,
    model: &LinearModel,
    rho: f64,
) -> Result<f64> {
    check_len("trajectory state", model.n(), xhat.n())?;
    check_len("measurement series", xhat.horizon(), y.len())?;
    let (m, o) = residuals(xhat, y, model);
    Ok(loss_from_residuals(&m, &o, rho))
}

/// Dense `H* = 𝒪⁻¹ ρ𝒞ᵀ ∈ R^{nN × N}`, so that `X̂* = H*Y`.
pub fn filter_matrix(model: &LinearModel, horizon: usize, rho: f64) -> Result<DMatrix<f64>> {
    let normal = NormalSystem::for_model(model, horizon, rho)?;
    Ok(filter_matrix_of(&normal))
}

pub(crate) fn filter_matrix_of(normal: &NormalSystem) -> DMatrix<f64> {
    let n = normal.n();
    let horizon = normal.horizon();
    let mut h = DMatrix::zeros(n * horizon, horizon);
    let ct = normal.output.c.transpose() * normal.rho;
    for j in 0..horizon {
        let mut rhs = DVector::zeros(n * horizon);
        rhs.rows_mut(j * n, n).copy_from(&ct);
        h.set_column(j, &normal.solve(&rhs));
    }
    h
}

/// Expected losses over all noise realizations.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ExpectedLoss {
    /// `Eℓ(X)` at the true trajectory.
    pub loss_true: f64,
    /// `Eℓ(X̂*)` at the optimal estimate.
    pub loss_opt: f64,
    /// `E X_nᵀ𝒜ᵀ𝒜𝒪⁻¹𝒜ᵀ𝒜X_n`.
    pub state_gap: f64,
    /// `ρ² E μᵀ𝒞𝒪⁻¹𝒞ᵀμ`.
    pub measurement_gap: f64,
}

impl ExpectedLoss {
    pub fn gap(&self) -> f64 {
        self.state_gap + self.measurement_gap
    }
}

/// Closed-form expected losses for i.i.d. Gaussian noise.
///
/// `Eℓ(X)` follows from `𝒜X` being the stacked state noise. `Eℓ(X̂*)` and
/// the gap terms use `E[μᵀMμ] = σ_μ² tr M` and `E[X_nᵀQX_n] = tr(QΣ_n)`,
/// where `Σ_n` is the covariance of the zero-initial-state noise response.
pub fn expected_loss_report(
    model: &LinearModel,
    noise: &NoiseSpec,
    rho: f64,
    horizon: usize,
) -> Result<ExpectedLoss> {
    noise.validate()?;
    let normal = NormalSystem::for_model(model, horizon, rho)?;
    let n = model.n();
    let var_nu = noise.sigma_nu * noise.sigma_nu;
    let var_mu = noise.sigma_mu * noise.sigma_mu;

    let loss_true = (horizon - 1) as f64 * n as f64 * var_nu + rho * horizon as f64 * var_mu;

    // M = ρI − ρ²𝒞𝒪⁻¹𝒞ᵀ = ρ(I − 𝒞H*)
    let h = filter_matrix_of(&normal);
    let ch = DMatrix::from_fn(horizon, horizon, |t, j| {
        model.c().dot(&h.view((t * n, j), (n, 1)).transpose())
    });
    let m = (DMatrix::identity(horizon, horizon) - &ch) * rho;

    let sigma = noise_response_covariance(model, var_nu, horizon);
    // 𝒞Σ_n𝒞ᵀ
    let csc = DMatrix::from_fn(horizon, horizon, |s, t| {
        let block = sigma.view((s * n, t * n), (n, n));
        (model.c() * block).dot(model.c())
    });
    let loss_opt = (&m * &csc).trace() + var_mu * m.trace();

    let measurement_gap = var_mu * rho * ch.trace();

    let state_gap = if var_nu == 0.0 || horizon == 1 {
        0.0
    } else {
        // tr(𝒪⁻¹ 𝒜ᵀ𝒜 Σ_n 𝒜ᵀ𝒜)
        let b_sigma = normal.dynamics.gram_apply_columns(&sigma);
        let p = normal.dynamics.gram_apply_columns(&b_sigma.transpose());
        (0..p.ncols())
            .map(|j| normal.solve(&p.column(j).clone_owned())[j])
            .sum()
    };

    Ok(ExpectedLoss {
        loss_true,
        loss_opt,
        state_gap,
        measurement_gap,
    })
}

/// Covariance of `X_n` for `x_{n,1} = 0`, `x_{n,t+1} = A x_{n,t} + ν_t`.
///
/// Diagonal blocks follow `Σ_{t+1} = AΣ_tAᵀ + σ²I`; the block at `(t, s)`
/// for `t ≥ s` is `A^{t−s}Σ_s`.
pub fn noise_response_covariance(model: &LinearModel, var_nu: f64, horizon: usize) -> DMatrix<f64> {
    let n = model.n();
    let a = model.a();
    let mut out = DMatrix::zeros(n * horizon, n * horizon);
    let mut sigma_s = DMatrix::<f64>::zeros(n, n);
    for s in 0..horizon {
        let mut cross = sigma_s.clone();
        for t in s..horizon {
            out.view_mut((t * n, s * n), (n, n)).copy_from(&cross);
            if t > s {
                out.view_mut((s * n, t * n), (n, n))
                    .copy_from(&cross.transpose());
            }
            cross = a * cross;
        }
        sigma_s = a * &sigma_s * a.transpose() + DMatrix::identity(n, n) * var_nu;
    }
    out
}
