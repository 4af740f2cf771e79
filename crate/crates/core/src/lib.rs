//! Batch state and parameter estimation over a finite horizon.
//!
//! The linear side estimates a whole trajectory `X = (x_1, …, x_N)` of
//! `x_{t+1} = A x_t + ν_t`, `y_t = C x_t + μ_t` as the minimizer of
//!
//! ```text
//! ℓ(X̂) = Σ_{t<N} ‖x̂_{t+1} − A x̂_t‖² + ρ Σ_t (y_t − C x̂_t)²
//! ```
//!
//! which has the closed form `X̂* = (𝒜ᵀ𝒜 + ρ𝒞ᵀ𝒞)⁻¹ ρ𝒞ᵀY`. The normal matrix is
//! block tridiagonal and is factored with a block Cholesky in `O(N n³)`.
//!
//! The nonlinear side treats the coefficients of a polynomial autoregressive
//! model as extra states with trivial dynamics and fits the joint trajectory
//! with proximal gradient descent.
//!
//! Dead-beat observers and seeded Monte Carlo harnesses are provided for
//! comparison.

pub mod batch;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod model;
pub mod nonlinear;
pub mod observers;
pub mod seed;

pub use batch::{
    assemble_normal, build_stacked, evaluate_estimate, expected_loss_report, filter_matrix, loss,
    solve_estimate, EstimateReport, ExpectedLoss, NormalSystem, StackedDynamics, StackedOutput,
};
pub use error::{Error, Result};
pub use model::{
    companion_from_angles, example2_model, observability_rank, simulate, LinearModel,
    MeasurementSeries, NoiseSpec, Trajectory,
};
pub use observers::{deadbeat_full, deadbeat_sliding, relative_error};
