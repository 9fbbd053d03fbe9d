//! Hyperparameter-robust Fourier representations of one-dimensional
//! stationary Gaussian processes.
//!
//! A [`QuadratureRule`] discretizes the inverse Fourier transform of a
//! Matérn spectral density so that a single set of frequencies represents
//! every kernel in a box of smoothness and lengthscale values. Regression in
//! the resulting trigonometric basis costs `O(N + m³)` once the normal
//! matrix is assembled through type-3 nonuniform exponential sums.
//!
//! ```
//! use specgp::{effective_kernel, matern_kernel, MaternParams, QuadratureRule};
//!
//! let rule = QuadratureRule::embedded();
//! let p = MaternParams::new(2.5, 0.3).unwrap();
//! let approx = effective_kernel(&rule, &p, 0.4).unwrap();
//! let exact = matern_kernel(0.4, &p).unwrap();
//! assert!((approx - exact).abs() < 1e-4);
//! ```

pub mod error;
pub mod fourier_gp;
pub mod gauss;
pub mod kernels;
mod linalg;
pub mod nufft;
pub mod quadrature;
pub mod regression;
pub mod scalar;
pub mod special;

pub use error::{Error, Result};
pub use fourier_gp::{
    basis_row, effective_kernel, gamma_coefficients, l2_kernel_error, sample_prior,
    FourierExpansion,
};
pub use kernels::{chebyshev_nodes, matern_kernel, matern_spectral_density};
pub use nufft::{direct_exp_sums, fast_exp_sums, ExpSumPlan, PlanOptions};
pub use quadrature::{
    build_integrand_family, build_rule, refine_rule, select_nodes, solve_weights, validate_rule,
    reference_l2_error, BuildOptions, REFERENCE_L2_ERRORS, BuildReport, IntegrandFamily, QuadratureRule, ValidationGrid,
    ValidationReport,
};
pub use regression::{
    cg_solve, cg_solve_observed, design_matrix, exact_gp_oracle, fit, form_normal_matrix, form_rhs,
    gradient_log_likelihood, log_marginal_likelihood, CgReport, Dataset, LikelihoodGradient,
    LinearOperator, LowRankOperator, NormalSystem, RegressionFit, SpectralSums, SumStrategy,
};
pub use scalar::Real;

/// Double-precision Matérn parameters.
pub type MaternParams = kernels::MaternParams<f64>;
/// Single-precision Matérn parameters.
pub type MaternParamsF32 = kernels::MaternParams<f32>;
/// Double-precision hyperparameter box.
pub type HyperBox = kernels::HyperBox<f64>;
/// Single-precision hyperparameter box.
pub type HyperBoxF32 = kernels::HyperBox<f32>;
/// Complex scalar used by the exponential sums.
pub type Complex64 = num_complex::Complex<f64>;
