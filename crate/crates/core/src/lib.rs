//! One-step smoothing-spline estimation of a structural function `g` in
//! `Y = g(Z) + e`, `E(e | W) = 0`, with `W` a vector of instruments.
//!
//! The estimator minimizes the V-statistic
//! `M_n(g) = n^-2 sum_ij (Y_i - g(Z_i)) (Y_j - g(Z_j)) w(W_i - W_j)` plus
//! `lambda * integral g''^2`. The minimizer is a natural cubic spline with
//! knots at the `Z_i` whose coefficients solve one bordered linear system
//! ([`solver`]). [`selection`] picks `lambda` by two-fold cross-validation,
//! [`monotone`] reweights observations so that the fitted slope has a sign at
//! every knot, and [`simlab`] runs the Monte Carlo designs used to assess the
//! estimator.
//!
//! ```
//! use ivspline::{Dataset, KernelSpec};
//!
//! let z = [0.1, 0.4, 0.35, 0.8, 0.95, 0.6];
//! let w = [0.0, 0.5, 0.3, 1.1, 1.4, 0.7];
//! let y: Vec<f64> = z.iter().map(|v| v * v).collect();
//! let ds = Dataset::from_slices(&y, &z, &w)?;
//! let fit = ivspline::fit(&ds, 0.01, &KernelSpec::default())?;
//! assert!(fit.diagnostics.constraint_residual < 1e-8);
//! println!("g(0.5) = {}", fit.evaluate(0.5));
//! # Ok::<(), ivspline::Error>(())
//! ```

pub mod data;
pub mod error;
pub mod exec;
pub mod kernel;
pub mod linalg;
pub mod monotone;
pub mod selection;
pub mod simlab;
pub mod solver;
pub mod spline;

/// Library version, recorded in artifacts for provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use data::{load_csv, standardize_instruments, write_csv, ColumnMap, Dataset, StandardizedInstruments};
pub use error::{Error, Result};
pub use exec::Execution;
pub use kernel::{build_omega, mn_criterion, omega_weight, KernelFamily, KernelSpec, OmegaMatrix};
pub use monotone::{derivative_smoother_matrix, fit_monotone, tilt, MonotoneDirection, TiltWeights};
pub use selection::{cross_validate, default_grid, CvConfig, CvResult};
pub use simlab::{generate, monte_carlo, true_function, DgpConfig, EstimatorKind, GFunction, McReport};
pub use solver::{fit, fitted_values, hat_diagnostics, FitContext, HatDiagnostics, PenaltyPath};
pub use spline::{build_design, roughness, DesignMatrices, FitDiagnostics, SplineFit};
