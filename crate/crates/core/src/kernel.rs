//! Instrument weight function and the V-statistic weight matrix.
//!
//! The criterion `M_n(g) = n^-2 sum_ij r_i r_j w(W_i - W_j)` is a quadratic
//! form in the residuals `r = Y - g(Z)`; `OmegaMatrix` holds its weights.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::data::{standardize_instruments, Dataset};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// Product of zero-mean Laplace densities.
    #[default]
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Variance of each univariate factor.
    pub variance: f64,
    /// Centre and scale the instruments before weighting.
    pub standardize: bool,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            family: KernelFamily::Laplace,
            variance: 1.0,
            standardize: true,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel variance must be positive, got {}",
                self.variance
            )));
        }
        Ok(())
    }

    /// Laplace scale `b` with `2 b^2 = variance`.
    pub fn laplace_scale(&self) -> f64 {
        (self.variance / 2.0).sqrt()
    }

    /// Weight at zero lag for a single instrument.
    pub fn peak(&self) -> f64 {
        match self.family {
            KernelFamily::Laplace => 0.5 / self.laplace_scale(),
        }
    }
}

/// `w(d) = prod_k exp(-|d_k| / b) / (2 b)`.
pub fn omega_weight(spec: &KernelSpec, d: &[f64]) -> f64 {
    match spec.family {
        KernelFamily::Laplace => {
            let b = spec.laplace_scale();
            let l1: f64 = d.iter().map(|v| v.abs()).sum();
            (0.5 / b).powi(d.len() as i32) * (-l1 / b).exp()
        }
    }
}

/// Instruments as the kernel sees them (standardized when requested).
pub fn kernel_instruments(ds: &Dataset, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if spec.standardize {
        Ok(standardize_instruments(ds.w())?.w_std)
    } else {
        Ok(ds.w().clone())
    }
}

/// Smallest relative jitter tried when Cholesky fails.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter before giving up.
pub const JITTER_CAP: f64 = 1e-6;
// Pivots below this fraction of the mean diagonal count as a failed factorization.
const PIVOT_FLOOR: f64 = 1e-14;

/// The symmetric positive definite weight matrix `n^-2 w(W_i - W_j)`.
#[derive(Debug, Clone)]
pub struct OmegaMatrix {
    values: DMatrix<f64>,
    jitter_applied: f64,
    chol: Cholesky<f64, Dyn>,
}

impl OmegaMatrix {
    /// Weights including any jitter added to the diagonal.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Absolute diagonal shift that was needed for a stable factorization.
    pub fn jitter_applied(&self) -> f64 {
        self.jitter_applied
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Dense inverse, symmetrized.
    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        (&inv + inv.transpose()) * 0.5
    }

    pub fn quadratic_form(&self, r: &DVector<f64>) -> f64 {
        r.dot(&(&self.values * r))
    }
}

fn accept_cholesky(m: &DMatrix<f64>, mean_diag: f64) -> Option<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(m.clone())?;
    let floor = PIVOT_FLOOR * mean_diag;
    let l = chol.l_dirty();
    if (0..m.nrows()).all(|i| l[(i, i)] * l[(i, i)] >= floor) {
        Some(chol)
    } else {
        None
    }
}

/// Builds the weight matrix from instrument rows that are already in kernel
/// coordinates; accepts any `n >= 1`.
pub fn build_omega_from_instruments(w: &DMatrix<f64>, spec: &KernelSpec, exec: Execution) -> Result<OmegaMatrix> {
    spec.validate()?;
    let n = w.nrows();
    if n == 0 {
        return Err(Error::TooFewObservations { required: 1, actual: 0 });
    }
    let scale = 1.0 / (n * n) as f64;
    let p = w.ncols();
    let rows = map_indexed(exec, n, |i| {
        let mut d = vec![0.0; p];
        (0..n)
            .map(|j| {
                for (k, dk) in d.iter_mut().enumerate() {
                    *dk = w[(i, k)] - w[(j, k)];
                }
                scale * omega_weight(spec, &d)
            })
            .collect::<Vec<f64>>()
    });
    let mut values = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    // exact symmetry regardless of rounding in the differences
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (values[(i, j)] + values[(j, i)]);
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }

    let mean_diag = values.trace() / n as f64;
    if let Some(chol) = accept_cholesky(&values, mean_diag) {
        return Ok(OmegaMatrix {
            values,
            jitter_applied: 0.0,
            chol,
        });
    }
    let mut tau = JITTER_START;
    while tau <= JITTER_CAP * (1.0 + 1e-9) {
        let shift = tau * mean_diag;
        let mut jittered = values.clone();
        for i in 0..n {
            jittered[(i, i)] += shift;
        }
        if let Some(chol) = accept_cholesky(&jittered, mean_diag) {
            return Ok(OmegaMatrix {
                values: jittered,
                jitter_applied: shift,
                chol,
            });
        }
        tau *= 10.0;
    }
    Err(Error::SingularKernel {
        jitter: JITTER_CAP * mean_diag,
    })
}

/// Weight matrix for a dataset, standardizing instruments if `spec` asks.
pub fn build_omega(ds: &Dataset, spec: &KernelSpec) -> Result<OmegaMatrix> {
    build_omega_with(ds, spec, Execution::default())
}

pub fn build_omega_with(ds: &Dataset, spec: &KernelSpec, exec: Execution) -> Result<OmegaMatrix> {
    spec.validate()?;
    let w = kernel_instruments(ds, spec)?;
    build_omega_from_instruments(&w, spec, exec)
}

/// The V-statistic `r' Omega r`.
pub fn mn_criterion(residuals: &DVector<f64>, omega: &OmegaMatrix) -> Result<f64> {
    if residuals.len() != omega.n() {
        return Err(Error::Dimension(format!(
            "{} residuals for a {}x{} weight matrix",
            residuals.len(),
            omega.n(),
            omega.n()
        )));
    }
    Ok(omega.quadratic_form(residuals))
}
