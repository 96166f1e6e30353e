//! Penalized fit through the bordered linear system
//!
//! ```text
//! [ E + lambda Omega^-1   Z ] [ delta ]   [ Y ]
//! [ Z'                    0 ] [   a   ] = [ 0 ]
//! ```
//!
//! `FitContext` owns everything that does not depend on `Y` or `lambda`, so
//! repeated fits (cross-validation, tilting) reuse the design and the kernel
//! factorization. `PenaltyPath` diagonalizes the problem once so that a whole
//! grid of `lambda` values costs `O(n^2)` each.

use nalgebra::{DMatrix, DVector, SymmetricEigen, LU};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kernel::{build_omega_with, KernelSpec, OmegaMatrix};
use crate::linalg::{estimate_inverse_norm1, norm1, orthogonal_complement};
use crate::spline::{build_design, cross_design, roughness, DesignMatrices, FitDiagnostics, SplineFit};

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "lambda must be positive and finite, got {lambda}"
        )))
    }
}

/// The assembled bordered system for one `lambda`.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    /// `E + lambda Omega^-1`.
    pub etilde: DMatrix<f64>,
    /// `(n + 2) x (n + 2)` bordered matrix.
    pub kkt: DMatrix<f64>,
    /// `(Y, 0, 0)`.
    pub rhs: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HatDiagnostics {
    /// `||K||_1 ||K^-1||_1` estimate for the bordered matrix `K`.
    pub kkt_condition_estimate: f64,
    /// `max |B K - I|` with `B` the analytic block inverse.
    pub block_inverse_check: f64,
    pub jitter_applied: f64,
}

/// Design and kernel factorization shared by every fit on one dataset.
#[derive(Debug, Clone)]
pub struct FitContext {
    design: DesignMatrices,
    omega: OmegaMatrix,
    omega_inv: DMatrix<f64>,
    knots: DVector<f64>,
    y: DVector<f64>,
}

impl FitContext {
    pub fn new(ds: &Dataset, spec: &KernelSpec) -> Result<Self> {
        Self::with_execution(ds, spec, Execution::default())
    }

    pub fn with_execution(ds: &Dataset, spec: &KernelSpec, exec: Execution) -> Result<Self> {
        let design = build_design(ds.z())?;
        if !design.has_full_rank() {
            return Err(Error::Collinear);
        }
        let omega = build_omega_with(ds, spec, exec)?;
        let omega_inv = omega.inverse();
        Ok(Self {
            design,
            omega,
            omega_inv,
            knots: ds.z().clone(),
            y: ds.y().clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.knots.len()
    }

    pub fn design(&self) -> &DesignMatrices {
        &self.design
    }

    pub fn omega(&self) -> &OmegaMatrix {
        &self.omega
    }

    pub fn omega_inverse(&self) -> &DMatrix<f64> {
        &self.omega_inv
    }

    pub fn knots(&self) -> &DVector<f64> {
        &self.knots
    }

    /// Outcome of the dataset the context was built from.
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn etilde(&self, lambda: f64) -> DMatrix<f64> {
        let mut et = &self.design.e + &self.omega_inv * lambda;
        for i in 0..et.nrows() {
            for j in 0..i {
                let v = 0.5 * (et[(i, j)] + et[(j, i)]);
                et[(i, j)] = v;
                et[(j, i)] = v;
            }
        }
        et
    }

    pub fn block_system(&self, y: &DVector<f64>, lambda: f64) -> Result<BlockSystem> {
        check_lambda(lambda)?;
        let n = self.n();
        if y.len() != n {
            return Err(Error::Dimension(format!("{} outcomes for {} knots", y.len(), n)));
        }
        let etilde = self.etilde(lambda);
        let mut kkt = DMatrix::zeros(n + 2, n + 2);
        kkt.view_mut((0, 0), (n, n)).copy_from(&etilde);
        kkt.view_mut((0, n), (n, 2)).copy_from(&self.design.zdesign);
        kkt.view_mut((n, 0), (2, n)).copy_from(&self.design.zdesign.transpose());
        let mut rhs = DVector::zeros(n + 2);
        rhs.rows_mut(0, n).copy_from(y);
        Ok(BlockSystem { etilde, kkt, rhs })
    }

    fn factor(&self, kkt: &DMatrix<f64>) -> Result<LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
        let lu = kkt.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::Conditioning {
                condition: f64::INFINITY,
            });
        }
        Ok(lu)
    }

    fn condition(kkt: &DMatrix<f64>, lu: &LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
        // the bordered matrix is symmetric, so K^-T = K^-1
        let inv = estimate_inverse_norm1(kkt.nrows(), |b| lu.solve(b), |b| lu.solve(b));
        norm1(kkt) * inv
    }

    /// Coefficients `(delta, a)` from the bordered system for outcome `y`.
    pub fn fit_outcome(&self, y: &DVector<f64>, lambda: f64) -> Result<SplineFit> {
        let sys = self.block_system(y, lambda)?;
        let lu = self.factor(&sys.kkt)?;
        let sol = lu.solve(&sys.rhs).ok_or(Error::Conditioning {
            condition: f64::INFINITY,
        })?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Conditioning {
                condition: Self::condition(&sys.kkt, &lu),
            });
        }
        let n = self.n();
        let delta = sol.rows(0, n).into_owned();
        let a = [sol[n], sol[n + 1]];
        Ok(self.package(a, delta, y, lambda))
    }

    /// Wraps raw coefficients with their diagnostics.
    pub fn package(&self, a: [f64; 2], delta: DVector<f64>, y: &DVector<f64>, lambda: f64) -> SplineFit {
        let fitted = &self.design.zdesign * DVector::from_column_slice(&a) + &self.design.e * &delta;
        let resid = y - fitted;
        let mut fit = SplineFit {
            a,
            delta,
            knots: self.knots.clone(),
            lambda,
            diagnostics: FitDiagnostics::default(),
        };
        fit.diagnostics = FitDiagnostics {
            mn_value: self.omega.quadratic_form(&resid),
            roughness: roughness(&fit.delta, &self.design.e).unwrap_or(f64::NAN),
            constraint_residual: fit.constraint_residual(),
            jitter_applied: self.omega.jitter_applied(),
        };
        fit
    }

    /// Fit on the context's own outcome.
    pub fn fit(&self, lambda: f64) -> Result<SplineFit> {
        self.fit_outcome(&self.y, lambda)
    }

    /// Penalized objective `r' Omega r + lambda delta' E delta` at given coefficients.
    pub fn objective(&self, y: &DVector<f64>, a: [f64; 2], delta: &DVector<f64>, lambda: f64) -> f64 {
        let fitted = &self.design.zdesign * DVector::from_column_slice(&a) + &self.design.e * delta;
        let resid = y - fitted;
        self.omega.quadratic_form(&resid) + lambda * delta.dot(&(&self.design.e * delta))
    }

    /// Blocks of the analytic inverse of the bordered matrix:
    /// `(E~^-1 (I - P), E~^-1 Z C^-1, C^-1 Z' E~^-1, -C^-1)` with `C = Z' E~^-1 Z`.
    pub fn analytic_block_inverse(&self, lambda: f64) -> Result<DMatrix<f64>> {
        check_lambda(lambda)?;
        let n = self.n();
        let et = self.etilde(lambda);
        let lu = et.lu();
        let z = &self.design.zdesign;
        let et_inv = lu.try_inverse().ok_or(Error::Conditioning {
            condition: f64::INFINITY,
        })?;
        let et_inv_z = &et_inv * z;
        let c = z.tr_mul(&et_inv_z);
        let c_inv = c.try_inverse().ok_or(Error::Collinear)?;
        let p = z * &c_inv * et_inv_z.transpose();
        let top_left = &et_inv * (DMatrix::identity(n, n) - p);
        let top_right = &et_inv_z * &c_inv;
        let mut inv = DMatrix::zeros(n + 2, n + 2);
        inv.view_mut((0, 0), (n, n)).copy_from(&top_left);
        inv.view_mut((0, n), (n, 2)).copy_from(&top_right);
        inv.view_mut((n, 0), (2, n)).copy_from(&top_right.transpose());
        inv.view_mut((n, n), (2, 2)).copy_from(&(-c_inv));
        Ok(inv)
    }

    /// Knot values through the closed-form smoother `[P + E E~^-1 (I - P)] Y`.
    pub fn fitted_values_closed_form(&self, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        check_lambda(lambda)?;
        let n = self.n();
        let et = self.etilde(lambda);
        let lu = et.lu();
        let z = &self.design.zdesign;
        let et_inv_z = lu.solve(z).ok_or(Error::Conditioning {
            condition: f64::INFINITY,
        })?;
        let et_inv_y = lu.solve(y).ok_or(Error::Conditioning {
            condition: f64::INFINITY,
        })?;
        let c = z.tr_mul(&et_inv_z);
        let c_inv = c.try_inverse().ok_or(Error::Collinear)?;
        // P y = Z C^-1 Z' E~^-1 y
        let coef = &c_inv * z.tr_mul(&et_inv_y);
        let py = z * &coef;
        let resid = y - &py;
        let et_inv_resid = lu.solve(&resid).ok_or(Error::Conditioning {
            condition: f64::INFINITY,
        })?;
        let out = py + &self.design.e * et_inv_resid;
        debug_assert_eq!(out.len(), n);
        Ok(out)
    }

    pub fn hat_diagnostics(&self, lambda: f64) -> Result<HatDiagnostics> {
        let sys = self.block_system(&self.y, lambda)?;
        let lu = self.factor(&sys.kkt)?;
        let condition = Self::condition(&sys.kkt, &lu);
        let inv = self.analytic_block_inverse(lambda)?;
        let n2 = self.n() + 2;
        let check = (&inv * &sys.kkt - DMatrix::identity(n2, n2)).amax();
        Ok(HatDiagnostics {
            kkt_condition_estimate: condition,
            block_inverse_check: check,
            jitter_applied: self.omega.jitter_applied(),
        })
    }

    /// First `n` columns of the inverse bordered matrix, split into the
    /// `delta` rows (`n x n`) and the `a` rows (`2 x n`).
    pub fn solution_operator(&self, lambda: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.n();
        let sys = self.block_system(&DVector::zeros(n), lambda)?;
        let lu = self.factor(&sys.kkt)?;
        let mut unit = DMatrix::zeros(n + 2, n);
        for j in 0..n {
            unit[(j, j)] = 1.0;
        }
        let sol = lu.solve(&unit).ok_or(Error::Conditioning {
            condition: f64::INFINITY,
        })?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Conditioning {
                condition: Self::condition(&sys.kkt, &lu),
            });
        }
        Ok((sol.rows(0, n).into_owned(), sol.rows(n, 2).into_owned()))
    }
}

/// Fit at a fixed `lambda`.
pub fn fit(ds: &Dataset, lambda: f64, spec: &KernelSpec) -> Result<SplineFit> {
    check_lambda(lambda)?;
    FitContext::new(ds, spec)?.fit(lambda)
}

/// Knot values from the closed-form hat matrix.
pub fn fitted_values(ds: &Dataset, lambda: f64, spec: &KernelSpec) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    FitContext::new(ds, spec)?.fitted_values_closed_form(ds.y(), lambda)
}

pub fn hat_diagnostics(ds: &Dataset, lambda: f64, spec: &KernelSpec) -> Result<HatDiagnostics> {
    check_lambda(lambda)?;
    FitContext::new(ds, spec)?.hat_diagnostics(lambda)
}

/// Simultaneous diagonalization of the problem restricted to `Z' delta = 0`.
///
/// With `Q` an orthonormal basis of that subspace, `Q' E Q` is positive
/// semi-definite and `Q' Omega^-1 Q` positive definite, so there is a basis
/// `B` with `delta(lambda) = B (M + lambda)^-1 B' Y` for the generalized
/// eigenvalues `M >= 0`.
#[derive(Debug, Clone)]
pub struct PenaltyPath {
    knots: DVector<f64>,
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    zpinv: DMatrix<f64>,
    a_from_e: DMatrix<f64>,
    a_from_w: DMatrix<f64>,
}

/// Outcome-dependent projections for a [`PenaltyPath`].
#[derive(Debug, Clone)]
pub struct PathOutcome {
    projected: DVector<f64>,
    linear: [f64; 2],
}

/// Evaluation points prepared for a [`PenaltyPath`].
#[derive(Debug, Clone)]
pub struct PathPredictor {
    points: Vec<f64>,
    cubic: DMatrix<f64>,
}

impl PenaltyPath {
    pub fn new(ctx: &FitContext) -> Result<Self> {
        let z = &ctx.design.zdesign;
        let q = orthogonal_complement(z);
        let g = q.tr_mul(&(&ctx.omega_inv * &q));
        let g = (&g + g.transpose()) * 0.5;
        let chol = g.cholesky().ok_or(Error::Conditioning {
            condition: f64::INFINITY,
        })?;
        let r = chol.l();
        let f = q.tr_mul(&(&ctx.design.e * &q));
        // R^-1 F R^-T
        let x = r.solve_lower_triangular(&f).ok_or(Error::Conditioning {
            condition: f64::INFINITY,
        })?;
        let ft = r.solve_lower_triangular(&x.transpose()).ok_or(Error::Conditioning {
            condition: f64::INFINITY,
        })?;
        let ft = (&ft + ft.transpose()) * 0.5;
        let eig = SymmetricEigen::new(ft);
        let rt_inv_u = r
            .transpose()
            .solve_upper_triangular(&eig.eigenvectors)
            .ok_or(Error::Conditioning {
                condition: f64::INFINITY,
            })?;
        let basis = &q * rt_inv_u;
        let eigenvalues = eig.eigenvalues.map(|m| m.max(0.0));

        let ztz = z.tr_mul(z);
        let zpinv = ztz.try_inverse().ok_or(Error::Collinear)? * z.transpose();
        let a_from_e = &zpinv * (&ctx.design.e * &basis);
        let a_from_w = &zpinv * (&ctx.omega_inv * &basis);
        Ok(Self {
            knots: ctx.knots.clone(),
            basis,
            eigenvalues,
            zpinv,
            a_from_e,
            a_from_w,
        })
    }

    pub fn outcome(&self, y: &DVector<f64>) -> PathOutcome {
        let lin = &self.zpinv * y;
        PathOutcome {
            projected: self.basis.tr_mul(y),
            linear: [lin[0], lin[1]],
        }
    }

    fn spectral_weights(&self, out: &PathOutcome, lambda: f64) -> DVector<f64> {
        out.projected.zip_map(&self.eigenvalues, |b, m| b / (m + lambda))
    }

    fn linear_part(&self, out: &PathOutcome, c: &DVector<f64>, lambda: f64) -> [f64; 2] {
        let ae = &self.a_from_e * c;
        let aw = &self.a_from_w * c;
        [
            out.linear[0] - ae[0] - lambda * aw[0],
            out.linear[1] - ae[1] - lambda * aw[1],
        ]
    }

    /// `(a, delta)` at `lambda`.
    pub fn coefficients(&self, out: &PathOutcome, lambda: f64) -> ([f64; 2], DVector<f64>) {
        let c = self.spectral_weights(out, lambda);
        let a = self.linear_part(out, &c, lambda);
        (a, &self.basis * c)
    }

    pub fn predictor(&self, points: &[f64]) -> PathPredictor {
        PathPredictor {
            points: points.to_vec(),
            cubic: cross_design(points, &self.knots) * &self.basis,
        }
    }

    /// Spline values at the predictor's points.
    pub fn predict(&self, pred: &PathPredictor, out: &PathOutcome, lambda: f64) -> DVector<f64> {
        let c = self.spectral_weights(out, lambda);
        let a = self.linear_part(out, &c, lambda);
        let mut v = &pred.cubic * c;
        for (vi, &x) in v.iter_mut().zip(pred.points.iter()) {
            *vi += a[0] + a[1] * x;
        }
        v
    }
}
