//! Natural cubic splines in the representation
//! `g(z) = a0 + a1 z + (1/12) sum_i delta_i |z - Z_i|^3`
//! with `sum delta_i = sum delta_i Z_i = 0`.
//!
//! Knots stay in data order; nothing here requires them sorted or distinct.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::MIN_OBSERVATIONS;
use crate::error::{Error, Result};

/// Matrices built once per regressor vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    /// `n x 2`, rows `(1, Z_i)`.
    pub zdesign: DMatrix<f64>,
    /// `E[i][j] = |Z_i - Z_j|^3 / 12`, maps `delta` to knot values.
    pub e: DMatrix<f64>,
    /// `D[i][j] = sign(Z_i - Z_j) |Z_i - Z_j|^2 / 4`, maps `delta` to knot slopes.
    pub d: DMatrix<f64>,
    /// `n x 2`, rows `(0, 1)`, maps `a` to knot slopes.
    pub o: DMatrix<f64>,
}

impl DesignMatrices {
    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    /// True when the regressor takes at least two distinct values.
    pub fn has_full_rank(&self) -> bool {
        let z = self.zdesign.column(1);
        let first = z[0];
        z.iter().any(|&v| v != first)
    }
}

/// `1(u >= 0) - 1(u < 0)`; zero maps to +1.
#[inline]
pub fn sign(u: f64) -> f64 {
    if u >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn build_design(z: &DVector<f64>) -> Result<DesignMatrices> {
    let n = z.len();
    if n < MIN_OBSERVATIONS {
        return Err(Error::TooFewObservations {
            required: MIN_OBSERVATIONS,
            actual: n,
        });
    }
    let zdesign = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { z[i] });
    let e = DMatrix::from_fn(n, n, |i, j| (z[i] - z[j]).abs().powi(3) / 12.0);
    let d = DMatrix::from_fn(n, n, |i, j| {
        let u = z[i] - z[j];
        0.25 * sign(u) * u * u
    });
    let o = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 0.0 } else { 1.0 });
    Ok(DesignMatrices { zdesign, e, d, o })
}

/// Matrix `|x_r - Z_c|^3 / 12` for evaluation points `x` against knots `Z`.
pub fn cross_design(points: &[f64], knots: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), knots.len(), |r, c| {
        (points[r] - knots[c]).abs().powi(3) / 12.0
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// `M_n` of the in-sample residuals.
    pub mn_value: f64,
    /// `delta' E delta`.
    pub roughness: f64,
    /// `max(|sum delta|, |sum delta Z|)`.
    pub constraint_residual: f64,
    pub jitter_applied: f64,
}

/// A fitted natural cubic spline.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFit {
    /// Intercept and slope of the linear part.
    pub a: [f64; 2],
    pub delta: DVector<f64>,
    pub knots: DVector<f64>,
    pub lambda: f64,
    pub diagnostics: FitDiagnostics,
}

impl SplineFit {
    /// A spline from raw coefficients, with empty diagnostics.
    pub fn from_coefficients(a: [f64; 2], delta: DVector<f64>, knots: DVector<f64>) -> Result<Self> {
        if delta.len() != knots.len() {
            return Err(Error::Dimension(format!(
                "{} coefficients for {} knots",
                delta.len(),
                knots.len()
            )));
        }
        let mut fit = Self {
            a,
            delta,
            knots,
            lambda: 0.0,
            diagnostics: FitDiagnostics::default(),
        };
        fit.diagnostics.constraint_residual = fit.constraint_residual();
        Ok(fit)
    }

    pub fn n(&self) -> usize {
        self.knots.len()
    }

    /// `max(|sum delta_i|, |sum delta_i Z_i|)`.
    pub fn constraint_residual(&self) -> f64 {
        let s0: f64 = self.delta.iter().sum();
        let s1 = self.delta.dot(&self.knots);
        s0.abs().max(s1.abs())
    }

    /// Tolerance used when asserting the natural-spline constraints.
    pub fn constraint_scale(&self) -> f64 {
        1.0 + self.delta.lp_norm(1) * self.knots.amax()
    }

    pub fn evaluate(&self, z: f64) -> f64 {
        let cubic: f64 = self
            .delta
            .iter()
            .zip(self.knots.iter())
            .map(|(d, k)| d * (z - k).abs().powi(3))
            .sum();
        self.a[0] + self.a[1] * z + cubic / 12.0
    }

    /// First derivative, `a1 + (1/4) sum delta_i sign(z - Z_i) (z - Z_i)^2`.
    pub fn evaluate_derivative(&self, z: f64) -> f64 {
        let quad: f64 = self
            .delta
            .iter()
            .zip(self.knots.iter())
            .map(|(d, k)| {
                let u = z - k;
                d * sign(u) * u * u
            })
            .sum();
        self.a[1] + 0.25 * quad
    }

    /// `(1/2) sum delta_i |z - Z_i|`.
    pub fn evaluate_second_derivative(&self, z: f64) -> f64 {
        let lin: f64 = self
            .delta
            .iter()
            .zip(self.knots.iter())
            .map(|(d, k)| d * (z - k).abs())
            .sum();
        0.5 * lin
    }

    pub fn evaluate_many(&self, points: &[f64]) -> Vec<f64> {
        points.iter().map(|&z| self.evaluate(z)).collect()
    }

    /// Fitted values at the knots.
    pub fn knot_values(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.knots.iter().map(|&z| self.evaluate(z)))
    }

    /// Slopes at the knots.
    pub fn knot_derivatives(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.knots.iter().map(|&z| self.evaluate_derivative(z)))
    }

    /// Range `[min Z, max Z]` of the knots.
    pub fn knot_range(&self) -> (f64, f64) {
        (self.knots.min(), self.knots.max())
    }
}

/// `delta' E delta`, the integrated squared second derivative.
pub fn roughness(delta: &DVector<f64>, e: &DMatrix<f64>) -> Result<f64> {
    if e.nrows() != delta.len() || e.ncols() != delta.len() {
        return Err(Error::Dimension(format!(
            "{} coefficients for a {}x{} matrix",
            delta.len(),
            e.nrows(),
            e.ncols()
        )));
    }
    Ok(delta.dot(&(e * delta)))
}
