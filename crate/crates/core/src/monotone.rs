//! Monotone fits by tilting the empirical distribution.
//!
//! The fitted slopes at the knots are linear in the outcome, `g' = L Y`.
//! Tilting looks for simplex weights `p` closest to uniform, in the sense of
//! maximizing `sum_i sqrt(n p_i)`, such that `L (p o Y)` has the requested
//! sign at every knot, then refits on the reweighted outcome `n p o Y`.
//! The tilt program is strictly convex and is solved with a primal log-barrier
//! method (phase I when the uniform weights are infeasible).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::solver::FitContext;
use crate::spline::SplineFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MonotoneDirection {
    Increasing,
    Decreasing,
}

impl MonotoneDirection {
    pub fn sign(self) -> f64 {
        match self {
            MonotoneDirection::Increasing => 1.0,
            MonotoneDirection::Decreasing => -1.0,
        }
    }
}

/// Optimal tilt weights and solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltWeights {
    /// Simplex weights, one per observation.
    pub p: Vec<f64>,
    /// `n - sum_i sqrt(n p_i)`.
    pub objective: f64,
    /// Scaled violation of the first-order conditions.
    pub kkt_residual: f64,
    /// Knots whose slope constraint is binding.
    pub active_constraints: Vec<usize>,
    /// Multipliers of the slope constraints, in units of the row-normalized
    /// constraint `A_k p / max_i |A_ki| >= 0` with `A = s L diag(Y)`.
    pub multipliers: Vec<f64>,
    /// Norm used to scale each constraint row (0 for dropped rows).
    pub row_scales: Vec<f64>,
    pub newton_steps: usize,
}

impl TiltWeights {
    fn uniform(n: usize, row_scales: Vec<f64>) -> Self {
        Self {
            p: vec![1.0 / n as f64; n],
            objective: 0.0,
            kkt_residual: 0.0,
            active_constraints: Vec::new(),
            multipliers: vec![0.0; n],
            row_scales,
            newton_steps: 0,
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.objective == 0.0
    }
}

/// `n - sum_i sqrt(n p_i)`.
pub fn tilt_objective(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    n - p.iter().map(|&v| (n * v.max(0.0)).sqrt()).sum::<f64>()
}

// Centering counts as done when the line search can make no further progress
// and half the squared decrement is already below this.
const LINE_SEARCH_FLOOR: f64 = 1e-8;

// Half squared t-scaled decrement ending the last centering.
const TIGHT_DECREMENT: f64 = 1e-22;

/// Barrier and stopping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltSettings {
    pub initial_barrier: f64,
    /// Factor applied to the barrier parameter after each centering.
    pub barrier_reduction: f64,
    pub final_barrier: f64,
    /// Stop centering once half the squared Newton decrement of
    /// `f - mu * sum(log)` drops below this.
    pub decrement_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Slack (in normalized rows) below which a constraint is reported active.
    pub active_tol: f64,
}

impl Default for TiltSettings {
    fn default() -> Self {
        Self {
            initial_barrier: 1.0,
            barrier_reduction: 0.2,
            final_barrier: 1e-10,
            decrement_tol: 1e-10,
            max_outer: 200,
            max_inner: 50,
            active_tol: 1e-6,
        }
    }
}

/// `L` with `L Y` the fitted slopes at the knots.
pub fn derivative_smoother_matrix(ds: &Dataset, lambda: f64, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    derivative_smoother(&FitContext::new(ds, spec)?, lambda)
}

/// `(O, D)` applied to the outcome block of the inverse bordered matrix.
pub fn derivative_smoother(ctx: &FitContext, lambda: f64) -> Result<DMatrix<f64>> {
    let (x_delta, x_a) = ctx.solution_operator(lambda)?;
    let mut l = &ctx.design().d * x_delta;
    for mut row in l.row_iter_mut() {
        row += x_a.row(1);
    }
    Ok(l)
}

/// Constraint rows `s L diag(Y)` scaled to unit max-norm; negligible rows are
/// zeroed and get scale 0.
fn constraint_rows(l: &DMatrix<f64>, y: &DVector<f64>, dir: MonotoneDirection) -> (DMatrix<f64>, Vec<f64>) {
    let s = dir.sign();
    let mut a = DMatrix::from_fn(l.nrows(), l.ncols(), |k, i| s * l[(k, i)] * y[i]);
    let norms: Vec<f64> = a.row_iter().map(|r| r.amax()).collect();
    let top = norms.iter().copied().fold(0.0, f64::max);
    let mut scales = vec![0.0; norms.len()];
    for (k, &nk) in norms.iter().enumerate() {
        if nk > 1e-14 * top && nk > 0.0 {
            scales[k] = nk;
            a.row_mut(k).scale_mut(1.0 / nk);
        } else {
            a.row_mut(k).fill(0.0);
        }
    }
    (a, scales)
}

/// Smooth convex objective with diagonal Hessian.
trait Objective {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian_diag(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// `n - sqrt(n) sum sqrt(p_i)`.
struct Divergence;

impl Objective for Divergence {
    fn value(&self, x: &DVector<f64>) -> f64 {
        tilt_objective(x.as_slice())
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let rn = (x.len() as f64).sqrt();
        x.map(|v| -0.5 * rn / v.sqrt())
    }
    fn hessian_diag(&self, x: &DVector<f64>) -> DVector<f64> {
        let rn = (x.len() as f64).sqrt();
        x.map(|v| 0.25 * rn / (v * v.sqrt()))
    }
}

/// `-sigma` where `sigma` is the last variable.
struct MaxMinSlack;

impl Objective for MaxMinSlack {
    fn value(&self, x: &DVector<f64>) -> f64 {
        -x[x.len() - 1]
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        g[x.len() - 1] = -1.0;
        g
    }
    fn hessian_diag(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
}

/// Minimize `f(x)` subject to `G x > 0`, `x_i > 0` for `i < positive`, and
/// `e' x = e' x0`, by following the central path.
struct Barrier<'a> {
    g: &'a DMatrix<f64>,
    positive: usize,
    eq: DVector<f64>,
    settings: TiltSettings,
}

struct BarrierState {
    x: DVector<f64>,
    mu: f64,
    steps: usize,
}

impl Barrier<'_> {
    fn slacks(&self, x: &DVector<f64>) -> DVector<f64> {
        self.g * x
    }

    fn strictly_feasible(&self, x: &DVector<f64>) -> bool {
        x.rows(0, self.positive).iter().all(|&v| v > 0.0) && self.slacks(x).iter().all(|&v| v > 0.0)
    }

    fn merit(&self, f: &dyn Objective, x: &DVector<f64>, t: f64) -> f64 {
        let s = self.slacks(x);
        let logs: f64 =
            x.rows(0, self.positive).iter().map(|v| v.ln()).sum::<f64>() + s.iter().map(|v| v.ln()).sum::<f64>();
        t * f.value(x) - logs
    }

    /// One centering at barrier `t`; returns `(steps, converged)`.
    /// A `tight` centering runs Newton to the rounding floor of the
    /// `t`-scaled decrement instead of stopping on the `mu`-form tolerance.
    fn center(&self, f: &dyn Objective, x: &mut DVector<f64>, t: f64, tight: bool) -> (usize, bool, f64) {
        let nx = x.len();
        let mut last_dec = f64::INFINITY;
        let mut prev_dec_t = f64::INFINITY;
        for step in 0..self.settings.max_inner {
            let s = self.slacks(x);
            let inv_s = s.map(|v| 1.0 / v);
            let mut grad = f.gradient(x) * t - self.g.tr_mul(&inv_s);
            let mut hdiag = f.hessian_diag(x) * t;
            for i in 0..self.positive {
                grad[i] -= 1.0 / x[i];
                hdiag[i] += 1.0 / (x[i] * x[i]);
            }
            let mut gs = self.g.clone();
            for (k, mut row) in gs.row_iter_mut().enumerate() {
                row.scale_mut(inv_s[k]);
            }
            let mut h = gs.tr_mul(&gs);
            for i in 0..nx {
                h[(i, i)] += hdiag[i];
            }
            let mut kkt = DMatrix::zeros(nx + 1, nx + 1);
            kkt.view_mut((0, 0), (nx, nx)).copy_from(&h);
            kkt.view_mut((0, nx), (nx, 1)).copy_from(&self.eq);
            kkt.view_mut((nx, 0), (1, nx)).copy_from(&self.eq.transpose());
            let mut rhs = DVector::zeros(nx + 1);
            rhs.rows_mut(0, nx).copy_from(&(-&grad));
            let Some(sol) = kkt.lu().solve(&rhs) else {
                return (step, false, last_dec);
            };
            let dx = sol.rows(0, nx).into_owned();
            let dec_t = dx.dot(&(&h * &dx));
            // decrement of f - mu * sum(log), the barrier function in mu form
            let dec2 = dec_t / t;
            last_dec = dec2;
            if !dec2.is_finite() {
                return (step, false, dec2);
            }
            if tight {
                if 0.5 * dec_t <= TIGHT_DECREMENT || (dec_t < 1e-6 && dec_t > 0.5 * prev_dec_t) {
                    return (step, true, dec2);
                }
            } else if 0.5 * dec2 <= self.settings.decrement_tol {
                return (step, true, dec2);
            }
            prev_dec_t = dec_t;
            // largest step keeping every barrier argument positive
            let ds = self.g * &dx;
            let mut alpha: f64 = 1.0;
            for i in 0..self.positive {
                if dx[i] < 0.0 {
                    alpha = alpha.min(-0.99 * x[i] / dx[i]);
                }
            }
            for k in 0..s.len() {
                if ds[k] < 0.0 {
                    alpha = alpha.min(-0.99 * s[k] / ds[k]);
                }
            }
            // inside the quadratic region the full step is feasible and
            // needs no merit comparison, which loses resolution at large t
            if dec_t < 0.25 && alpha >= 1.0 {
                let trial = &*x + &dx;
                if self.strictly_feasible(&trial) {
                    *x = trial;
                    continue;
                }
            }
            let f0 = self.merit(f, x, t);
            let slope = grad.dot(&dx);
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &*x + &dx * alpha;
                if self.strictly_feasible(&trial) {
                    let f1 = self.merit(f, &trial, t);
                    if f1 <= f0 + 0.25 * alpha * slope {
                        *x = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // no representable decrease left; centred to working precision
                return (step + 1, 0.5 * dec2 <= LINE_SEARCH_FLOOR, dec2);
            }
        }
        (self.settings.max_inner, false, last_dec)
    }

    /// Follows the central path until the barrier parameter falls below the
    /// final value, or `stop` holds after a centering.
    fn run(&self, f: &dyn Objective, x0: DVector<f64>, stop: impl Fn(&DVector<f64>) -> bool) -> Result<BarrierState> {
        let mut x = x0;
        let mut mu = self.settings.initial_barrier;
        let mut steps = 0;
        for _ in 0..self.settings.max_outer {
            let last = mu < self.settings.final_barrier;
            let (k, ok, dec) = self.center(f, &mut x, 1.0 / mu, last);
            steps += k;
            if !ok {
                return Err(Error::Stalled {
                    iterations: steps,
                    barrier: mu,
                    decrement: dec,
                });
            }
            if stop(&x) || last {
                return Ok(BarrierState { x, mu, steps });
            }
            mu *= self.settings.barrier_reduction;
        }
        Err(Error::Stalled {
            iterations: steps,
            barrier: mu,
            decrement: f64::NAN,
        })
    }
}

/// Phase I: maximize the smallest slack over the open simplex.
fn find_interior_point(a: &DMatrix<f64>, settings: TiltSettings) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    let p0 = DVector::from_element(n, 1.0 / n as f64);
    let s0 = a * &p0;
    let sigma0 = s0.min() - 1.0;
    let mut g = DMatrix::zeros(m, n + 1);
    g.view_mut((0, 0), (m, n)).copy_from(a);
    g.column_mut(n).fill(-1.0);
    let mut eq = DVector::from_element(n + 1, 1.0);
    eq[n] = 0.0;
    let mut x0 = DVector::zeros(n + 1);
    x0.rows_mut(0, n).copy_from(&p0);
    x0[n] = sigma0;
    let barrier = Barrier {
        g: &g,
        positive: n,
        eq,
        settings,
    };
    let state = barrier.run(&MaxMinSlack, x0, |x| x[n] > 0.0)?;
    let p = state.x.rows(0, n).into_owned();
    let slack = a * &p;
    if state.x[n] > 0.0 && slack.iter().all(|&v| v > 0.0) {
        return Ok(p);
    }
    let (knot, value) = slack
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
    Err(Error::Infeasible { knot, slack: value })
}

/// Tilt weights for a precomputed slope smoother `l`.
pub fn tilt_with_smoother(
    l: &DMatrix<f64>,
    y: &DVector<f64>,
    dir: MonotoneDirection,
    start: Option<&[f64]>,
    settings: TiltSettings,
) -> Result<TiltWeights> {
    let n = y.len();
    if l.nrows() != n || l.ncols() != n {
        return Err(Error::Dimension(format!(
            "{}x{} smoother for {} outcomes",
            l.nrows(),
            l.ncols(),
            n
        )));
    }
    let (a_full, row_scales) = constraint_rows(l, y, dir);
    let kept: Vec<usize> = (0..n).filter(|&k| row_scales[k] > 0.0).collect();
    let a = a_full.select_rows(&kept);

    let uniform = DVector::from_element(n, 1.0 / n as f64);
    if start.is_none() && (&a * &uniform).iter().all(|&v| v >= 0.0) {
        return Ok(TiltWeights::uniform(n, row_scales));
    }
    let x0 = match start {
        Some(p) => {
            let p = DVector::from_column_slice(p);
            if p.len() != n {
                return Err(Error::Dimension(format!(
                    "start has {} weights for {} rows",
                    p.len(),
                    n
                )));
            }
            let interior = p.iter().all(|&v| v > 0.0) && (&a * &p).iter().all(|&v| v > 0.0);
            if !interior || (p.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(
                    "start is not a strictly feasible simplex point".into(),
                ));
            }
            p
        }
        None => find_interior_point(&a, settings).map_err(|e| match e {
            Error::Infeasible { knot, slack } => Error::Infeasible {
                knot: kept[knot],
                slack,
            },
            other => other,
        })?,
    };

    let barrier = Barrier {
        g: &a,
        positive: n,
        eq: DVector::from_element(n, 1.0),
        settings,
    };
    let state = barrier.run(&Divergence, x0, |_| false)?;
    let mut p = state.x;
    p /= p.sum();

    // Inactive multipliers follow the central path, mu / slack. Active slacks
    // sit at the rounding floor of A p, so their multipliers and the simplex
    // multiplier are recovered from the stationarity equations instead.
    let slack = &a * &p;
    let active: Vec<usize> = (0..slack.len()).filter(|&r| slack[r] <= settings.active_tol).collect();
    let mut kappa = slack.map(|s| state.mu / s);
    let zeta = p.map(|v| state.mu / v);
    let grad = Divergence.gradient(&p);
    let mut target = &grad - &zeta;
    for r in 0..slack.len() {
        if !active.contains(&r) {
            target -= a.row(r).transpose() * kappa[r];
        }
    }
    let mut basis = DMatrix::from_element(n, active.len() + 1, 1.0);
    for (j, &r) in active.iter().enumerate() {
        basis.set_column(j, &a.row(r).transpose());
    }
    let coef = basis
        .clone()
        .svd(true, true)
        .solve(&target, 1e-14)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    for (j, &r) in active.iter().enumerate() {
        kappa[r] = coef[j];
    }
    let stat = &target - &basis * &coef;
    let scale = 1.0 + grad.amax();
    let comp = slack
        .iter()
        .zip(kappa.iter())
        .map(|(s, k)| (s * k).abs())
        .chain(p.iter().zip(zeta.iter()).map(|(v, z)| (v * z).abs()))
        .fold(0.0, f64::max);
    let dual = kappa.iter().map(|&k| (-k).max(0.0)).fold(0.0, f64::max);
    let primal = slack
        .iter()
        .map(|&s| (-s).max(0.0))
        .fold((p.sum() - 1.0).abs(), f64::max);
    let kkt_residual = (stat.amax() / scale).max(comp).max(dual).max(primal);

    let mut multipliers = vec![0.0; n];
    let mut active_constraints = Vec::new();
    for (r, &k) in kept.iter().enumerate() {
        multipliers[k] = kappa[r];
        if active.contains(&r) {
            active_constraints.push(k);
        }
    }
    Ok(TiltWeights {
        objective: tilt_objective(p.as_slice()),
        p: p.iter().copied().collect(),
        kkt_residual,
        active_constraints,
        multipliers,
        row_scales,
        newton_steps: state.steps,
    })
}

/// Tilt weights for the fit of `ds` at `lambda`.
pub fn tilt(ds: &Dataset, lambda: f64, spec: &KernelSpec, dir: MonotoneDirection) -> Result<TiltWeights> {
    let ctx = FitContext::new(ds, spec)?;
    let l = derivative_smoother(&ctx, lambda)?;
    tilt_with_smoother(&l, ds.y(), dir, None, TiltSettings::default())
}

/// Tilts, then refits on `n p o Y`. Diagnostics refer to the original outcome.
pub fn monotone_fit_with(ctx: &FitContext, lambda: f64, dir: MonotoneDirection) -> Result<(SplineFit, TiltWeights)> {
    let l = derivative_smoother(ctx, lambda)?;
    let y = ctx.y();
    let weights = tilt_with_smoother(&l, y, dir, None, TiltSettings::default())?;
    let n = y.len() as f64;
    let tilted = DVector::from_iterator(y.len(), y.iter().zip(&weights.p).map(|(v, p)| n * p * v));
    let raw = ctx.fit_outcome(&tilted, lambda)?;
    let fit = ctx.package(raw.a, raw.delta, y, lambda);
    Ok((fit, weights))
}

/// Monotone fit at `lambda`.
pub fn fit_monotone(ds: &Dataset, lambda: f64, spec: &KernelSpec, dir: MonotoneDirection) -> Result<SplineFit> {
    let ctx = FitContext::new(ds, spec)?;
    Ok(monotone_fit_with(&ctx, lambda, dir)?.0)
}
