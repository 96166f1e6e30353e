//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use ivspline::monotone::TiltWeights;
use ivspline::{Dataset, SplineFit};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Smooth nonlinear signal with endogenous-looking instruments.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Dataset {
    let z: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let w = DMatrix::from_fn(n, p, |i, k| 0.7 * z[i] / (k + 1) as f64 + 0.7 * normal(rng));
    let y: Vec<f64> = z
        .iter()
        .map(|&v| (1.5 * v).sin() + 0.5 * v + 0.3 * normal(rng))
        .collect();
    Dataset::new(DVector::from_vec(y), DVector::from_vec(z), w).unwrap()
}

/// Noise-free `sin(1.5 z) + 0.5 z` outcomes, so the interpolant is smooth.
pub fn smooth_dataset(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    let z: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let w: Vec<f64> = z.iter().map(|v| 0.7 * v + 0.7 * normal(rng)).collect();
    let y: Vec<f64> = z.iter().map(|&v| (1.5 * v).sin() + 0.5 * v).collect();
    Dataset::from_slices(&y, &z, &w).unwrap()
}

/// Oscillating signal plus noise: small fits often have slopes of both signs.
pub fn wiggly_dataset(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    let z: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let w: Vec<f64> = z.iter().map(|v| 0.7 * v + 0.7 * normal(rng)).collect();
    let y: Vec<f64> = z
        .iter()
        .map(|&v| (2.5 * v).sin() + 0.3 * v + 0.3 * normal(rng))
        .collect();
    Dataset::from_slices(&y, &z, &w).unwrap()
}

/// `n^-2 prod_k w(d_k)` on instruments standardized with the `n - 1` divisor.
pub fn omega_oracle(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = w.shape();
    let mut ws = w.clone();
    for k in 0..p {
        let col: Vec<f64> = w.column(k).iter().copied().collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        for i in 0..n {
            ws[(i, k)] = (w[(i, k)] - mean) / sd;
        }
    }
    let b = 0.5f64.sqrt();
    DMatrix::from_fn(n, n, |i, j| {
        let mut v = 1.0 / (n * n) as f64;
        for k in 0..p {
            v *= (-(ws[(i, k)] - ws[(j, k)]).abs() / b).exp() / (2.0 * b);
        }
        v
    })
}

pub fn cubic_design(z: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(z.len(), z.len(), |i, j| (z[i] - z[j]).abs().powi(3) / 12.0)
}

/// `r' Omega r + lambda delta' E delta` with `r = Y - a0 - a1 Z - E delta`.
pub fn penalized_objective(ds: &Dataset, omega: &DMatrix<f64>, a: [f64; 2], delta: &DVector<f64>, lambda: f64) -> f64 {
    let e = cubic_design(ds.z());
    let fitted = ds.z().map(|v| a[0] + a[1] * v) + &e * delta;
    let r = ds.y() - fitted;
    (r.transpose() * omega * &r)[0] + lambda * (delta.transpose() * &e * delta)[0]
}

pub struct QpSolution {
    pub a: [f64; 2],
    pub delta: DVector<f64>,
    pub objective: f64,
}

/// Minimizes the penalized objective by eliminating the last two spline
/// coefficients through the linear constraints and solving the normal
/// equations of the remaining unconstrained quadratic.
pub fn qp_oracle(ds: &Dataset, lambda: f64) -> QpSolution {
    let n = ds.n();
    let z = ds.z();
    let omega = omega_oracle(ds.w());
    let e = cubic_design(z);
    // delta = N theta with sum(delta) = sum(delta z) = 0
    let zb = nalgebra::Matrix2::new(1.0, 1.0, z[n - 2], z[n - 1]);
    let zb_inv = zb.try_inverse().unwrap();
    let mut null = DMatrix::zeros(n, n - 2);
    for j in 0..n - 2 {
        null[(j, j)] = 1.0;
        let tail = -(zb_inv * nalgebra::Vector2::new(1.0, z[j]));
        null[(n - 2, j)] = tail[0];
        null[(n - 1, j)] = tail[1];
    }
    let mut x = DMatrix::zeros(n, n);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = z[i];
    }
    x.view_mut((0, 2), (n, n - 2)).copy_from(&(&e * &null));
    let mut h = x.transpose() * &omega * &x;
    let pen = null.transpose() * &e * &null * lambda;
    let mut hv = h.view_mut((2, 2), (n - 2, n - 2));
    hv += pen;
    let g = x.transpose() * &omega * ds.y();
    let beta = h.lu().solve(&g).unwrap();
    let a = [beta[0], beta[1]];
    let delta = &null * beta.rows(2, n - 2);
    let objective = penalized_objective(ds, &omega, a, &delta, lambda);
    QpSolution { a, delta, objective }
}

/// Integral of `g''^2` from the piecewise-linear second derivative.
pub fn exact_roughness(fit: &SplineFit) -> f64 {
    let mut knots: Vec<f64> = fit.knots.iter().copied().collect();
    knots.sort_by(f64::total_cmp);
    knots
        .windows(2)
        .map(|w| {
            let (u, v) = (
                fit.evaluate_second_derivative(w[0]),
                fit.evaluate_second_derivative(w[1]),
            );
            (w[1] - w[0]) * (u * u + u * v + v * v) / 3.0
        })
        .sum()
}

/// Checks every identity a fitted natural spline must satisfy; returns the
/// failures as messages.
pub fn spline_identity_failures(fit: &SplineFit) -> Vec<String> {
    let mut out = Vec::new();
    let (lo, hi) = fit.knot_range();
    let term_scale = |z: f64| -> f64 {
        0.5 * fit
            .delta
            .iter()
            .zip(fit.knots.iter())
            .map(|(d, k)| (d * (z - k)).abs())
            .sum::<f64>()
    };
    for z in [lo - 3.0, lo - 1.0, lo - 0.1, hi + 0.1, hi + 1.0, hi + 3.0] {
        let g2 = fit.evaluate_second_derivative(z);
        if g2.abs() > 1e-10 * term_scale(z).max(f64::MIN_POSITIVE) {
            out.push(format!("g'' = {g2:e} at {z} outside the knots"));
        }
    }
    let cres = fit.constraint_residual();
    if cres > 1e-8 * fit.constraint_scale() {
        out.push(format!("constraint residual {cres:e}"));
    }
    let rough = fit.diagnostics.roughness;
    let exact = exact_roughness(fit);
    if (rough - exact).abs() > 1e-10 * exact.abs().max(f64::MIN_POSITIVE) {
        out.push(format!("roughness {rough:e} vs piecewise integral {exact:e}"));
    }
    // finite differences at points away from the knots
    let h = 1e-5;
    let mut probes = 0;
    let mut k = 0;
    while probes < 10 && k < 1000 {
        k += 1;
        let z = lo + (hi - lo) * ((k as f64 * 0.618_033_988_749_895) % 1.0);
        if fit.knots.iter().any(|&kn| (kn - z).abs() < 10.0 * h) {
            continue;
        }
        probes += 1;
        let d1 = fit.evaluate_derivative(z);
        let fd1 = (fit.evaluate(z + h) - fit.evaluate(z - h)) / (2.0 * h);
        let s1 = 1.0 + d1.abs() + fit.evaluate(z).abs();
        if (d1 - fd1).abs() > 1e-5 * s1 {
            out.push(format!("g'({z}) = {d1} vs difference {fd1}"));
        }
        let d2 = fit.evaluate_second_derivative(z);
        let fd2 = (fit.evaluate_derivative(z + h) - fit.evaluate_derivative(z - h)) / (2.0 * h);
        if (d2 - fd2).abs() > 1e-5 * (1.0 + d2.abs() + d1.abs()) {
            out.push(format!("g''({z}) = {d2} vs difference {fd2}"));
        }
    }
    out
}

/// `M_n(r)` through its integral form: the Laplace weight with scale `b` is
/// `w(0)` times the characteristic function of a Cauchy law with scale `1/b`,
/// so `M_n = w(0) int |n^-1 sum_j r_j exp(i t W_j)|^2 dC(t)`. The integral is
/// computed with adaptive quadrature on `[0, T]` panels and a two-term
/// asymptotic tail. `w` is a single raw instrument column.
pub fn mn_quadrature(r: &[f64], w: &[f64]) -> f64 {
    let n = r.len();
    let mean = w.iter().sum::<f64>() / n as f64;
    let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let ws: Vec<f64> = w.iter().map(|v| (v - mean) / sd).collect();
    let b = 0.5f64.sqrt();
    let density = |t: f64| b / (std::f64::consts::PI * (1.0 + b * b * t * t));
    let integrand = |t: f64| {
        let (mut c, mut s) = (0.0, 0.0);
        for (rj, wj) in r.iter().zip(&ws) {
            c += rj * (t * wj).cos();
            s += rj * (t * wj).sin();
        }
        (c * c + s * s) / (n * n) as f64 * density(t)
    };
    let t_max = 2000.0;
    let width = 1.0;
    let mut body = 0.0;
    let mut lo = 0.0;
    while lo < t_max {
        body += quadrature::integrate(integrand, lo, lo + width, 1e-14).integral;
        lo += width;
    }
    // tail of each pair term cos(t d) C'(t) beyond T
    let c0 = density(t_max);
    let c1 = -2.0 * b * b * t_max * c0 / (1.0 + b * b * t_max * t_max);
    let mut tail = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = ws[i] - ws[j];
            let term = if d == 0.0 {
                (std::f64::consts::FRAC_PI_2 - (b * t_max).atan()) / std::f64::consts::PI
            } else {
                -(d * t_max).sin() * c0 / d - (d * t_max).cos() * c1 / (d * d)
            };
            tail += r[i] * r[j] * term;
        }
    }
    tail /= (n * n) as f64;
    2.0 * (body + tail) / (2.0 * b)
}

/// `s L diag(Y)`, the unnormalized tilt constraint rows.
pub fn tilt_constraints(l: &DMatrix<f64>, y: &DVector<f64>, sign: f64) -> DMatrix<f64> {
    DMatrix::from_fn(l.nrows(), l.ncols(), |k, i| sign * l[(k, i)] * y[i])
}

/// Dirichlet draws kept when `A q >= 0`, with mean `center` (uniform when
/// `None`). Concentrations rise from diffuse to tight when acceptance is rare.
pub fn feasible_samples(
    rng: &mut ChaCha8Rng,
    a: &DMatrix<f64>,
    center: Option<&[f64]>,
    count: usize,
    max_draws: usize,
) -> Vec<DVector<f64>> {
    let n = a.ncols();
    let mean: Vec<f64> = center.map_or_else(|| vec![1.0 / n as f64; n], |c| c.to_vec());
    let mut out = Vec::new();
    let per_level = max_draws / 4;
    for scale in [1.0, 10.0, 100.0, 1000.0] {
        let gammas: Vec<_> = mean
            .iter()
            .map(|m| rand_distr::Gamma::new((scale * n as f64 * m).max(1e-3), 1.0).unwrap())
            .collect();
        for _ in 0..per_level {
            let e: Vec<f64> = gammas.iter().map(|g| rng.sample(g)).collect();
            let total: f64 = e.iter().sum();
            let q = DVector::from_iterator(n, e.iter().map(|v| v / total));
            if q.iter().all(|&v| v > 0.0) && (a * &q).iter().all(|&s| s >= 0.0) {
                out.push(q);
                if out.len() == count {
                    return out;
                }
            }
        }
    }
    out
}

/// Lower bound on the optimal tilt objective from the Lagrangian dual at
/// the reported multipliers: for `c = A' kappa` and `nu > max c`,
/// `max sum sqrt(n p) <= nu + (n/4) sum 1/(nu - c_i)`.
pub fn dual_lower_bound(a: &DMatrix<f64>, weights: &TiltWeights) -> f64 {
    let n = a.ncols();
    let mut c = DVector::zeros(n);
    for k in 0..a.nrows() {
        if weights.row_scales[k] > 0.0 {
            c += a.row(k).transpose() * (weights.multipliers[k] / weights.row_scales[k]);
        }
    }
    let nf = n as f64;
    let dual = |nu: f64| nu + 0.25 * nf * c.iter().map(|ci| 1.0 / (nu - ci)).sum::<f64>();
    // the dual is convex in nu; bisect on its derivative
    let cmax = c.max();
    let slope = |nu: f64| 1.0 - 0.25 * nf * c.iter().map(|ci| (nu - ci).powi(-2)).sum::<f64>();
    let mut lo = cmax + 1e-12;
    let mut hi = cmax + 1.0;
    while slope(hi) < 0.0 {
        hi = cmax + 2.0 * (hi - cmax);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    nf - dual(0.5 * (lo + hi))
}

pub fn tilt_value(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    n - p.iter().map(|v| (n * v).sqrt()).sum::<f64>()
}
