//! Small dense helpers not provided by nalgebra.

use nalgebra::{DMatrix, DVector};

/// Orthonormal basis of the orthogonal complement of `col_space(x)`.
///
/// `x` is `n x k` with full column rank; the result is `n x (n - k)`.
pub fn orthogonal_complement(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = x.shape();
    let mut work = x.clone();
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(k);
    for c in 0..k {
        let mut v = DVector::zeros(n);
        for r in c..n {
            v[r] = work[(r, c)];
        }
        let norm = v.norm();
        let alpha = if v[c] >= 0.0 { -norm } else { norm };
        v[c] -= alpha;
        let vnorm = v.norm();
        if vnorm > 0.0 {
            v /= vnorm;
        }
        // work <- (I - 2 v v') work
        let proj = work.tr_mul(&v);
        work -= &v * proj.transpose() * 2.0;
        reflectors.push(v);
    }
    // Q = H_0 H_1 ... H_{k-1}; only columns k.. are needed.
    let mut q = DMatrix::zeros(n, n - k);
    for j in 0..(n - k) {
        q[(k + j, j)] = 1.0;
    }
    for v in reflectors.iter().rev() {
        let proj = q.tr_mul(v);
        q -= v * proj.transpose() * 2.0;
    }
    q
}

/// Maximum absolute column sum.
pub fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Hager's estimate of `||A^-1||_1` from solves with `A` and `A'`.
pub fn estimate_inverse_norm1<S, T>(n: usize, solve: S, solve_transpose: T) -> f64
where
    S: Fn(&DVector<f64>) -> Option<DVector<f64>>,
    T: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut estimate = 0.0;
    for _ in 0..5 {
        let Some(y) = solve(&x) else {
            return f64::INFINITY;
        };
        estimate = y.lp_norm(1);
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let Some(z) = solve_transpose(&xi) else {
            return f64::INFINITY;
        };
        let (jmax, zmax) = z.iter().enumerate().fold(
            (0, 0.0f64),
            |acc, (j, v)| if v.abs() > acc.1 { (j, v.abs()) } else { acc },
        );
        if zmax <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(n);
        x[jmax] = 1.0;
    }
    estimate
}
