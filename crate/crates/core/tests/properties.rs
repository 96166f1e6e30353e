//! Invariance and equivariance properties checked on generated inputs.

mod common;

use ivspline::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn instrument_column() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 5..12).prop_filter("distinct values", |v| {
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        s.windows(2).all(|w| w[1] - w[0] > 1e-3)
    })
}

fn dataset_from_w(w: &[f64]) -> Dataset {
    let n = w.len();
    let z: Vec<f64> = (0..n).map(|i| (i as f64 * 0.77).sin() * 2.0 + i as f64 * 0.1).collect();
    let y: Vec<f64> = z.iter().zip(w).map(|(a, b)| a.cos() + 0.3 * b).collect();
    Dataset::from_slices(&y, &z, w).unwrap()
}

fn max_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn standardization_is_affine_equivariant(w in instrument_column(), scale in 0.01f64..100.0, shift in -50.0f64..50.0) {
        let m = DMatrix::from_column_slice(w.len(), 1, &w);
        let moved = m.map(|v| scale * v + shift);
        let a = standardize_instruments(&m).unwrap();
        let b = standardize_instruments(&moved).unwrap();
        prop_assert!((a.w_std - b.w_std).amax() < 1e-9);
    }

    #[test]
    fn omega_ignores_translation(w in instrument_column(), shift in -20.0f64..20.0) {
        for standardize in [true, false] {
            let spec = KernelSpec { standardize, ..KernelSpec::default() };
            let moved: Vec<f64> = w.iter().map(|v| v + shift).collect();
            let a = build_omega(&dataset_from_w(&w), &spec).unwrap();
            let b = build_omega(&dataset_from_w(&moved), &spec).unwrap();
            prop_assert!(max_rel(a.values(), b.values()) < 1e-10);
        }
    }

    #[test]
    fn standardized_omega_ignores_rescaling(w in instrument_column(), scale in 0.01f64..100.0) {
        let scaled: Vec<f64> = w.iter().map(|v| v * scale).collect();
        let spec = KernelSpec::default();
        let a = build_omega(&dataset_from_w(&w), &spec).unwrap();
        let b = build_omega(&dataset_from_w(&scaled), &spec).unwrap();
        prop_assert!(max_rel(a.values(), b.values()) < 1e-10);
    }

    #[test]
    fn omega_is_positive_definite(w in instrument_column()) {
        let om = build_omega(&dataset_from_w(&w), &KernelSpec::default()).unwrap();
        let eig = om.values().clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() >= -1e-10 * eig.amax());
        let r = DVector::from_fn(w.len(), |i, _| (i as f64).cos());
        prop_assert!(mn_criterion(&r, &om).unwrap() >= -1e-12);
    }

    #[test]
    fn fit_scales_with_outcome(seed in 0u64..1000, c in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0]) {
        let mut rng = common::rng(seed);
        let ds = common::random_dataset(&mut rng, 12, 1);
        let spec = KernelSpec::default();
        let base = fit(&ds, 0.05, &spec).unwrap();
        let scaled = fit(&ds.with_y(ds.y() * c).unwrap(), 0.05, &spec).unwrap();
        let tol = 1e-10 * (1.0 + base.delta.amax().max(base.a[0].abs()).max(base.a[1].abs())) * c.abs();
        prop_assert!((&scaled.delta - &base.delta * c).amax() < tol);
        prop_assert!((scaled.a[0] - c * base.a[0]).abs() < tol);
        prop_assert!((scaled.a[1] - c * base.a[1]).abs() < tol);
        let fv = (scaled.knot_values() - base.knot_values() * c).amax();
        prop_assert!(fv < 1e-10 * base.knot_values().amax() * c.abs());
    }

    #[test]
    fn row_permutation_permutes_coefficients(seed in 0u64..1000, rot in 1usize..9) {
        let mut rng = common::rng(seed);
        let ds = common::random_dataset(&mut rng, 10, 2);
        let n = ds.n();
        // 3 is coprime to 10, so this is a permutation
        let order: Vec<usize> = (0..n).map(|i| (i * 3 + rot) % n).collect();
        let spec = KernelSpec::default();
        let base = fit(&ds, 0.1, &spec).unwrap();
        let perm = fit(&ds.select(&order).unwrap(), 0.1, &spec).unwrap();
        for (k, &i) in order.iter().enumerate() {
            prop_assert!((perm.delta[k] - base.delta[i]).abs() < 1e-9 * (1.0 + base.delta.amax()));
        }
        for z in [-2.0, -0.3, 0.4, 1.7] {
            prop_assert!((perm.evaluate(z) - base.evaluate(z)).abs() < 1e-9 * (1.0 + base.evaluate(z).abs()));
        }
    }
}
