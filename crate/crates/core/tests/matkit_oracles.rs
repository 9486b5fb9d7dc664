mod common;

use common::*;
use hessfit_core::matkit::*;
use hessfit_core::matrix::Matrix;
use hessfit_core::rng::SeededRng;
use proptest::prelude::*;

#[test]
fn spectral_estimate_brackets_svd_on_gaussian_100() {
    let mut rng = SeededRng::new(20);
    for _ in 0..20 {
        let a = rng.normal_matrix(100, 100);
        let s = sigma_max(&a);
        let e = estimate_spectral_norm(&a, 32, 4, &mut rng).unwrap();
        assert!(e <= s * (1.0 + 1e-10), "estimate {e} above sigma {s}");
        assert!(e >= 0.9 * s, "estimate {e} below 0.9 sigma {s}");
    }
}

#[test]
fn refined_estimate_is_tight() {
    let mut rng = SeededRng::new(21);
    for n in [5, 20, 64] {
        let q = rng.normal_matrix(n, n);
        let r = &q.transpose() - &q;
        let s = sigma_max(&r);
        let e = estimate_spectral_norm_refined(&r, 32, 1, 1e-9, 500, &mut rng).unwrap();
        assert!(e <= s * (1.0 + 1e-10) && e >= s * (1.0 - 1e-4), "n={n} {e} vs {s}");
    }
}

#[test]
fn sym_eig_residual_and_order() {
    let mut rng = SeededRng::new(22);
    for n in [1, 2, 7, 30] {
        let a = random_symmetric(n, &mut rng);
        let e = sym_eig(&a).unwrap();
        let v = &e.vectors;
        let lam = Matrix::from_diag(&e.values);
        let res = &a.matmul(v) - &v.matmul(&lam);
        assert!(res.frobenius_norm() <= 1e-8 * a.frobenius_norm().max(1e-300));
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let mut oracle: Vec<f64> = to_na(&a).symmetric_eigen().eigenvalues.iter().copied().collect();
        oracle.sort_by(f64::total_cmp);
        for (x, y) in e.values.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-10 * (1.0 + y.abs()));
        }
    }
}

#[test]
fn qr_factor_reconstructs() {
    let mut rng = SeededRng::new(23);
    for n in [1, 3, 10, 50] {
        let a = rng.normal_matrix(n, n);
        let r = qr_upper_factor(&a).unwrap();
        assert!(r.is_upper_triangular());
        assert!(r.diag().iter().all(|&d| d >= 0.0));
        // AᵀA = RᵀR identifies R up to row signs, which are fixed by the convention.
        let lhs = a.tr_matmul(&a);
        let rhs = r.tr_matmul(&r);
        assert!((&lhs - &rhs).frobenius_norm() <= 1e-10 * lhs.frobenius_norm());
        let omega = a.matmul(&inverse(&r).unwrap());
        assert!(orthogonality_defect(&omega) < 1e-9);
    }
}

#[test]
fn procrustes_defect_and_trace_rise() {
    let mut rng = SeededRng::new(24);
    for order in [RotationOrder::Second, RotationOrder::Third, RotationOrder::Fourth] {
        for trial in 0..40 {
            let n = [2, 3, 8, 20][trial % 4];
            let mut q = rng.normal_matrix(n, n);
            if trial % 3 == 0 {
                q.add_diag(3.0);
            }
            let out = procrustes_rotate(&q, order).unwrap();
            let omega = out.matmul(&inverse(&q).unwrap());
            let mut g = omega.tr_matmul(&omega);
            g.add_diag(-1.0);
            let defect = sigma_max(&g);
            assert!(defect <= 1e-3, "{order:?} n={n} defect {defect}");
            assert!(out.trace() >= q.trace(), "{order:?} trace fell");
        }
    }
}

#[test]
fn iterated_rotations_reach_polar_factor() {
    let mut rng = SeededRng::new(25);
    for order in [RotationOrder::Second, RotationOrder::Third, RotationOrder::Fourth] {
        let mut q = rng.normal_matrix(6, 6);
        q.add_diag(2.5);
        if hessfit_core::matkit::Lu::new(&q).unwrap().det() < 0.0 {
            q.row_mut(0).iter_mut().for_each(|x| *x = -*x);
        }
        for _ in 0..2000 {
            q = procrustes_rotate(&q, order).unwrap();
        }
        let asym = (&q - &q.transpose()).frobenius_norm() / q.frobenius_norm();
        assert!(asym <= 1e-6, "{order:?} asymmetry {asym}");
        assert!(sym_eig(&q.symmetrized()).unwrap().min() > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_bounds_bracket_sigma(seed in any::<u64>(), r in 1usize..12, c in 1usize..12) {
        let a = SeededRng::new(seed).normal_matrix(r, c);
        let b = spectral_norm_bounds(&a).unwrap();
        let s = sigma_max(&a);
        prop_assert!(b.lower <= s * (1.0 + 1e-12));
        prop_assert!(s <= b.upper * (1.0 + 1e-12));
    }

    #[test]
    fn estimate_between_alpha_and_sigma(seed in any::<u64>(), r in 1usize..15, c in 1usize..15, k in 1usize..6, it in 1usize..4) {
        let mut rng = SeededRng::new(seed);
        let a = rng.normal_matrix(r, c);
        let e = estimate_spectral_norm(&a, k, it, &mut rng).unwrap();
        let b = spectral_norm_bounds(&a).unwrap();
        let s = sigma_max(&a);
        prop_assert!(e <= s * (1.0 + 1e-10));
        prop_assert!(e >= b.lower * (1.0 - 1e-12));
    }

    #[test]
    fn qr_approx_is_second_order(seed in any::<u64>(), n in 1usize..8, scale in 1e-6f64..1e-3) {
        let mut rng = SeededRng::new(seed);
        let mut delta = rng.normal_matrix(n, n).symmetrized();
        let nd = sigma_max(&delta);
        if nd > 0.0 {
            delta.scale_mut(scale / nd);
        }
        let mut a = delta.clone();
        a.add_diag(1.0);
        let exact = qr_upper_factor(&a).unwrap();
        let approx = qr_upper_approx(&delta, false);
        prop_assert!(max_diff(&exact, &approx) <= 10.0 * scale * scale);
    }

    #[test]
    fn newton_schulz_quadratic_ratio(seed in any::<u64>(), n in 1usize..6, c in 0.05f64..1.0) {
        const BOUND: f64 = 1.780_776_406_404_415;
        let mut rng = SeededRng::new(seed);
        let h = random_spd(n, 20.0, &mut rng);
        let hsq = h.matmul(&h);
        let e = sym_eig(&h).unwrap();
        // Scale so λ(HP₀) spans (0, 1.56).
        let mut p = Matrix::scaled_identity(n, c * 1.56 / e.max());
        let resid = |p: &Matrix| {
            let mut r = h.matmul(p);
            r.add_diag(-1.0);
            sigma_max(&r)
        };
        let mut r0 = resid(&p);
        for _ in 0..60 {
            p = newton_schulz_step(&p, &hsq).unwrap();
            let r1 = resid(&p);
            if r0 < 1e-4 {
                break;
            }
            prop_assert!(r1 < r0);
            prop_assert!(r1 / (r0 * r0) <= BOUND + 1e-9);
            r0 = r1;
        }
    }
}


