mod common;

use common::{oracle_pow, random_spd, random_symmetric};
use hessfit_core::classic_fit::{
    bfgs_step, euclid_sgd_step, riccati_solve, spd_manifold_step, RunningClosedFormState,
};
use hessfit_core::crit::HvpPair;
use hessfit_core::matrix::Matrix;
use hessfit_core::rng::SeededRng;
use proptest::prelude::*;

#[test]
fn riccati_residual_on_random_spd() {
    let mut rng = SeededRng::new(8);
    for _ in 0..20 {
        let a = random_spd(6, 50.0, &mut rng);
        let b = random_spd(6, 50.0, &mut rng);
        let p = riccati_solve(&b, &a).unwrap();
        let res = &p.matmul(&a).matmul(&p) - &b;
        assert!(res.frobenius_norm() <= 1e-8 * b.frobenius_norm());
        assert!(p.asymmetry() < 1e-14);
    }
}

#[test]
fn riccati_matches_closed_form_limit_when_commuting() {
    // With B = I the Riccati solution is A^{-1/2}, the closed-form limit.
    let mut rng = SeededRng::new(3);
    let a = random_spd(4, 20.0, &mut rng);
    let p = riccati_solve(&Matrix::identity(4), &a).unwrap();
    assert!((&p - &oracle_pow(&a, -0.5)).max_abs() < 1e-12);
    let st = RunningClosedFormState::from_accumulator(a, 0.999).unwrap();
    assert!((&p - &st.preconditioner().unwrap()).max_abs() < 1e-12);
}

#[test]
fn closed_form_converges_on_exact_pairs() {
    let mut rng = SeededRng::new(4);
    let h = random_spd(3, 5.0, &mut rng);
    let mut st = RunningClosedFormState::new(&Matrix::identity(3), 1.0).unwrap();
    for _ in 0..20_000 {
        let hv = h.matvec(&rng.normal_vec(3));
        st.update(&hv).unwrap();
    }
    let p = st.preconditioner().unwrap();
    let mut r = p.matmul(&h);
    r.add_diag(-1.0);
    assert!(r.frobenius_norm() < 0.05, "{}", r.frobenius_norm());
}

fn setup(n: usize) -> impl Strategy<Value = (Matrix, HvpPair)> {
    any::<u64>().prop_map(move |seed| {
        let mut rng = SeededRng::new(seed);
        let p = random_spd(n, 10.0, &mut rng);
        let h = random_spd(n, 10.0, &mut rng);
        let v = rng.normal_vec(n);
        let pair = HvpPair::exact(&h, v).unwrap();
        (p, pair)
    })
}

fn rel_asym(m: &Matrix) -> f64 {
    m.asymmetry() / m.max_abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fitters_preserve_symmetry((p, pair) in setup(5)) {
        prop_assert!(rel_asym(&euclid_sgd_step(&p, &pair, 1e-3).unwrap()) <= 1e-12);
        prop_assert!(rel_asym(&spd_manifold_step(&p, &pair, 1e-3).unwrap()) <= 1e-12);
        if let Ok(q) = bfgs_step(&p, &pair) {
            prop_assert!(rel_asym(&q) <= 1e-12);
        }
    }

    #[test]
    fn euclid_symmetric_on_indefinite_symmetric(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let mut p = random_symmetric(4, &mut rng);
        p.add_diag(10.0);
        let pair = HvpPair::new(rng.normal_vec(4), rng.normal_vec(4)).unwrap();
        let q = euclid_sgd_step(&p, &pair, 0.01).unwrap();
        prop_assert!(q.asymmetry() <= 1e-14 * q.max_abs());
    }

    #[test]
    fn bfgs_secant_holds((p, pair) in setup(4)) {
        let q = bfgs_step(&p, &pair).unwrap();
        let r = q.matvec(&pair.h);
        let err = r.iter().zip(&pair.v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-9 * (1.0 + pair.v.iter().map(|x| x.abs()).fold(0.0, f64::max)));
    }
}
