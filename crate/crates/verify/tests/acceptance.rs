//! One test per acceptance criterion. Each prints its pass/fail line; the
//! tolerances are the constants in `hessfit_bench::verify`.

use std::io::Write;
use std::sync::Mutex;

use hessfit_bench::verify::criterion;

// The long scenario checks have wall-clock budgets; run them one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn check(id: u8) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let report = criterion(id).expect("criterion registered").run();
    // Straight to the handle so the line shows even for passing tests.
    let _ = writeln!(std::io::stderr(), "{report}");
    assert!(report.passed, "criterion {id} failed");
}

#[test]
fn criterion_01_rate_separation() {
    check(1);
}

#[test]
fn criterion_02_newton_quadratic_ratio() {
    check(2);
}

#[test]
fn criterion_03_spd_linear_rate() {
    check(3);
}

#[test]
fn criterion_04_strong_convexity_bound() {
    check(4);
}

#[test]
fn criterion_05_tridiagonal_curves() {
    check(5);
}

#[test]
fn criterion_06_gradient_whitening() {
    check(6);
}

#[test]
fn criterion_07_tensor_decomposition() {
    check(7);
}

#[test]
fn criterion_08_oracle_equivalences() {
    check(8);
}

#[test]
fn criterion_09_numerics() {
    check(9);
}

#[test]
fn criterion_10_determinism() {
    check(10);
}
