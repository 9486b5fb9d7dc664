//! Convergence curves: logging schedule, slope fits, and CSV output.

use std::io::Write;

use crate::error::{BenchError, BenchResult};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub iter: usize,
    pub metric: f64,
    pub wall_ns: u64,
    /// The fitter failed or the metric stopped being finite; ends the curve.
    pub diverged: bool,
}

/// Every iteration below 10³, then every 10th.
pub fn should_log(iter: usize) -> bool {
    iter < 1000 || iter.is_multiple_of(10)
}

/// Least-squares slope of `log(metric)` against `log(iter)` over points
/// with `iter ∈ [lo, hi]`.
pub fn fit_loglog_slope(points: &[CurvePoint], lo: usize, hi: usize) -> BenchResult<f64> {
    let sel: Vec<&CurvePoint> = points.iter().filter(|p| p.iter >= lo.max(1) && p.iter <= hi).collect();
    if sel.len() < 10 {
        return Err(BenchError::TooFewPoints(sel.len()));
    }
    let mut xy = Vec::with_capacity(sel.len());
    for p in sel {
        if !(p.metric > 0.0) || p.diverged {
            return Err(BenchError::NonPositiveMetric { iter: p.iter, metric: p.metric });
        }
        xy.push(((p.iter as f64).ln(), p.metric.ln()));
    }
    Ok(linear_fit(&xy).0)
}

/// Slope, intercept and R² of an ordinary least-squares line.
pub fn linear_fit(xy: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = xy.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// C-style `%.17g`.
pub fn format_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    const P: i32 = 17;
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mant, exp) = sci.split_once('e').expect("exponent in scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let mant = trim_fraction(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        trim_fraction(&format!("{:.*}", (P - 1 - exp) as usize, x)).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub const CSV_HEADER: &str = "scenario,method,seed,iter,metric,wall_ns";

/// Writes the header and one LF-terminated row per point.
pub fn write_csv<W: Write>(out: &mut W, scenario: &str, method: &str, seed: u64, points: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for p in points {
        writeln!(out, "{scenario},{method},{seed},{},{},{}", p.iter, format_g17(p.metric), p.wall_ns)?;
    }
    Ok(())
}
