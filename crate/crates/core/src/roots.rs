//! Bracketed bisection used for threshold calibration.

use crate::error::{Error, Result};

/// Bisection on `[lo, hi]`; `f(lo)` and `f(hi)` must differ in sign.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if !(flo.is_finite() && fhi.is_finite()) || flo.signum() == fhi.signum() {
        return Err(Error::NoSolution(format!(
            "no sign change on [{lo}, {hi}] (f={flo}, {fhi})"
        )));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if !fm.is_finite() {
            return Err(Error::NoSolution(format!("non-finite value at {mid}")));
        }
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bisection on a positive variable, growing `hi` geometrically until a sign
/// change appears (at most `max_expansions` doublings).
pub fn bisect_expanding<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    mut hi: f64,
    tol: f64,
    max_expansions: usize,
) -> Result<f64> {
    let flo = f(lo);
    for _ in 0..=max_expansions {
        let fhi = f(hi);
        if fhi.is_finite() && flo.is_finite() && (fhi.signum() != flo.signum() || fhi == 0.0) {
            return bisect(&f, lo, hi, tol);
        }
        hi *= 2.0;
    }
    Err(Error::NoSolution(format!(
        "no bracket found on [{lo}, {hi}] after {max_expansions} expansions"
    )))
}

/// Scan `[lo, hi]` on `n` uniform cells and bisect the first sign change.
pub fn first_root<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize, tol: f64) -> Result<f64> {
    let step = (hi - lo) / n as f64;
    let mut a = lo;
    let mut fa = f(a);
    for k in 1..=n {
        let b = lo + step * k as f64;
        let fb = f(b);
        if fa.is_finite() && fb.is_finite() && (fa == 0.0 || fa.signum() != fb.signum()) {
            return bisect(&f, a, b, tol);
        }
        a = b;
        fa = fb;
    }
    Err(Error::NoSolution(format!("no root of target on [{lo}, {hi}]")))
}
