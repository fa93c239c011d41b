//! Bracketed root finding for monotone scalar functions.


use crate::error::{Error, Result};

/// Root of a monotone `f` on `[lo, hi]`: bisection to a coarse bracket, then secant polish.
///
/// `tol` is absolute in the argument. `f` may fail; failures propagate.
pub fn monotone_root<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return Err(Error::NotBracketed {
            lo: a,
            hi: b,
            f_lo: fa,
            f_hi: fb,
        });
    }
    // bisection until the bracket is small relative to the start
    let coarse = ((b - a) * 1e-3).max(tol);
    let mut iters = 0;
    while b - a > coarse && iters < 200 {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
            fb = fm;
        }
        iters += 1;
    }
    // safeguarded secant (regula falsi with bisection fallback)
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        let mut x = b - fb * (b - a) / (fb - fa);
        if !(x > a && x < b) || !x.is_finite() {
            x = 0.5 * (a + b);
        }
        let fx = f(x)?;
        if fx == 0.0 {
            return Ok(x);
        }
        let shrink_before = b - a;
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
        // if the secant stalls on one side, take a bisection step
        if b - a > 0.5 * shrink_before {
            let m = 0.5 * (a + b);
            let fm = f(m)?;
            if fm == 0.0 {
                return Ok(m);
            }
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                b = m;
                fb = fm;
            }
        }
        // stop once the secant estimate moves by less than tol
        let est = b - fb * (b - a) / (fb - fa);
        if (est - x).abs() < 0.25 * tol && est > a && est < b {
            return Ok(est);
        }
    }
    Ok(if fa.abs() < fb.abs() { a } else { b })
}
