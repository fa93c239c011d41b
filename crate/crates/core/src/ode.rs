//! Classical fourth-order Runge-Kutta for scalar ODEs `dy/dx = g(x, y)`.


use crate::error::{Error, Result};

/// One RK4 step of size `h` (negative `h` integrates backward).
pub fn rk4_step<G>(g: &mut G, x: f64, y: f64, h: f64) -> Result<f64>
where
    G: FnMut(f64, f64) -> Result<f64>,
{
    let k1 = g(x, y)?;
    let k2 = g(x + 0.5 * h, y + 0.5 * h * k1)?;
    let k3 = g(x + 0.5 * h, y + 0.5 * h * k2)?;
    let k4 = g(x + h, y + h * k3)?;
    Ok(y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// Step with a single level of halving.
///
/// The full step is compared against two half steps; when they disagree by
/// more than `spike_tol` the two half steps are kept (they are the more
/// accurate answer). If the half steps split once more still disagree by
/// more than `spike_tol`, the step is declared an underflow.
pub fn guarded_step<G>(g: &mut G, x: f64, y: f64, h: f64, spike_tol: f64) -> Result<(f64, bool)>
where
    G: FnMut(f64, f64) -> Result<f64>,
{
    let full = rk4_step(g, x, y, h)?;
    if !spike_tol.is_finite() {
        return Ok((full, false));
    }
    let mid = rk4_step(g, x, y, 0.5 * h)?;
    let half = rk4_step(g, x + 0.5 * h, mid, 0.5 * h)?;
    let err = (full - half).abs();
    if err <= spike_tol {
        return Ok((full, false));
    }
    // one more level to confirm the halved answer is trustworthy
    let mut yq = y;
    for i in 0..4 {
        yq = rk4_step(g, x + 0.25 * h * i as f64, yq, 0.25 * h)?;
    }
    let err2 = (yq - half).abs();
    if err2 > spike_tol {
        return Err(Error::StepUnderflow { x, error: err2 });
    }
    Ok((yq, true))
}
