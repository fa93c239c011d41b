//! Characteristic curves of `dw/da_0 + t(a_j, a_0) dw/da_j = 0` and the level
//! functions built from them.
//!
//! `omega_j(a_j, a_0)` is the `a_0` coordinate where the characteristic
//! through `(a_0, a_j)` crosses `a_j = a_ref`. It is evaluated from a family
//! of traces `a_0 = psi_c(a_j)` (one per level `c`), integrated in the `a_j`
//! variable on a lattice that contains `a_ref` exactly, so `psi_c(a_ref) = c`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Interval;
use crate::ode::{guarded_step, rk4_step};
use crate::root::monotone_root;
use crate::symmetry::{RatioFunction, Rect};
#[allow(unused_imports)]
use num_traits::Float;

/// Integrated characteristic in the `(a_0, a_j)` plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    /// `(a_0, a_j)` after every step, starting point first.
    pub points: Vec<(f64, f64)>,
    /// Set when the trace left the ratio's domain rectangle and was cut there.
    pub hit_boundary: bool,
    pub halvings: usize,
}

impl Path {
    pub fn end(&self) -> (f64, f64) {
        *self.points.last().expect("paths hold their starting point")
    }
}

fn spike_tol(y: f64) -> f64 {
    1e-6 * (1.0 + y.abs())
}

/// RK4 trace of `da_j/da_0 = t(a_j, a_0)` from `start = (a_0, a_j)` to `a_0 = target_a0`.
///
/// The step is shrunk to divide the interval evenly so the last point lands on
/// `target_a0`. Integration stops at the first point outside `t.domain`.
pub fn integrate_characteristic(
    t: &RatioFunction,
    start: (f64, f64),
    target_a0: f64,
    step: f64,
) -> Result<Path> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {step}")));
    }
    let (a0, aj) = start;
    let dom = &t.domain;
    if !(in_interval(&dom.a0, a0) && in_interval(&dom.aj, aj)) {
        return Err(Error::InvalidArgument(format!(
            "start ({a0}, {aj}) is outside the ratio domain"
        )));
    }
    let span = target_a0 - a0;
    let n = ((span.abs() / step).ceil() as usize).max(1);
    let h = span / n as f64;
    let mut g = |x: f64, y: f64| t.try_eval(y, x);
    let mut points = Vec::with_capacity(n + 1);
    points.push((a0, aj));
    let mut y = aj;
    let mut halvings = 0;
    for i in 0..n {
        let x = a0 + h * i as f64;
        let (y_next, halved) = guarded_step(&mut g, x, y, h, spike_tol(y))?;
        halvings += halved as usize;
        let x_next = if i + 1 == n { target_a0 } else { a0 + h * (i + 1) as f64 };
        if !in_interval(&dom.aj, y_next) {
            return Ok(Path {
                points,
                hit_boundary: true,
                halvings,
            });
        }
        y = y_next;
        points.push((x_next, y));
    }
    Ok(Path {
        points,
        hit_boundary: false,
        halvings,
    })
}

fn in_interval(iv: &Interval, x: f64) -> bool {
    let slack = 1e-9 * iv.width();
    x >= iv.lo - slack && x <= iv.hi + slack
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaConfig {
    /// Reference crossing level; defaults to the midpoint of the `a_j` range.
    pub a_ref: Option<f64>,
    /// Fractional enlargement of the `a_j` range on each side.
    pub margin: f64,
    /// Trace step in `a_j`; defaults to 1/512 of the enlarged range, refined
    /// (down to 1/4096) when that range sits close to zero.
    pub step: Option<f64>,
    /// Number of traces (levels).
    pub anchors: usize,
}

impl Default for OmegaConfig {
    fn default() -> Self {
        OmegaConfig {
            a_ref: None,
            margin: 0.2,
            step: None,
            anchors: 401,
        }
    }
}

/// Level function `omega_j`, backed by a lattice of integrated traces.
#[derive(Clone, Debug, PartialEq)]
pub struct OmegaFunction {
    ratio: RatioFunction,
    a_ref: f64,
    /// Domain the function was built for (the field box).
    domain: Rect,
    aj_min: f64,
    step: f64,
    nodes: usize,
    levels: Vec<f64>,
    /// `psi[i * nodes + k]` is trace `i` at lattice node `k`.
    psi: Vec<f64>,
    slope: Vec<f64>,
}

impl OmegaFunction {
    pub fn alternative(&self) -> usize {
        self.ratio.alternative
    }

    pub fn ratio(&self) -> &RatioFunction {
        &self.ratio
    }

    pub fn a_ref(&self) -> f64 {
        self.a_ref
    }

    pub fn domain(&self) -> &Rect {
        &self.domain
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// `a_j` range covered by the trace lattice.
    pub fn aj_range(&self) -> (f64, f64) {
        (self.aj_min, self.aj_min + self.step * (self.nodes - 1) as f64)
    }

    /// Smallest and largest level carried by a trace.
    pub fn level_range(&self) -> (f64, f64) {
        (self.levels[0], *self.levels.last().unwrap())
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Range of `omega` over the build domain (the attained levels).
    pub fn attained_range(&self) -> Result<(f64, f64)> {
        let d = &self.domain;
        Ok((self.eval(d.aj.hi, d.a0.lo)?, self.eval(d.aj.lo, d.a0.hi)?))
    }

    fn locate_aj(&self, aj: f64) -> Result<(usize, f64)> {
        let (lo, hi) = self.aj_range();
        let slack = 1e-12 * (hi - lo);
        if !(aj >= lo - slack && aj <= hi + slack) {
            return Err(Error::Coverage {
                alternative: self.alternative(),
                detail: format!("a_j = {aj} is outside the trace lattice [{lo}, {hi}]"),
            });
        }
        let s = (aj.clamp(lo, hi) - lo) / self.step;
        let k = (s.floor() as usize).min(self.nodes - 2);
        Ok((k, s - k as f64))
    }

    #[inline]
    fn trace_at(&self, i: usize, k: usize, s: f64) -> f64 {
        let base = i * self.nodes;
        let (y0, y1) = (self.psi[base + k], self.psi[base + k + 1]);
        let (m0, m1) = (self.slope[base + k] * self.step, self.slope[base + k + 1] * self.step);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1
    }

    /// `psi_c(a_j)` for every stored level `c`.
    pub fn profile(&self, aj: f64) -> Result<Profile> {
        let (k, s) = self.locate_aj(aj)?;
        let psi: Vec<f64> = (0..self.levels.len()).map(|i| self.trace_at(i, k, s)).collect();
        Ok(Profile {
            aj,
            levels: self.levels.clone(),
            psi,
        })
    }

    /// `omega_j(a_j, a_0)`.
    pub fn eval(&self, aj: f64, a0: f64) -> Result<f64> {
        let (k, s) = self.locate_aj(aj)?;
        let n = self.levels.len();
        let first = self.trace_at(0, k, s);
        let last = self.trace_at(n - 1, k, s);
        if !(a0 >= first && a0 <= last) {
            return Err(Error::OutsideCoverage {
                aj,
                a0,
                lo: first,
                hi: last,
            });
        }
        // largest i with psi_i <= a0
        let (mut lo, mut hi) = (0usize, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.trace_at(mid, k, s) <= a0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let start = lo.saturating_sub(1).min(n.saturating_sub(4));
        let idx: Vec<usize> = (start..(start + 4).min(n)).collect();
        let xs: Vec<f64> = idx.iter().map(|&i| self.trace_at(i, k, s)).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| self.levels[i]).collect();
        Ok(lagrange(&xs, &ys, a0))
    }

    fn fd_step_aj(&self) -> f64 {
        0.05 * self.step
    }

    fn fd_step_a0(&self) -> f64 {
        1e-4 * self.domain.a0.width()
    }

    /// `d omega / d a_j` by central differences.
    pub fn d_daj(&self, aj: f64, a0: f64) -> Result<f64> {
        let h = self.fd_step_aj();
        Ok((self.eval(aj + h, a0)? - self.eval(aj - h, a0)?) / (2.0 * h))
    }

    /// `d omega / d a_0` by central differences.
    pub fn d_da0(&self, aj: f64, a0: f64) -> Result<f64> {
        let h = self.fd_step_a0();
        Ok((self.eval(aj, a0 + h)? - self.eval(aj, a0 - h)?) / (2.0 * h))
    }

    /// `b_j(v, a_0)`: the `a_j` in `[lo, hi]` with `omega_j(a_j, a_0) = v`.
    pub fn solve_aj(&self, v: f64, a0: f64, lo: f64, hi: f64) -> Result<f64> {
        monotone_root(|x| Ok(self.eval(x, a0)? - v), lo, hi, 1e-12 * (hi - lo).abs().max(1.0))
    }

    /// Checks the defining properties on an `n x n` lattice over the build domain.
    pub fn validate(&self, n: usize) -> OmegaDiagnostics {
        let n = n.max(2);
        let d = self.domain;
        let mut diag = OmegaDiagnostics {
            lattice: n,
            trace_step: self.step,
            max_pde_residual: 0.0,
            pde_residual_location: None,
            monotone_failures: 0,
            failed_cells: vec![],
            max_anchor_error: 0.0,
            max_inversion_error: 0.0,
            evaluation_failures: 0,
            lipschitz: lipschitz_diagnostic(&self.ratio, &d),
        };
        // keep FD stencils on the trace lattice when the margin is zero
        let pad_j = 2.0 * self.fd_step_aj();
        for i in 0..n {
            let aj = d.aj.lo + d.aj.width() * i as f64 / (n - 1) as f64;
            for k in 0..n {
                let a0 = d.a0.lo + d.a0.width() * k as f64 / (n - 1) as f64;
                let aj = aj.clamp(self.aj_range().0 + pad_j, self.aj_range().1 - pad_j);
                let res = (|| -> Result<(f64, f64, f64)> {
                    let w0 = self.d_da0(aj, a0)?;
                    let wj = self.d_daj(aj, a0)?;
                    let t = self.ratio.try_eval(aj, a0)?;
                    Ok((w0, wj, t))
                })();
                match res {
                    Ok((w0, wj, t)) => {
                        let r = (w0 + wj * t).abs();
                        if r > diag.max_pde_residual {
                            diag.max_pde_residual = r;
                            diag.pde_residual_location = Some([aj, a0]);
                        }
                        if !(w0 > 0.0 && wj < 0.0) {
                            diag.monotone_failures += 1;
                            if diag.failed_cells.len() < 20 {
                                diag.failed_cells.push([aj, a0]);
                            }
                        }
                    }
                    Err(_) => diag.evaluation_failures += 1,
                }
                if let Ok(v) = self.eval(aj, a0) {
                    if let Ok(back) = self.utility(aj, v) {
                        diag.max_inversion_error = diag.max_inversion_error.max((back - a0).abs());
                    } else {
                        diag.evaluation_failures += 1;
                    }
                }
            }
        }
        if in_interval(&d.aj, self.a_ref) {
            for k in 0..n {
                let a0 = d.a0.lo + d.a0.width() * k as f64 / (n - 1) as f64;
                match self.eval(self.a_ref, a0) {
                    Ok(v) => diag.max_anchor_error = diag.max_anchor_error.max((v - a0).abs()),
                    Err(_) => diag.evaluation_failures += 1,
                }
            }
        }
        diag
    }

    /// `w_j(a_j, v)`: the `a_0` with `omega_j(a_j, a_0) = v`.
    pub fn utility(&self, aj: f64, v: f64) -> Result<f64> {
        let (c_lo, c_hi) = self.level_range();
        if !(v >= c_lo && v <= c_hi) {
            return Err(Error::OutOfRange {
                value: v,
                lo: c_lo,
                hi: c_hi,
            });
        }
        let (k, s) = self.locate_aj(aj)?;
        let i = self.levels.partition_point(|&c| c <= v).clamp(1, self.levels.len() - 1);
        let lo = self.trace_at(i - 1, k, s);
        let hi = self.trace_at(i, k, s);
        if lo == hi {
            return Ok(lo);
        }
        monotone_root(|a0| Ok(self.eval(aj, a0)? - v), lo, hi, 1e-9)
    }
}

/// Lagrange interpolation through `(xs, ys)` at `x`.
fn lagrange(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let mut out = 0.0;
    for i in 0..xs.len() {
        let mut l = 1.0;
        for m in 0..xs.len() {
            if m != i {
                l *= (x - xs[m]) / (xs[i] - xs[m]);
            }
        }
        out += ys[i] * l;
    }
    out
}

/// All traces evaluated at one `a_j`; inverts `omega` and `w` without root finding.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub aj: f64,
    levels: Vec<f64>,
    psi: Vec<f64>,
}

impl Profile {
    /// `w_j(a_j, v)` by interpolation across levels.
    pub fn utility(&self, v: f64) -> Result<f64> {
        let n = self.levels.len();
        let (c_lo, c_hi) = (self.levels[0], self.levels[n - 1]);
        if !(v >= c_lo && v <= c_hi) {
            return Err(Error::OutOfRange {
                value: v,
                lo: c_lo,
                hi: c_hi,
            });
        }
        let i = self.levels.partition_point(|&c| c <= v).clamp(1, n - 1) - 1;
        let start = i.saturating_sub(1).min(n.saturating_sub(4));
        let end = (start + 4).min(n);
        Ok(lagrange(&self.levels[start..end], &self.psi[start..end], v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaDiagnostics {
    pub lattice: usize,
    pub trace_step: f64,
    /// `max |d omega/d a_0 + t d omega/d a_j|`.
    pub max_pde_residual: f64,
    pub pde_residual_location: Option<[f64; 2]>,
    /// Lattice points where `omega` is not increasing in `a_0` and decreasing in `a_j`.
    pub monotone_failures: usize,
    pub failed_cells: Vec<[f64; 2]>,
    /// `max |omega(a_ref, a_0) - a_0|`.
    pub max_anchor_error: f64,
    /// `max |w(a_j, omega(a_j, a_0)) - a_0|`.
    pub max_inversion_error: f64,
    pub evaluation_failures: usize,
    pub lipschitz: f64,
}

impl OmegaDiagnostics {
    pub fn monotone_ok(&self) -> bool {
        self.monotone_failures == 0 && self.evaluation_failures == 0
    }
}

/// Empirical `max |dt/da_j|` on a 101 x 101 lattice over `domain`.
pub fn lipschitz_diagnostic(t: &RatioFunction, domain: &Rect) -> f64 {
    t.max_gradients(domain, 101).0
}

/// Runs one trace `a_0 = psi(a_j)` across the lattice, starting from `(a_ref, c)`.
fn trace(
    t: &RatioFunction,
    aj_min: f64,
    step: f64,
    nodes: usize,
    k_ref: usize,
    c: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut psi = vec![0.0; nodes];
    let mut slope = vec![0.0; nodes];
    let mut g = |x: f64, y: f64| Ok(1.0 / t.try_eval(x, y)?);
    let node = |k: usize| aj_min + step * k as f64;
    psi[k_ref] = c;
    slope[k_ref] = checked_slope(g(node(k_ref), c), t, node(k_ref), c)?;
    for k in k_ref..nodes - 1 {
        let (y, _) = guarded_step(&mut g, node(k), psi[k], step, spike_tol(psi[k]))?;
        psi[k + 1] = y;
        slope[k + 1] = checked_slope(g(node(k + 1), y), t, node(k + 1), y)?;
    }
    for k in (1..=k_ref).rev() {
        let (y, _) = guarded_step(&mut g, node(k), psi[k], -step, spike_tol(psi[k]))?;
        psi[k - 1] = y;
        slope[k - 1] = checked_slope(g(node(k - 1), y), t, node(k - 1), y)?;
    }
    Ok((psi, slope))
}

fn checked_slope(s: Result<f64>, _t: &RatioFunction, aj: f64, a0: f64) -> Result<f64> {
    match s {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::RatioEvaluation { aj, a0 }),
    }
}

/// `omega` at a single point by integrating its characteristic to `a_ref` in `a_j`.
fn crossing(t: &RatioFunction, aj: f64, a0: f64, a_ref: f64, step: f64) -> Result<f64> {
    let span = a_ref - aj;
    if span == 0.0 {
        return Ok(a0);
    }
    let n = ((span.abs() / step).ceil() as usize).max(1);
    let h = span / n as f64;
    let mut g = |x: f64, y: f64| Ok(1.0 / t.try_eval(x, y)?);
    let mut y = a0;
    for i in 0..n {
        y = rk4_step(&mut g, aj + h * i as f64, y, h)?;
        if !y.is_finite() {
            return Err(Error::RatioEvaluation { aj: aj + h * (i + 1) as f64, a0: y });
        }
    }
    Ok(y)
}

/// Builds `omega_j` over `domain` (the field's `(a_j, a_0)` box) from the ratio `t`.
pub fn build_omega(t: &RatioFunction, domain: Rect, config: &OmegaConfig) -> Result<OmegaFunction> {
    let j = t.alternative;
    let (lo, hi) = (domain.aj.lo, domain.aj.hi);
    let a_ref = config.a_ref.unwrap_or(0.5 * (lo + hi));
    if !(a_ref >= lo && a_ref <= hi) {
        return Err(Error::InvalidArgument(format!(
            "a_ref = {a_ref} is outside the a_{j} range [{lo}, {hi}]"
        )));
    }
    if config.anchors < 4 {
        return Err(Error::InvalidArgument("need at least 4 anchors".into()));
    }
    let width = hi - lo;
    let mut lo_ext = lo - config.margin * width;
    let hi_ext = hi + config.margin * width;
    if lo > 0.0 && lo_ext <= 0.0 {
        // keep positive coordinates positive (log ratios are undefined at 0)
        lo_ext = 0.5 * lo;
    }
    let step = config.step.unwrap_or_else(|| {
        let ext = hi_ext - lo_ext;
        // resolve ratios that blow up near a_j = 0
        let near_zero = if lo_ext > 0.0 { lo_ext / 8.0 } else { f64::INFINITY };
        (ext / 512.0).min(near_zero).max(ext / 4096.0)
    });
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("trace step must be > 0, got {step}")));
    }
    let k_lo = ((a_ref - lo_ext) / step).ceil() as usize;
    let k_hi = ((hi_ext - a_ref) / step).ceil() as usize;
    let nodes = k_lo + k_hi + 1;
    let aj_min = a_ref - step * k_lo as f64;

    // levels spanned by the enlarged box
    let coverage = |aj: f64, a0: f64| {
        crossing(t, aj, a0, a_ref, step).map_err(|e| Error::Coverage {
            alternative: j,
            detail: format!(
                "characteristic through (a_0 = {a0}, a_{j} = {aj}) does not reach a_{j} = {a_ref}: {e}"
            ),
        })
    };
    let aj_max = aj_min + step * (nodes - 1) as f64;
    let mut corners = Vec::new();
    for &aj in &[aj_min, aj_max] {
        for &a0 in &[domain.a0.lo, domain.a0.hi] {
            corners.push(coverage(aj, a0)?);
        }
    }
    let c_lo = corners.iter().cloned().fold(f64::INFINITY, f64::min);
    let c_hi = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(c_hi > c_lo) {
        return Err(Error::Coverage {
            alternative: j,
            detail: format!("levels collapse to [{c_lo}, {c_hi}]; omega is not increasing in a_0"),
        });
    }
    let n = config.anchors;
    let geometric = c_lo > 0.0 && c_hi / c_lo > 10.0;
    let levels: Vec<f64> = if geometric {
        let (l0, l1) = (c_lo.ln(), c_hi.ln());
        let pad = 0.01 * (l1 - l0);
        (0..n)
            .map(|i| (l0 - pad + (l1 - l0 + 2.0 * pad) * i as f64 / (n - 1) as f64).exp())
            .collect()
    } else {
        let pad = 0.01 * (c_hi - c_lo);
        (0..n)
            .map(|i| c_lo - pad + (c_hi - c_lo + 2.0 * pad) * i as f64 / (n - 1) as f64)
            .collect()
    };

    let mut psi = Vec::with_capacity(n * nodes);
    let mut slope = Vec::with_capacity(n * nodes);
    for &c in &levels {
        let (p, s) = trace(t, aj_min, step, nodes, k_lo, c).map_err(|e| Error::Coverage {
            alternative: j,
            detail: format!("trace of level {c} fails inside a_{j} in [{aj_min}, {aj_max}]: {e}"),
        })?;
        psi.extend_from_slice(&p);
        slope.extend_from_slice(&s);
    }
    // traces must not cross: psi increasing in the level at every node
    for k in 0..nodes {
        for i in 1..n {
            if !(psi[i * nodes + k] > psi[(i - 1) * nodes + k]) {
                return Err(Error::Coverage {
                    alternative: j,
                    detail: format!(
                        "traces of levels {} and {} touch at a_{j} = {}",
                        levels[i - 1],
                        levels[i],
                        aj_min + step * k as f64
                    ),
                });
            }
        }
    }
    Ok(OmegaFunction {
        ratio: t.clone(),
        a_ref,
        domain,
        aj_min,
        step,
        nodes,
        levels,
        psi,
        slope,
    })
}

/// Recovered utility `w_j(a_j, v)`; the pivot keeps `w(a, v) = a`.
#[derive(Clone, Debug, PartialEq)]
pub enum UtilityFunction {
    Numeraire,
    Recovered(OmegaFunction),
}

impl UtilityFunction {
    pub fn eval(&self, a: f64, v: f64) -> Result<f64> {
        match self {
            UtilityFunction::Numeraire => Ok(a),
            UtilityFunction::Recovered(w) => w.utility(a, v),
        }
    }
}
