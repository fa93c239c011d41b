//! Cross-partial ratio tests and sieve estimation of the ratio functions.
//!
//! The ratio of alternative `j` against pivot `m` is
//! `t_jm = (dq_j/da_m) / (dq_m/da_j)`. Under additive random utility it
//! equals `h_m'(a_m) / h_j'(a_j)`, so it is identically one without income
//! effects and depends only on `(a_j, a_m)` in general.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ProbabilityField;
use crate::model::{ChoiceModelSpec, Interval, UtilityPrimitive};
#[allow(unused_imports)]
use num_traits::Float;

/// Default relative threshold for degenerate denominators.
pub const DEFAULT_DENOM_REL: f64 = 1e-8;

/// Cap on nodes visited when estimating the field's derivative scale.
const SCALE_SAMPLE_CAP: usize = 4096;

/// Median `|dq_k/da_l|` over `k != l` at interior nodes.
pub fn derivative_scale(field: &ProbabilityField) -> f64 {
    let grid = field.grid();
    let k = field.n_alternatives();
    let stride = (grid.node_count() / SCALE_SAMPLE_CAP).max(1);
    let mut mags = Vec::new();
    for node in (0..grid.node_count()).step_by(stride) {
        let idx = grid.unravel(node);
        if !grid.is_interior(&idx) {
            continue;
        }
        for r in 0..k {
            for l in 0..k {
                if r != l {
                    mags.push(field.nodal_derivative(&idx, r, &[l]).value.abs());
                }
            }
        }
    }
    median(&mut mags)
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `rel * derivative_scale(field)`.
pub fn denominator_threshold(field: &ProbabilityField, rel: f64) -> f64 {
    rel * derivative_scale(field)
}

/// `(dq_k/da_l) / (dq_l/da_k)` at `a`; errors when the denominator is below `threshold`.
pub fn slutsky_ratio(
    field: &ProbabilityField,
    k: usize,
    l: usize,
    a: &[f64],
    threshold: f64,
) -> Result<f64> {
    if k == l {
        return Err(Error::InvalidArgument(format!(
            "ratio needs two distinct alternatives, got ({k}, {l})"
        )));
    }
    let num = field.partial(k, l, a)?.value;
    let den = field.partial(l, k, a)?.value;
    if !(den.abs() >= threshold) || den == 0.0 {
        return Err(Error::DegenerateDenominator {
            value: den,
            threshold,
        });
    }
    Ok(num / den)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryMode {
    DalyZachary,
    ConditionA,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub k: usize,
    pub l: usize,
    /// `max |ratio - 1|` or the largest within-family spread.
    pub statistic: f64,
    pub location: Option<Vec<f64>>,
    pub ratio_at_worst: Option<f64>,
    pub evaluations: usize,
    pub excluded: usize,
    pub families: usize,
    pub inconclusive_families: usize,
    pub inconclusive: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub mode: SymmetryMode,
    pub tol: f64,
    pub pivot: Option<usize>,
    pub denominator_threshold: f64,
    pub points: usize,
    pub pairs: Vec<PairResult>,
    pub max_statistic: f64,
    pub vacuous: bool,
    pub inconclusive: bool,
    pub passed: bool,
}

impl SymmetryReport {
    pub fn pair(&self, k: usize, l: usize) -> Option<&PairResult> {
        self.pairs.iter().find(|p| p.k == k && p.l == l)
    }

    fn finish(mode: SymmetryMode, tol: f64, pivot: Option<usize>, threshold: f64, points: usize, pairs: Vec<PairResult>) -> Self {
        let max_statistic = pairs.iter().map(|p| p.statistic).fold(0.0, f64::max);
        let inconclusive = pairs.iter().any(|p| p.inconclusive);
        let passed = !inconclusive && pairs.iter().all(|p| p.pass);
        SymmetryReport {
            mode,
            tol,
            pivot,
            denominator_threshold: threshold,
            points,
            pairs,
            max_statistic,
            vacuous: false,
            inconclusive,
            passed,
        }
    }
}

/// Daly-Zachary symmetry: every pairwise ratio equals one.
pub fn test_daly_zachary(field: &ProbabilityField, points: &[Vec<f64>], tol: f64) -> Result<SymmetryReport> {
    let threshold = denominator_threshold(field, DEFAULT_DENOM_REL);
    let k = field.n_alternatives();
    let mut pairs = Vec::new();
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let mut worst = 0.0;
            let mut worst_at = None;
            let mut used = 0;
            let mut excluded = 0;
            for p in points {
                match slutsky_ratio(field, a, b, p, threshold) {
                    Ok(r) => {
                        used += 1;
                        let dev = (r - 1.0).abs();
                        if dev > worst || worst_at.is_none() {
                            worst = dev;
                            worst_at = Some((p.clone(), r));
                        }
                    }
                    Err(Error::DegenerateDenominator { .. }) => excluded += 1,
                    Err(e) => return Err(e),
                }
            }
            let inconclusive = used == 0;
            let (location, ratio_at_worst) = match worst_at {
                Some((p, r)) => (Some(p), Some(r)),
                None => (None, None),
            };
            pairs.push(PairResult {
                k: a,
                l: b,
                statistic: worst,
                location,
                ratio_at_worst,
                evaluations: used,
                excluded,
                families: 0,
                inconclusive_families: 0,
                inconclusive,
                pass: !inconclusive && worst <= tol,
            });
        }
    }
    Ok(SymmetryReport::finish(
        SymmetryMode::DalyZachary,
        tol,
        None,
        threshold,
        points.len(),
        pairs,
    ))
}

/// Largest number of off-pair nodes visited per family.
const FAMILY_CAP: usize = 64;

/// Income-effect condition: `t_jm` depends only on `(a_j, a_m)`.
///
/// Each point seeds a family that keeps its `(a_j, a_m)` and moves every
/// other coordinate over the interior grid nodes.
pub fn test_condition_a(
    field: &ProbabilityField,
    m: usize,
    points: &[Vec<f64>],
    tol: f64,
) -> Result<SymmetryReport> {
    let k = field.n_alternatives();
    if m >= k {
        return Err(Error::InvalidArgument(format!("pivot {m} out of range 0..{k}")));
    }
    if k == 2 {
        let mut r = SymmetryReport::finish(SymmetryMode::ConditionA, tol, Some(m), 0.0, points.len(), vec![]);
        r.vacuous = true;
        r.passed = true;
        return Ok(r);
    }
    let threshold = denominator_threshold(field, DEFAULT_DENOM_REL);
    let grid = field.grid();
    let mut pairs = Vec::new();
    for j in (0..k).filter(|&j| j != m) {
        let others: Vec<usize> = (0..k).filter(|&o| o != j && o != m).collect();
        // interior node values of every off-pair axis, thinned to respect the cap
        let per_axis = ((FAMILY_CAP as f64).powf(1.0 / others.len() as f64)).floor().max(2.0) as usize;
        let axis_values: Vec<Vec<f64>> = others
            .iter()
            .map(|&o| {
                let ax = grid.axis(o);
                let interior = ax.n - 2;
                let step = (interior + per_axis - 1) / per_axis;
                (1..ax.n - 1).step_by(step.max(1)).map(|i| ax.node(i)).collect()
            })
            .collect();
        let mut worst = 0.0;
        let mut worst_at: Option<(Vec<f64>, f64)> = None;
        let mut used = 0;
        let mut excluded = 0;
        let mut families = 0;
        let mut inconclusive_families = 0;
        for p in points {
            let mut ratios = Vec::new();
            let mut locs = Vec::new();
            let mut fam_excluded = 0;
            let mut counter = vec![0usize; others.len()];
            'family: loop {
                let mut a = p.clone();
                for (c, &o) in others.iter().enumerate() {
                    a[o] = axis_values[c][counter[c]];
                }
                match slutsky_ratio(field, j, m, &a, threshold) {
                    Ok(r) => {
                        ratios.push(r);
                        locs.push(a);
                    }
                    Err(Error::DegenerateDenominator { .. }) => fam_excluded += 1,
                    Err(e) => return Err(e),
                }
                let mut c = 0;
                loop {
                    if c == others.len() {
                        break 'family;
                    }
                    counter[c] += 1;
                    if counter[c] < axis_values[c].len() {
                        break;
                    }
                    counter[c] = 0;
                    c += 1;
                }
            }
            families += 1;
            used += ratios.len();
            excluded += fam_excluded;
            let total = ratios.len() + fam_excluded;
            if ratios.is_empty() || 2 * fam_excluded > total {
                inconclusive_families += 1;
                continue;
            }
            let (mut lo, mut hi) = (0, 0);
            for (i, &r) in ratios.iter().enumerate() {
                if r < ratios[lo] {
                    lo = i;
                }
                if r > ratios[hi] {
                    hi = i;
                }
            }
            let spread = ratios[hi] - ratios[lo];
            if spread > worst || worst_at.is_none() {
                worst = spread;
                worst_at = Some((locs[hi].clone(), ratios[hi]));
            }
        }
        let inconclusive = families == 0 || inconclusive_families == families;
        let (location, ratio_at_worst) = match worst_at {
            Some((p, r)) => (Some(p), Some(r)),
            None => (None, None),
        };
        pairs.push(PairResult {
            k: j,
            l: m,
            statistic: worst,
            location,
            ratio_at_worst,
            evaluations: used,
            excluded,
            families,
            inconclusive_families,
            inconclusive,
            pass: !inconclusive && worst <= tol,
        });
    }
    Ok(SymmetryReport::finish(
        SymmetryMode::ConditionA,
        tol,
        Some(m),
        threshold,
        points.len(),
        pairs,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PivotRecommendation {
    pub pivot: usize,
    /// Per candidate pivot: min over `j != m` and interior nodes of `|dq_m/da_j|`.
    pub scores: Vec<f64>,
}

/// The pivot whose smallest cross derivative is largest.
pub fn recommend_pivot(field: &ProbabilityField) -> PivotRecommendation {
    let grid = field.grid();
    let k = field.n_alternatives();
    let mut scores = vec![f64::INFINITY; k];
    for node in 0..grid.node_count() {
        let idx = grid.unravel(node);
        if !grid.is_interior(&idx) {
            continue;
        }
        for (m, s) in scores.iter_mut().enumerate() {
            for j in (0..k).filter(|&j| j != m) {
                let d = field.nodal_derivative(&idx, m, &[j]).value.abs();
                if d < *s {
                    *s = d;
                }
            }
        }
    }
    let mut pivot = 0;
    for m in 1..k {
        if scores[m] > scores[pivot] {
            pivot = m;
        }
    }
    PivotRecommendation { pivot, scores }
}

/// Rectangle in `(a_j, a_m)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub aj: Interval,
    pub a0: Interval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SieveBasis {
    Polynomial,
    LogPolynomial,
}

impl SieveBasis {
    pub fn name(&self) -> &'static str {
        match self {
            SieveBasis::Polynomial => "polynomial",
            SieveBasis::LogPolynomial => "log_polynomial",
        }
    }
}

/// Exponent pairs `(p, q)` of `x^p y^q`, ordered by total degree then descending `p`.
pub fn basis_terms(degree: usize) -> Vec<(u32, u32)> {
    let mut t = Vec::new();
    for d in 0..=degree as u32 {
        for p in (0..=d).rev() {
            t.push((p, d - p));
        }
    }
    t
}

fn eval_poly(coefficients: &[f64], degree: usize, x: f64, y: f64) -> f64 {
    basis_terms(degree)
        .iter()
        .zip(coefficients)
        .map(|(&(p, q), c)| c * x.powi(p as i32) * y.powi(q as i32))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub samples: usize,
    pub excluded: usize,
    pub rank: usize,
    pub condition_number: f64,
    /// In the fitted scale (log of the ratio for the log basis).
    pub rms_residual: f64,
    pub max_residual: f64,
    pub max_residual_location: Vec<f64>,
    /// Empirical `max |dt/da_j|` over the domain.
    pub max_gradient_aj: f64,
    /// Empirical `max |dt/da_m|` over the domain.
    pub max_gradient_a0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RatioForm {
    Constant {
        value: f64,
    },
    /// `h_m'(a_m) / h_j'(a_j)`.
    Analytic {
        pivot_utility: UtilityPrimitive,
        utility: UtilityPrimitive,
    },
    Sieve {
        basis: SieveBasis,
        degree: usize,
        coefficients: Vec<f64>,
        diagnostics: FitDiagnostics,
    },
}

/// `t_jm(a_j, a_m)`, the slope of the characteristics in the `(a_m, a_j)` plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioFunction {
    pub alternative: usize,
    pub pivot: usize,
    pub form: RatioForm,
    pub domain: Rect,
}

impl RatioFunction {
    pub fn constant(alternative: usize, pivot: usize, value: f64, domain: Rect) -> Self {
        RatioFunction {
            alternative,
            pivot,
            form: RatioForm::Constant { value },
            domain,
        }
    }

    /// Exact ratio implied by an additive model.
    pub fn analytic(model: &ChoiceModelSpec, j: usize, m: usize, domain: Rect) -> Result<Self> {
        let n = model.n_alternatives();
        if j >= n || m >= n || j == m {
            return Err(Error::InvalidArgument(format!(
                "need distinct alternatives below {n}, got ({j}, {m})"
            )));
        }
        Ok(RatioFunction {
            alternative: j,
            pivot: m,
            form: RatioForm::Analytic {
                pivot_utility: model.utilities()[m].clone(),
                utility: model.utilities()[j].clone(),
            },
            domain,
        })
    }

    /// Ratio value; sieve fits are clipped at zero. May be non-finite off the domain.
    pub fn eval(&self, aj: f64, a0: f64) -> f64 {
        match &self.form {
            RatioForm::Constant { value } => *value,
            RatioForm::Analytic {
                pivot_utility,
                utility,
            } => pivot_utility.derivative(a0) / utility.derivative(aj),
            RatioForm::Sieve {
                basis,
                degree,
                coefficients,
                ..
            } => match basis {
                SieveBasis::Polynomial => eval_poly(coefficients, *degree, aj, a0).max(0.0),
                SieveBasis::LogPolynomial => {
                    if aj <= 0.0 || a0 <= 0.0 {
                        f64::NAN
                    } else {
                        eval_poly(coefficients, *degree, aj.ln(), a0.ln()).exp()
                    }
                }
            },
        }
    }

    /// Ratio value, failing when it is not finite or negative.
    pub fn try_eval(&self, aj: f64, a0: f64) -> Result<f64> {
        let t = self.eval(aj, a0);
        if t.is_finite() && t >= 0.0 {
            Ok(t)
        } else {
            Err(Error::RatioEvaluation { aj, a0 })
        }
    }

    /// Empirical `(max |dt/da_j|, max |dt/da_m|)` on an `n x n` lattice over `domain`.
    pub fn max_gradients(&self, domain: &Rect, n: usize) -> (f64, f64) {
        let n = n.max(2);
        let hj = 1e-5 * domain.aj.width();
        let h0 = 1e-5 * domain.a0.width();
        let mut gj: f64 = 0.0;
        let mut g0: f64 = 0.0;
        for i in 0..n {
            let x = domain.aj.lo + domain.aj.width() * i as f64 / (n - 1) as f64;
            for k in 0..n {
                let y = domain.a0.lo + domain.a0.width() * k as f64 / (n - 1) as f64;
                let (xl, xh) = ((x - hj).max(domain.aj.lo), (x + hj).min(domain.aj.hi));
                let (yl, yh) = ((y - h0).max(domain.a0.lo), (y + h0).min(domain.a0.hi));
                let dj = (self.eval(xh, y) - self.eval(xl, y)) / (xh - xl);
                let d0 = (self.eval(x, yh) - self.eval(x, yl)) / (yh - yl);
                if dj.is_finite() {
                    gj = gj.max(dj.abs());
                }
                if d0.is_finite() {
                    g0 = g0.max(d0.abs());
                }
            }
        }
        (gj, g0)
    }

    pub fn diagnostics(&self) -> Option<&FitDiagnostics> {
        match &self.form {
            RatioForm::Sieve { diagnostics, .. } => Some(diagnostics),
            _ => None,
        }
    }

    pub fn coefficients(&self) -> Option<&[f64]> {
        match &self.form {
            RatioForm::Sieve { coefficients, .. } => Some(coefficients),
            _ => None,
        }
    }
}

/// Nodes visited by the sieve are thinned so at most this many are used.
const SIEVE_SAMPLE_CAP: usize = 250_000;

/// Relative singular value below which a direction counts as missing.
const RANK_TOL: f64 = 1e-10;

/// Least-squares fit of `t_jm` (or `ln t_jm`) on bivariate monomials of `(a_j, a_m)`.
///
/// Samples are the ratios at interior grid nodes with non-degenerate denominators.
pub fn fit_ratio_sieve(
    field: &ProbabilityField,
    j: usize,
    m: usize,
    basis: SieveBasis,
    degree: usize,
) -> Result<RatioFunction> {
    let k = field.n_alternatives();
    if j >= k || m >= k || j == m {
        return Err(Error::InvalidArgument(format!(
            "need distinct alternatives below {k}, got ({j}, {m})"
        )));
    }
    let grid = field.grid();
    let domain = Rect {
        aj: Interval::new(grid.axis(j).lo, grid.axis(j).hi),
        a0: Interval::new(grid.axis(m).lo, grid.axis(m).hi),
    };
    if basis == SieveBasis::LogPolynomial && (domain.aj.lo <= 0.0 || domain.a0.lo <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "log_polynomial basis needs positive a_{j} and a_{m}"
        )));
    }
    let threshold = denominator_threshold(field, DEFAULT_DENOM_REL);
    let interior: usize = grid.axes().iter().map(|a| a.n - 2).product();
    let stride = interior.div_ceil(SIEVE_SAMPLE_CAP).max(1);

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut targets = Vec::new();
    let mut excluded = 0;
    let mut seen = 0usize;
    for node in 0..grid.node_count() {
        let idx = grid.unravel(node);
        if !grid.is_interior(&idx) {
            continue;
        }
        seen += 1;
        if (seen - 1) % stride != 0 {
            continue;
        }
        let num = field.nodal_derivative(&idx, j, &[m]).value;
        let den = field.nodal_derivative(&idx, m, &[j]).value;
        if den.abs() < threshold || den == 0.0 {
            excluded += 1;
            continue;
        }
        let r = num / den;
        let (aj, am) = (grid.axis(j).node(idx[j]), grid.axis(m).node(idx[m]));
        match basis {
            SieveBasis::Polynomial => {
                xs.push(aj);
                ys.push(am);
                targets.push(r);
            }
            SieveBasis::LogPolynomial => {
                if !(r > 0.0) {
                    return Err(Error::NonPositiveRatio {
                        value: r,
                        location: grid.coords_of(&idx),
                    });
                }
                xs.push(aj.ln());
                ys.push(am.ln());
                targets.push(r.ln());
            }
        }
    }

    let terms = basis_terms(degree);
    let p = terms.len();
    let n = targets.len();
    if n < p {
        return Err(Error::RankDeficient {
            basis: basis.name(),
            degree,
            detail: format!("{p} basis terms but only {n} usable samples"),
        });
    }
    let mut x = DMatrix::<f64>::zeros(n, p);
    for r in 0..n {
        for (c, &(pe, qe)) in terms.iter().enumerate() {
            x[(r, c)] = xs[r].powi(pe as i32) * ys[r].powi(qe as i32);
        }
    }
    let mut scales = vec![0.0; p];
    for c in 0..p {
        let norm = x.column(c).norm();
        scales[c] = if norm > 0.0 { norm } else { 1.0 };
        let s = scales[c];
        x.column_mut(c).scale_mut(1.0 / s);
    }
    let y = DVector::from_vec(targets.clone());
    let svd = x.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let rank = sv.iter().filter(|&&s| s > RANK_TOL * smax).count();
    if rank < p {
        return Err(Error::RankDeficient {
            basis: basis.name(),
            degree,
            detail: format!(
                "{p} basis terms but the samples span only {rank} directions (distinct (a_{j}, a_{m}) pairs are too few)"
            ),
        });
    }
    let sol = svd
        .solve(&y, RANK_TOL * smax)
        .map_err(|e| Error::RankDeficient {
            basis: basis.name(),
            degree,
            detail: e.into(),
        })?;
    let coefficients: Vec<f64> = (0..p).map(|c| sol[c] / scales[c]).collect();

    let fitted = &x * &sol;
    let mut ss = 0.0;
    let mut max_res = 0.0;
    let mut max_at = 0;
    for r in 0..n {
        let e = (fitted[r] - targets[r]).abs();
        ss += e * e;
        if e > max_res {
            max_res = e;
            max_at = r;
        }
    }
    let (lx, ly) = match basis {
        SieveBasis::Polynomial => (xs[max_at], ys[max_at]),
        SieveBasis::LogPolynomial => (xs[max_at].exp(), ys[max_at].exp()),
    };
    let mut rf = RatioFunction {
        alternative: j,
        pivot: m,
        form: RatioForm::Sieve {
            basis,
            degree,
            coefficients,
            diagnostics: FitDiagnostics {
                samples: n,
                excluded,
                rank,
                condition_number: smax / smin,
                rms_residual: (ss / n as f64).sqrt(),
                max_residual: max_res,
                max_residual_location: vec![lx, ly],
                max_gradient_aj: 0.0,
                max_gradient_a0: 0.0,
            },
        },
        domain,
    };
    let (gj, g0) = rf.max_gradients(&domain, 41);
    if let RatioForm::Sieve { diagnostics, .. } = &mut rf.form {
        diagnostics.max_gradient_aj = gj;
        diagnostics.max_gradient_a0 = g0;
    }
    Ok(rf)
}
