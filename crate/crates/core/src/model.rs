//! Forward random utility models: `U_j = h_j(a_j) + eps_j`, choice is the argmax.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Index;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{GridSpec, ProbabilityField};
#[allow(unused_imports)]
use num_traits::Float;

/// Sub-utility `h(a)` of a single alternative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrimitive", into = "RawPrimitive")]
pub enum UtilityPrimitive {
    /// `intercept + slope * a`
    Linear { intercept: f64, slope: f64 },
    /// `alpha * ln(a)`
    Log { alpha: f64 },
    /// `coefficient * a^exponent`
    Power { coefficient: f64, exponent: f64 },
    /// `sum_i c_i a^i`
    Polynomial { coefficients: Vec<f64> },
}

/// Wire form `{"kind": ..., "params": [...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawPrimitive {
    pub kind: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl TryFrom<RawPrimitive> for UtilityPrimitive {
    type Error = Error;

    fn try_from(raw: RawPrimitive) -> Result<Self> {
        let p = &raw.params;
        let need = |n: usize| -> Result<()> {
            if p.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidModel(format!(
                    "{} utility takes {} parameter(s), got {}",
                    raw.kind,
                    n,
                    p.len()
                )))
            }
        };
        let prim = match raw.kind.as_str() {
            "linear" => {
                need(2)?;
                UtilityPrimitive::Linear {
                    intercept: p[0],
                    slope: p[1],
                }
            }
            "log" => {
                need(1)?;
                UtilityPrimitive::Log { alpha: p[0] }
            }
            "power" => {
                need(2)?;
                UtilityPrimitive::Power {
                    coefficient: p[0],
                    exponent: p[1],
                }
            }
            "polynomial" => {
                if p.len() < 2 {
                    return Err(Error::InvalidModel(
                        "polynomial utility needs at least two coefficients".into(),
                    ));
                }
                UtilityPrimitive::Polynomial {
                    coefficients: p.clone(),
                }
            }
            other => {
                return Err(Error::InvalidModel(format!(
                    "unknown utility kind '{other}' (expected linear, log, power or polynomial)"
                )))
            }
        };
        prim.validate_params()?;
        Ok(prim)
    }
}

impl From<UtilityPrimitive> for RawPrimitive {
    fn from(p: UtilityPrimitive) -> Self {
        let (kind, params) = match p {
            UtilityPrimitive::Linear { intercept, slope } => ("linear", vec![intercept, slope]),
            UtilityPrimitive::Log { alpha } => ("log", vec![alpha]),
            UtilityPrimitive::Power {
                coefficient,
                exponent,
            } => ("power", vec![coefficient, exponent]),
            UtilityPrimitive::Polynomial { coefficients } => ("polynomial", coefficients),
        };
        RawPrimitive {
            kind: kind.to_string(),
            params,
        }
    }
}

impl UtilityPrimitive {
    pub fn kind(&self) -> &'static str {
        match self {
            UtilityPrimitive::Linear { .. } => "linear",
            UtilityPrimitive::Log { .. } => "log",
            UtilityPrimitive::Power { .. } => "power",
            UtilityPrimitive::Polynomial { .. } => "polynomial",
        }
    }

    fn validate_params(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidModel(format!("{} utility: {msg}", self.kind())));
        match self {
            UtilityPrimitive::Linear { intercept, slope } => {
                if !intercept.is_finite() || !slope.is_finite() || *slope <= 0.0 {
                    return bad("slope must be finite and > 0");
                }
            }
            UtilityPrimitive::Log { alpha } => {
                if !alpha.is_finite() || *alpha <= 0.0 {
                    return bad("alpha must be finite and > 0");
                }
            }
            UtilityPrimitive::Power {
                coefficient,
                exponent,
            } => {
                if !coefficient.is_finite() || *coefficient <= 0.0 {
                    return bad("coefficient must be finite and > 0");
                }
                if !exponent.is_finite() || *exponent <= 0.0 {
                    return bad("exponent must be finite and > 0");
                }
            }
            UtilityPrimitive::Polynomial { coefficients } => {
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return bad("coefficients must be finite");
                }
            }
        }
        Ok(())
    }

    /// Smallest admissible argument, with whether it is itself admissible.
    fn lower_limit(&self) -> Option<(f64, bool)> {
        match self {
            UtilityPrimitive::Log { .. } => Some((0.0, false)),
            UtilityPrimitive::Power { .. } => Some((0.0, true)),
            _ => None,
        }
    }

    fn check_arg(&self, alternative: usize, a: f64) -> Result<()> {
        if !a.is_finite() {
            return Err(Error::Domain {
                alternative,
                value: a,
                reason: "not finite",
            });
        }
        match self.lower_limit() {
            Some((lim, false)) if a <= lim => Err(Error::Domain {
                alternative,
                value: a,
                reason: "log utility needs a > 0",
            }),
            Some((lim, true)) if a < lim => Err(Error::Domain {
                alternative,
                value: a,
                reason: "power utility needs a >= 0",
            }),
            _ => Ok(()),
        }
    }

    /// `h(a)`, without checking the model's declared domain.
    pub fn value(&self, a: f64) -> f64 {
        match self {
            UtilityPrimitive::Linear { intercept, slope } => intercept + slope * a,
            UtilityPrimitive::Log { alpha } => alpha * a.ln(),
            UtilityPrimitive::Power {
                coefficient,
                exponent,
            } => coefficient * a.powf(*exponent),
            UtilityPrimitive::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * a + c)
            }
        }
    }

    /// `h'(a)`.
    pub fn derivative(&self, a: f64) -> f64 {
        match self {
            UtilityPrimitive::Linear { slope, .. } => *slope,
            UtilityPrimitive::Log { alpha } => alpha / a,
            UtilityPrimitive::Power {
                coefficient,
                exponent,
            } => coefficient * exponent * a.powf(exponent - 1.0),
            UtilityPrimitive::Polynomial { coefficients } => coefficients
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (i, c)| acc * a + c * i as f64),
        }
    }
}

/// Distribution of the additive taste shocks `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    GumbelIid {
        #[serde(default = "unit")]
        scale: f64,
    },
    GaussianIid {
        #[serde(default = "unit")]
        scale: f64,
    },
    GaussianCorrelated {
        #[serde(default = "unit")]
        scale: f64,
        correlation: Vec<Vec<f64>>,
    },
}

fn unit() -> f64 {
    1.0
}

impl NoiseSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            NoiseSpec::GumbelIid { .. } => "gumbel_iid",
            NoiseSpec::GaussianIid { .. } => "gaussian_iid",
            NoiseSpec::GaussianCorrelated { .. } => "gaussian_correlated",
        }
    }

    pub fn scale(&self) -> f64 {
        match self {
            NoiseSpec::GumbelIid { scale }
            | NoiseSpec::GaussianIid { scale }
            | NoiseSpec::GaussianCorrelated { scale, .. } => *scale,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Choice probabilities of the J+1 alternatives at one offer vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates entries in [0, 1] and a sum within `1e-9` of one.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidArgument(
                "a probability vector needs at least two entries".into(),
            ));
        }
        for (j, &p) in entries.iter().enumerate() {
            if !(-1e-12..=1.0 + 1e-12).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "probability of alternative {j} is {p}, outside [0, 1]"
                )));
            }
        }
        let s: f64 = entries.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {s}, not 1"
            )));
        }
        Ok(ProbVector(entries))
    }

    pub(crate) fn from_raw(entries: Vec<f64>) -> Self {
        ProbVector(entries)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &ProbVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

/// Numerically stable softmax of `u / scale`.
pub fn softmax(u: &[f64], scale: f64) -> Vec<f64> {
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = u.iter().map(|x| ((x - m) / scale).exp()).collect();
    let s: f64 = out.iter().sum();
    for p in &mut out {
        *p /= s;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum TabulationMethod {
    ClosedForm,
    MonteCarlo { draws: usize, seed: u64 },
}

/// Ground-truth generator.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceModelSpec {
    utilities: Vec<UtilityPrimitive>,
    noise: NoiseSpec,
    domain: Vec<Interval>,
    // lower Cholesky factor of the correlation matrix, row-major
    chol: Option<Vec<f64>>,
}

/// Sample points used to confirm a primitive is increasing on its domain.
const MONOTONE_SAMPLES: usize = 257;

impl ChoiceModelSpec {
    pub fn new(
        utilities: Vec<UtilityPrimitive>,
        noise: NoiseSpec,
        domain: Vec<Interval>,
    ) -> Result<Self> {
        let n = utilities.len();
        if n < 2 {
            return Err(Error::InvalidModel(format!(
                "need at least two alternatives, got {n}"
            )));
        }
        if domain.len() != n {
            return Err(Error::DimensionMismatch {
                what: "domain intervals",
                expected: n,
                got: domain.len(),
            });
        }
        for (j, (u, d)) in utilities.iter().zip(&domain).enumerate() {
            u.validate_params()?;
            if !(d.lo.is_finite() && d.hi.is_finite() && d.lo < d.hi) {
                return Err(Error::InvalidModel(format!(
                    "domain of alternative {j} must be a finite interval with lo < hi, got [{}, {}]",
                    d.lo, d.hi
                )));
            }
            u.check_arg(j, d.lo)?;
            let mut prev = u.value(d.lo);
            for i in 1..MONOTONE_SAMPLES {
                let x = d.lo + d.width() * i as f64 / (MONOTONE_SAMPLES - 1) as f64;
                let y = u.value(x);
                if !(y > prev) {
                    return Err(Error::InvalidModel(format!(
                        "utility of alternative {j} is not strictly increasing near a = {x}"
                    )));
                }
                prev = y;
            }
        }
        let scale = noise.scale();
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidModel(format!(
                "noise scale must be finite and > 0, got {scale}"
            )));
        }
        let chol = match &noise {
            NoiseSpec::GaussianCorrelated { correlation, .. } => {
                Some(cholesky_factor(correlation, n)?)
            }
            _ => None,
        };
        Ok(ChoiceModelSpec {
            utilities,
            noise,
            domain,
            chol,
        })
    }

    pub fn n_alternatives(&self) -> usize {
        self.utilities.len()
    }

    pub fn utilities(&self) -> &[UtilityPrimitive] {
        &self.utilities
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn domain(&self) -> &[Interval] {
        &self.domain
    }

    fn check_alternative(&self, j: usize) -> Result<()> {
        if j >= self.n_alternatives() {
            return Err(Error::InvalidArgument(format!(
                "alternative {j} out of range 0..{}",
                self.n_alternatives()
            )));
        }
        Ok(())
    }

    fn check_in_domain(&self, j: usize, a: f64) -> Result<()> {
        self.utilities[j].check_arg(j, a)?;
        if !self.domain[j].contains(a) {
            return Err(Error::Domain {
                alternative: j,
                value: a,
                reason: "outside the declared domain",
            });
        }
        Ok(())
    }

    fn check_offer(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.n_alternatives() {
            return Err(Error::DimensionMismatch {
                what: "offer vector",
                expected: self.n_alternatives(),
                got: a.len(),
            });
        }
        for (j, &x) in a.iter().enumerate() {
            self.check_in_domain(j, x)?;
        }
        Ok(())
    }

    /// `h_j(a)`.
    pub fn utility_value(&self, j: usize, a: f64) -> Result<f64> {
        self.check_alternative(j)?;
        self.check_in_domain(j, a)?;
        Ok(self.utilities[j].value(a))
    }

    /// `h_j'(a)`.
    pub fn utility_slope(&self, j: usize, a: f64) -> Result<f64> {
        self.check_alternative(j)?;
        self.check_in_domain(j, a)?;
        Ok(self.utilities[j].derivative(a))
    }

    fn systematic(&self, a: &[f64]) -> Vec<f64> {
        self.utilities
            .iter()
            .zip(a)
            .map(|(u, &x)| u.value(x))
            .collect()
    }

    /// Multinomial logit probabilities; only defined for iid Gumbel noise.
    pub fn choice_prob_closed_form(&self, a: &[f64]) -> Result<ProbVector> {
        let scale = match self.noise {
            NoiseSpec::GumbelIid { scale } => scale,
            _ => return Err(Error::NoClosedForm(self.noise.kind())),
        };
        self.check_offer(a)?;
        Ok(ProbVector(softmax(&self.systematic(a), scale)))
    }

    /// Frequencies of the simulated argmax over `n` draws.
    pub fn choice_prob_monte_carlo(&self, a: &[f64], n: usize, seed: u64) -> Result<ProbVector> {
        self.monte_carlo_stream(a, n, seed, 0)
    }

    /// Monte Carlo on an explicit substream; streams are independent of evaluation order.
    pub fn monte_carlo_stream(
        &self,
        a: &[f64],
        n: usize,
        seed: u64,
        stream: u64,
    ) -> Result<ProbVector> {
        if n == 0 {
            return Err(Error::InvalidArgument("draw count must be >= 1".into()));
        }
        self.check_offer(a)?;
        let base = self.systematic(a);
        let k = base.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut counts = vec![0usize; k];
        let mut eps = vec![0.0; k];
        let mut z = vec![0.0; k];
        for _ in 0..n {
            self.draw_noise(&mut rng, &mut eps, &mut z);
            let mut best = 0;
            let mut best_u = base[0] + eps[0];
            for j in 1..k {
                let u = base[j] + eps[j];
                // strict comparison sends ties to the lowest index
                if u > best_u {
                    best = j;
                    best_u = u;
                }
            }
            counts[best] += 1;
        }
        Ok(ProbVector(
            counts.iter().map(|&c| c as f64 / n as f64).collect(),
        ))
    }

    fn draw_noise<R: Rng>(&self, rng: &mut R, eps: &mut [f64], z: &mut [f64]) {
        match &self.noise {
            NoiseSpec::GumbelIid { scale } => {
                let g = Gumbel::new(0.0, *scale).expect("scale validated");
                for e in eps.iter_mut() {
                    *e = g.sample(rng);
                }
            }
            NoiseSpec::GaussianIid { scale } => {
                for e in eps.iter_mut() {
                    let s: f64 = StandardNormal.sample(rng);
                    *e = scale * s;
                }
            }
            NoiseSpec::GaussianCorrelated { scale, .. } => {
                let l = self.chol.as_ref().expect("factor built with the model");
                let k = z.len();
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(rng);
                }
                for i in 0..k {
                    let mut s = 0.0;
                    for m in 0..=i {
                        s += l[i * k + m] * z[m];
                    }
                    eps[i] = scale * s;
                }
            }
        }
    }

    /// Choice probabilities at every node of `grid`.
    pub fn tabulate(&self, grid: &GridSpec, method: TabulationMethod) -> Result<ProbabilityField> {
        if grid.dims() != self.n_alternatives() {
            return Err(Error::DimensionMismatch {
                what: "grid axes",
                expected: self.n_alternatives(),
                got: grid.dims(),
            });
        }
        for (j, ax) in grid.axes().iter().enumerate() {
            if !(self.domain[j].contains(ax.lo) && self.domain[j].contains(ax.hi)) {
                return Err(Error::InvalidGrid(format!(
                    "axis {j} [{}, {}] is not inside the model domain [{}, {}]",
                    ax.lo, ax.hi, self.domain[j].lo, self.domain[j].hi
                )));
            }
        }
        if matches!(method, TabulationMethod::ClosedForm) && !matches!(self.noise, NoiseSpec::GumbelIid { .. }) {
            return Err(Error::NoClosedForm(self.noise.kind()));
        }
        let provenance = match method {
            TabulationMethod::ClosedForm => format!("model:closed_form:{}", self.noise.kind()),
            TabulationMethod::MonteCarlo { draws, seed } => {
                format!("model:monte_carlo:{}:draws={draws}:seed={seed}", self.noise.kind())
            }
        };
        ProbabilityField::from_fn(grid.clone(), provenance, |node, a| match method {
            TabulationMethod::ClosedForm => self.choice_prob_closed_form(a),
            TabulationMethod::MonteCarlo { draws, seed } => {
                self.monte_carlo_stream(a, draws, seed, node as u64)
            }
        })
    }
}

fn cholesky_factor(corr: &[Vec<f64>], n: usize) -> Result<Vec<f64>> {
    if corr.len() != n || corr.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidModel(format!(
            "correlation matrix must be {n}x{n}"
        )));
    }
    for i in 0..n {
        if (corr[i][i] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!(
                "correlation matrix diagonal entry {i} is {}, not 1",
                corr[i][i]
            )));
        }
        for j in 0..i {
            if (corr[i][j] - corr[j][i]).abs() > 1e-12 {
                return Err(Error::InvalidModel(format!(
                    "correlation matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let m = DMatrix::from_fn(n, n, |i, j| corr[i][j]);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::InvalidModel("correlation matrix is not positive definite".into()))?;
    let l = chol.l();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = l[(i, j)];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{m_lin, m_log};
    use approx::assert_relative_eq;

    #[test]
    fn utility_values() {
        let lin = UtilityPrimitive::Linear {
            intercept: 0.0,
            slope: 1.0,
        };
        assert_eq!(lin.value(3.0), 3.0);
        let log = UtilityPrimitive::Log { alpha: 2.0 };
        assert_relative_eq!(log.value(4.0), 2.0 * 4f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(log.value(4.0), 2.7726, epsilon = 1e-4);
    }

    #[test]
    fn power_at_zero_depends_on_domain() {
        let p = UtilityPrimitive::Power {
            coefficient: 1.0,
            exponent: 0.5,
        };
        let noise = NoiseSpec::GumbelIid { scale: 1.0 };
        let lin = UtilityPrimitive::Linear {
            intercept: 0.0,
            slope: 1.0,
        };
        let open = ChoiceModelSpec::new(
            vec![lin.clone(), p.clone()],
            noise.clone(),
            vec![Interval::new(0.0, 4.0), Interval::new(0.5, 4.0)],
        )
        .unwrap();
        assert!(matches!(open.utility_value(1, 0.0), Err(Error::Domain { .. })));
        let closed = ChoiceModelSpec::new(
            vec![lin, p],
            noise,
            vec![Interval::new(0.0, 4.0), Interval::new(0.0, 4.0)],
        )
        .unwrap();
        assert_eq!(closed.utility_value(1, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn log_rejects_nonpositive() {
        let m = m_log();
        assert!(matches!(m.utility_value(0, 0.0), Err(Error::Domain { .. })));
        assert!(matches!(m.utility_value(0, -1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn invalid_params_rejected() {
        let raw = RawPrimitive {
            kind: "log".into(),
            params: vec![-1.0],
        };
        assert!(UtilityPrimitive::try_from(raw).is_err());
        let raw = RawPrimitive {
            kind: "cubic".into(),
            params: vec![1.0],
        };
        assert!(UtilityPrimitive::try_from(raw).is_err());
    }

    #[test]
    fn polynomial_must_increase_on_domain() {
        let poly = UtilityPrimitive::Polynomial {
            coefficients: vec![0.0, -1.0, 1.0],
        };
        let lin = UtilityPrimitive::Linear {
            intercept: 0.0,
            slope: 1.0,
        };
        let bad = ChoiceModelSpec::new(
            vec![lin.clone(), poly.clone()],
            NoiseSpec::GumbelIid { scale: 1.0 },
            vec![Interval::new(0.0, 2.0), Interval::new(0.0, 2.0)],
        );
        assert!(matches!(bad, Err(Error::InvalidModel(_))));
        let ok = ChoiceModelSpec::new(
            vec![lin, poly],
            NoiseSpec::GumbelIid { scale: 1.0 },
            vec![Interval::new(0.0, 2.0), Interval::new(1.0, 2.0)],
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let prims = [
            UtilityPrimitive::Linear {
                intercept: 1.0,
                slope: 2.5,
            },
            UtilityPrimitive::Log { alpha: 0.5 },
            UtilityPrimitive::Power {
                coefficient: 2.0,
                exponent: 1.5,
            },
            UtilityPrimitive::Polynomial {
                coefficients: vec![1.0, 2.0, 0.5, 0.1],
            },
        ];
        for p in &prims {
            for &x in &[0.7, 1.3, 2.9] {
                let h = 1e-6;
                let fd = (p.value(x + h) - p.value(x - h)) / (2.0 * h);
                assert_relative_eq!(p.derivative(x), fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn closed_form_examples() {
        let lin = m_lin(Interval::new(-60.0, 60.0));
        let q = lin.choice_prob_closed_form(&[0.0, 0.0, 0.0]).unwrap();
        for j in 0..3 {
            assert_relative_eq!(q[j], 1.0 / 3.0, epsilon = 1e-15);
        }
        let q = lin.choice_prob_closed_form(&[1.0, 0.0, -50.0]).unwrap();
        assert!(q[2] < 1e-20);
        assert_relative_eq!(q[0], 1.0 / (1.0 + (-1f64).exp()), epsilon = 1e-12);
        assert_relative_eq!(q[0], 0.7311, epsilon = 1e-4);

        let log = m_log();
        let q = log.choice_prob_closed_form(&[2.0, 1.0, 4.0]).unwrap();
        assert_relative_eq!(q[0], 0.4, epsilon = 1e-12);
        assert_relative_eq!(q[1], 0.2, epsilon = 1e-12);
        assert_relative_eq!(q[2], 0.4, epsilon = 1e-12);
        assert!((q.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_needs_gumbel() {
        let lin = UtilityPrimitive::Linear {
            intercept: 0.0,
            slope: 1.0,
        };
        let m = ChoiceModelSpec::new(
            vec![lin.clone(), lin],
            NoiseSpec::GaussianIid { scale: 1.0 },
            vec![Interval::new(-1.0, 1.0); 2],
        )
        .unwrap();
        assert_eq!(
            m.choice_prob_closed_form(&[0.0, 0.0]),
            Err(Error::NoClosedForm("gaussian_iid"))
        );
        assert!(m.choice_prob_monte_carlo(&[0.0, 0.0], 10, 1).is_ok());
    }

    #[test]
    fn monte_carlo_examples() {
        let lin = m_lin(Interval::new(-1.0, 1.0));
        let q = lin.choice_prob_monte_carlo(&[0.0, 0.0, 0.0], 1_000_000, 7).unwrap();
        for j in 0..3 {
            assert!((q[j] - 1.0 / 3.0).abs() < 0.0015, "{q:?}");
        }
        let log = m_log();
        let q = log.choice_prob_monte_carlo(&[2.0, 1.0, 4.0], 1_000_000, 11).unwrap();
        for (j, want) in [0.4, 0.2, 0.4].iter().enumerate() {
            assert!((q[j] - want).abs() < 0.0015, "{q:?}");
        }
        let one = log.choice_prob_monte_carlo(&[2.0, 1.0, 4.0], 1, 3).unwrap();
        assert_eq!(one.as_slice().iter().filter(|&&p| p == 1.0).count(), 1);
        assert_eq!(one.sum(), 1.0);
    }

    #[test]
    fn correlated_gaussian_equicorrelated_is_symmetric() {
        let lin = UtilityPrimitive::Linear {
            intercept: 0.0,
            slope: 1.0,
        };
        let corr = vec![
            vec![1.0, 0.5, 0.5],
            vec![0.5, 1.0, 0.5],
            vec![0.5, 0.5, 1.0],
        ];
        let m = ChoiceModelSpec::new(
            vec![lin.clone(), lin.clone(), lin],
            NoiseSpec::GaussianCorrelated {
                scale: 1.0,
                correlation: corr,
            },
            vec![Interval::new(-1.0, 1.0); 3],
        )
        .unwrap();
        let q = m.choice_prob_monte_carlo(&[0.0, 0.0, 0.0], 200_000, 5).unwrap();
        for j in 0..3 {
            assert!((q[j] - 1.0 / 3.0).abs() < 0.005, "{q:?}");
        }
    }

    #[test]
    fn correlation_must_be_positive_definite() {
        let lin = UtilityPrimitive::Linear {
            intercept: 0.0,
            slope: 1.0,
        };
        let corr = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let m = ChoiceModelSpec::new(
            vec![lin.clone(), lin],
            NoiseSpec::GaussianCorrelated {
                scale: 1.0,
                correlation: corr,
            },
            vec![Interval::new(-1.0, 1.0); 2],
        );
        assert!(matches!(m, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn tabulate_structure_and_determinism() {
        let lin = m_lin(Interval::new(-1.0, 1.0));
        let grid = GridSpec::uniform(&[(-1.0, 1.0, 5); 3]).unwrap();
        let f = lin.tabulate(&grid, TabulationMethod::ClosedForm).unwrap();
        assert_eq!(f.node_count(), 125);
        for i in 0..f.node_count() {
            assert!((f.node_probs(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mc = TabulationMethod::MonteCarlo { draws: 500, seed: 9 };
        let a = lin.tabulate(&grid, mc).unwrap();
        let b = lin.tabulate(&grid, mc).unwrap();
        assert_eq!(a.values(), b.values());
        let c = lin
            .tabulate(&grid, TabulationMethod::MonteCarlo { draws: 500, seed: 10 })
            .unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn tabulate_nearest_node_matches_oracle() {
        let log = m_log();
        let grid = GridSpec::uniform(&[(0.5, 4.0, 21); 3]).unwrap();
        let f = log.tabulate(&grid, TabulationMethod::ClosedForm).unwrap();
        let node = f.grid().nearest_node(&[2.0, 1.0, 4.0]);
        let a = f.grid().node_coords(node);
        let want = log.choice_prob_closed_form(&a).unwrap();
        for j in 0..3 {
            assert_relative_eq!(f.node_probs(node)[j], want[j], epsilon = 1e-15);
        }
    }

    #[test]
    fn tabulate_rejects_grid_outside_domain() {
        let log = m_log();
        let grid = GridSpec::uniform(&[(0.0, 4.0, 5); 3]).unwrap();
        assert!(matches!(
            log.tabulate(&grid, TabulationMethod::ClosedForm),
            Err(Error::InvalidGrid(_))
        ));
    }

    #[test]
    fn serde_wire_form() {
        let p: UtilityPrimitive = serde_json::from_str(r#"{"kind":"log","params":[2.0]}"#).unwrap();
        assert_eq!(p, UtilityPrimitive::Log { alpha: 2.0 });
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"kind":"log","params":[2.0]}"#);
        let n: NoiseSpec = serde_json::from_str(r#"{"kind":"gumbel_iid"}"#).unwrap();
        assert_eq!(n, NoiseSpec::GumbelIid { scale: 1.0 });
    }
}
