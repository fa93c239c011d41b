//! Choice probabilities implied by recovered utilities and density, and the
//! round trip back to the input field.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::characteristics::{Profile, UtilityFunction};
use crate::density::{check_normalization, DensityGrid};
use crate::error::{Error, Result};
use crate::field::ProbabilityField;
use crate::model::ProbVector;

/// Accepted range for the density mass.
pub const MASS_GATE: (f64, f64) = (0.95, 1.05);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Integrator {
    GridQuadrature,
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalizedProb {
    /// Renormalized probabilities.
    pub probs: ProbVector,
    /// Mass won by each alternative before renormalization.
    pub raw: Vec<f64>,
    pub raw_sum: f64,
    /// `1 - raw_sum`.
    pub leakage: f64,
    /// Mass of cells where some `w_j` could not be evaluated.
    pub skipped_mass: f64,
}

enum Evaluator {
    Numeraire(f64),
    Profile(Profile),
}

impl Evaluator {
    fn eval(&self, v: f64) -> Option<f64> {
        match self {
            Evaluator::Numeraire(a) => Some(*a),
            Evaluator::Profile(p) => p.utility(v).ok(),
        }
    }
}

fn argmax(u: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in u.iter().enumerate().skip(1) {
        if x > u[best] {
            best = j;
        }
    }
    best
}

fn evaluators(utilities: &[UtilityFunction], a: &[f64]) -> Result<Vec<Evaluator>> {
    utilities
        .iter()
        .zip(a)
        .map(|(u, &aj)| match u {
            UtilityFunction::Numeraire => Ok(Evaluator::Numeraire(aj)),
            UtilityFunction::Recovered(om) => om.profile(aj).map(Evaluator::Profile),
        })
        .collect()
}

/// Probability that each alternative attains the maximal recovered utility at `a`.
///
/// `utilities[0]` belongs to the pivot and is evaluated without a `v` coordinate;
/// `utilities[j]` for `j >= 1` reads `v_j`.
pub fn rationalized_choice_prob(
    utilities: &[UtilityFunction],
    density: &DensityGrid,
    a: &[f64],
    method: Integrator,
) -> Result<RationalizedProb> {
    let k = utilities.len();
    if a.len() != k {
        return Err(Error::DimensionMismatch {
            what: "offer vector",
            expected: k,
            got: a.len(),
        });
    }
    if density.dims() + 1 != k {
        return Err(Error::DimensionMismatch {
            what: "density dimensions",
            expected: k - 1,
            got: density.dims(),
        });
    }
    let mass = check_normalization(density).trapezoid_mass;
    if !(mass >= MASS_GATE.0 && mass <= MASS_GATE.1) {
        return Err(Error::Unnormalized {
            mass,
            lo: MASS_GATE.0,
            hi: MASS_GATE.1,
        });
    }
    let ev = evaluators(utilities, a)?;
    let (raw, skipped) = match method {
        Integrator::GridQuadrature => quadrature(&ev, density),
        Integrator::MonteCarlo { draws, seed } => monte_carlo(&ev, density, draws, seed)?,
    };
    let raw_sum: f64 = raw.iter().sum();
    if !(raw_sum > 0.0) {
        return Err(Error::InsufficientSamples(
            "no density mass could be assigned to any alternative".into(),
        ));
    }
    let probs = ProbVector::from_raw(raw.iter().map(|x| x / raw_sum).collect());
    Ok(RationalizedProb {
        probs,
        raw,
        raw_sum,
        leakage: 1.0 - raw_sum,
        skipped_mass: skipped,
    })
}

fn quadrature(ev: &[Evaluator], d: &DensityGrid) -> (Vec<f64>, f64) {
    let g = &d.v_grid;
    let dims = g.dims();
    // utilities along each v axis, computed once
    let table: Vec<Vec<Option<f64>>> = (0..dims)
        .map(|j| g.axes()[j].iter().map(|&v| ev[j + 1].eval(v)).collect())
        .collect();
    let u0 = ev[0].eval(0.0).unwrap_or(f64::NAN);
    let w = d.quadrature_weights();
    let mut raw = vec![0.0; dims + 1];
    let mut skipped = 0.0;
    let mut u = vec![0.0; dims + 1];
    for (node, &wt) in w.iter().enumerate() {
        if wt == 0.0 {
            continue;
        }
        let m = wt * d.f[node];
        let idx = g.unravel(node);
        u[0] = u0;
        let mut ok = true;
        for j in 0..dims {
            match table[j][idx[j]] {
                Some(x) => u[j + 1] = x,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            raw[argmax(&u)] += m;
        } else {
            skipped += m;
        }
    }
    (raw, skipped)
}

fn monte_carlo(ev: &[Evaluator], d: &DensityGrid, draws: usize, seed: u64) -> Result<(Vec<f64>, f64)> {
    if draws == 0 {
        return Err(Error::InsufficientSamples("monte carlo needs at least one draw".into()));
    }
    let g = &d.v_grid;
    let dims = g.dims();
    let cells = d.supported_cells();
    let mut cum = Vec::with_capacity(cells.len());
    let mut total = 0.0;
    for (idx, vol) in &cells {
        total += d.cell_mass(idx, *vol);
        cum.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; dims + 1];
    let mut skipped = 0usize;
    let mut u = vec![0.0; dims + 1];
    u[0] = ev[0].eval(0.0).unwrap_or(f64::NAN);
    for _ in 0..draws {
        let r = rng.random::<f64>() * total;
        let c = cum.partition_point(|&x| x <= r).min(cells.len() - 1);
        let lower = &cells[c].0;
        let mut ok = true;
        for j in 0..dims {
            let ax = &g.axes()[j];
            let v = ax[lower[j]] + rng.random::<f64>() * (ax[lower[j] + 1] - ax[lower[j]]);
            match ev[j + 1].eval(v) {
                Some(x) => u[j + 1] = x,
                None => ok = false,
            }
        }
        if ok {
            counts[argmax(&u)] += 1;
        } else {
            skipped += 1;
        }
    }
    let scale = total / draws as f64;
    Ok((
        counts.iter().map(|&c| c as f64 * scale).collect(),
        skipped as f64 * scale,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointError {
    pub a: Vec<f64>,
    pub input: Vec<f64>,
    pub recovered: Vec<f64>,
    pub max_abs_error: f64,
    pub leakage: f64,
    pub skipped_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    /// Integrator label with its parameters.
    pub method: String,
    pub tol: f64,
    pub points: usize,
    pub max_abs_error: Vec<f64>,
    pub mean_abs_error: Vec<f64>,
    pub max_error: f64,
    pub worst_point: Vec<f64>,
    /// Trapezoid mass of the density (`NaN` when no density was used).
    pub mass: f64,
    pub mass_ok: bool,
    pub max_leakage: f64,
    pub passed: bool,
    pub per_point: Vec<PointError>,
}

/// Compares `recover(a)` with the field at each point. `recover` returns
/// probabilities with their leakage and skipped mass.
pub fn compare_to_field<R>(
    field: &ProbabilityField,
    points: &[Vec<f64>],
    tol: f64,
    method: String,
    mass: f64,
    mut recover: R,
) -> Result<VerifyReport>
where
    R: FnMut(usize, &[f64]) -> Result<(ProbVector, f64, f64)>,
{
    let k = field.n_alternatives();
    let mut max_err: Vec<f64> = vec![0.0; k];
    let mut sum_err: Vec<f64> = vec![0.0; k];
    let mut per_point = Vec::with_capacity(points.len());
    let mut worst = (0.0, Vec::new());
    let mut max_leak: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        let input = field.interpolate(a)?.probs;
        let (rec, leakage, skipped) = recover(i, a)?;
        let mut pmax: f64 = 0.0;
        for j in 0..k {
            let e = (rec[j] - input[j]).abs();
            if e > max_err[j] {
                max_err[j] = e;
            }
            sum_err[j] += e;
            pmax = pmax.max(e);
        }
        if pmax > worst.0 || worst.1.is_empty() {
            worst = (pmax, a.clone());
        }
        max_leak = max_leak.max(leakage.abs());
        per_point.push(PointError {
            a: a.clone(),
            input: input.into_vec(),
            recovered: rec.into_vec(),
            max_abs_error: pmax,
            leakage,
            skipped_mass: skipped,
        });
    }
    let n = points.len().max(1) as f64;
    let max_error = max_err.iter().cloned().fold(0.0, f64::max);
    let mass_ok = mass.is_nan() || (mass >= MASS_GATE.0 && mass <= MASS_GATE.1);
    Ok(VerifyReport {
        method,
        tol,
        points: points.len(),
        mean_abs_error: sum_err.iter().map(|s| s / n).collect(),
        max_abs_error: max_err,
        max_error,
        worst_point: worst.1,
        mass,
        mass_ok,
        max_leakage: max_leak,
        passed: mass_ok && max_error <= tol,
        per_point,
    })
}

pub fn integrator_label(method: Integrator, density: &DensityGrid) -> String {
    match method {
        Integrator::GridQuadrature => {
            let dims: Vec<String> = density.v_grid.axes().iter().map(|a| alloc::format!("{}", a.len())).collect();
            alloc::format!("grid_quadrature:{}", dims.join("x"))
        }
        Integrator::MonteCarlo { draws, seed } => alloc::format!("monte_carlo:draws={draws}:seed={seed}"),
    }
}

/// Round trip: rationalized probabilities against the field at `points`.
///
/// With the Monte Carlo integrator, point `i` uses seed `seed + i`.
pub fn round_trip_report(
    field: &ProbabilityField,
    utilities: &[UtilityFunction],
    density: &DensityGrid,
    points: &[Vec<f64>],
    tol: f64,
    method: Integrator,
) -> Result<VerifyReport> {
    let mass = check_normalization(density).trapezoid_mass;
    let label = integrator_label(method, density);
    compare_to_field(field, points, tol, label, mass, |i, a| {
        let m = match method {
            Integrator::MonteCarlo { draws, seed } => Integrator::MonteCarlo {
                draws,
                seed: seed.wrapping_add(i as u64),
            },
            q => q,
        };
        let r = rationalized_choice_prob(utilities, density, a, m)?;
        Ok((r.probs, r.leakage, r.skipped_mass))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationReport {
    pub tol: f64,
    pub shifts: Vec<f64>,
    pub compared: usize,
    /// Point-shift pairs that left the hull.
    pub skipped: usize,
    pub max_deviation: f64,
    pub worst_location: Vec<f64>,
    pub worst_shift: f64,
    pub passed: bool,
}

/// Compares `q(a + c 1)` with `q(a)` for every point and shift.
pub fn translation_invariance_check(
    field: &ProbabilityField,
    points: &[Vec<f64>],
    shifts: &[f64],
    tol: f64,
) -> Result<TranslationReport> {
    let mut r = TranslationReport {
        tol,
        shifts: shifts.to_vec(),
        compared: 0,
        skipped: 0,
        max_deviation: 0.0,
        worst_location: Vec::new(),
        worst_shift: 0.0,
        passed: true,
    };
    for a in points {
        let base = field.interpolate(a)?.probs;
        for &c in shifts {
            let b: Vec<f64> = a.iter().map(|x| x + c).collect();
            if !field.grid().contains(&b) {
                r.skipped += 1;
                continue;
            }
            let q = field.interpolate(&b)?.probs;
            let dev = q.max_abs_diff(&base);
            r.compared += 1;
            if dev > r.max_deviation || r.worst_location.is_empty() {
                r.max_deviation = dev;
                r.worst_location = a.clone();
                r.worst_shift = c;
            }
        }
    }
    r.passed = r.max_deviation <= tol;
    Ok(r)
}
