//! End-to-end identification: ratio fits, level functions, density.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::characteristics::{build_omega, OmegaConfig, OmegaDiagnostics, OmegaFunction, UtilityFunction};
use crate::density::{check_normalization, default_v_grid, reconstruct_density, DensityGrid, DensityOptions, MassReport, VGrid};
use crate::error::{Error, Result};
use crate::field::ProbabilityField;
use crate::model::ProbVector;
use crate::sample::interior_points;
use crate::symmetry::{fit_ratio_sieve, test_condition_a, RatioFunction, SieveBasis, SymmetryReport};
use crate::verify::{compare_to_field, integrator_label, rationalized_choice_prob, Integrator, RationalizedProb, VerifyReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifyConfig {
    pub pivot: usize,
    pub basis: SieveBasis,
    pub degree: usize,
    /// Reference crossing level shared by every `omega_j`; midpoint of each `a_j` range when unset.
    pub a_ref: Option<f64>,
    pub omega: OmegaConfig,
    /// Nodes per `v` axis of the default lattice.
    pub v_nodes: usize,
    pub v_grid: Option<VGrid>,
    pub density: DensityOptions,
    pub condition_tol: f64,
    pub condition_points: usize,
    pub seed: u64,
    /// Continue when the income-effect condition fails.
    pub force: bool,
    pub validation_lattice: usize,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        IdentifyConfig {
            pivot: 0,
            basis: SieveBasis::LogPolynomial,
            degree: 1,
            a_ref: None,
            omega: OmegaConfig::default(),
            v_nodes: 101,
            v_grid: None,
            density: DensityOptions::default(),
            condition_tol: 5e-3,
            condition_points: 50,
            seed: 0,
            force: false,
            validation_lattice: 41,
        }
    }
}

/// Everything recovered from one field, in pivot-first labelling.
#[derive(Clone, Debug)]
pub struct Identification {
    /// `order[i]` is the input label of internal alternative `i`.
    pub order: Vec<usize>,
    pub field: ProbabilityField,
    pub condition: SymmetryReport,
    pub ratios: Vec<RatioFunction>,
    pub omegas: Vec<OmegaFunction>,
    pub omega_diagnostics: Vec<OmegaDiagnostics>,
    pub density: DensityGrid,
    pub mass: MassReport,
}

/// Runs the pipeline with sieve-fitted ratios.
pub fn identify(field: &ProbabilityField, config: &IdentifyConfig) -> Result<Identification> {
    identify_with(field, config, None)
}

/// Runs the pipeline; `ratios`, when given, replaces the sieve fits
/// (indexed by internal alternative `1..=J`).
pub fn identify_with(
    field: &ProbabilityField,
    config: &IdentifyConfig,
    ratios: Option<Vec<RatioFunction>>,
) -> Result<Identification> {
    let k = field.n_alternatives();
    if config.pivot >= k {
        return Err(Error::InvalidArgument(format!("pivot {} out of range 0..{k}", config.pivot)));
    }
    let order = ProbabilityField::pivot_order(k, config.pivot);
    let internal = if config.pivot == 0 {
        field.clone()
    } else {
        field.permuted(&order)?
    };

    let pts = interior_points(internal.grid(), config.condition_points, config.seed, 1.0);
    let condition = test_condition_a(&internal, 0, &pts, config.condition_tol)?;
    if !condition.passed && !config.force {
        return Err(Error::ConditionFailed {
            spread: condition.max_statistic,
            tol: config.condition_tol,
        });
    }

    let ratios = match ratios {
        Some(r) => {
            if r.len() != k - 1 {
                return Err(Error::DimensionMismatch {
                    what: "ratio functions",
                    expected: k - 1,
                    got: r.len(),
                });
            }
            r
        }
        None => (1..k)
            .map(|j| {
                let mut r = fit_ratio_sieve(&internal, j, 0, config.basis, config.degree)?;
                r.alternative = order[j];
                r.pivot = order[0];
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?,
    };

    let mut omegas = Vec::with_capacity(k - 1);
    let mut diags = Vec::with_capacity(k - 1);
    for t in &ratios {
        let cfg = OmegaConfig {
            a_ref: config.a_ref.or(config.omega.a_ref),
            ..config.omega
        };
        let om = build_omega(t, t.domain, &cfg)?;
        diags.push(om.validate(config.validation_lattice));
        omegas.push(om);
    }

    let v_grid = match &config.v_grid {
        Some(g) => g.clone(),
        None => default_v_grid(&internal, &omegas, config.v_nodes)?,
    };
    let density = reconstruct_density(&internal, &omegas, &v_grid, &config.density)?;
    let mass = check_normalization(&density);
    Ok(Identification {
        order,
        field: internal,
        condition,
        ratios,
        omegas,
        omega_diagnostics: diags,
        density,
        mass,
    })
}

impl Identification {
    /// Pivot first, then `w_j` for internal alternatives `1..=J`.
    pub fn utilities(&self) -> Vec<UtilityFunction> {
        let mut u = Vec::with_capacity(self.omegas.len() + 1);
        u.push(UtilityFunction::Numeraire);
        u.extend(self.omegas.iter().cloned().map(UtilityFunction::Recovered));
        u
    }

    /// True when no node of the density was flagged negative.
    pub fn numerically_sound(&self) -> bool {
        self.density.negative_flagged == 0
    }

    pub fn to_internal(&self, a: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&o| a[o]).collect()
    }

    pub fn to_input(&self, p: &[f64]) -> Vec<f64> {
        let mut out = p.to_vec();
        for (i, &o) in self.order.iter().enumerate() {
            out[o] = p[i];
        }
        out
    }

    /// Rationalized probabilities at `a`, both in input labelling.
    pub fn rationalized(&self, a: &[f64], method: Integrator) -> Result<RationalizedProb> {
        let mut r = rationalized_choice_prob(&self.utilities(), &self.density, &self.to_internal(a), method)?;
        r.probs = ProbVector::from_raw(self.to_input(r.probs.as_slice()));
        r.raw = self.to_input(&r.raw);
        Ok(r)
    }

    /// Round trip against `field` (input labelling).
    pub fn round_trip(
        &self,
        field: &ProbabilityField,
        points: &[Vec<f64>],
        tol: f64,
        method: Integrator,
    ) -> Result<VerifyReport> {
        let label = integrator_label(method, &self.density);
        compare_to_field(field, points, tol, label, self.mass.trapezoid_mass, |i, a| {
            let m = match method {
                Integrator::MonteCarlo { draws, seed } => Integrator::MonteCarlo {
                    draws,
                    seed: seed.wrapping_add(i as u64),
                },
                q => q,
            };
            let r = self.rationalized(a, m)?;
            Ok((r.probs, r.leakage, r.skipped_mass))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Spacing;
    use crate::field::GridSpec;
    use crate::fixtures::{m_log, m_log_pair, planted_interaction};
    use crate::model::TabulationMethod;

    #[test]
    fn pair_pipeline_round_trip() {
        let m = m_log_pair();
        let field = m
            .tabulate(
                &GridSpec::uniform(&[(0.2, 10.0, 197), (0.1, 10.0, 199)]).unwrap(),
                TabulationMethod::ClosedForm,
            )
            .unwrap();
        let cfg = IdentifyConfig {
            a_ref: Some(1.0),
            v_grid: Some(VGrid::new(alloc::vec![VGrid::axis_nodes(0.003, 300.0, 401, Spacing::Log).unwrap()]).unwrap()),
            ..IdentifyConfig::default()
        };
        let id = identify(&field, &cfg).unwrap();
        assert!(id.condition.vacuous);
        assert!(id.numerically_sound());
        assert!((id.mass.trapezoid_mass - (300.0 / 301.0 - 0.003 / 1.003)).abs() < 5e-3, "{:?}", id.mass);
        let pts = interior_points(field.grid(), 20, 3, 2.0);
        let r = id.round_trip(&field, &pts, 0.02, Integrator::GridQuadrature).unwrap();
        assert!(r.passed, "{}", r.max_error);
    }

    #[test]
    fn pivot_relabelling_round_trip() {
        let m = m_log_pair();
        let field = m
            .tabulate(
                &GridSpec::uniform(&[(0.2, 10.0, 197), (0.1, 10.0, 199)]).unwrap(),
                TabulationMethod::ClosedForm,
            )
            .unwrap();
        // pivot 1: the roles of the axes swap
        let cfg = IdentifyConfig {
            pivot: 1,
            a_ref: Some(1.0),
            v_nodes: 401,
            ..IdentifyConfig::default()
        };
        let id = identify(&field, &cfg).unwrap();
        assert_eq!(id.order, alloc::vec![1, 0]);
        assert_eq!(id.ratios[0].alternative, 0);
        assert_eq!(id.ratios[0].pivot, 1);
        let r = id.rationalized(&[9.0, 0.2], Integrator::GridQuadrature);
        if let Ok(r) = r {
            let exact = field.interpolate(&[9.0, 0.2]).unwrap().probs;
            assert!((r.probs[0] - exact[0]).abs() < 0.02, "{r:?} vs {exact:?}");
        }
    }

    #[test]
    fn refuses_condition_failure_without_force() {
        let grid = GridSpec::uniform(&[(0.5, 2.0, 21); 3]).unwrap();
        let field = planted_interaction(grid);
        let e = identify(&field, &IdentifyConfig::default());
        assert!(matches!(e, Err(Error::ConditionFailed { .. })), "{e:?}");
    }

    #[test]
    fn m_log_pipeline_runs() {
        let field = m_log()
            .tabulate(&GridSpec::uniform(&[(1.0, 4.0, 41); 3]).unwrap(), TabulationMethod::ClosedForm)
            .unwrap();
        let cfg = IdentifyConfig {
            a_ref: Some(1.0),
            v_nodes: 31,
            ..IdentifyConfig::default()
        };
        let id = identify(&field, &cfg).unwrap();
        assert!(id.condition.passed);
        assert_eq!(id.omegas.len(), 2);
        assert!(id.omega_diagnostics.iter().all(|d| d.monotone_ok()));
        assert!(id.density.supported_nodes() > 0);
    }
}
