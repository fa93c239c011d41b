#![allow(dead_code)]

use rumid_core::field::{GridSpec, ProbabilityField};
use rumid_core::model::{softmax, ChoiceModelSpec, Interval, NoiseSpec, ProbVector, UtilityPrimitive};

pub fn m_lin() -> ChoiceModelSpec {
    let lin = UtilityPrimitive::Linear {
        intercept: 0.0,
        slope: 1.0,
    };
    ChoiceModelSpec::new(
        vec![lin.clone(), lin.clone(), lin],
        NoiseSpec::GumbelIid { scale: 1.0 },
        vec![Interval::new(-10.0, 10.0); 3],
    )
    .unwrap()
}

/// `h_j = alpha_j ln a` with alphas (1, 2, 0.5).
pub fn m_log() -> ChoiceModelSpec {
    m_log_alphas(&[1.0, 2.0, 0.5])
}

pub fn m_log_alphas(alphas: &[f64]) -> ChoiceModelSpec {
    ChoiceModelSpec::new(
        alphas.iter().map(|&alpha| UtilityPrimitive::Log { alpha }).collect(),
        NoiseSpec::GumbelIid { scale: 1.0 },
        vec![Interval::new(1e-3, 1e3); alphas.len()],
    )
    .unwrap()
}

/// Softmax with `u_1 = a_1 + 0.3 a_1 a_2`.
pub fn planted_interaction(grid: GridSpec) -> ProbabilityField {
    ProbabilityField::from_fn(grid, "planted", |_, a| {
        let u = [a[0], a[1] + 0.3 * a[1] * a[2], a[2]];
        ProbVector::new(softmax(&u, 1.0))
    })
    .unwrap()
}

pub fn cube(lo: f64, hi: f64, n: usize, dims: usize) -> GridSpec {
    GridSpec::uniform(&vec![(lo, hi, n); dims]).unwrap()
}

/// `F(v) = 1 / (1 + 1/v_1 + 1/v_2)` for M_LOG anchored at `a_ref = 1`.
pub fn m_log_cdf(v1: f64, v2: f64) -> f64 {
    1.0 / (1.0 + 1.0 / v1 + 1.0 / v2)
}

/// Density of [`m_log_cdf`].
pub fn m_log_density(v1: f64, v2: f64) -> f64 {
    let s = 1.0 + 1.0 / v1 + 1.0 / v2;
    2.0 / (v1 * v1 * v2 * v2 * s * s * s)
}
