//! Reference models shared by unit tests.

use alloc::vec;

use crate::field::{GridSpec, ProbabilityField};
use crate::model::{softmax, ChoiceModelSpec, Interval, NoiseSpec, ProbVector, UtilityPrimitive};

pub fn m_lin(domain: Interval) -> ChoiceModelSpec {
    let lin = UtilityPrimitive::Linear {
        intercept: 0.0,
        slope: 1.0,
    };
    ChoiceModelSpec::new(
        vec![lin.clone(), lin.clone(), lin],
        NoiseSpec::GumbelIid { scale: 1.0 },
        vec![domain; 3],
    )
    .unwrap()
}

pub fn m_log() -> ChoiceModelSpec {
    ChoiceModelSpec::new(
        vec![
            UtilityPrimitive::Log { alpha: 1.0 },
            UtilityPrimitive::Log { alpha: 2.0 },
            UtilityPrimitive::Log { alpha: 0.5 },
        ],
        NoiseSpec::GumbelIid { scale: 1.0 },
        vec![Interval::new(1e-3, 1e3); 3],
    )
    .unwrap()
}

/// M_LOG restricted to alternatives {0, 1}.
pub fn m_log_pair() -> ChoiceModelSpec {
    ChoiceModelSpec::new(
        vec![
            UtilityPrimitive::Log { alpha: 1.0 },
            UtilityPrimitive::Log { alpha: 2.0 },
        ],
        NoiseSpec::GumbelIid { scale: 1.0 },
        vec![Interval::new(1e-3, 1e3); 2],
    )
    .unwrap()
}

/// Softmax with `u_1 = a_1 + 0.3 a_1 a_2`; breaks the pairwise-ratio condition.
pub fn planted_interaction(grid: GridSpec) -> ProbabilityField {
    ProbabilityField::from_fn(grid, "planted", |_, a| {
        let u = [a[0], a[1] + 0.3 * a[1] * a[2], a[2]];
        Ok(ProbVector::new(softmax(&u, 1.0)).unwrap())
    })
    .unwrap()
}
