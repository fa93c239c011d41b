//! Seeded point sets for the field tests.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::GridSpec;

/// `n` uniform random points at least `margin_steps` grid steps inside the hull.
pub fn interior_points(grid: &GridSpec, n: usize, seed: u64, margin_steps: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            grid.axes()
                .iter()
                .map(|ax| {
                    let m = margin_steps * ax.step();
                    let (lo, hi) = (ax.lo + m, ax.hi - m);
                    if lo >= hi {
                        0.5 * (ax.lo + ax.hi)
                    } else {
                        rng.random_range(lo..hi)
                    }
                })
                .collect()
        })
        .collect()
}

/// All grid nodes at least `margin` nodes away from every face, thinned to every `stride`-th per axis.
pub fn interior_nodes(grid: &GridSpec, margin: usize, stride: usize) -> Vec<Vec<f64>> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for node in 0..grid.node_count() {
        let idx = grid.unravel(node);
        let keep = idx.iter().zip(grid.axes()).all(|(&i, ax)| {
            i >= margin && i + margin < ax.n && (i - margin) % stride == 0
        });
        if keep {
            out.push(grid.coords_of(&idx));
        }
    }
    out
}
