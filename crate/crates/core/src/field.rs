//! Choice probabilities tabulated on uniform rectangular grids.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProbVector;
#[allow(unused_imports)]
use num_traits::Float;

/// One grid axis: `n` equally spaced nodes from `lo` to `hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidGrid(format!(
                "axis bounds must be finite with lo < hi, got [{lo}, {hi}]"
            )));
        }
        if n < 5 {
            return Err(Error::InvalidGrid(format!(
                "each axis needs at least 5 nodes, got {n}"
            )));
        }
        Ok(Axis { lo, hi, n })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    fn slack(&self) -> f64 {
        1e-12 * (self.hi - self.lo)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo - self.slack() && x <= self.hi + self.slack()
    }

    /// Cell index `i` (nodes `i`, `i+1`) and fractional position in it.
    fn locate(&self, axis: usize, x: f64) -> Result<(usize, f64)> {
        if !self.contains(x) || !x.is_finite() {
            return Err(Error::OutsideHull {
                axis,
                value: x,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let mut t = (x.clamp(self.lo, self.hi) - self.lo) / self.step();
        let r = t.round();
        if (t - r).abs() < 1e-9 {
            t = r;
        }
        let i = (t.floor() as usize).min(self.n - 2);
        Ok((i, (t - i as f64).clamp(0.0, 1.0)))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GridAxes {
    axes: Vec<Axis>,
}

/// Tensor-product grid over `(a_0, ..., a_J)`; axis 0 varies slowest in flat order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridAxes", into = "GridAxes")]
pub struct GridSpec {
    axes: Vec<Axis>,
    strides: Vec<usize>,
}

impl TryFrom<GridAxes> for GridSpec {
    type Error = Error;
    fn try_from(g: GridAxes) -> Result<Self> {
        GridSpec::new(g.axes)
    }
}

impl From<GridSpec> for GridAxes {
    fn from(g: GridSpec) -> Self {
        GridAxes { axes: g.axes }
    }
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least two axes, got {}",
                axes.len()
            )));
        }
        for ax in &axes {
            Axis::new(ax.lo, ax.hi, ax.n)?;
        }
        let mut strides = vec![1usize; axes.len()];
        for k in (0..axes.len() - 1).rev() {
            strides[k] = strides[k + 1]
                .checked_mul(axes[k + 1].n)
                .ok_or_else(|| Error::InvalidGrid("grid too large".into()))?;
        }
        strides[0]
            .checked_mul(axes[0].n)
            .ok_or_else(|| Error::InvalidGrid("grid too large".into()))?;
        Ok(GridSpec { axes, strides })
    }

    /// Grid from `(lo, hi, n)` triples.
    pub fn uniform(spec: &[(f64, f64, usize)]) -> Result<Self> {
        let axes = spec
            .iter()
            .map(|&(lo, hi, n)| Axis::new(lo, hi, n))
            .collect::<Result<Vec<_>>>()?;
        GridSpec::new(axes)
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn node_count(&self) -> usize {
        self.strides[0] * self.axes[0].n
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims()];
        for k in 0..self.dims() {
            idx[k] = flat / self.strides[k];
            flat %= self.strides[k];
        }
        idx
    }

    pub fn node_coords(&self, flat: usize) -> Vec<f64> {
        self.coords_of(&self.unravel(flat))
    }

    pub fn coords_of(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(&self.axes)
            .map(|(&i, ax)| ax.node(i))
            .collect()
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dims() && a.iter().zip(&self.axes).all(|(&x, ax)| ax.contains(x))
    }

    pub fn nearest_node(&self, a: &[f64]) -> usize {
        let idx: Vec<usize> = a
            .iter()
            .zip(&self.axes)
            .map(|(&x, ax)| {
                let t = ((x - ax.lo) / ax.step()).round();
                t.clamp(0.0, (ax.n - 1) as f64) as usize
            })
            .collect();
        self.ravel(&idx)
    }

    /// True when no index sits on the first or last node of its axis.
    pub fn is_interior(&self, idx: &[usize]) -> bool {
        idx.iter().zip(&self.axes).all(|(&i, ax)| i > 0 && i + 1 < ax.n)
    }

    fn check_point(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.dims() {
            return Err(Error::DimensionMismatch {
                what: "point",
                expected: self.dims(),
                got: a.len(),
            });
        }
        Ok(())
    }

    /// Multilinear weights of the cell containing `a`: (corner node index, weight).
    fn corners(&self, a: &[f64]) -> Result<Vec<(Vec<usize>, f64)>> {
        self.check_point(a)?;
        let cells = a
            .iter()
            .enumerate()
            .map(|(k, &x)| self.axes[k].locate(k, x))
            .collect::<Result<Vec<_>>>()?;
        let d = self.dims();
        let mut out = Vec::with_capacity(1 << d);
        for mask in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = vec![0; d];
            for k in 0..d {
                let (i, t) = cells[k];
                if mask >> k & 1 == 1 {
                    w *= t;
                    idx[k] = i + 1;
                } else {
                    w *= 1.0 - t;
                    idx[k] = i;
                }
            }
            if w != 0.0 {
                out.push((idx, w));
            }
        }
        Ok(out)
    }
}

/// Finite-difference derivative with a flag for one-sided stencils.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Derivative {
    pub value: f64,
    pub one_sided: bool,
}

/// Interpolated probabilities and the pre-renormalization sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interpolated {
    pub probs: ProbVector,
    pub raw_sum: f64,
    pub renormalized: bool,
}

/// Probabilities `q_j` of all alternatives at every node of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityField {
    grid: GridSpec,
    values: Vec<f64>,
    provenance: String,
}

/// Second-order first-derivative stencil at node `i` of `ax`.
fn stencil(ax: &Axis, i: usize) -> ([(isize, f64); 3], usize, bool) {
    let h = ax.step();
    if i == 0 {
        (
            [(0, -1.5 / h), (1, 2.0 / h), (2, -0.5 / h)],
            3,
            true,
        )
    } else if i + 1 == ax.n {
        (
            [(0, 1.5 / h), (-1, -2.0 / h), (-2, 0.5 / h)],
            3,
            true,
        )
    } else {
        ([(-1, -0.5 / h), (1, 0.5 / h), (0, 0.0)], 2, false)
    }
}

impl ProbabilityField {
    /// Field from node-major values (`q_0..q_J` for each node in flat order).
    pub fn from_values(grid: GridSpec, values: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        let k = grid.dims();
        let want = grid.node_count() * k;
        if values.len() != want {
            return Err(Error::DimensionMismatch {
                what: "field values",
                expected: want,
                got: values.len(),
            });
        }
        for (node, q) in values.chunks(k).enumerate() {
            ProbVector::new(q.to_vec()).map_err(|e| {
                Error::InvalidArgument(format!(
                    "node {:?}: {e}",
                    grid.node_coords(node)
                ))
            })?;
        }
        Ok(ProbabilityField {
            grid,
            values,
            provenance: provenance.into(),
        })
    }

    /// Field from a per-node generator `f(flat_index, coordinates)`.
    pub fn from_fn<F>(grid: GridSpec, provenance: impl Into<String>, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, &[f64]) -> Result<ProbVector>,
    {
        let k = grid.dims();
        let mut values = Vec::with_capacity(grid.node_count() * k);
        for node in 0..grid.node_count() {
            let a = grid.node_coords(node);
            let q = f(node, &a)?;
            if q.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "probability vector",
                    expected: k,
                    got: q.len(),
                });
            }
            values.extend_from_slice(q.as_slice());
        }
        ProbabilityField::from_values(grid, values, provenance)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n_alternatives(&self) -> usize {
        self.grid.dims()
    }

    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn node_probs(&self, node: usize) -> &[f64] {
        let k = self.n_alternatives();
        &self.values[node * k..(node + 1) * k]
    }

    #[inline]
    fn q(&self, node: usize, j: usize) -> f64 {
        self.values[node * self.n_alternatives() + j]
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

    /// Multilinear interpolation, renormalized to sum to one.
    pub fn interpolate(&self, a: &[f64]) -> Result<Interpolated> {
        let k = self.n_alternatives();
        let mut q = vec![0.0; k];
        for (idx, w) in self.grid.corners(a)? {
            let node = self.grid.ravel(&idx);
            for (j, qj) in q.iter_mut().enumerate() {
                *qj += w * self.q(node, j);
            }
        }
        let raw_sum: f64 = q.iter().sum();
        // leave rounding-level sums alone so node values come back bit-exact
        if (raw_sum - 1.0).abs() > 1e-12 {
            for qj in &mut q {
                *qj /= raw_sum;
            }
        }
        Ok(Interpolated {
            probs: ProbVector::from_raw(q),
            raw_sum,
            renormalized: (raw_sum - 1.0).abs() > 1e-9,
        })
    }

    /// Interpolated `q_j` without renormalization.
    pub fn value_at(&self, j: usize, a: &[f64]) -> Result<f64> {
        self.check_alternative(j)?;
        let mut s = 0.0;
        for (idx, w) in self.grid.corners(a)? {
            s += w * self.q(self.grid.ravel(&idx), j);
        }
        Ok(s)
    }

    fn check_axes(&self, axes: &[usize]) -> Result<()> {
        for (i, &k) in axes.iter().enumerate() {
            if k >= self.grid.dims() {
                return Err(Error::InvalidArgument(format!(
                    "axis {k} out of range 0..{}",
                    self.grid.dims()
                )));
            }
            if axes[..i].contains(&k) {
                return Err(Error::InvalidArgument(format!("axis {k} repeated")));
            }
        }
        Ok(())
    }

    /// Tensor-product finite difference of `q_j` along `axes` at a grid node.
    pub fn nodal_derivative(&self, idx: &[usize], j: usize, axes: &[usize]) -> Derivative {
        let mut stencils = Vec::with_capacity(axes.len());
        let mut one_sided = false;
        for &k in axes {
            let (s, len, os) = stencil(self.grid.axis(k), idx[k]);
            one_sided |= os;
            stencils.push((s, len));
        }
        let mut counter = vec![0usize; axes.len()];
        let mut at = idx.to_vec();
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for (m, &k) in axes.iter().enumerate() {
                let (off, wt) = stencils[m].0[counter[m]];
                at[k] = (idx[k] as isize + off) as usize;
                w *= wt;
            }
            if w != 0.0 {
                total += w * self.q(self.grid.ravel(&at), j);
            }
            let mut m = 0;
            loop {
                if m == axes.len() {
                    return Derivative {
                        value: total,
                        one_sided,
                    };
                }
                counter[m] += 1;
                if counter[m] < stencils[m].1 {
                    break;
                }
                counter[m] = 0;
                m += 1;
            }
        }
    }

    /// Mixed partial of `q_r` along the distinct `axes`, interpolated from nodal stencils.
    pub fn mixed_partial(&self, r: usize, axes: &[usize], a: &[f64]) -> Result<Derivative> {
        self.check_alternative(r)?;
        self.check_axes(axes)?;
        if axes.is_empty() {
            return Err(Error::InvalidArgument("no derivative axes given".into()));
        }
        let mut value = 0.0;
        let mut one_sided = false;
        for (idx, w) in self.grid.corners(a)? {
            let d = self.nodal_derivative(&idx, r, axes);
            value += w * d.value;
            one_sided |= d.one_sided;
        }
        Ok(Derivative { value, one_sided })
    }

    /// `dq_j / da_k` at `a`.
    pub fn partial(&self, j: usize, k: usize, a: &[f64]) -> Result<Derivative> {
        self.mixed_partial(j, &[k], a)
    }

    /// Field with alternatives relabeled: new alternative `i` is old `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<ProbabilityField> {
        let k = self.n_alternatives();
        let mut seen = vec![false; k];
        if order.len() != k || order.iter().any(|&o| o >= k || core::mem::replace(&mut seen[o], true)) {
            return Err(Error::InvalidArgument(format!(
                "{order:?} is not a permutation of 0..{k}"
            )));
        }
        let axes: Vec<Axis> = order.iter().map(|&o| *self.grid.axis(o)).collect();
        let grid = GridSpec::new(axes)?;
        let mut values = vec![0.0; self.values.len()];
        let mut old_idx = vec![0; k];
        for node in 0..grid.node_count() {
            let idx = grid.unravel(node);
            for i in 0..k {
                old_idx[order[i]] = idx[i];
            }
            let old = self.grid.ravel(&old_idx);
            for i in 0..k {
                values[node * k + i] = self.q(old, order[i]);
            }
        }
        Ok(ProbabilityField {
            grid,
            values,
            provenance: self.provenance.clone(),
        })
    }

    /// Relabeling that moves alternative `m` into position 0 (an involution).
    pub fn pivot_order(n: usize, m: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.swap(0, m);
        order
    }

    /// Monotonicity, boundary attainment and cross-partial sign checks.
    pub fn check_shape(&self, tol: &ShapeTolerances) -> ShapeReport {
        let k = self.n_alternatives();
        let grid = &self.grid;
        let mut monotone = Vec::with_capacity(k * k);
        for j in 0..k {
            for axis in 0..k {
                let increasing = axis == j;
                let sign = if increasing { 1.0 } else { -1.0 };
                let stride = grid.strides[axis];
                let mut edges = 0;
                let mut flat = 0;
                let mut violations = 0;
                let mut worst = 0.0;
                let mut worst_at: Option<usize> = None;
                for node in 0..grid.node_count() {
                    if (node / stride) % grid.axes[axis].n + 1 == grid.axes[axis].n {
                        continue;
                    }
                    edges += 1;
                    let d = sign * (self.q(node + stride, j) - self.q(node, j));
                    if d < -tol.monotone {
                        violations += 1;
                        if -d > worst {
                            worst = -d;
                            worst_at = Some(node);
                        }
                    } else if d.abs() <= tol.flat {
                        flat += 1;
                    }
                }
                monotone.push(MonotoneCheck {
                    alternative: j,
                    axis,
                    increasing,
                    ok: violations == 0,
                    edges,
                    flat_edges: flat,
                    violations,
                    worst_violation: worst,
                    worst_location: worst_at.map(|n| {
                        let mut a = grid.node_coords(n);
                        a[axis] += 0.5 * grid.axes[axis].step();
                        a
                    }),
                });
            }
        }

        let mut attainment = Vec::with_capacity(k);
        for j in 0..k {
            let mut lo = (f64::INFINITY, 0);
            let mut hi = (f64::NEG_INFINITY, 0);
            for node in 0..grid.node_count() {
                let idx = grid.unravel(node);
                if grid.is_interior(&idx) {
                    continue;
                }
                let q = self.q(node, j);
                if q < lo.0 {
                    lo = (q, node);
                }
                if q > hi.0 {
                    hi = (q, node);
                }
            }
            attainment.push(Attainment {
                alternative: j,
                min: lo.0,
                min_location: grid.node_coords(lo.1),
                max: hi.0,
                max_location: grid.node_coords(hi.1),
            });
        }

        let sign = if (k - 1) % 2 == 0 { 1.0 } else { -1.0 };
        let mut cross = Vec::with_capacity(k);
        for r in 0..k {
            let axes: Vec<usize> = (0..k).filter(|&a| a != r).collect();
            let mut worst = f64::INFINITY;
            let mut worst_at = None;
            let mut checked = 0;
            let mut violations = 0;
            for node in 0..grid.node_count() {
                let idx = grid.unravel(node);
                if !grid.is_interior(&idx) {
                    continue;
                }
                checked += 1;
                let v = sign * self.nodal_derivative(&idx, r, &axes).value;
                if v < -tol.cross_partial {
                    violations += 1;
                }
                if v < worst {
                    worst = v;
                    worst_at = Some(node);
                }
            }
            cross.push(CrossPartialCheck {
                alternative: r,
                ok: violations == 0,
                nodes_checked: checked,
                violations,
                worst_value: if checked > 0 { worst } else { 0.0 },
                worst_location: worst_at.map(|n| grid.node_coords(n)),
            });
        }

        let monotone_pass = monotone.iter().all(|m| m.ok);
        let cross_partial_pass = cross.iter().all(|c| c.ok);
        ShapeReport {
            tolerances: *tol,
            monotone,
            boundary_attainment: attainment,
            cross_partial: cross,
            monotone_pass,
            cross_partial_pass,
            passed: monotone_pass && cross_partial_pass,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeTolerances {
    /// Wrong-direction step along an edge tolerated before it counts as a violation.
    pub monotone: f64,
    /// Edges with `|dq| <= flat` are reported as flat.
    pub flat: f64,
    /// Allowed negative excursion of `(-1)^J` times the cross partial.
    pub cross_partial: f64,
}

impl Default for ShapeTolerances {
    fn default() -> Self {
        ShapeTolerances {
            monotone: 1e-12,
            flat: 0.0,
            cross_partial: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCheck {
    pub alternative: usize,
    pub axis: usize,
    pub increasing: bool,
    pub ok: bool,
    pub edges: usize,
    pub flat_edges: usize,
    pub violations: usize,
    pub worst_violation: f64,
    /// Midpoint of the worst edge.
    pub worst_location: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attainment {
    pub alternative: usize,
    pub min: f64,
    pub min_location: Vec<f64>,
    pub max: f64,
    pub max_location: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossPartialCheck {
    pub alternative: usize,
    pub ok: bool,
    pub nodes_checked: usize,
    pub violations: usize,
    /// Smallest `(-1)^J` times the mixed partial seen.
    pub worst_value: f64,
    pub worst_location: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub tolerances: ShapeTolerances,
    pub monotone: Vec<MonotoneCheck>,
    pub boundary_attainment: Vec<Attainment>,
    pub cross_partial: Vec<CrossPartialCheck>,
    pub monotone_pass: bool,
    pub cross_partial_pass: bool,
    pub passed: bool,
}

impl ShapeReport {
    pub fn monotone_ok(&self, j: usize, axis: usize) -> bool {
        self.monotone
            .iter()
            .find(|m| m.alternative == j && m.axis == axis)
            .map(|m| m.ok)
            .unwrap_or(false)
    }

    pub fn monotone_check(&self, j: usize, axis: usize) -> Option<&MonotoneCheck> {
        self.monotone.iter().find(|m| m.alternative == j && m.axis == axis)
    }

    pub fn cross_partial_sign_ok(&self, r: usize) -> bool {
        self.cross_partial.get(r).map(|c| c.ok).unwrap_or(false)
    }
}
