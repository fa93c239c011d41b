//! Heterogeneity CDF and density on a lattice in `v`-space.
//!
//! With alternative 0 as pivot, `F(v) = q_0(a_0, b_1(v_1, a_0), ..., b_J(v_J, a_0))`
//! where `b_j` inverts `omega_j` in `a_j`. The density follows from the
//! `J`-th mixed partial of `q_0`:
//!
//! `f(v) = d^J q_0 / da_1..da_J  /  prod_j d omega_j / d a_j`,
//!
//! or, for any `k >= 1`, from the cross partial of `q_k`:
//!
//! `f(v) = -d^J q_k / da_0 prod_{j != k} da_j  /  (d omega_k/da_0 prod_{j != k} d omega_j/da_j)`.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::characteristics::OmegaFunction;
use crate::error::{Error, Result};
use crate::field::ProbabilityField;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    Log,
}

/// Tensor lattice in `(v_1, ..., v_J)`; `v_1` varies slowest in flat order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VGrid {
    axes: Vec<Vec<f64>>,
}

impl VGrid {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidGrid("v-grid needs at least one axis".into()));
        }
        for (j, ax) in axes.iter().enumerate() {
            if ax.len() < 2 {
                return Err(Error::InvalidGrid(format!("v-axis {} has fewer than 2 nodes", j + 1)));
            }
            if ax.windows(2).any(|w| !(w[1] > w[0])) || ax.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidGrid(format!(
                    "v-axis {} is not strictly increasing and finite",
                    j + 1
                )));
            }
        }
        Ok(VGrid { axes })
    }

    pub fn axis_nodes(lo: f64, hi: f64, n: usize, spacing: Spacing) -> Result<Vec<f64>> {
        if !(lo < hi) || n < 2 {
            return Err(Error::InvalidGrid(format!(
                "v-axis needs lo < hi and at least 2 nodes, got [{lo}, {hi}] with {n}"
            )));
        }
        match spacing {
            Spacing::Linear => Ok((0..n)
                .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
                .collect()),
            Spacing::Log => {
                if lo <= 0.0 {
                    return Err(Error::InvalidGrid(format!(
                        "log spacing needs a positive lower bound, got {lo}"
                    )));
                }
                let (l0, l1) = (lo.ln(), hi.ln());
                Ok((0..n)
                    .map(|i| match i {
                        0 => lo,
                        _ if i + 1 == n => hi,
                        _ => (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp(),
                    })
                    .collect())
            }
        }
    }

    /// Log spacing for positive ranges spanning more than a decade, linear otherwise.
    pub fn auto_spacing(lo: f64, hi: f64) -> Spacing {
        if lo > 0.0 && hi / lo > 10.0 {
            Spacing::Log
        } else {
            Spacing::Linear
        }
    }

    pub fn from_ranges(ranges: &[(f64, f64)], n: usize, spacing: Option<Spacing>) -> Result<Self> {
        let axes = ranges
            .iter()
            .map(|&(lo, hi)| {
                let s = spacing.unwrap_or_else(|| VGrid::auto_spacing(lo, hi));
                VGrid::axis_nodes(lo, hi, n, s)
            })
            .collect::<Result<Vec<_>>>()?;
        VGrid::new(axes)
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims()];
        for k in (0..self.dims()).rev() {
            let n = self.axes[k].len();
            idx[k] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.len() + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.unravel(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a[i])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityOptions {
    /// Number of candidate `a_0` values tried per node.
    pub a0_candidates: usize,
    /// Candidates averaged for `F`.
    pub cdf_average: usize,
    /// Negative densities above `-tol_neg_rel * max f` are clipped to zero.
    pub tol_neg_rel: f64,
}

impl Default for DensityOptions {
    fn default() -> Self {
        DensityOptions {
            a0_candidates: 9,
            cdf_average: 3,
            tol_neg_rel: 1e-4,
        }
    }
}

/// Interior `a_0` nodes spread evenly over the field's `a_0` axis.
pub fn a0_candidates(field: &ProbabilityField, count: usize) -> Vec<f64> {
    let ax = field.grid().axis(0);
    let interior = ax.n - 2;
    let count = count.clamp(1, interior);
    if count == 1 {
        return vec![ax.node(ax.n / 2)];
    }
    (0..count)
        .map(|c| ax.node(1 + c * (interior - 1) / (count - 1)))
        .collect()
}

fn check_omegas(field: &ProbabilityField, omegas: &[OmegaFunction]) -> Result<()> {
    let j = field.n_alternatives() - 1;
    if omegas.len() != j {
        return Err(Error::DimensionMismatch {
            what: "omega functions",
            expected: j,
            got: omegas.len(),
        });
    }
    Ok(())
}

/// Where a `v` point lands in `a`-space for one `a_0`.
#[derive(Clone, Debug, PartialEq)]
struct Mapping {
    a: Vec<f64>,
    /// Smallest distance to a face of the grid along axes `1..=J`, in grid steps.
    interior: f64,
}

fn map_v(field: &ProbabilityField, omegas: &[OmegaFunction], v: &[f64], a0: f64) -> Option<Mapping> {
    let grid = field.grid();
    let mut a = Vec::with_capacity(v.len() + 1);
    a.push(a0);
    let mut interior = f64::INFINITY;
    for (j, (om, &vj)) in omegas.iter().zip(v).enumerate() {
        let ax = grid.axis(j + 1);
        // omega decreases in a_j: bracket is [omega(hi), omega(lo)]
        let top = om.eval(ax.lo, a0).ok()?;
        let bottom = om.eval(ax.hi, a0).ok()?;
        if !(vj <= top && vj >= bottom) {
            return None;
        }
        let aj = om.solve_aj(vj, a0, ax.lo, ax.hi).ok()?;
        let h = ax.step();
        interior = interior.min(((aj - ax.lo) / h).min((ax.hi - aj) / h));
        a.push(aj);
    }
    Some(Mapping { a, interior })
}

fn admissible(
    field: &ProbabilityField,
    omegas: &[OmegaFunction],
    v: &[f64],
    candidates: &[f64],
) -> Vec<(f64, Mapping)> {
    let mut out: Vec<(f64, Mapping)> = candidates
        .iter()
        .filter_map(|&a0| map_v(field, omegas, v, a0).map(|m| (a0, m)))
        .collect();
    out.sort_by(|x, y| {
        y.1.interior
            .partial_cmp(&x.1.interior)
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    out
}

/// CDF value and its spread over the `a_0` values used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfEstimate {
    pub value: f64,
    pub spread: f64,
    pub a0_used: Vec<f64>,
}

/// `F(v)` averaged over up to three admissible values among `a0_values`.
pub fn reconstruct_cdf(
    field: &ProbabilityField,
    omegas: &[OmegaFunction],
    v: &[f64],
    a0_values: &[f64],
) -> Result<CdfEstimate> {
    check_omegas(field, omegas)?;
    cdf_from(field, omegas, v, a0_values, 3)
}

fn cdf_from(
    field: &ProbabilityField,
    omegas: &[OmegaFunction],
    v: &[f64],
    a0_values: &[f64],
    average: usize,
) -> Result<CdfEstimate> {
    let maps = admissible(field, omegas, v, a0_values);
    if maps.is_empty() {
        return Err(Error::OutsideSupport {
            v: v.to_vec(),
            reason: "no candidate a_0 maps this point into the grid".to_string(),
        });
    }
    let mut vals = Vec::new();
    let mut used = Vec::new();
    for (a0, m) in maps.iter().take(average.max(1)) {
        vals.push(field.interpolate(&m.a)?.probs[0]);
        used.push(*a0);
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(CdfEstimate {
        value: mean,
        spread: hi - lo,
        a0_used: used,
    })
}

/// Density at one `v` by both routes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    /// From the mixed partial of `q_0`.
    pub value: f64,
    /// From the cross partial of `q_k`, for `k = 1..=J`.
    pub cross_routes: Vec<f64>,
    pub a: Vec<f64>,
}

fn density_from_mapping(
    field: &ProbabilityField,
    omegas: &[OmegaFunction],
    a: &[f64],
    with_cross: bool,
) -> Result<DensityPoint> {
    let j = omegas.len();
    let axes: Vec<usize> = (1..=j).collect();
    let num = field.mixed_partial(0, &axes, a)?.value;
    let dj: Vec<f64> = omegas
        .iter()
        .enumerate()
        .map(|(i, om)| om.d_daj(a[i + 1], a[0]))
        .collect::<Result<_>>()?;
    let den: f64 = dj.iter().product();
    let mut cross = Vec::new();
    if with_cross {
        for k in 1..=j {
            let axes: Vec<usize> = (0..=j).filter(|&x| x != k).collect();
            let num_k = -field.mixed_partial(k, &axes, a)?.value;
            let mut den_k = omegas[k - 1].d_da0(a[k], a[0])?;
            for (i, d) in dj.iter().enumerate() {
                if i + 1 != k {
                    den_k *= d;
                }
            }
            cross.push(num_k / den_k);
        }
    }
    Ok(DensityPoint {
        value: num / den,
        cross_routes: cross,
        a: a.to_vec(),
    })
}

/// Smallest distance to a grid face (in steps) a point needs for central stencils.
const STENCIL_MARGIN: f64 = 1.0;

/// `f(v)` at the most interior admissible `a_0` among `a0_values`.
pub fn density_at(
    field: &ProbabilityField,
    omegas: &[OmegaFunction],
    v: &[f64],
    a0_values: &[f64],
) -> Result<DensityPoint> {
    check_omegas(field, omegas)?;
    let maps = admissible(field, omegas, v, a0_values);
    match maps.first() {
        Some((_, m)) if m.interior >= STENCIL_MARGIN => density_from_mapping(field, omegas, &m.a, true),
        Some(_) => Err(Error::OutsideSupport {
            v: v.to_vec(),
            reason: "derivative stencil would leave the grid".to_string(),
        }),
        None => Err(Error::OutsideSupport {
            v: v.to_vec(),
            reason: "no candidate a_0 maps this point into the grid".to_string(),
        }),
    }
}

/// Reconstructed density and CDF on a `v` lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub v_grid: VGrid,
    pub f: Vec<f64>,
    /// `NaN` where no admissible `a_0` exists.
    pub cdf: Vec<f64>,
    pub support: Vec<bool>,
    pub tol_neg: f64,
    /// Nodes with small negative values set to zero.
    pub clipped: usize,
    /// Nodes more negative than `-tol_neg` (also set to zero).
    pub negative_flagged: usize,
    pub min_raw: f64,
    pub max_cdf_spread: f64,
}

impl DensityGrid {
    /// Builds a grid from given values (all nodes in support when `support` is `None`).
    pub fn from_parts(v_grid: VGrid, f: Vec<f64>, cdf: Vec<f64>, support: Option<Vec<bool>>) -> Result<Self> {
        let n = v_grid.node_count();
        let support = support.unwrap_or_else(|| vec![true; n]);
        for (what, len) in [("density values", f.len()), ("cdf values", cdf.len()), ("support mask", support.len())] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    got: len,
                });
            }
        }
        if f.iter().zip(&support).any(|(&x, &s)| s && !(x >= 0.0)) {
            return Err(Error::InvalidArgument("density must be nonnegative on its support".into()));
        }
        let min_raw = f.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(DensityGrid {
            v_grid,
            f,
            cdf,
            support,
            tol_neg: 0.0,
            clipped: 0,
            negative_flagged: 0,
            min_raw,
            max_cdf_spread: 0.0,
        })
    }

    pub fn dims(&self) -> usize {
        self.v_grid.dims()
    }

    pub fn supported_nodes(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }

    /// Cells (by lower-corner index) whose corners are all in support, with their volumes.
    pub fn supported_cells(&self) -> Vec<(Vec<usize>, f64)> {
        let g = &self.v_grid;
        let d = g.dims();
        let mut out = Vec::new();
        let counts: Vec<usize> = g.axes().iter().map(|a| a.len() - 1).collect();
        let total: usize = counts.iter().product();
        for c in 0..total {
            let mut idx = vec![0; d];
            let mut r = c;
            for k in (0..d).rev() {
                idx[k] = r % counts[k];
                r /= counts[k];
            }
            let mut ok = true;
            for mask in 0..(1usize << d) {
                let corner: Vec<usize> = (0..d).map(|k| idx[k] + (mask >> k & 1)).collect();
                if !self.support[g.ravel(&corner)] {
                    ok = false;
                    break;
                }
            }
            if ok {
                let vol: f64 = (0..d).map(|k| g.axes()[k][idx[k] + 1] - g.axes()[k][idx[k]]).product();
                out.push((idx, vol));
            }
        }
        out
    }

    /// Mass of a supported cell under the trapezoid rule.
    pub fn cell_mass(&self, lower: &[usize], volume: f64) -> f64 {
        let g = &self.v_grid;
        let d = g.dims();
        let mut s = 0.0;
        for mask in 0..(1usize << d) {
            let corner: Vec<usize> = (0..d).map(|k| lower[k] + (mask >> k & 1)).collect();
            s += self.f[g.ravel(&corner)];
        }
        volume * s / (1usize << d) as f64
    }

    /// Trapezoid weights per node; the weighted sum of `f` is the supported mass.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let g = &self.v_grid;
        let d = g.dims();
        let mut w = vec![0.0; g.node_count()];
        let share = (1usize << d) as f64;
        for (idx, vol) in self.supported_cells() {
            for mask in 0..(1usize << d) {
                let corner: Vec<usize> = (0..d).map(|k| idx[k] + (mask >> k & 1)).collect();
                w[g.ravel(&corner)] += vol / share;
            }
        }
        w
    }
}

/// Density and CDF at every node of `v_grid`.
pub fn reconstruct_density(
    field: &ProbabilityField,
    omegas: &[OmegaFunction],
    v_grid: &VGrid,
    options: &DensityOptions,
) -> Result<DensityGrid> {
    check_omegas(field, omegas)?;
    if v_grid.dims() != omegas.len() {
        return Err(Error::DimensionMismatch {
            what: "v-grid axes",
            expected: omegas.len(),
            got: v_grid.dims(),
        });
    }
    let candidates = a0_candidates(field, options.a0_candidates);
    let n = v_grid.node_count();
    let mut f = vec![0.0; n];
    let mut cdf = vec![f64::NAN; n];
    let mut support = vec![false; n];
    let mut max_spread: f64 = 0.0;
    for node in 0..n {
        let v = v_grid.node(node);
        let maps = admissible(field, omegas, &v, &candidates);
        if maps.is_empty() {
            continue;
        }
        let take = options.cdf_average.max(1).min(maps.len());
        let mut vals = Vec::with_capacity(take);
        for (_, m) in &maps[..take] {
            vals.push(field.interpolate(&m.a)?.probs[0]);
        }
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        cdf[node] = vals.iter().sum::<f64>() / vals.len() as f64;
        max_spread = max_spread.max(hi - lo);

        let best = &maps[0].1;
        if best.interior < STENCIL_MARGIN {
            continue;
        }
        match density_from_mapping(field, omegas, &best.a, false) {
            Ok(p) if p.value.is_finite() => {
                f[node] = p.value;
                support[node] = true;
            }
            _ => {}
        }
    }
    let max_f = f
        .iter()
        .zip(&support)
        .filter(|(_, &s)| s)
        .map(|(&x, _)| x)
        .fold(0.0, f64::max);
    let tol_neg = options.tol_neg_rel * max_f;
    let mut clipped = 0;
    let mut flagged = 0;
    let mut min_raw = f64::INFINITY;
    for (x, &s) in f.iter_mut().zip(&support) {
        if !s {
            continue;
        }
        min_raw = min_raw.min(*x);
        if *x < -tol_neg {
            flagged += 1;
            *x = 0.0;
        } else if *x < 0.0 {
            clipped += 1;
            *x = 0.0;
        }
    }
    Ok(DensityGrid {
        v_grid: v_grid.clone(),
        f,
        cdf,
        support,
        tol_neg,
        clipped,
        negative_flagged: flagged,
        min_raw: if min_raw.is_finite() { min_raw } else { 0.0 },
        max_cdf_spread: max_spread,
    })
}

/// Default `v` lattice: the `omega` ranges reachable with central stencils.
pub fn default_v_grid(field: &ProbabilityField, omegas: &[OmegaFunction], n: usize) -> Result<VGrid> {
    check_omegas(field, omegas)?;
    let grid = field.grid();
    let a0 = grid.axis(0);
    let (a0_lo, a0_hi) = (a0.lo + a0.step(), a0.hi - a0.step());
    let mut ranges = Vec::with_capacity(omegas.len());
    for (j, om) in omegas.iter().enumerate() {
        let ax = grid.axis(j + 1);
        let (lo_j, hi_j) = (ax.lo + ax.step(), ax.hi - ax.step());
        let lo = om.eval(hi_j, a0_lo)?;
        let hi = om.eval(lo_j, a0_hi)?;
        ranges.push((lo, hi));
    }
    VGrid::from_ranges(&ranges, n, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    /// Trapezoid mass over cells with every corner in support.
    pub trapezoid_mass: f64,
    pub supported_cells: usize,
    pub total_cells: usize,
    /// `F` at the top corner of the lattice (`NaN` if unavailable).
    pub top_corner_cdf: f64,
    /// Box probability from `F` at all lattice corners (inclusion-exclusion).
    pub box_cdf_mass: Option<f64>,
}

/// Mass of the reconstructed density, with the CDF-based cross-checks.
pub fn check_normalization(d: &DensityGrid) -> MassReport {
    let g = &d.v_grid;
    let dims = g.dims();
    let cells = d.supported_cells();
    let mass: f64 = cells.iter().map(|(idx, vol)| d.cell_mass(idx, *vol)).sum();
    let total_cells: usize = g.axes().iter().map(|a| a.len() - 1).product();
    let top: Vec<usize> = g.axes().iter().map(|a| a.len() - 1).collect();
    let top_corner_cdf = d.cdf[g.ravel(&top)];
    let mut box_mass = 0.0;
    let mut complete = true;
    for mask in 0..(1usize << dims) {
        let corner: Vec<usize> = (0..dims).map(|k| if mask >> k & 1 == 1 { top[k] } else { 0 }).collect();
        let lows = dims - mask.count_ones() as usize;
        let val = d.cdf[g.ravel(&corner)];
        if !val.is_finite() {
            complete = false;
            break;
        }
        box_mass += if lows % 2 == 0 { val } else { -val };
    }
    MassReport {
        trapezoid_mass: mass,
        supported_cells: cells.len(),
        total_cells,
        top_corner_cdf,
        box_cdf_mass: complete.then_some(box_mass),
    }
}

/// Trapezoid mass of `f` over the box from the lattice origin to node `upper`.
pub fn cumulative_mass(d: &DensityGrid, upper: &[usize]) -> f64 {
    d.supported_cells()
        .iter()
        .filter(|(idx, _)| idx.iter().zip(upper).all(|(&i, &u)| i < u))
        .map(|(idx, vol)| d.cell_mass(idx, *vol))
        .sum()
}
