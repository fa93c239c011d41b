//! Subcommand implementations. Each returns the process exit status.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use rumid_core::characteristics::{build_omega, OmegaConfig};
use rumid_core::density::{check_normalization, Spacing, VGrid};
use rumid_core::field::{GridSpec, ProbabilityField, ShapeReport, ShapeTolerances};
use rumid_core::model::TabulationMethod;
use rumid_core::pipeline::{identify, IdentifyConfig, Identification};
use rumid_core::sample::interior_points;
use rumid_core::symmetry::{test_condition_a, test_daly_zachary, SieveBasis, SymmetryReport};
use rumid_core::verify::{Integrator, VerifyReport, MASS_GATE};
use rumid_core::Error;

use crate::artifacts::{
    file_sha256, metadata_hash, DensityArtifact, FieldMetadata, Manifest, OmegaArtifact, RatioArtifact,
};
use crate::formats::{
    self, offers_to_prices, price_header, prices_to_offers, read_field, read_json, read_model, scattered_header,
    write_density, write_field, write_json, write_omega, write_rows, write_utility, FormatError,
};

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Pass = 0,
    CheckFail = 1,
    Input = 2,
    Numerical = 3,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Refused(String),
}

impl CommandError {
    pub fn exit(&self) -> Exit {
        match self {
            CommandError::Format(FormatError::Core(e)) | CommandError::Core(e) => core_exit(e),
            CommandError::Format(_) | CommandError::Input(_) => Exit::Input,
            CommandError::Refused(_) => Exit::CheckFail,
        }
    }
}

/// Bad inputs map to 2, numerical breakdowns to 3.
pub fn core_exit(e: &Error) -> Exit {
    match e {
        Error::Domain { .. }
        | Error::InvalidModel(_)
        | Error::NoClosedForm(_)
        | Error::InvalidGrid(_)
        | Error::DimensionMismatch { .. }
        | Error::OutsideHull { .. }
        | Error::InvalidArgument(_) => Exit::Input,
        Error::ConditionFailed { .. } => Exit::CheckFail,
        _ => Exit::Numerical,
    }
}

pub type CmdResult = Result<Exit, CommandError>;

fn ensure_dir(dir: &Path) -> Result<(), CommandError> {
    fs::create_dir_all(dir).map_err(|source| {
        CommandError::Format(FormatError::Io {
            path: dir.display().to_string(),
            source,
        })
    })
}

/// Expands one `lo:hi:n` spec to every axis, or checks there is one per axis.
pub fn expand_grid(specs: &[(f64, f64, usize)], k: usize) -> Result<GridSpec, CommandError> {
    let axes: Vec<(f64, f64, usize)> = match specs.len() {
        1 => vec![specs[0]; k],
        n if n == k => specs.to_vec(),
        n => {
            return Err(CommandError::Input(format!(
                "--grid given {n} times; pass it once (all axes) or {k} times (one per alternative)"
            )))
        }
    };
    Ok(GridSpec::uniform(&axes)?)
}

#[derive(Clone, Debug)]
pub struct SimulateArgs {
    pub model: PathBuf,
    pub grid: Vec<(f64, f64, usize)>,
    /// Monte Carlo draws per node; closed form when `None`.
    pub draws: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn simulate(args: &SimulateArgs) -> CmdResult {
    let (file, spec) = read_model(&args.model)?;
    let grid = if args.grid.is_empty() {
        let d: Vec<(f64, f64, usize)> = spec.domain().iter().map(|iv| (iv.lo, iv.hi, 21)).collect();
        GridSpec::uniform(&d)?
    } else {
        expand_grid(&args.grid, spec.n_alternatives())?
    };
    let method = match args.draws {
        Some(draws) => TabulationMethod::MonteCarlo { draws, seed: args.seed },
        None => TabulationMethod::ClosedForm,
    };
    let field = spec.tabulate(&grid, method)?;
    ensure_dir(&args.out)?;
    let csv = args.out.join("field.csv");
    write_field(&csv, &field)?;
    let meta = FieldMetadata {
        provenance: field.provenance().to_string(),
        csv_sha256: file_sha256(&csv)?,
        grid,
        model: file,
    };
    write_json(&args.out.join("field.json"), &meta)?;
    Ok(Exit::Pass)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Shape,
    DalyZachary,
    ConditionA,
}

#[derive(Clone, Debug)]
pub struct CheckArgs {
    pub field: PathBuf,
    pub checks: Vec<CheckKind>,
    pub points: usize,
    pub seed: u64,
    pub pivot: usize,
    pub tol_dz: f64,
    pub tol_a: f64,
    pub tol_monotone: f64,
    pub tol_cross: f64,
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckOutput {
    pub field: String,
    pub shape: Option<ShapeReport>,
    pub daly_zachary: Option<SymmetryReport>,
    pub condition_a: Option<SymmetryReport>,
    pub inconclusive: bool,
    pub passed: bool,
}

pub fn check(args: &CheckArgs) -> CmdResult {
    let field = read_field(&args.field)?;
    let pts = interior_points(field.grid(), args.points, args.seed, 1.0);
    let want = |c| args.checks.is_empty() || args.checks.contains(&c);
    let shape = want(CheckKind::Shape).then(|| {
        field.check_shape(&ShapeTolerances {
            monotone: args.tol_monotone,
            cross_partial: args.tol_cross,
            ..ShapeTolerances::default()
        })
    });
    let dz = if want(CheckKind::DalyZachary) {
        Some(test_daly_zachary(&field, &pts, args.tol_dz)?)
    } else {
        None
    };
    let ca = if want(CheckKind::ConditionA) {
        Some(test_condition_a(&field, args.pivot, &pts, args.tol_a)?)
    } else {
        None
    };
    let inconclusive = dz.iter().chain(&ca).any(|r| r.inconclusive);
    let passed = shape.as_ref().map_or(true, |s| s.passed) && dz.iter().chain(&ca).all(|r| r.passed);
    ensure_dir(&args.out)?;
    write_json(
        &args.out.join("check.json"),
        &CheckOutput {
            field: args.field.display().to_string(),
            shape,
            daly_zachary: dz,
            condition_a: ca,
            inconclusive,
            passed,
        },
    )?;
    Ok(if inconclusive {
        Exit::Numerical
    } else if passed {
        Exit::Pass
    } else {
        Exit::CheckFail
    })
}

#[derive(Clone, Debug)]
pub struct IdentifyArgs {
    pub field: PathBuf,
    pub pivot: usize,
    pub a_ref: Option<f64>,
    pub basis: SieveBasis,
    pub degree: usize,
    pub v_nodes: Option<usize>,
    /// One `(lo, hi)` per recovered alternative.
    pub v_range: Vec<(f64, f64)>,
    pub v_spacing: Option<Spacing>,
    pub tol_a: f64,
    pub points: usize,
    pub seed: u64,
    pub force: bool,
    /// Lattice size of the exported level-function and utility grids.
    pub export_nodes: usize,
    pub out: PathBuf,
}

/// Target range for the density mass reported by `identify`.
pub const MASS_TARGET: (f64, f64) = (0.97, 1.01);

pub fn identify_cmd(args: &IdentifyArgs) -> CmdResult {
    let field = read_field(&args.field)?;
    let field_sha = file_sha256(&args.field)?;
    let j = field.n_alternatives() - 1;
    let v_nodes = args.v_nodes.unwrap_or(if j <= 2 { 101 } else { 41 });
    let v_grid = match args.v_range.len() {
        0 => None,
        n if n == j => Some(VGrid::from_ranges(&args.v_range, v_nodes, args.v_spacing)?),
        n => {
            return Err(CommandError::Input(format!(
                "--v-range given {n} times, need one per recovered alternative ({j})"
            )))
        }
    };
    let config = IdentifyConfig {
        pivot: args.pivot,
        basis: args.basis,
        degree: args.degree,
        a_ref: args.a_ref,
        v_nodes,
        v_grid,
        condition_tol: args.tol_a,
        condition_points: args.points,
        seed: args.seed,
        force: args.force,
        ..IdentifyConfig::default()
    };
    let id = match identify(&field, &config) {
        Err(Error::ConditionFailed { spread, tol }) => {
            return Err(CommandError::Refused(format!(
                "the ratio condition fails (spread {spread:.3e} > {tol:.1e}); \
                 see `rumid check --field {}` for the per-pair report, or pass --force",
                args.field.display()
            )))
        }
        r => r?,
    };
    write_identification(&id, &config, &field_sha, args.export_nodes, &args.out)?;
    let mass = id.mass.trapezoid_mass;
    Ok(if !id.numerically_sound() {
        Exit::Numerical
    } else if !(mass >= MASS_GATE.0 && mass <= MASS_GATE.1) {
        Exit::CheckFail
    } else {
        Exit::Pass
    })
}

fn write_identification(
    id: &Identification,
    config: &IdentifyConfig,
    field_sha: &str,
    export_nodes: usize,
    out: &Path,
) -> Result<(), CommandError> {
    ensure_dir(out)?;
    let a_ref: Vec<f64> = id.omegas.iter().map(|o| o.a_ref()).collect();
    // hash over the grid in input labelling
    let input_grid = {
        let mut axes = id.field.grid().axes().to_vec();
        for (i, &o) in id.order.iter().enumerate() {
            axes[o] = id.field.grid().axis(i).clone();
        }
        GridSpec::new(axes)?
    };
    let hash = metadata_hash(field_sha, config.pivot, &a_ref, &input_grid);
    let (mut ratio_files, mut omega_files, mut utility_files) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (t, om)) in id.ratios.iter().zip(&id.omegas).enumerate() {
        let label = id.order[i + 1];
        let rname = format!("ratio_{label}.json");
        write_json(
            &out.join(&rname),
            &RatioArtifact {
                metadata_hash: hash.clone(),
                ratio: t.clone(),
            },
        )?;
        let oname = format!("omega_{label}.csv");
        write_omega(&out.join(&oname), om, label, export_nodes)?;
        write_json(
            &out.join(format!("omega_{label}.json")),
            &OmegaArtifact {
                metadata_hash: hash.clone(),
                alternative: label,
                a_ref: om.a_ref(),
                step: om.step(),
                aj_range: om.aj_range(),
                level_range: om.level_range(),
                diagnostics: id.omega_diagnostics[i].clone(),
            },
        )?;
        let wname = format!("w_{label}.csv");
        write_utility(&out.join(&wname), om, label, export_nodes, &id.density.v_grid.axes()[i])?;
        ratio_files.push(rname);
        omega_files.push(oname);
        utility_files.push(wname);
    }
    write_density(&out.join("density.csv"), &id.density)?;
    let m = id.mass.trapezoid_mass;
    write_json(
        &out.join("density.json"),
        &DensityArtifact {
            metadata_hash: hash.clone(),
            mass: id.mass.clone(),
            mass_target: MASS_TARGET,
            mass_in_target: m >= MASS_TARGET.0 && m <= MASS_TARGET.1,
            tol_neg: id.density.tol_neg,
            clipped: id.density.clipped,
            negative_flagged: id.density.negative_flagged,
            min_raw: id.density.min_raw,
            max_cdf_spread: id.density.max_cdf_spread,
            supported_nodes: id.density.supported_nodes(),
            nodes: id.density.v_grid.node_count(),
        },
    )?;
    write_json(
        &out.join(Manifest::FILE),
        &Manifest {
            metadata_hash: hash,
            field_sha256: field_sha.to_string(),
            pivot: config.pivot,
            order: id.order.clone(),
            a_ref,
            grid: input_grid,
            omega: config.omega,
            density_options: config.density,
            condition: id.condition.clone(),
            ratio_files,
            omega_files,
            utility_files,
            density_file: "density.csv".into(),
            density_report: "density.json".into(),
        },
    )?;
    Ok(())
}

/// Rebuilds an identification from the artifacts of an `identify` run.
pub fn load_identification(field: &ProbabilityField, field_sha: &str, dir: &Path) -> Result<Identification, CommandError> {
    let man = Manifest::load(dir)?;
    let mismatch = |what: &str| {
        CommandError::Input(format!(
            "mismatched artifact metadata: {what} does not belong to the run recorded in {}",
            dir.join(Manifest::FILE).display()
        ))
    };
    if man.field_sha256 != field_sha {
        return Err(mismatch("the field CSV"));
    }
    if metadata_hash(field_sha, man.pivot, &man.a_ref, field.grid()) != man.metadata_hash {
        return Err(mismatch("the manifest"));
    }
    let internal = if man.pivot == 0 {
        field.clone()
    } else {
        field.permuted(&man.order)?
    };
    let mut ratios = Vec::new();
    let mut omegas = Vec::new();
    let mut diags = Vec::new();
    for (i, name) in man.ratio_files.iter().enumerate() {
        let art: RatioArtifact = read_json(&dir.join(name))?;
        if art.metadata_hash != man.metadata_hash {
            return Err(mismatch(name));
        }
        let cfg = OmegaConfig {
            a_ref: Some(man.a_ref[i]),
            ..man.omega
        };
        let om = build_omega(&art.ratio, art.ratio.domain, &cfg)?;
        diags.push(om.validate(5));
        omegas.push(om);
        ratios.push(art.ratio);
    }
    let dart: DensityArtifact = read_json(&dir.join(&man.density_report))?;
    if dart.metadata_hash != man.metadata_hash {
        return Err(mismatch(&man.density_report));
    }
    let density = formats::read_density(&dir.join(&man.density_file))?;
    let mass = check_normalization(&density);
    Ok(Identification {
        order: man.order,
        field: internal,
        condition: man.condition,
        ratios,
        omegas,
        omega_diagnostics: diags,
        density,
        mass,
    })
}

#[derive(Clone, Debug)]
pub struct VerifyArgs {
    pub field: PathBuf,
    pub artifacts: PathBuf,
    pub points: usize,
    pub seed: u64,
    /// Monte Carlo draws per point; grid quadrature when `None`.
    pub draws: Option<usize>,
    pub tol: f64,
    pub out: Option<PathBuf>,
}

pub fn verify(args: &VerifyArgs) -> CmdResult {
    let field = read_field(&args.field)?;
    let sha = file_sha256(&args.field)?;
    let id = load_identification(&field, &sha, &args.artifacts)?;
    let pts = interior_points(field.grid(), args.points, args.seed, 1.0);
    let method = match args.draws {
        Some(draws) => Integrator::MonteCarlo { draws, seed: args.seed },
        None => Integrator::GridQuadrature,
    };
    let report: VerifyReport = id.round_trip(&field, &pts, args.tol, method)?;
    let out = args.out.clone().unwrap_or_else(|| args.artifacts.clone());
    ensure_dir(&out)?;
    write_json(&out.join("verify.json"), &report)?;
    let k = field.n_alternatives();
    let mut header: Vec<String> = (0..k).map(|j| format!("a_{j}")).collect();
    header.extend((0..k).map(|j| format!("q_{j}")));
    header.extend((0..k).map(|j| format!("q_{j}_recovered")));
    header.extend(["max_abs_error".to_string(), "leakage".to_string()]);
    let rows: Vec<Vec<f64>> = report
        .per_point
        .iter()
        .map(|p| {
            let mut r = p.a.clone();
            r.extend(&p.input);
            r.extend(&p.recovered);
            r.push(p.max_abs_error);
            r.push(p.leakage);
            r
        })
        .collect();
    write_rows(&out.join("verify_points.csv"), &header, &rows)?;
    Ok(if report.passed { Exit::Pass } else { Exit::CheckFail })
}

#[derive(Clone, Debug)]
pub struct ConvertArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    /// Offers to prices instead of prices to offers.
    pub inverse: bool,
}

pub fn convert(args: &ConvertArgs) -> CmdResult {
    if args.inverse {
        let rows = formats::read_scattered(&args.input)?;
        let k = rows.k;
        let out: Vec<Vec<f64>> = rows.rows.iter().map(|(_, r)| offers_to_prices(k, r)).collect();
        write_rows(&args.out, &price_header(k), &out)?;
    } else {
        let rows = formats::read_prices(&args.input)?;
        let k = rows.k;
        let out: Vec<Vec<f64>> = rows.rows.iter().map(|(_, r)| prices_to_offers(k, r)).collect();
        write_rows(&args.out, &scattered_header(k), &out)?;
    }
    Ok(Exit::Pass)
}

#[derive(Clone, Debug)]
pub struct ResampleArgs {
    pub input: PathBuf,
    pub grid: Vec<(f64, f64, usize)>,
    pub neighbours: Option<usize>,
    pub out: PathBuf,
}

/// Accuracy figures for a resampled field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResampleReport {
    pub input_rows: usize,
    pub nodes: usize,
    pub neighbours: usize,
    /// Largest distance from a node to its nearest input row, in grid steps.
    pub max_fill_distance: f64,
    /// Largest residual of the local affine fits at their input rows.
    pub max_fit_residual: f64,
    /// Nodes where the local fit was rank deficient and the neighbour mean was used.
    pub fallback_nodes: usize,
    /// Nodes whose fitted probabilities needed clipping into [0, 1].
    pub clipped_nodes: usize,
}

/// Local affine least squares over the nearest input rows of each node.
///
/// The interpolation error is of order (fill distance)^2 times the second
/// derivative of `q`; the report gives the fill distance and fit residuals.
pub fn resample(args: &ResampleArgs) -> CmdResult {
    let rows = formats::read_scattered(&args.input)?;
    let k = rows.k;
    let grid = expand_grid(&args.grid, k)?;
    let steps: Vec<f64> = grid.axes().iter().map(|a| a.step()).collect();
    let nn = args.neighbours.unwrap_or(2 * (k + 1)).max(k + 1);
    if rows.rows.len() < nn {
        return Err(CommandError::Input(format!(
            "{} input rows but {nn} neighbours are needed per node",
            rows.rows.len()
        )));
    }
    let mut report = ResampleReport {
        input_rows: rows.rows.len(),
        nodes: grid.node_count(),
        neighbours: nn,
        max_fill_distance: 0.0,
        max_fit_residual: 0.0,
        fallback_nodes: 0,
        clipped_nodes: 0,
    };
    let mut values = Vec::with_capacity(grid.node_count() * k);
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(rows.rows.len());
    for node in 0..grid.node_count() {
        let a = grid.node_coords(node);
        dist.clear();
        for (i, (_, r)) in rows.rows.iter().enumerate() {
            let d2: f64 = (0..k).map(|c| ((r[c] - a[c]) / steps[c]).powi(2)).sum();
            dist.push((d2, i));
        }
        dist.select_nth_unstable_by(nn - 1, |x, y| x.0.partial_cmp(&y.0).unwrap());
        let near = &dist[..nn];
        let fill = near.iter().map(|x| x.0).fold(f64::INFINITY, f64::min).sqrt();
        report.max_fill_distance = report.max_fill_distance.max(fill);
        let design = DMatrix::from_fn(nn, k + 1, |r, c| {
            if c == 0 {
                1.0
            } else {
                (rows.rows[near[r].1].1[c - 1] - a[c - 1]) / steps[c - 1]
            }
        });
        let svd = design.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let full_rank = svd.singular_values.iter().all(|&s| s > 1e-10 * smax);
        let mut q = vec![0.0; k];
        for (j, qj) in q.iter_mut().enumerate() {
            let y = DVector::from_fn(nn, |r, _| rows.rows[near[r].1].1[k + j]);
            if full_rank {
                let beta = svd.solve(&y, 1e-12).expect("svd with u and v");
                let resid = (&design * &beta - &y).amax();
                report.max_fit_residual = report.max_fit_residual.max(resid);
                *qj = beta[0];
            } else {
                *qj = y.mean();
            }
        }
        if !full_rank {
            report.fallback_nodes += 1;
        }
        if q.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            report.clipped_nodes += 1;
        }
        let s: f64 = q.iter().map(|x| x.clamp(0.0, 1.0)).sum();
        values.extend(q.iter().map(|x| x.clamp(0.0, 1.0) / s));
    }
    let field = ProbabilityField::from_values(grid, values, format!("resampled:{}", args.input.display()))?;
    write_field(&args.out, &field)?;
    let mut rpath = args.out.clone();
    rpath.set_extension("resample.json");
    write_json(&rpath, &report)?;
    Ok(Exit::Pass)
}
