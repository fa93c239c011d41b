use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rumid::commands::{self, CheckKind, Exit};
use rumid_core::density::Spacing;
use rumid_core::symmetry::SieveBasis;

/// Rationalizability checks and recovery of random utility models with income effects.
///
/// Exit status: 0 pass, 1 check failed, 2 input error, 3 numerical failure
/// (including inconclusive checks).
#[derive(Parser, Debug)]
#[command(name = "rumid", version, allow_negative_numbers = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate a model's choice probabilities on a grid.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// `lo:hi:n`, once for all axes or once per alternative; defaults to the model domain with 21 nodes.
        #[arg(long, value_parser = parse_axis, allow_hyphen_values = true)]
        grid: Vec<(f64, f64, usize)>,
        /// Monte Carlo draws per node (closed form when omitted).
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shape, symmetry and ratio-condition checks on a field.
    Check {
        #[arg(long)]
        field: PathBuf,
        /// Checks to run (default: all).
        #[arg(long, value_enum, value_delimiter = ',')]
        checks: Vec<CheckArg>,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        pivot: usize,
        #[arg(long, default_value_t = 1e-2)]
        tol_dz: f64,
        #[arg(long, default_value_t = 5e-3)]
        tol_a: f64,
        #[arg(long, default_value_t = 1e-12)]
        tol_monotone: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol_cross: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover ratios, level functions, utilities and the density.
    Identify {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 0)]
        pivot: usize,
        #[arg(long)]
        a_ref: Option<f64>,
        #[arg(long, value_enum, default_value_t = BasisArg::LogPolynomial)]
        basis: BasisArg,
        #[arg(long, default_value_t = 1)]
        degree: usize,
        /// Nodes per density axis (101 for up to two recovered alternatives, 41 beyond).
        #[arg(long)]
        v_nodes: Option<usize>,
        /// `lo:hi` per recovered alternative; defaults to the attainable level range.
        #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
        v_range: Vec<(f64, f64)>,
        #[arg(long, value_enum)]
        v_spacing: Option<SpacingArg>,
        #[arg(long, default_value_t = 5e-3)]
        tol_a: f64,
        #[arg(long, default_value_t = 50)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Proceed even when the ratio condition fails.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 41)]
        export_nodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Round trip: recovered model against the input field.
    Verify {
        #[arg(long)]
        field: PathBuf,
        /// Directory written by `identify`.
        #[arg(long)]
        artifacts: PathBuf,
        #[arg(long, default_value_t = 50)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte Carlo draws per point (grid quadrature when omitted).
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long, default_value_t = 0.02)]
        tol: f64,
        /// Report directory (defaults to the artifacts directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Price rows (p_1..p_J, y, q) to offer rows (a, q), or back with --inverse.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        inverse: bool,
    },
    /// Resample scattered offer rows onto a lattice.
    Resample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_axis, required = true, allow_hyphen_values = true)]
        grid: Vec<(f64, f64, usize)>,
        #[arg(long)]
        neighbours: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CheckArg {
    Shape,
    Dz,
    ConditionA,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BasisArg {
    Polynomial,
    LogPolynomial,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SpacingArg {
    Linear,
    Log,
}

fn parse_axis(s: &str) -> Result<(f64, f64, usize), String> {
    let p: Vec<&str> = s.split(':').collect();
    if p.len() != 3 {
        return Err(format!("expected lo:hi:n, got '{s}'"));
    }
    let lo = p[0].parse().map_err(|_| format!("bad lo in '{s}'"))?;
    let hi = p[1].parse().map_err(|_| format!("bad hi in '{s}'"))?;
    let n = p[2].parse().map_err(|_| format!("bad n in '{s}'"))?;
    Ok((lo, hi, n))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got '{s}'"))?;
    Ok((
        a.parse().map_err(|_| format!("bad lo in '{s}'"))?,
        b.parse().map_err(|_| format!("bad hi in '{s}'"))?,
    ))
}

fn positive(name: &str, x: f64) -> Result<(), commands::CommandError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(commands::CommandError::Input(format!("--{name} must be > 0, got {x}")))
    }
}

fn run(cli: Cli) -> commands::CmdResult {
    match cli.command {
        Command::Simulate { model, grid, draws, seed, out } => {
            commands::simulate(&commands::SimulateArgs { model, grid, draws, seed, out })
        }
        Command::Check {
            field,
            checks,
            points,
            seed,
            pivot,
            tol_dz,
            tol_a,
            tol_monotone,
            tol_cross,
            out,
        } => {
            for (n, x) in [("tol-dz", tol_dz), ("tol-a", tol_a), ("tol-monotone", tol_monotone), ("tol-cross", tol_cross)] {
                positive(n, x)?;
            }
            let checks = checks
                .into_iter()
                .map(|c| match c {
                    CheckArg::Shape => CheckKind::Shape,
                    CheckArg::Dz => CheckKind::DalyZachary,
                    CheckArg::ConditionA => CheckKind::ConditionA,
                })
                .collect();
            commands::check(&commands::CheckArgs {
                field,
                checks,
                points,
                seed,
                pivot,
                tol_dz,
                tol_a,
                tol_monotone,
                tol_cross,
                out,
            })
        }
        Command::Identify {
            field,
            pivot,
            a_ref,
            basis,
            degree,
            v_nodes,
            v_range,
            v_spacing,
            tol_a,
            points,
            seed,
            force,
            export_nodes,
            out,
        } => {
            positive("tol-a", tol_a)?;
            commands::identify_cmd(&commands::IdentifyArgs {
                field,
                pivot,
                a_ref,
                basis: match basis {
                    BasisArg::Polynomial => SieveBasis::Polynomial,
                    BasisArg::LogPolynomial => SieveBasis::LogPolynomial,
                },
                degree,
                v_nodes,
                v_range,
                v_spacing: v_spacing.map(|s| match s {
                    SpacingArg::Linear => Spacing::Linear,
                    SpacingArg::Log => Spacing::Log,
                }),
                tol_a,
                points,
                seed,
                force,
                export_nodes: export_nodes.max(2),
                out,
            })
        }
        Command::Verify {
            field,
            artifacts,
            points,
            seed,
            draws,
            tol,
            out,
        } => {
            positive("tol", tol)?;
            commands::verify(&commands::VerifyArgs {
                field,
                artifacts,
                points,
                seed,
                draws,
                tol,
                out,
            })
        }
        Command::Convert { input, out, inverse } => commands::convert(&commands::ConvertArgs { input, out, inverse }),
        Command::Resample {
            input,
            grid,
            neighbours,
            out,
        } => commands::resample(&commands::ResampleArgs {
            input,
            grid,
            neighbours,
            out,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Input.code() as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit().code() as u8)
        }
    }
}
