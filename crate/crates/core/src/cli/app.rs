use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::Serialize;

use crate::model::BoundDirection;

use super::problem_file::load_problem;
use super::run::{emit_samples, parse_range, run_hierarchy, run_solve, run_verify, sample_box, HierarchyTable, RolloutOptions, RunReport, SolveOptions, VerifyOptions, VerifyReport};
use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Lower,
    Upper,
    Both,
}

impl DirectionArg {
    fn directions(self) -> Vec<BoundDirection> {
        match self {
            DirectionArg::Lower => vec![BoundDirection::Lower],
            DirectionArg::Upper => vec![BoundDirection::Upper],
            DirectionArg::Both => vec![BoundDirection::Lower, BoundDirection::Upper],
        }
    }
}

/// Certified polynomial bounds on the desirability of a linearly-solvable
/// stochastic control problem.
#[derive(Debug, Clone, Parser)]
#[command(name = "linsoc", version)]
pub struct Args {
    /// Problem file (JSON).
    pub problem: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub deg_psi: u32,
    /// Multiplier degree; defaults to --deg-psi.
    #[arg(long)]
    pub deg_mult: Option<u32>,
    #[arg(long, value_enum, default_value_t = DirectionArg::Lower)]
    pub direction: DirectionArg,
    /// Sweep both degrees over "a:b:step" instead of a single solve.
    #[arg(long)]
    pub hierarchy: Option<String>,
    /// Check the bounds against finite differences and rollouts.
    #[arg(long)]
    pub verify: bool,
    /// Finite-difference nodes per axis (odd); 4001 in 1D and 201 in 2D by default.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Trajectories per rollout start; 0 skips rollouts.
    #[arg(long, default_value_t = 2000)]
    pub rollouts: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub dt: f64,
    /// Rollout start, comma separated; repeatable. Defaults to the box centre.
    #[arg(long = "x0", value_name = "X,Y,..")]
    pub x0: Vec<String>,
    /// Additional random rollout starts drawn from the central 75% of the box.
    #[arg(long, default_value_t = 0)]
    pub starts: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// JSON report destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Hierarchy table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// CSV of (x, Ψ, V) samples for each solved bound.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long, default_value_t = 201)]
    pub sample_points: usize,
    /// Plain-text dump of the conic program.
    #[arg(long)]
    pub dump_sdp: Option<PathBuf>,
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    schema_version: u32,
    reports: &'a [RunReport],
    #[serde(skip_serializing_if = "Option::is_none")]
    verification: Option<&'a VerifyReport>,
}

/// `path` with `.suffix` appended when several files share one flag.
fn with_suffix(path: &Path, suffix: &str, many: bool) -> PathBuf {
    if many {
        let mut s = path.as_os_str().to_owned();
        s.push(format!(".{suffix}"));
        PathBuf::from(s)
    } else {
        path.to_path_buf()
    }
}

fn parse_point(text: &str, dim: usize) -> Result<Vec<f64>, CliError> {
    let bad = |m: String| CliError::Parse { field: "--x0".into(), message: m };
    let p: Vec<f64> = text.split(',').map(|t| t.trim().parse().map_err(|_| bad(format!("bad number in {text:?}")))).collect::<Result<_, _>>()?;
    if p.len() != dim {
        return Err(bad(format!("{text:?} has {} coordinates, problem has {dim}", p.len())));
    }
    Ok(p)
}

/// Runs the command line, printing a summary to `out`.
pub fn execute(args: &Args, out: &mut dyn Write) -> Result<(), CliError> {
    let (problem, section) = load_problem(&args.problem)?;
    let directions = args.direction.directions();
    let many = directions.len() > 1;

    if let Some(range) = &args.hierarchy {
        let degrees = parse_range(range)?;
        let tables: Vec<HierarchyTable> = directions.iter().map(|&d| run_hierarchy(&problem, &section, &degrees, &degrees, d, args.seed)).collect();
        for (t, d) in tables.iter().zip(&directions) {
            write!(out, "{}", t.to_text())?;
            if let Some(path) = &args.csv {
                std::fs::write(with_suffix(path, d.as_str(), many), t.to_csv())?;
            }
        }
        if let Some(path) = &args.out {
            std::fs::write(path, serde_json::to_string_pretty(&tables).expect("tables serialize"))?;
        }
        return Ok(());
    }

    let deg_mult = args.deg_mult.unwrap_or(args.deg_psi);
    let mut reports = Vec::new();
    for &d in &directions {
        let opts = SolveOptions { dump_sdp: args.dump_sdp.as_ref().map(|p| with_suffix(p, d.as_str(), many)), seed: args.seed };
        let r = run_solve(&problem, &section, args.deg_psi, deg_mult, d, &opts)?;
        writeln!(
            out,
            "{} bound, degree {}/{}: gamma = {:.6} ({:?}, {} iterations, certificate mismatch {:.1e}, {:.2}s)",
            d.as_str(),
            args.deg_psi,
            deg_mult,
            r.gamma,
            r.diagnostics.status,
            r.diagnostics.iterations,
            r.certificate.max_mismatch,
            r.wall_time_s
        )?;
        writeln!(out, "  psi = {}", r.psi)?;
        if let Some(path) = &args.samples {
            std::fs::write(with_suffix(path, d.as_str(), many), emit_samples(&r, &problem, args.sample_points)?)?;
        }
        reports.push(r);
    }

    let verification = if args.verify {
        let find = |d: BoundDirection| reports.iter().find(|r| r.direction == d);
        let rollout = (args.rollouts > 0).then(|| -> Result<RolloutOptions, CliError> {
            let mut starts = args.x0.iter().map(|t| parse_point(t, problem.dim())).collect::<Result<Vec<_>, _>>()?;
            starts.extend(sample_box(&problem, args.starts, args.seed, 0.75));
            if starts.is_empty() {
                starts.push(problem.bounding_box.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect());
            }
            Ok(RolloutOptions { n_traj: args.rollouts, dt: args.dt, seed: args.seed, starts })
        });
        let opts = VerifyOptions { grid: args.grid, rollout: rollout.transpose()?, ..VerifyOptions::default() };
        let v = run_verify(&problem, find(BoundDirection::Lower), find(BoundDirection::Upper), &opts)?;
        writeln!(out, "verification: {}", v.fd_note)?;
        if let Some(b) = &v.bounds {
            writeln!(out, "  sandwich over {} nodes: lower margin {:.3e}, upper margin {:.3e}, tol_fd {:.3e}", b.nodes, b.low_margin, b.up_margin, b.tol_fd)?;
        }
        if let Some(o) = &v.order {
            writeln!(out, "  order: max(low - up) = {:.3e}, value inversions {}", o.max_excess, o.value_inversions)?;
        }
        for r in &v.rollouts {
            writeln!(
                out,
                "  rollout from {:?}: mean {:.6} ± {:.6} over {} ({} capped), value bound {}",
                r.report.x0,
                r.report.mean,
                r.report.stderr,
                r.report.completed,
                r.report.capped,
                r.value_lower_bound.map_or("n/a".into(), |v| format!("{v:.6}"))
            )?;
        }
        writeln!(out, "  {}", if v.passed { "PASS" } else { "FAIL" })?;
        Some(v)
    } else {
        None
    };

    if let Some(path) = &args.out {
        let doc = SolveOutput { schema_version: super::SCHEMA_VERSION, reports: &reports, verification: verification.as_ref() };
        std::fs::write(path, serde_json::to_string_pretty(&doc).expect("reports serialize"))?;
    }
    match verification {
        Some(v) if !v.passed => Err(CliError::Verification("see the verification summary".into())),
        _ => Ok(()),
    }
}
