use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{value_from_psi, BoundDirection, HorizonSpec, SocProblem};
use crate::oracle::{fd_reference_1d, fd_reference_2d, rollout, verify_bounds, BoundsReport, GridSolution, RolloutReport, RolloutSettings};
use crate::poly::{parse_polynomial, Polynomial};
use crate::sdp::{write_dump, ConicSolver, InteriorPointSolver};
use crate::sos::{
    build_bound_program, extract_solution, sample_residual_sandwich, verify_certificate, CertificateConfig, CertificateReport, FitSummary,
    SandwichReport, SolverDiagnostics, SosError,
};

use super::problem_file::{SolverSection, SCHEMA_VERSION};
use super::CliError;

/// Coefficient mismatch accepted when rebuilding an identity.
pub const TOL_EQ: f64 = 1e-6;
/// Smallest Gram eigenvalue accepted.
pub const TOL_PSD: f64 = 1e-7;
/// Slack on the sampled `0 ≤ residual ≤ γ` check.
pub const TOL_SANDWICH: f64 = 1e-6;
const SANDWICH_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub problem: String,
    pub direction: BoundDirection,
    pub config: CertificateConfig,
    pub gamma: f64,
    /// Canonical text of Ψ; coefficients print with round-trip precision.
    pub psi: String,
    /// `(exponents, coefficient)` per term.
    pub psi_coefficients: Vec<(Vec<u32>, f64)>,
    pub certificate: CertificateReport,
    pub sandwich: SandwichReport,
    pub diagnostics: SolverDiagnostics,
    pub fits: Vec<FitSummary>,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn psi_polynomial(&self, problem: &SocProblem) -> Result<Polynomial, CliError> {
        parse_polynomial(&self.psi, &problem.space).map_err(|e| CliError::Parse { field: "report.psi".into(), message: e.to_string() })
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    /// Writes the conic program here before solving.
    pub dump_sdp: Option<PathBuf>,
    /// Seed of the residual sampling check.
    pub seed: u64,
}

fn sos_error(e: SosError) -> CliError {
    match e {
        SosError::Model(m) => CliError::Model(m),
        other => CliError::Solver(other.to_string()),
    }
}

/// Build, solve, extract and verify. Only verified results come back.
pub fn run_solve(
    problem: &SocProblem,
    section: &SolverSection,
    deg_psi: u32,
    deg_mult: u32,
    direction: BoundDirection,
    opts: &SolveOptions,
) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let config = section.certificate_config(deg_psi, deg_mult);
    let settings = section.solver_settings();
    let prog = build_bound_program(problem, &config, direction).map_err(sos_error)?;
    if let Some(path) = &opts.dump_sdp {
        write_dump(&prog.conic, std::fs::File::create(path)?).map_err(|e| CliError::Solver(e.to_string()))?;
    }
    let sol = InteriorPointSolver::new(settings).solve(&prog.conic).map_err(|e| CliError::Solver(e.to_string()))?;
    let bound = extract_solution(&prog, &sol, &settings).map_err(sos_error)?;
    let certificate = verify_certificate(&bound, TOL_EQ, TOL_PSD);
    if !certificate.passed {
        return Err(CliError::Certificate(format!(
            "{} bound at degree {deg_psi}/{deg_mult}: mismatch {:.2e}, min eigenvalue {:.2e}",
            direction.as_str(),
            certificate.max_mismatch,
            certificate.min_eigenvalue
        )));
    }
    let sandwich = sample_residual_sandwich(&bound, problem, SANDWICH_SAMPLES, opts.seed, TOL_SANDWICH).map_err(sos_error)?;
    if !sandwich.passed {
        return Err(CliError::Certificate(format!(
            "{} bound at degree {deg_psi}/{deg_mult}: sampled residual outside [0, γ] (min {:.2e}, excess {:.2e})",
            direction.as_str(),
            sandwich.min_defect,
            sandwich.max_excess
        )));
    }
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        problem: problem.name.clone(),
        direction,
        config,
        gamma: bound.gamma,
        psi: bound.psi.to_string(),
        psi_coefficients: bound.psi.terms().map(|(m, c)| (m.exponents().to_vec(), c)).collect(),
        certificate,
        sandwich,
        diagnostics: bound.diagnostics,
        fits: bound.fits,
        warnings: bound.warnings,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Parses `"a:b:step"` (or a single degree) into the inclusive list.
pub fn parse_range(text: &str) -> Result<Vec<u32>, CliError> {
    let bad = |m: &str| CliError::Parse { field: "--hierarchy".into(), message: format!("{m} in {text:?}") };
    let parts: Vec<u32> = text.split(':').map(|p| p.trim().parse().map_err(|_| bad("expected integers"))).collect::<Result<_, _>>()?;
    let (a, b, step) = match parts[..] {
        [a] => (a, a, 1),
        [a, b] => (a, b, 1),
        [a, b, s] => (a, b, s),
        _ => return Err(bad("expected a:b:step")),
    };
    if step == 0 || b < a {
        return Err(bad("empty range"));
    }
    Ok((a..=b).step_by(step as usize).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub deg_psi: u32,
    pub deg_mult: u32,
    pub report: Option<RunReport>,
    pub error: Option<String>,
}

impl Cell {
    pub fn gamma(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.gamma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyTable {
    pub schema_version: u32,
    pub direction: BoundDirection,
    pub deg_psi: Vec<u32>,
    pub deg_mult: Vec<u32>,
    /// Row-major: `cells[i][j]` is `(deg_psi[i], deg_mult[j])`.
    pub cells: Vec<Vec<Cell>>,
    pub violations: Vec<String>,
}

/// Slack on the monotonicity check.
const TOL_MONOTONE: f64 = 1e-6;

impl HierarchyTable {
    pub fn gamma(&self, deg_psi: u32, deg_mult: u32) -> Option<f64> {
        let i = self.deg_psi.iter().position(|&d| d == deg_psi)?;
        let j = self.deg_mult.iter().position(|&d| d == deg_mult)?;
        self.cells[i][j].gamma()
    }

    fn find_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |a: &Cell, b: &Cell| {
            if let (Some(ga), Some(gb)) = (a.gamma(), b.gamma()) {
                if gb > ga + TOL_MONOTONE {
                    out.push(format!("γ({},{}) = {gb:.6} > γ({},{}) = {ga:.6}", b.deg_psi, b.deg_mult, a.deg_psi, a.deg_mult));
                }
            }
        };
        for (i, row) in self.cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if j + 1 < row.len() {
                    check(cell, &row[j + 1]);
                }
                if i + 1 < self.cells.len() {
                    check(cell, &self.cells[i + 1][j]);
                }
            }
        }
        out
    }

    /// Rows are `deg(Ψ)`, columns `deg(s)`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{} bound γ\ndeg(Ψ)\\deg(s)", self.direction.as_str());
        for d in &self.deg_mult {
            let _ = write!(out, " {d:>9}");
        }
        out.push('\n');
        for (d, row) in self.deg_psi.iter().zip(&self.cells) {
            let _ = write!(out, "{d:>13}");
            for cell in row {
                match cell.gamma() {
                    Some(g) => {
                        let _ = write!(out, " {g:>9.4}");
                    }
                    None => {
                        let _ = write!(out, " {:>9}", "fail");
                    }
                }
            }
            out.push('\n');
        }
        for v in &self.violations {
            let _ = writeln!(out, "monotonicity violation: {v}");
        }
        for cell in self.cells.iter().flatten().filter(|c| c.error.is_some()) {
            let _ = writeln!(out, "cell ({},{}) failed: {}", cell.deg_psi, cell.deg_mult, cell.error.as_deref().unwrap_or(""));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# schema_version {SCHEMA_VERSION}\ndeg_psi,deg_mult,direction,gamma,status\n");
        for cell in self.cells.iter().flatten() {
            let (gamma, status) = match (&cell.report, &cell.error) {
                (Some(r), _) => (format!("{:?}", r.gamma), "ok".to_string()),
                (None, e) => (String::new(), e.clone().unwrap_or_default().replace(',', ";")),
            };
            let _ = writeln!(out, "{},{},{},{gamma},{status}", cell.deg_psi, cell.deg_mult, self.direction.as_str());
        }
        out
    }
}

/// Solves every `(deg_psi, deg_mult)` cell; failures are recorded and the
/// sweep continues.
pub fn run_hierarchy(
    problem: &SocProblem,
    section: &SolverSection,
    deg_psi: &[u32],
    deg_mult: &[u32],
    direction: BoundDirection,
    seed: u64,
) -> HierarchyTable {
    let pairs: Vec<(u32, u32)> = deg_psi.iter().flat_map(|&p| deg_mult.iter().map(move |&m| (p, m))).collect();
    let opts = SolveOptions { dump_sdp: None, seed };
    let flat: Vec<Cell> = pairs
        .par_iter()
        .map(|&(p, m)| match run_solve(problem, section, p, m, direction, &opts) {
            Ok(r) => Cell { deg_psi: p, deg_mult: m, report: Some(r), error: None },
            Err(e) => Cell { deg_psi: p, deg_mult: m, report: None, error: Some(e.to_string()) },
        })
        .collect();
    let cells = flat.chunks(deg_mult.len()).map(<[Cell]>::to_vec).collect();
    let mut table = HierarchyTable { schema_version: SCHEMA_VERSION, direction, deg_psi: deg_psi.to_vec(), deg_mult: deg_mult.to_vec(), cells, violations: Vec::new() };
    table.violations = table.find_violations();
    table
}

#[derive(Debug, Clone)]
pub struct RolloutOptions {
    pub n_traj: usize,
    pub dt: f64,
    pub seed: u64,
    pub starts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Nodes per axis of the finite-difference reference; odd.
    pub grid: Option<usize>,
    pub rollout: Option<RolloutOptions>,
    /// Allowed `Ψ_low − Ψ_up`, twice the solver gap tolerance.
    pub tol_order: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { grid: None, rollout: None, tol_order: 2e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderReport {
    pub points: usize,
    /// Largest `Ψ_low − Ψ_up`.
    pub max_excess: f64,
    /// Points where both Ψ exceed the clamp and `V(Ψ_up) > V(Ψ_low)`.
    pub value_inversions: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutCheck {
    pub report: RolloutReport,
    /// `−λ log Ψ_up(x0)`, when an upper bound is available.
    pub value_lower_bound: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub fd_grid: Option<Vec<usize>>,
    pub fd_note: String,
    pub bounds: Option<BoundsReport>,
    pub order: Option<OrderReport>,
    pub rollouts: Vec<RolloutCheck>,
    pub passed: bool,
}

fn fd_reference(problem: &SocProblem, grid: Option<usize>) -> Result<Option<GridSolution>, CliError> {
    let fail = |e: crate::oracle::OracleError| CliError::Verification(e.to_string());
    if problem.horizon != HorizonSpec::FirstExit {
        return Ok(None);
    }
    match problem.dim() {
        1 => fd_reference_1d(problem, grid.unwrap_or(4001)).map(Some).map_err(fail),
        2 => {
            let n = grid.unwrap_or(201);
            fd_reference_2d(problem, n, n).map(Some).map_err(fail)
        }
        _ => Ok(None),
    }
}

/// Checks the bounds against the finite-difference oracle, their mutual order,
/// and rollouts of the policy from `up` (else `low`) against `−λ log Ψ_up`.
pub fn run_verify(problem: &SocProblem, low: Option<&RunReport>, up: Option<&RunReport>, opts: &VerifyOptions) -> Result<VerifyReport, CliError> {
    let low_psi = low.map(|r| r.psi_polynomial(problem)).transpose()?;
    let up_psi = up.map(|r| r.psi_polynomial(problem)).transpose()?;
    let reference = fd_reference(problem, opts.grid)?;
    let fd_note = match &reference {
        Some(g) => format!("{}; Richardson tol_fd {:.3e}", g.note, g.error_estimate.unwrap_or(0.0)),
        None if problem.dim() > 2 => "skipped: finite differences support one or two dimensions".into(),
        None => "skipped: finite differences need a first-exit horizon".into(),
    };
    let bounds = reference.as_ref().map(|g| verify_bounds(low_psi.as_ref(), up_psi.as_ref(), g));

    let order = match (&low_psi, &up_psi) {
        (Some(l), Some(u)) => {
            let points: Vec<Vec<f64>> = match &reference {
                Some(g) => (0..g.len()).map(|k| g.point(k)).collect(),
                None => sample_domain(problem, 1000, 0),
            };
            let (l, u) = (l.compile(), u.compile());
            let lambda = problem.lambda();
            let mut max_excess = f64::NEG_INFINITY;
            let mut value_inversions = 0;
            for p in &points {
                let (a, b) = (l.eval(p), u.eval(p));
                max_excess = max_excess.max(a - b);
                let (va, vb) = (value_from_psi(a, lambda), value_from_psi(b, lambda));
                if !va.clamped && !vb.clamped && vb.value > va.value + opts.tol_order {
                    value_inversions += 1;
                }
            }
            Some(OrderReport { points: points.len(), max_excess, value_inversions, passed: max_excess <= opts.tol_order && value_inversions == 0 })
        }
        _ => None,
    };

    let mut rollouts = Vec::new();
    if let Some(ro) = &opts.rollout {
        if let Some(policy) = up_psi.as_ref().or(low_psi.as_ref()) {
            for x0 in &ro.starts {
                let report = rollout(problem, policy, x0, &RolloutSettings::new(ro.dt, ro.n_traj, ro.seed))
                    .map_err(|e| CliError::Verification(e.to_string()))?;
                let value_lower_bound = up_psi.as_ref().map(|u| value_from_psi(u.evaluate(x0).unwrap_or(f64::NAN), problem.lambda()).value);
                let passed = report.completed > 0 && value_lower_bound.map_or(true, |v| report.mean >= v - 3.0 * report.stderr);
                rollouts.push(RolloutCheck { report, value_lower_bound, passed });
            }
        }
    }
    let passed = bounds.as_ref().map_or(true, BoundsReport::pass) && order.as_ref().map_or(true, |o| o.passed) && rollouts.iter().all(|r| r.passed);
    Ok(VerifyReport {
        schema_version: SCHEMA_VERSION,
        fd_grid: reference.as_ref().map(|g| g.axes.iter().map(|a| a.n).collect()),
        fd_note,
        bounds,
        order,
        rollouts,
        passed,
    })
}

/// Uniform samples of the domain by rejection from the bounding box, shrunk
/// towards its centre by `shrink` when nonzero.
pub(crate) fn sample_box(problem: &SocProblem, count: usize, seed: u64, shrink: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < count * 1000 {
        tries += 1;
        let p: Vec<f64> = problem
            .bounding_box
            .iter()
            .map(|&(lo, hi)| {
                let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo) * if shrink > 0.0 { shrink } else { 1.0 });
                rng.gen_range(mid - half..=mid + half)
            })
            .collect();
        if problem.domain.contains(&p, 0.0) {
            out.push(p);
        }
    }
    out
}

fn sample_domain(problem: &SocProblem, count: usize, seed: u64) -> Vec<Vec<f64>> {
    sample_box(problem, count, seed, 0.0)
}

/// Dense `(x, Ψ, V)` samples on a tensor grid over the bounding box; `V` is
/// `inf` with `clamped = 1` where `Ψ` falls below the clamp.
pub fn emit_samples(report: &RunReport, problem: &SocProblem, points_per_axis: usize) -> Result<String, CliError> {
    let psi = report.psi_polynomial(problem)?.compile();
    let n = points_per_axis.max(2);
    let dim = problem.dim();
    let names = problem.space.names();
    let mut out = format!("# schema_version {SCHEMA_VERSION}; {} bound, gamma {:?}\n{},psi,v,clamped\n", report.direction.as_str(), report.gamma, names.join(","));
    let total = n.pow(dim as u32);
    let mut p = vec![0.0; dim];
    for k in 0..total {
        let mut r = k;
        for (x, &(lo, hi)) in p.iter_mut().zip(&problem.bounding_box) {
            let i = r % n;
            r /= n;
            *x = if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
        }
        let v = psi.eval(&p);
        let val = value_from_psi(v, problem.lambda());
        let coords: Vec<String> = p.iter().map(|x| format!("{x:?}")).collect();
        let _ = writeln!(out, "{},{v:?},{},{}", coords.join(","), if val.clamped { "inf".to_string() } else { format!("{:?}", val.value + 0.0) }, val.clamped as u8);
    }
    Ok(out)
}
