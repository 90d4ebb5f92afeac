//! Bound programs for the desirability PDE and their certificates.
//!
//! With `r = (q/λ)Ψ − ∂ₜΨ − L(Ψ)` and `s = −1` (lower) or `s = +1` (upper),
//! the program is
//!
//! ```text
//! min γ   s.t.  s·r ≥ 0,  γ − s·r ≥ 0            on 𝕊
//!               s·(Ψ − Ψ_∂) ≥ 0                  on each face
//!               γ − s·(Ψ_∂ − Ψ) ≥ 0              on each face (boundary gap)
//! ```
//!
//! where `Ψ_∂` is the one-sided fit of the boundary desirability. The
//! maximum principle turns the first and third rows into `Ψ ≤ Ψ*` (lower) or
//! `Ψ ≥ Ψ*` (upper). The boundary-gap row keeps the lower program from
//! collapsing onto `Ψ ≡ 0`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{putinar_constraint, IdentityTerm, MultiplierDegrees, ParamPolynomial, SosError, SosProgram};
use crate::model::{axis_face, desirability_boundary, BoundDirection, BoundaryPiece, SemialgebraicSet, SocProblem};
use crate::pde::{DesirabilityPde, LinearPoly, PdeError};
use crate::poly::{monomial_basis, Monomial, Polynomial};
use crate::sdp::{min_eigenvalue, ConicProgram, ConicSolution, ConicSolver, SolveStatus, SolverSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryGap {
    /// On for lower bounds, off for upper bounds.
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateConfig {
    pub deg_psi: u32,
    /// Degree of each `sᵢ`.
    pub deg_mult: u32,
    /// Degree of the free equality multipliers; defaults to `deg_mult`.
    pub deg_eq_mult: Option<u32>,
    pub include_products: bool,
    /// Also hold `σ₀` to `deg_mult` instead of the identity's degree.
    pub cap_sigma0: bool,
    pub enforce_positivity: bool,
    pub boundary_gap: BoundaryGap,
    /// Chebyshev degree of non-constant boundary data fits.
    pub fit_degree: u32,
}

impl CertificateConfig {
    pub fn new(deg_psi: u32, deg_mult: u32) -> Self {
        Self {
            deg_psi,
            deg_mult,
            deg_eq_mult: None,
            include_products: false,
            cap_sigma0: false,
            enforce_positivity: false,
            boundary_gap: BoundaryGap::Auto,
            fit_degree: 8,
        }
    }

    pub fn multiplier_degrees(&self) -> MultiplierDegrees {
        MultiplierDegrees {
            sos: self.deg_mult,
            eq: self.deg_eq_mult.unwrap_or(self.deg_mult),
            include_products: self.include_products,
            cap_sigma0: self.cap_sigma0,
        }
    }

    pub fn boundary_gap_for(&self, direction: BoundDirection) -> bool {
        match self.boundary_gap {
            BoundaryGap::On => true,
            BoundaryGap::Off => false,
            BoundaryGap::Auto => direction == BoundDirection::Lower,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintRole {
    Pde,
    Gap,
    Boundary,
    BoundaryGap,
    Positivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetOp {
    /// The PDE residual of `Ψ`.
    Residual,
    /// `Ψ` itself.
    Value,
}

/// Recipe for the polynomial required to be nonnegative:
/// `psi_sign·op(Ψ) + gamma_coeff·γ + offset`, restricted to `face`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetForm {
    pub role: ConstraintRole,
    pub op: TargetOp,
    pub psi_sign: f64,
    pub gamma_coeff: f64,
    pub offset: Polynomial,
    pub face: Option<(usize, f64)>,
    pub piece: Option<String>,
}

trait TargetPoly: LinearPoly {
    fn lift(p: &Polynomial) -> Self;
    fn subst(&self, index: usize, value: f64) -> Self;
}

impl TargetPoly for Polynomial {
    fn lift(p: &Polynomial) -> Self {
        p.clone()
    }

    fn subst(&self, index: usize, value: f64) -> Self {
        self.substitute(index, value)
    }
}

impl TargetPoly for ParamPolynomial {
    fn lift(p: &Polynomial) -> Self {
        ParamPolynomial::from_polynomial(p)
    }

    fn subst(&self, index: usize, value: f64) -> Self {
        self.substitute(index, value)
    }
}

fn build_target<P: TargetPoly>(form: &TargetForm, pde: &DesirabilityPde, psi: &P, gamma: &P) -> Result<P, PdeError> {
    let base = match form.op {
        TargetOp::Residual => pde.residual(psi)?,
        TargetOp::Value => psi.clone(),
    };
    let mut t = base.scale(form.psi_sign);
    if form.gamma_coeff != 0.0 {
        t = t.add(&gamma.scale(form.gamma_coeff));
    }
    if !form.offset.is_zero() {
        t = t.add(&P::lift(&form.offset));
    }
    if let Some((k, v)) = form.face {
        t = t.subst(k, v);
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub piece: String,
    pub exact: bool,
    pub remainder: f64,
    /// Fitted boundary desirability (after the one-sided shift), canonical text.
    pub fit: String,
}

#[derive(Debug, Clone)]
pub struct AssembledProgram {
    pub sos: SosProgram,
    pub conic: ConicProgram,
    pub direction: BoundDirection,
    pub config: CertificateConfig,
    pub pde: DesirabilityPde,
    pub gamma_var: usize,
    pub psi_vars: Vec<(usize, Monomial)>,
    /// One per identity of `sos`, same order.
    pub forms: Vec<TargetForm>,
    pub fits: Vec<FitSummary>,
    pub warnings: Vec<String>,
}

/// Generators of a boundary face with axis-aligned faces substituted out.
fn face_set(problem: &SocProblem, piece: &BoundaryPiece) -> Result<(SemialgebraicSet, Option<(usize, f64)>, Vec<usize>), SosError> {
    let h = &piece.face.equalities[0];
    let all: Vec<usize> = (0..problem.dim()).collect();
    let gens = problem.domain.inequalities.iter().chain(&piece.face.inequalities);
    match axis_face(h) {
        Some((k, v)) => {
            let mut inequalities = Vec::new();
            for g in gens {
                let gs = g.substitute(k, v);
                if gs.is_constant() {
                    if gs.constant_term() < -1e-12 {
                        return Err(SosError::EmptyFace(piece.name.clone()));
                    }
                } else if !inequalities.contains(&gs) {
                    inequalities.push(gs);
                }
            }
            let mut equalities = Vec::new();
            for e in &problem.domain.equalities {
                let es = e.substitute(k, v);
                if es.is_constant() {
                    if es.constant_term().abs() > 1e-12 {
                        return Err(SosError::EmptyFace(piece.name.clone()));
                    }
                } else {
                    equalities.push(es);
                }
            }
            let vars = all.into_iter().filter(|&i| i != k).collect();
            Ok((SemialgebraicSet { inequalities, equalities }, Some((k, v)), vars))
        }
        None => {
            let mut set = SemialgebraicSet { inequalities: gens.cloned().collect(), equalities: problem.domain.equalities.clone() };
            set.equalities.push(h.clone());
            Ok((set, None, all))
        }
    }
}

pub fn build_bound_program(problem: &SocProblem, config: &CertificateConfig, direction: BoundDirection) -> Result<AssembledProgram, SosError> {
    let degrees = config.multiplier_degrees();
    degrees.validate()?;
    let space = problem.space.clone();
    let dim = space.dim();
    let pde = DesirabilityPde::new(problem);
    let mut sos = SosProgram::new(&space);
    let gamma_var = sos.add_free(1).start;
    let basis = monomial_basis(dim, config.deg_psi);
    let psi_vars: Vec<(usize, Monomial)> = sos.add_free(basis.len()).zip(basis).collect();
    let psi = ParamPolynomial::linear_combination(&space, &psi_vars);
    let gamma = ParamPolynomial::decision(&space, gamma_var);
    let s = match direction {
        BoundDirection::Lower => -1.0,
        BoundDirection::Upper => 1.0,
    };
    let zero = Polynomial::zero(&space);
    let all_vars: Vec<usize> = (0..dim).collect();

    let mut forms = Vec::new();
    let mut fits = Vec::new();
    let mut warnings = Vec::new();
    let mut add = |sos: &mut SosProgram, form: TargetForm, set: &SemialgebraicSet, vars: &[usize]| -> Result<(), SosError> {
        let target = build_target(&form, &pde, &psi, &gamma)?;
        let label = match &form.piece {
            Some(p) => format!("{:?}:{p}", form.role),
            None => format!("{:?}", form.role),
        };
        putinar_constraint(sos, &label, &target, set, vars, &degrees)?;
        forms.push(form);
        Ok(())
    };

    let interior = |role, op, psi_sign, gamma_coeff| TargetForm {
        role,
        op,
        psi_sign,
        gamma_coeff,
        offset: zero.clone(),
        face: None,
        piece: None,
    };
    add(&mut sos, interior(ConstraintRole::Pde, TargetOp::Residual, s, 0.0), &problem.domain, &all_vars)?;
    add(&mut sos, interior(ConstraintRole::Gap, TargetOp::Residual, -s, 1.0), &problem.domain, &all_vars)?;

    for piece in &problem.boundary {
        let fit = desirability_boundary(piece, problem.lambda(), config.fit_degree, direction, &problem.bounding_box)?;
        if !fit.exact && config.fit_degree > config.deg_psi {
            warnings.push(format!(
                "boundary fit degree {} exceeds deg_psi {} on piece {:?}",
                config.fit_degree, config.deg_psi, piece.name
            ));
        }
        let (set, face, vars) = face_set(problem, piece)?;
        fits.push(FitSummary { piece: piece.name.clone(), exact: fit.exact, remainder: fit.remainder, fit: fit.poly.to_string() });
        let form = TargetForm {
            role: ConstraintRole::Boundary,
            op: TargetOp::Value,
            psi_sign: s,
            gamma_coeff: 0.0,
            offset: fit.poly.scale(-s),
            face,
            piece: Some(piece.name.clone()),
        };
        add(&mut sos, form, &set, &vars)?;
        if config.boundary_gap_for(direction) {
            let form = TargetForm {
                role: ConstraintRole::BoundaryGap,
                op: TargetOp::Value,
                psi_sign: -s,
                gamma_coeff: 1.0,
                offset: fit.poly.scale(s),
                face,
                piece: Some(piece.name.clone()),
            };
            add(&mut sos, form, &set, &vars)?;
        }
    }
    if config.enforce_positivity {
        add(&mut sos, interior(ConstraintRole::Positivity, TargetOp::Value, 1.0, 0.0), &problem.domain, &all_vars)?;
    }
    sos.objective = vec![(gamma_var, 1.0)];
    let conic = sos.compile();
    Ok(AssembledProgram { sos, conic, direction, config: *config, pde, gamma_var, psi_vars, forms, fits, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub relative_gap: f64,
    pub dropped_rows: usize,
    pub num_vars: usize,
    pub num_rows: usize,
    pub num_blocks: usize,
    pub largest_block: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramCert {
    pub basis: Vec<Monomial>,
    pub multiplier: Polynomial,
    pub gram: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeCert {
    pub poly: Polynomial,
    pub multiplier: Polynomial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCertificate {
    pub label: String,
    pub form: TargetForm,
    pub grams: Vec<GramCert>,
    pub free: Vec<FreeCert>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub identities: Vec<IdentityCertificate>,
}

#[derive(Debug, Clone)]
pub struct BoundSolution {
    pub direction: BoundDirection,
    pub config: CertificateConfig,
    pub psi: Polynomial,
    pub gamma: f64,
    pub certificate: Certificate,
    pub diagnostics: SolverDiagnostics,
    pub pde: DesirabilityPde,
    pub fits: Vec<FitSummary>,
    pub warnings: Vec<String>,
}

pub fn extract_solution(prog: &AssembledProgram, sol: &ConicSolution, settings: &SolverSettings) -> Result<BoundSolution, SosError> {
    if matches!(sol.status, SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible) {
        return Err(SosError::Infeasible { status: sol.status });
    }
    let space = &prog.sos.space;
    let (free, grams) = prog.sos.decode(&sol.x);
    let psi = Polynomial::from_terms(space, prog.psi_vars.iter().map(|(id, m)| (m.clone(), free[*id])));
    let identities = prog
        .sos
        .identities
        .iter()
        .zip(&prog.forms)
        .map(|(id, form)| {
            let mut g = Vec::new();
            let mut f = Vec::new();
            for term in &id.terms {
                match term {
                    IdentityTerm::Sos { block, multiplier } => g.push(GramCert {
                        basis: prog.sos.blocks[*block].basis.clone(),
                        multiplier: multiplier.clone(),
                        gram: grams[*block].clone(),
                    }),
                    IdentityTerm::Free { vars, multiplier } => f.push(FreeCert {
                        poly: Polynomial::from_terms(space, vars.iter().map(|(v, m)| (m.clone(), free[*v]))),
                        multiplier: multiplier.clone(),
                    }),
                }
            }
            IdentityCertificate { label: id.label.clone(), form: form.clone(), grams: g, free: f }
        })
        .collect();
    let diagnostics = SolverDiagnostics {
        status: sol.status,
        iterations: sol.iterations,
        primal_objective: sol.primal_objective,
        dual_objective: sol.dual_objective,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        relative_gap: sol.relative_gap,
        dropped_rows: sol.dropped_rows.len(),
        num_vars: prog.conic.num_vars(),
        num_rows: prog.conic.num_rows(),
        num_blocks: prog.sos.blocks.len(),
        largest_block: prog.sos.blocks.iter().map(|b| b.basis.len()).max().unwrap_or(0),
    };
    let out = BoundSolution {
        direction: prog.direction,
        config: prog.config,
        psi,
        gamma: free[prog.gamma_var],
        certificate: Certificate { identities },
        diagnostics,
        pde: prog.pde.clone(),
        fits: prog.fits.clone(),
        warnings: prog.warnings.clone(),
    };
    if sol.is_near_optimal(settings, 100.0) {
        Ok(out)
    } else {
        Err(SosError::SolverFailed { status: sol.status, partial: Box::new(out) })
    }
}

pub fn solve_bound(
    problem: &SocProblem,
    config: &CertificateConfig,
    direction: BoundDirection,
    solver: &dyn ConicSolver,
    settings: &SolverSettings,
) -> Result<(AssembledProgram, BoundSolution), SosError> {
    let prog = build_bound_program(problem, config, direction)?;
    let sol = solver.solve(&prog.conic)?;
    let bound = extract_solution(&prog, &sol, settings)?;
    Ok((prog, bound))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub label: String,
    pub role: ConstraintRole,
    pub mismatch: f64,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub max_mismatch: f64,
    pub min_eigenvalue: f64,
    pub tol_eq: f64,
    pub tol_psd: f64,
    pub passed: bool,
    pub identities: Vec<IdentityReport>,
}

fn gram_polynomial(space: &Arc<crate::poly::VariableSpace>, basis: &[Monomial], q: &DMatrix<f64>) -> Polynomial {
    let mut terms = Vec::with_capacity(basis.len() * basis.len());
    for (a, za) in basis.iter().enumerate() {
        for (b, zb) in basis.iter().enumerate() {
            terms.push((za.mul(zb), q[(a, b)]));
        }
    }
    Polynomial::from_terms(space, terms)
}

/// Rebuilds every identity from `Ψ`, `γ`, the Gram matrices and the free
/// multipliers, independently of the compiled program.
pub fn verify_certificate(sol: &BoundSolution, tol_eq: f64, tol_psd: f64) -> CertificateReport {
    let space = sol.psi.space().clone();
    let gamma = Polynomial::constant(&space, sol.gamma);
    let mut identities = Vec::new();
    for id in &sol.certificate.identities {
        let mismatch = match build_target(&id.form, &sol.pde, &sol.psi, &gamma) {
            Ok(target) => {
                let mut rhs = Polynomial::zero(&space);
                for g in &id.grams {
                    let sq = gram_polynomial(&space, &g.basis, &g.gram);
                    rhs = rhs.try_add(&sq.try_mul(&g.multiplier).expect("same space")).expect("same space");
                }
                for f in &id.free {
                    rhs = rhs.try_add(&f.poly.try_mul(&f.multiplier).expect("same space")).expect("same space");
                }
                target.max_coeff_diff(&rhs).unwrap_or(f64::INFINITY)
            }
            Err(_) => f64::INFINITY,
        };
        let min_eig = id
            .grams
            .iter()
            .map(|g| {
                let sym = (&g.gram + g.gram.transpose()) * 0.5;
                if (&sym - &g.gram).amax() > 0.0 {
                    f64::NEG_INFINITY
                } else {
                    min_eigenvalue(&sym)
                }
            })
            .fold(f64::INFINITY, f64::min);
        identities.push(IdentityReport { label: id.label.clone(), role: id.form.role, mismatch, min_eigenvalue: min_eig });
    }
    let max_mismatch = identities.iter().map(|r| r.mismatch).fold(0.0, f64::max);
    let min_eig = identities.iter().map(|r| r.min_eigenvalue).fold(f64::INFINITY, f64::min);
    CertificateReport {
        max_mismatch,
        min_eigenvalue: min_eig,
        tol_eq,
        tol_psd,
        passed: max_mismatch <= tol_eq && min_eig >= -tol_psd,
        identities,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub samples: usize,
    /// Smallest oriented defect (`−r` for lower, `r` for upper).
    pub min_defect: f64,
    /// Largest `defect − γ`.
    pub max_excess: f64,
    pub min_psi: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Checks `0 ≤ oriented residual ≤ γ` (within `tol`) at `samples` random
/// interior points of the domain.
pub fn sample_residual_sandwich(sol: &BoundSolution, problem: &SocProblem, samples: usize, seed: u64, tol: f64) -> Result<SandwichReport, SosError> {
    let r = sol.pde.residual(&sol.psi)?.compile();
    let psi = sol.psi.compile();
    let gens: Vec<_> = problem.domain.inequalities.iter().map(Polynomial::compile).collect();
    let sign = match sol.direction {
        BoundDirection::Lower => -1.0,
        BoundDirection::Upper => 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut point = vec![0.0; problem.dim()];
    let (mut min_defect, mut max_excess, mut min_psi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    let mut taken = 0;
    let mut tries = 0usize;
    while taken < samples && tries < samples * 1000 {
        tries += 1;
        for (x, (lo, hi)) in point.iter_mut().zip(&problem.bounding_box) {
            *x = rng.gen_range(*lo..*hi);
        }
        if gens.iter().any(|g| g.eval(&point) <= 0.0) {
            continue;
        }
        taken += 1;
        let d = sign * r.eval(&point);
        min_defect = min_defect.min(d);
        max_excess = max_excess.max(d - sol.gamma);
        min_psi = min_psi.min(psi.eval(&point));
    }
    Ok(SandwichReport { samples: taken, min_defect, max_excess, min_psi, tol, passed: taken > 0 && min_defect >= -tol && max_excess <= tol })
}
