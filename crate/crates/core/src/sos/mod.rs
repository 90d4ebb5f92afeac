//! Sum-of-squares programs: Gram-matrix encodings of polynomial identities,
//! Putinar-style certificates on semialgebraic sets, and the bound programs
//! for the desirability PDE.

mod bound;
mod param;

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, SemialgebraicSet};
use crate::pde::PdeError;
use crate::poly::{monomial_basis_over, Monomial, Polynomial, VariableSpace};
use crate::sdp::{smat, svec_index, svec_len, Cone, ConicProgram, SdpError, SolveStatus};

pub use bound::{
    build_bound_program, extract_solution, sample_residual_sandwich, solve_bound, verify_certificate, AssembledProgram, BoundSolution,
    BoundaryGap, Certificate, CertificateConfig, CertificateReport, ConstraintRole, FitSummary, FreeCert, GramCert, IdentityCertificate,
    IdentityReport, SandwichReport, SolverDiagnostics, TargetForm, TargetOp,
};
pub use param::{AffineExpr, ParamPolynomial};

#[derive(Debug, Error)]
pub enum SosError {
    #[error("degree inconsistency: {0}")]
    Degree(String),
    #[error("Gram basis cannot represent monomial {0}")]
    BasisInsufficient(String),
    #[error("empty boundary face: {0}")]
    EmptyFace(String),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error("relaxation infeasible at this truncation (solver status {status:?})")]
    Infeasible { status: SolveStatus },
    #[error("solver stopped with status {status:?} short of the tolerances")]
    SolverFailed { status: SolveStatus, partial: Box<BoundSolution> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramBlock {
    pub basis: Vec<Monomial>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IdentityTerm {
    /// `multiplier · zᵀQz` with `Q` the given Gram block.
    Sos { block: usize, multiplier: Polynomial },
    /// `multiplier · Σ x[id]·m`, a free polynomial multiplier.
    Free { vars: Vec<(usize, Monomial)>, multiplier: Polynomial },
}

/// `target ≡ Σ terms` as a polynomial identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SosIdentity {
    pub label: String,
    pub target: ParamPolynomial,
    pub terms: Vec<IdentityTerm>,
}

/// Free scalar decision variables, Gram blocks and identities tying them.
#[derive(Debug, Clone, PartialEq)]
pub struct SosProgram {
    pub space: Arc<VariableSpace>,
    pub num_free: usize,
    pub blocks: Vec<GramBlock>,
    pub identities: Vec<SosIdentity>,
    /// Minimised linear objective over free variables.
    pub objective: Vec<(usize, f64)>,
}

impl SosProgram {
    pub fn new(space: &Arc<VariableSpace>) -> Self {
        Self { space: space.clone(), num_free: 0, blocks: vec![], identities: vec![], objective: vec![] }
    }

    pub fn add_free(&mut self, count: usize) -> Range<usize> {
        let start = self.num_free;
        self.num_free += count;
        start..self.num_free
    }

    pub fn add_block(&mut self, basis: Vec<Monomial>) -> usize {
        self.blocks.push(GramBlock { basis });
        self.blocks.len() - 1
    }

    pub fn add_identity(&mut self, identity: SosIdentity) -> usize {
        self.identities.push(identity);
        self.identities.len() - 1
    }

    pub fn cones(&self) -> Vec<Cone> {
        let mut cones = vec![Cone::Free(self.num_free)];
        cones.extend(self.blocks.iter().map(|b| Cone::Psd(b.basis.len())));
        cones
    }

    fn block_offsets(&self) -> Vec<usize> {
        let mut off = self.num_free;
        self.blocks
            .iter()
            .map(|b| {
                let o = off;
                off += svec_len(b.basis.len());
                o
            })
            .collect()
    }

    /// Coefficient-matching equations for every identity. Rows are left
    /// unscaled so the solver's primal residual bounds the coefficient
    /// mismatch of the recovered certificate directly.
    pub fn compile(&self) -> ConicProgram {
        let offsets = self.block_offsets();
        let n = self.num_free + self.blocks.iter().map(|b| svec_len(b.basis.len())).sum::<usize>();
        let mut c = vec![0.0; n];
        for &(v, w) in &self.objective {
            c[v] += w;
        }
        let mut rows = Vec::new();
        let mut b = Vec::new();
        for identity in &self.identities {
            let mut acc: BTreeMap<Monomial, (Vec<(usize, f64)>, f64)> = BTreeMap::new();
            for (m, e) in identity.target.terms() {
                let entry = acc.entry(m.clone()).or_default();
                entry.0.extend(e.terms.iter().copied());
                entry.1 -= e.constant;
            }
            for term in &identity.terms {
                match term {
                    IdentityTerm::Sos { block, multiplier } => {
                        let basis = &self.blocks[*block].basis;
                        let dim = basis.len();
                        for a in 0..dim {
                            for bb in 0..=a {
                                let pm = basis[a].mul(&basis[bb]);
                                let col = offsets[*block] + svec_index(dim, a, bb);
                                let w = if a == bb { 1.0 } else { SQRT_2 };
                                for (gm, gc) in multiplier.terms() {
                                    acc.entry(pm.mul(gm)).or_default().0.push((col, -gc * w));
                                }
                            }
                        }
                    }
                    IdentityTerm::Free { vars, multiplier } => {
                        for (id, mono) in vars {
                            for (gm, gc) in multiplier.terms() {
                                acc.entry(mono.mul(gm)).or_default().0.push((*id, -gc));
                            }
                        }
                    }
                }
            }
            for (_, (mut entries, rhs)) in acc {
                entries.sort_by_key(|e| e.0);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
                for (col, v) in entries {
                    match merged.last_mut() {
                        Some(last) if last.0 == col => last.1 += v,
                        _ => merged.push((col, v)),
                    }
                }
                merged.retain(|e| e.1 != 0.0);
                if merged.is_empty() && rhs == 0.0 {
                    continue;
                }
                rows.push(merged);
                b.push(rhs);
            }
        }
        ConicProgram { c, rows, b, cones: self.cones() }
    }

    /// Splits a conic primal vector into free values and Gram matrices.
    pub fn decode(&self, x: &[f64]) -> (Vec<f64>, Vec<DMatrix<f64>>) {
        let offsets = self.block_offsets();
        let grams = self
            .blocks
            .iter()
            .zip(offsets)
            .map(|(blk, off)| {
                let n = blk.basis.len();
                smat(n, &x[off..off + svec_len(n)])
            })
            .collect();
        (x[..self.num_free].to_vec(), grams)
    }
}

/// Encodes "`p` is SOS in the basis" as a single Gram block plus matching
/// equations. Fails when some monomial of `p` is not a product of two basis
/// elements.
pub fn gram_encode(p: &ParamPolynomial, basis: &[Monomial], program: &mut SosProgram, label: &str) -> Result<usize, SosError> {
    let mut products = std::collections::BTreeSet::new();
    for a in basis {
        for b in basis {
            products.insert(a.mul(b));
        }
    }
    for (m, _) in p.terms() {
        if !products.contains(m) {
            return Err(SosError::BasisInsufficient(Polynomial::monomial(&program.space, m.clone(), 1.0).to_string()));
        }
    }
    let block = program.add_block(basis.to_vec());
    let one = Polynomial::constant(&program.space, 1.0);
    Ok(program.add_identity(SosIdentity {
        label: label.to_string(),
        target: p.clone(),
        terms: vec![IdentityTerm::Sos { block, multiplier: one }],
    }))
}

/// Degrees of the Putinar multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiplierDegrees {
    /// Degree of every `sᵢ` (even).
    pub sos: u32,
    /// Degree of the free multipliers `tⱼ`.
    pub eq: u32,
    pub include_products: bool,
    /// Hold `σ₀` to degree `sos` as well. Otherwise `σ₀` takes the level of
    /// the other terms, `max(sos, deg sᵢgᵢ, deg tⱼhⱼ)` rounded up to even.
    /// Raising it to `deg p` would add nothing when `p` is sandwiched: the top
    /// coefficients are forced to vanish either way, and doing it through the
    /// Gram block leaves the program without an interior.
    pub cap_sigma0: bool,
}

impl MultiplierDegrees {
    pub fn validate(&self) -> Result<(), SosError> {
        if self.sos % 2 != 0 {
            return Err(SosError::Degree(format!("SOS multiplier degree {} must be even", self.sos)));
        }
        Ok(())
    }
}

/// Adds `p = σ₀ + Σ sᵢgᵢ (+ Σ rᵢⱼgᵢgⱼ) + Σ tⱼhⱼ` with Gram bases over `vars`.
pub fn putinar_constraint(
    program: &mut SosProgram,
    label: &str,
    p: &ParamPolynomial,
    set: &SemialgebraicSet,
    vars: &[usize],
    degrees: &MultiplierDegrees,
) -> Result<usize, SosError> {
    degrees.validate()?;
    let space = program.space.clone();
    let dim = space.dim();
    let one = Polynomial::constant(&space, 1.0);
    let mut multipliers = set.inequalities.clone();
    if degrees.include_products {
        for i in 0..set.inequalities.len() {
            for j in i + 1..set.inequalities.len() {
                let prod = set.inequalities[i].try_mul(&set.inequalities[j]).map_err(|e| SosError::Model(e.into()))?;
                multipliers.push(prod);
            }
        }
    }
    let sigma0 = if degrees.cap_sigma0 {
        degrees.sos
    } else {
        let top = multipliers
            .iter()
            .map(|g| degrees.sos + g.degree())
            .chain(set.equalities.iter().map(|h| degrees.eq + h.degree()))
            .fold(degrees.sos, u32::max);
        top + top % 2
    };
    let mut terms = Vec::new();
    let mut sos_term = |program: &mut SosProgram, multiplier: Polynomial, half: u32| {
        let block = program.add_block(monomial_basis_over(dim, vars, half));
        terms.push(IdentityTerm::Sos { block, multiplier });
    };
    sos_term(program, one, sigma0 / 2);
    for g in multipliers {
        sos_term(program, g, degrees.sos / 2);
    }
    for h in &set.equalities {
        let basis = monomial_basis_over(dim, vars, degrees.eq);
        let ids = program.add_free(basis.len());
        terms.push(IdentityTerm::Free { vars: ids.zip(basis).collect(), multiplier: h.clone() });
    }
    Ok(program.add_identity(SosIdentity { label: label.to_string(), target: p.clone(), terms }))
}
