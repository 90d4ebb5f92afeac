//! The linear desirability operator `L(Ψ) = fᵀ∇Ψ + ½ Tr(∇²Ψ Σ_t)` and the
//! horizon-specific residuals.
//!
//! Both work on anything implementing [`LinearPoly`], so the same code builds
//! numeric residuals of a fixed `Ψ` and affine residuals of a parametrised
//! candidate inside an SOS program.

use std::sync::Arc;

use thiserror::Error;

use crate::model::{HorizonSpec, SocProblem};
use crate::poly::{PolyError, Polynomial, VariableSpace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("finite-horizon residual needs the time variable {0:?} in the candidate's space")]
    MissingTime(String),
}

/// Polynomial-valued objects closed under the operations the PDE needs.
pub trait LinearPoly: Clone {
    fn space(&self) -> &Arc<VariableSpace>;
    fn zero_like(&self) -> Self;
    fn add(&self, other: &Self) -> Self;
    fn scale(&self, alpha: f64) -> Self;
    fn mul_poly(&self, p: &Polynomial) -> Self;
    fn diff(&self, index: usize) -> Self;
}

impl LinearPoly for Polynomial {
    fn space(&self) -> &Arc<VariableSpace> {
        Polynomial::space(self)
    }

    fn zero_like(&self) -> Self {
        Polynomial::zero(Polynomial::space(self))
    }

    fn add(&self, other: &Self) -> Self {
        self.try_add(other).expect("operands share a space")
    }

    fn scale(&self, alpha: f64) -> Self {
        Polynomial::scale(self, alpha)
    }

    fn mul_poly(&self, p: &Polynomial) -> Self {
        self.try_mul(p).expect("operands share a space")
    }

    fn diff(&self, index: usize) -> Self {
        self.differentiate(index).expect("index checked by caller")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesirabilityPde {
    pub space: Arc<VariableSpace>,
    pub lambda: f64,
    pub states: Vec<usize>,
    pub drift: Vec<Polynomial>,
    pub sigma_t: Vec<Vec<Polynomial>>,
    /// `q/λ`
    pub potential: Polynomial,
    pub horizon: HorizonSpec,
}

impl DesirabilityPde {
    pub fn new(problem: &SocProblem) -> Self {
        Self {
            space: problem.space.clone(),
            lambda: problem.lambda(),
            states: problem.states.clone(),
            drift: problem.dynamics.drift.clone(),
            sigma_t: problem.sigma_t.clone(),
            potential: problem.cost.state_cost.scale(1.0 / problem.lambda()),
            horizon: problem.horizon,
        }
    }

    fn check_space(&self, space: &Arc<VariableSpace>) -> Result<(), PdeError> {
        if **space != *self.space {
            if let HorizonSpec::Finite { time_var, .. } = self.horizon {
                let t = &self.space.names()[time_var];
                if space.index_of(t).is_none() {
                    return Err(PdeError::MissingTime(t.clone()));
                }
            }
            return Err(PolyError::SpaceMismatch { left: self.space.to_string(), right: space.to_string() }.into());
        }
        Ok(())
    }

    /// `fᵀ∇Ψ + ½ Tr(∇²Ψ Σ_t)` over the state variables.
    pub fn apply_l<P: LinearPoly>(&self, psi: &P) -> Result<P, PdeError> {
        self.check_space(psi.space())?;
        let grads: Vec<P> = self.states.iter().map(|&i| psi.diff(i)).collect();
        let mut out = psi.zero_like();
        for (g, f) in grads.iter().zip(&self.drift) {
            if !f.is_zero() {
                out = out.add(&g.mul_poly(f));
            }
        }
        for (a, ga) in grads.iter().enumerate() {
            for (b, &vb) in self.states.iter().enumerate() {
                let s = &self.sigma_t[a][b];
                if !s.is_zero() {
                    out = out.add(&ga.diff(vb).mul_poly(s).scale(0.5));
                }
            }
        }
        Ok(out)
    }

    /// Signed PDE defect: `(q/λ)Ψ − L(Ψ)`, with `− ∂Ψ/∂t` for finite
    /// horizons and `− cΨ` for average cost.
    pub fn residual<P: LinearPoly>(&self, psi: &P) -> Result<P, PdeError> {
        let l = self.apply_l(psi)?;
        let mut out = psi.mul_poly(&self.potential).add(&l.scale(-1.0));
        match self.horizon {
            HorizonSpec::FirstExit => {}
            HorizonSpec::Finite { time_var, .. } => out = out.add(&psi.diff(time_var).scale(-1.0)),
            HorizonSpec::Average { c } => out = out.add(&psi.scale(-c)),
        }
        Ok(out)
    }

    /// Degree bound of `residual(Ψ)` for `deg Ψ = deg_psi`, from the degrees of
    /// the problem data.
    pub fn residual_degree_bound(&self, deg_psi: u32) -> u32 {
        let mut extra = 0i64;
        if !self.potential.is_zero() {
            extra = extra.max(self.potential.degree() as i64);
        }
        for f in self.drift.iter().filter(|f| !f.is_zero()) {
            extra = extra.max(f.degree() as i64 - 1);
        }
        for s in self.sigma_t.iter().flatten().filter(|s| !s.is_zero()) {
            extra = extra.max(s.degree() as i64 - 2);
        }
        (deg_psi as i64 + extra).max(0) as u32
    }
}
