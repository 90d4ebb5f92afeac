//! Problem definition: dynamics, costs, domain, boundary and horizon, with
//! the validation that makes the desirability transform applicable.

mod boundary;

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{PolyError, Polynomial, VariableSpace};

pub use boundary::{axis_face, desirability_boundary, BoundaryFit, FIT_SAMPLES};

/// Desirability values at or below this are clamped for value and policy
/// evaluation and the result is flagged.
pub const EPS_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no scalar lambda satisfies lambda*G*R^-1*G^T = B*Sigma*B^T (max coefficient residual {max_residual:e})")]
    NoValidLambda { max_residual: f64 },
    #[error("fitted lambda {0} is not positive")]
    NonPositiveLambda(f64),
    #[error("control penalty R must be symmetric positive definite: {0}")]
    ControlPenalty(String),
    #[error("state cost q is negative ({value:e}) at {point:?}")]
    NegativeStateCost { point: Vec<f64>, value: f64 },
    #[error("domain is not compact inside its bounding box: point {0:?} outside the box satisfies every generator")]
    NotCompact(Vec<f64>),
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("invalid horizon: {0}")]
    Horizon(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundDirection {
    Lower,
    Upper,
}

impl BoundDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundDirection::Lower => "lower",
            BoundDirection::Upper => "upper",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    /// `f`, one entry per state variable.
    pub drift: Vec<Polynomial>,
    /// `G`, `n × m`.
    pub control_gain: Vec<Vec<Polynomial>>,
    /// `B`, `n × k`.
    pub noise_gain: Vec<Vec<Polynomial>>,
    /// Constant `𝓛`, `k × k`.
    pub noise_scale: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub state_cost: Polynomial,
    pub control_penalty: DMatrix<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemialgebraicSet {
    /// `g_i(x) >= 0`
    pub inequalities: Vec<Polynomial>,
    /// `h_j(x) = 0`
    pub equalities: Vec<Polynomial>,
}

impl SemialgebraicSet {
    pub fn contains(&self, point: &[f64], tol: f64) -> bool {
        self.inequalities.iter().all(|g| g.eval_unchecked(point) >= -tol)
            && self.equalities.iter().all(|h| h.eval_unchecked(point).abs() <= tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPiece {
    pub name: String,
    /// Exactly one equality defines the face.
    pub face: SemialgebraicSet,
    pub terminal_cost: Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HorizonSpec {
    FirstExit,
    /// Horizon `T` with `time_var` the index of `t` in the variable space.
    Finite { horizon: f64, time_var: usize },
    /// Average cost with a user-supplied constant `c`.
    Average { c: f64 },
}

/// Everything needed to state the desirability PDE on a compact domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SocProblem {
    pub name: String,
    pub space: Arc<VariableSpace>,
    /// Indices of the state variables (every variable except time).
    pub states: Vec<usize>,
    pub dynamics: Dynamics,
    pub cost: CostModel,
    pub domain: SemialgebraicSet,
    /// Per-variable `[lo, hi]` covering the domain.
    pub bounding_box: Vec<(f64, f64)>,
    pub boundary: Vec<BoundaryPiece>,
    pub horizon: HorizonSpec,
    /// `Σ_t = B Σ_ε Bᵀ` over the state variables.
    pub sigma_t: Vec<Vec<Polynomial>>,
}

/// Raw ingredients; [`SocProblem::new`] validates them and derives λ and Σ_t.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub space: Arc<VariableSpace>,
    pub dynamics: Dynamics,
    pub state_cost: Polynomial,
    pub control_penalty: DMatrix<f64>,
    pub domain: SemialgebraicSet,
    pub bounding_box: Vec<(f64, f64)>,
    pub boundary: Vec<BoundaryPiece>,
    pub horizon: HorizonSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationSettings {
    pub lambda_tol: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self { lambda_tol: 1e-9, samples: 10_000, seed: 0 }
    }
}

/// `λ` together with `Σ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFit {
    pub lambda: f64,
    pub sigma_t: Vec<Vec<Polynomial>>,
    pub max_residual: f64,
}

/// `A M Aᵀ` for a polynomial matrix `A` (rows × cols) and constant `M`.
fn congruence(a: &[Vec<Polynomial>], m: &DMatrix<f64>, space: &Arc<VariableSpace>) -> Result<Vec<Vec<Polynomial>>, PolyError> {
    let n = a.len();
    let mut out = vec![vec![Polynomial::zero(space); n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = Polynomial::zero(space);
            for (p, aip) in a[i].iter().enumerate() {
                for (q, ajq) in a[j].iter().enumerate() {
                    let w = m[(p, q)];
                    if w != 0.0 {
                        acc = acc.try_add(&aip.try_mul(ajq)?.scale(w))?;
                    }
                }
            }
            out[i][j] = acc;
        }
    }
    Ok(out)
}

/// Fits the scalar `λ` with `λ·G R⁻¹ Gᵀ = B Σ_ε Bᵀ` coefficient-wise by
/// least squares, then checks the residual.
pub fn validate_noise_assumption(dynamics: &Dynamics, r: &DMatrix<f64>, tol: f64) -> Result<NoiseFit, ModelError> {
    let n = dynamics.drift.len();
    let space = dynamics
        .drift
        .first()
        .map(|p| p.space().clone())
        .ok_or_else(|| ModelError::Dimension("no state variables".into()))?;
    let m = r.nrows();
    let k = dynamics.noise_scale.nrows();
    if dynamics.control_gain.len() != n || dynamics.control_gain.iter().any(|row| row.len() != m) {
        return Err(ModelError::Dimension(format!("control gain must be {n}x{m}")));
    }
    if dynamics.noise_gain.len() != n || dynamics.noise_gain.iter().any(|row| row.len() != k) {
        return Err(ModelError::Dimension(format!("noise gain must be {n}x{k}")));
    }
    if r.ncols() != m || dynamics.noise_scale.ncols() != k {
        return Err(ModelError::Dimension("R and the noise scale must be square".into()));
    }
    if (r - r.transpose()).amax() > 1e-12 * r.amax().max(1.0) {
        return Err(ModelError::ControlPenalty("not symmetric".into()));
    }
    let rinv = r.clone().cholesky().ok_or_else(|| ModelError::ControlPenalty("not positive definite".into()))?.inverse();
    let l = &dynamics.noise_scale;
    let sigma_eps = l * l.transpose();
    let lhs = congruence(&dynamics.control_gain, &rinv, &space)?;
    let sigma_t = congruence(&dynamics.noise_gain, &sigma_eps, &space)?;

    let mut pairs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let a = &lhs[i][j];
            let b = &sigma_t[i][j];
            let mut monos: Vec<_> = a.terms().map(|(m, _)| m.clone()).collect();
            monos.extend(b.terms().map(|(m, _)| m.clone()));
            monos.sort();
            monos.dedup();
            pairs.extend(monos.iter().map(|mo| (a.coefficient(mo), b.coefficient(mo))));
        }
    }
    let denom: f64 = pairs.iter().map(|(a, _)| a * a).sum();
    let max_b = pairs.iter().fold(0.0f64, |acc, (_, b)| acc.max(b.abs()));
    if denom == 0.0 {
        return Err(ModelError::NoValidLambda { max_residual: max_b });
    }
    let lambda = pairs.iter().map(|(a, b)| a * b).sum::<f64>() / denom;
    let max_residual = pairs.iter().fold(0.0f64, |acc, (a, b)| acc.max((lambda * a - b).abs()));
    if max_residual > tol {
        return Err(ModelError::NoValidLambda { max_residual });
    }
    if lambda <= 0.0 {
        return Err(ModelError::NonPositiveLambda(lambda));
    }
    Ok(NoiseFit { lambda, sigma_t, max_residual })
}

impl SocProblem {
    pub fn new(spec: ProblemSpec, settings: &ValidationSettings) -> Result<Self, ModelError> {
        let ProblemSpec { name, space, dynamics, state_cost, control_penalty, mut domain, bounding_box, boundary, horizon } = spec;
        let dim = space.dim();
        if bounding_box.len() != dim {
            return Err(ModelError::Domain(format!("bounding box has {} intervals for {dim} variables", bounding_box.len())));
        }
        if let Some((i, _)) = bounding_box.iter().enumerate().find(|(_, (lo, hi))| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(ModelError::Domain(format!("bounding box interval for {} is empty or unbounded", space.names()[i])));
        }
        let states: Vec<usize> = match horizon {
            HorizonSpec::Finite { horizon: t_end, time_var } => {
                if !(t_end > 0.0) {
                    return Err(ModelError::Horizon(format!("T must be positive, got {t_end}")));
                }
                if time_var >= dim {
                    return Err(ModelError::Horizon("time variable not in the variable space".into()));
                }
                let t = Polynomial::var(&space, time_var);
                let gen = t.try_mul(&t.scale(-1.0).add_constant(t_end))?;
                if !domain.inequalities.contains(&gen) {
                    domain.inequalities.push(gen);
                }
                (0..dim).filter(|&i| i != time_var).collect()
            }
            HorizonSpec::Average { c } if !c.is_finite() => {
                return Err(ModelError::Horizon("average-cost constant must be finite".into()));
            }
            _ => (0..dim).collect(),
        };
        if dynamics.drift.len() != states.len() {
            return Err(ModelError::Dimension(format!("drift has {} entries for {} state variables", dynamics.drift.len(), states.len())));
        }
        if domain.inequalities.is_empty() && domain.equalities.is_empty() {
            return Err(ModelError::Domain("domain needs at least one generator".into()));
        }
        let all_polys = dynamics
            .drift
            .iter()
            .chain(dynamics.control_gain.iter().flatten())
            .chain(dynamics.noise_gain.iter().flatten())
            .chain(std::iter::once(&state_cost))
            .chain(&domain.inequalities)
            .chain(&domain.equalities)
            .chain(boundary.iter().flat_map(|b| b.face.inequalities.iter().chain(&b.face.equalities).chain(std::iter::once(&b.terminal_cost))));
        for p in all_polys {
            if **p.space() != *space {
                return Err(PolyError::SpaceMismatch { left: space.to_string(), right: p.space().to_string() }.into());
            }
        }
        if let HorizonSpec::Finite { time_var, .. } = horizon {
            let dynamic_polys = dynamics.drift.iter().chain(dynamics.control_gain.iter().flatten()).chain(dynamics.noise_gain.iter().flatten());
            for p in dynamic_polys {
                if p.depends_on(time_var) {
                    return Err(ModelError::Dimension("time-varying dynamics are not supported".into()));
                }
            }
        }
        for piece in &boundary {
            if piece.face.equalities.len() != 1 {
                return Err(ModelError::Domain(format!("boundary piece {:?} must have exactly one face equality", piece.name)));
            }
        }
        let fit = validate_noise_assumption(&dynamics, &control_penalty, settings.lambda_tol)?;
        let problem = Self {
            name,
            space,
            states,
            dynamics,
            cost: CostModel { state_cost, control_penalty, lambda: fit.lambda },
            domain,
            bounding_box,
            boundary,
            horizon,
            sigma_t: fit.sigma_t,
        };
        problem.check_by_sampling(settings)?;
        Ok(problem)
    }

    pub fn lambda(&self) -> f64 {
        self.cost.lambda
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Rejection-samples the bounding box for `q < 0` inside the domain and
    /// an enlarged box for domain points outside the box.
    fn check_by_sampling(&self, settings: &ValidationSettings) -> Result<(), ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let dim = self.dim();
        let q = self.cost.state_cost.compile();
        let ineqs: Vec<_> = self.domain.inequalities.iter().map(Polynomial::compile).collect();
        let inside = |p: &[f64]| ineqs.iter().all(|g| g.eval(p) >= 0.0);
        let mut point = vec![0.0; dim];
        for _ in 0..settings.samples {
            for (x, (lo, hi)) in point.iter_mut().zip(&self.bounding_box) {
                *x = rng.gen_range(*lo..=*hi);
            }
            if inside(&point) {
                let v = q.eval(&point);
                if v < -1e-12 {
                    return Err(ModelError::NegativeStateCost { point: point.clone(), value: v });
                }
            }
        }
        if !self.domain.equalities.is_empty() {
            return Ok(());
        }
        for _ in 0..settings.samples {
            for (x, (lo, hi)) in point.iter_mut().zip(&self.bounding_box) {
                let w = hi - lo;
                *x = rng.gen_range(lo - w..=hi + w);
            }
            let outside = point.iter().zip(&self.bounding_box).any(|(x, (lo, hi))| x < lo || x > hi);
            if outside && inside(&point) {
                return Err(ModelError::NotCompact(point.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueEval {
    pub value: f64,
    /// `Ψ(point) <= EPS_CLAMP`; the value is reported as `+∞`.
    pub clamped: bool,
}

/// `V = −λ log Ψ(point)`.
pub fn value_from_desirability(psi: &Polynomial, lambda: f64, point: &[f64]) -> Result<ValueEval, ModelError> {
    Ok(value_from_psi(psi.evaluate(point)?, lambda))
}

pub fn value_from_psi(psi: f64, lambda: f64) -> ValueEval {
    if psi <= EPS_CLAMP || psi.is_nan() {
        ValueEval { value: f64::INFINITY, clamped: true }
    } else {
        ValueEval { value: -lambda * psi.ln(), clamped: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEval {
    pub control: Vec<f64>,
    pub clamped: bool,
}

/// Precomputed pieces of `u*(x) = λ R⁻¹ G(x)ᵀ ∇Ψ(x) / Ψ(x)`.
#[derive(Debug, Clone)]
pub struct Policy {
    lambda: f64,
    rinv: DMatrix<f64>,
    gain: Vec<Vec<crate::poly::CompiledPolynomial>>,
    psi: crate::poly::CompiledPolynomial,
    grad: Vec<crate::poly::CompiledPolynomial>,
}

impl Policy {
    pub fn new(psi: &Polynomial, problem: &SocProblem) -> Result<Self, ModelError> {
        if **psi.space() != *problem.space {
            return Err(PolyError::SpaceMismatch { left: problem.space.to_string(), right: psi.space().to_string() }.into());
        }
        let rinv = problem.cost.control_penalty.clone().try_inverse().ok_or_else(|| ModelError::ControlPenalty("singular".into()))?;
        let grad = problem.states.iter().map(|&i| psi.differentiate(i).map(|d| d.compile())).collect::<Result<_, _>>()?;
        Ok(Self {
            lambda: problem.lambda(),
            rinv,
            gain: problem.dynamics.control_gain.iter().map(|row| row.iter().map(Polynomial::compile).collect()).collect(),
            psi: psi.compile(),
            grad,
        })
    }

    pub fn eval(&self, point: &[f64]) -> PolicyEval {
        let raw = self.psi.eval(point);
        let clamped = !(raw > EPS_CLAMP);
        let psi = if clamped { EPS_CLAMP } else { raw };
        let grad: Vec<f64> = self.grad.iter().map(|g| g.eval(point) / psi).collect();
        let m = self.rinv.nrows();
        // Gᵀ ∇Ψ/Ψ
        let gt: Vec<f64> = (0..m).map(|a| self.gain.iter().zip(&grad).map(|(row, g)| row[a].eval(point) * g).sum()).collect();
        let control = (0..m).map(|a| self.lambda * (0..m).map(|b| self.rinv[(a, b)] * gt[b]).sum::<f64>()).collect();
        PolicyEval { control, clamped }
    }
}

pub fn extract_policy(psi: &Polynomial, problem: &SocProblem, point: &[f64]) -> Result<PolicyEval, ModelError> {
    if point.len() != problem.dim() {
        return Err(PolyError::DimensionMismatch { expected: problem.dim(), got: point.len() }.into());
    }
    Ok(Policy::new(psi, problem)?.eval(point))
}
