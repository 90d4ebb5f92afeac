//! Euler–Maruyama rollouts of the policy induced by a desirability polynomial.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::model::{axis_face, HorizonSpec, Policy, SocProblem};
use crate::poly::{CompiledPolynomial, Polynomial};

use super::OracleError;

pub const DEFAULT_MAX_STEPS: usize = 1_000_000;

/// Bisection steps used to locate the exit point inside the last step.
const EXIT_BISECTIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSettings {
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// Steps per trajectory before it is abandoned and counted as capped.
    pub max_steps: usize,
}

impl RolloutSettings {
    pub fn new(dt: f64, n_traj: usize, seed: u64) -> Self {
        Self { dt, n_traj, seed, max_steps: DEFAULT_MAX_STEPS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutReport {
    pub x0: Vec<f64>,
    pub dt: f64,
    pub seed: u64,
    pub n_traj: usize,
    /// Trajectories that exited; the statistics below are over these.
    pub completed: usize,
    /// Trajectories that hit the step cap without exiting.
    pub capped: usize,
    pub mean: f64,
    /// Sample standard deviation over `√completed`.
    pub stderr: f64,
    /// Fraction of completed trajectories leaving through each piece.
    pub exit_fractions: Vec<(String, f64)>,
    pub mean_exit_time: f64,
    /// Steps where Ψ fell below the clamp and the control was saturated.
    pub clamped_steps: usize,
}

struct Outcome {
    cost: f64,
    exit: Option<(usize, f64)>,
    clamped: usize,
}

struct Piece {
    face: CompiledPolynomial,
    axis: Option<(usize, f64)>,
    phi: CompiledPolynomial,
}

struct Sim<'a> {
    problem: &'a SocProblem,
    policy: Policy,
    drift: Vec<CompiledPolynomial>,
    gain: Vec<Vec<CompiledPolynomial>>,
    noise: Vec<Vec<CompiledPolynomial>>,
    scale: DMatrix<f64>,
    q: CompiledPolynomial,
    ineqs: Vec<CompiledPolynomial>,
    eqs: Vec<CompiledPolynomial>,
    pieces: Vec<Piece>,
    time_var: Option<usize>,
}

impl Sim<'_> {
    fn inside(&self, p: &[f64]) -> bool {
        self.ineqs.iter().all(|g| g.eval(p) >= 0.0) && self.eqs.iter().all(|h| h.eval(p) == 0.0)
    }

    fn run(&self, x0: &[f64], s: &RolloutSettings, index: u64) -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(index);
        let states = &self.problem.states;
        let k = self.scale.nrows();
        let sqrt_dt = s.dt.sqrt();
        let r = &self.problem.cost.control_penalty;
        let mut x = x0.to_vec();
        let mut next = x.clone();
        let mut w = vec![0.0; k];
        let mut cost = 0.0;
        let mut clamped = 0;
        for step in 0..s.max_steps {
            let pol = self.policy.eval(&x);
            clamped += pol.clamped as usize;
            let u = &pol.control;
            let effort: f64 = (0..u.len()).map(|a| u[a] * (0..u.len()).map(|b| r[(a, b)] * u[b]).sum::<f64>()).sum();
            let running = self.q.eval(&x) + 0.5 * effort;
            for wi in w.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *wi = z * sqrt_dt;
            }
            // 𝓛 dω
            let lw: Vec<f64> = (0..k).map(|a| (0..k).map(|b| self.scale[(a, b)] * w[b]).sum()).collect();
            for (i, &v) in states.iter().enumerate() {
                let f = self.drift[i].eval(&x) + self.gain[i].iter().zip(u).map(|(g, ua)| g.eval(&x) * ua).sum::<f64>();
                let b: f64 = self.noise[i].iter().zip(&lw).map(|(g, l)| g.eval(&x) * l).sum();
                next[v] = x[v] + f * s.dt + b;
            }
            if let Some(t) = self.time_var {
                next[t] = x[t] + s.dt;
            }
            if self.inside(&next) {
                cost += running * s.dt;
                std::mem::swap(&mut x, &mut next);
                continue;
            }
            let (theta, mut exit) = self.crossing(&x, &next);
            cost += running * theta * s.dt;
            let piece = self.nearest_piece(&exit);
            if let Some((var, value)) = self.pieces[piece].axis {
                exit[var] = value;
            }
            for (xi, (lo, hi)) in exit.iter_mut().zip(&self.problem.bounding_box) {
                *xi = xi.clamp(*lo, *hi);
            }
            cost += self.pieces[piece].phi.eval(&exit);
            return Outcome { cost, exit: Some((piece, (step as f64 + theta) * s.dt)), clamped };
        }
        Outcome { cost, exit: None, clamped }
    }

    /// Fraction of the step taken before leaving the domain, and the point there.
    fn crossing(&self, from: &[f64], to: &[f64]) -> (f64, Vec<f64>) {
        let at = |t: f64| -> Vec<f64> { from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect() };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..EXIT_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if self.inside(&at(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (hi, at(hi))
    }

    fn nearest_piece(&self, p: &[f64]) -> usize {
        let dist: Vec<f64> = self.pieces.iter().map(|pc| pc.face.eval(p).abs()).collect();
        (0..dist.len()).min_by(|&a, &b| dist[a].total_cmp(&dist[b])).unwrap_or(0)
    }
}

/// Simulates `dx = (f + G u*) dt + B 𝓛 dω` from `x0`, accumulating
/// `q + ½ u*ᵀ R u*` until the first step that leaves the domain (prorated),
/// then adding `φ` at the exit point projected onto the crossed face.
/// Trajectory `i` draws from stream `i` of a generator seeded by `seed`, so
/// the report does not depend on thread scheduling.
pub fn rollout(problem: &SocProblem, psi: &Polynomial, x0: &[f64], settings: &RolloutSettings) -> Result<RolloutReport, OracleError> {
    let time_var = match problem.horizon {
        HorizonSpec::FirstExit => None,
        HorizonSpec::Finite { time_var, .. } => Some(time_var),
        HorizonSpec::Average { .. } => return Err(OracleError::Horizon("rollouts need a first-exit or finite horizon".into())),
    };
    if x0.len() != problem.dim() {
        return Err(OracleError::Dimension { expected: problem.dim(), got: x0.len() });
    }
    if !(settings.dt > 0.0) || settings.n_traj == 0 || settings.max_steps == 0 {
        return Err(OracleError::Rollout(format!("dt {} with {} trajectories", settings.dt, settings.n_traj)));
    }
    if problem.boundary.is_empty() {
        return Err(OracleError::Rollout("problem has no boundary pieces".into()));
    }
    let compile = |rows: &[Vec<Polynomial>]| -> Vec<Vec<CompiledPolynomial>> { rows.iter().map(|r| r.iter().map(Polynomial::compile).collect()).collect() };
    let sim = Sim {
        problem,
        policy: Policy::new(psi, problem)?,
        drift: problem.dynamics.drift.iter().map(Polynomial::compile).collect(),
        gain: compile(&problem.dynamics.control_gain),
        noise: compile(&problem.dynamics.noise_gain),
        scale: problem.dynamics.noise_scale.clone(),
        q: problem.cost.state_cost.compile(),
        ineqs: problem.domain.inequalities.iter().map(Polynomial::compile).collect(),
        eqs: problem.domain.equalities.iter().map(Polynomial::compile).collect(),
        pieces: problem
            .boundary
            .iter()
            .map(|b| Piece { face: b.face.equalities[0].compile(), axis: axis_face(&b.face.equalities[0]), phi: b.terminal_cost.compile() })
            .collect(),
        time_var,
    };
    if !sim.inside(x0) {
        return Err(OracleError::Rollout(format!("start {x0:?} is outside the domain")));
    }

    let outcomes: Vec<Outcome> = (0..settings.n_traj as u64).into_par_iter().map(|i| sim.run(x0, settings, i)).collect();

    let done: Vec<&Outcome> = outcomes.iter().filter(|o| o.exit.is_some()).collect();
    let completed = done.len();
    let mean = done.iter().map(|o| o.cost).sum::<f64>() / completed as f64;
    let var = if completed > 1 { done.iter().map(|o| (o.cost - mean).powi(2)).sum::<f64>() / (completed - 1) as f64 } else { 0.0 };
    let mut counts = vec![0usize; problem.boundary.len()];
    let mut time = 0.0;
    for (piece, t) in done.iter().filter_map(|o| o.exit) {
        counts[piece] += 1;
        time += t;
    }
    Ok(RolloutReport {
        x0: x0.to_vec(),
        dt: settings.dt,
        seed: settings.seed,
        n_traj: settings.n_traj,
        completed,
        capped: settings.n_traj - completed,
        mean,
        stderr: (var / completed as f64).sqrt(),
        exit_fractions: problem.boundary.iter().zip(counts).map(|(b, c)| (b.name.clone(), c as f64 / completed as f64)).collect(),
        mean_exit_time: time / completed as f64,
        clamped_steps: outcomes.iter().map(|o| o.clamped).sum(),
    })
}
