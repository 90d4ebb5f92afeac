//! Problem builders shared by the integration tests.

use std::path::{Path, PathBuf};

use linsoc::cli::{load_problem, SolverSection};
use linsoc::model::*;
use linsoc::poly::{parse_polynomial, VariableSpace};
use nalgebra::DMatrix;

/// Identity `G`, `B` and `R`; `𝓛 = noise·I`; one face equality per piece.
pub fn problem(vars: &[&str], drift: &[&str], q: &str, noise: f64, domain: &[&str], faces: &[(&str, &str)]) -> SocProblem {
    let s = VariableSpace::new(vars.iter().copied()).unwrap();
    let p = |t: &str| parse_polynomial(t, &s).unwrap();
    let n = vars.len();
    let eye = |i: usize, j: usize| if i == j { p("1") } else { p("0") };
    let spec = ProblemSpec {
        name: "test".into(),
        space: s.clone(),
        dynamics: Dynamics {
            drift: drift.iter().map(|d| p(d)).collect(),
            control_gain: (0..n).map(|i| (0..n).map(|j| eye(i, j)).collect()).collect(),
            noise_gain: (0..n).map(|i| (0..n).map(|j| eye(i, j)).collect()).collect(),
            noise_scale: DMatrix::identity(n, n) * noise,
        },
        state_cost: p(q),
        control_penalty: DMatrix::identity(n, n),
        domain: SemialgebraicSet { inequalities: domain.iter().map(|g| p(g)).collect(), equalities: vec![] },
        bounding_box: vec![(-1.0, 1.0); n],
        boundary: faces
            .iter()
            .map(|(h, phi)| BoundaryPiece { name: h.to_string(), face: SemialgebraicSet { inequalities: vec![], equalities: vec![p(h)] }, terminal_cost: p(phi) })
            .collect(),
        horizon: HorizonSpec::FirstExit,
    };
    SocProblem::new(spec, &ValidationSettings::default()).unwrap()
}

pub fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("problems").join(name)
}

pub fn load_bundled(name: &str) -> (SocProblem, SolverSection) {
    load_problem(&bundled(name)).unwrap()
}
