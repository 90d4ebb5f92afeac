//! Conic programs over products of free, nonnegative and positive
//! semidefinite blocks, plus a primal-dual interior-point engine.
//!
//! Standard form:
//!
//! ```text
//! minimize    cᵀx
//! subject to  A x = b,   x ∈ K = K₁ × … × Kₚ
//! ```
//!
//! PSD blocks are stored in `svec` form: the lower triangle in column-major
//! order with off-diagonal entries scaled by √2, so that `⟨X, S⟩ =
//! svec(X)ᵀ svec(S)`.

mod dump;
mod face;
mod ipm;
mod presolve;

use std::f64::consts::SQRT_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dump::{read_dump, write_dump};
pub use ipm::InteriorPointSolver;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("malformed conic program: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "size", rename_all = "snake_case")]
pub enum Cone {
    Free(usize),
    Nonneg(usize),
    /// Symmetric `n×n` block occupying `n(n+1)/2` entries.
    Psd(usize),
}

impl Cone {
    pub fn len(&self) -> usize {
        match *self {
            Cone::Free(n) | Cone::Nonneg(n) => n,
            Cone::Psd(n) => svec_len(n),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Barrier degree contributed by the block.
    pub fn degree(&self) -> usize {
        match *self {
            Cone::Free(_) => 0,
            Cone::Nonneg(n) | Cone::Psd(n) => n,
        }
    }
}

pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry `(i, j)` (either triangle) inside `svec` of an `n×n` matrix.
pub fn svec_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    j * n - j * (j + 1) / 2 + i
}

/// Inverse of [`svec_index`]: lower-triangle coordinates `(i, j)`, `i >= j`.
pub fn svec_coords(n: usize, mut k: usize) -> (usize, usize) {
    for j in 0..n {
        let col = n - j;
        if k < col {
            return (j + k, j);
        }
        k -= col;
    }
    panic!("svec index out of range");
}

pub fn smat(n: usize, v: &[f64]) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), svec_len(n));
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        m[(j, j)] = v[k];
        k += 1;
        for i in j + 1..n {
            let x = v[k] / SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(svec_len(n));
    for j in 0..n {
        v.push(m[(j, j)]);
        for i in j + 1..n {
            v.push(0.5 * (m[(i, j)] + m[(j, i)]) * SQRT_2);
        }
    }
    v
}

/// One sparse row of the equality system, sorted by column.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub c: Vec<f64>,
    pub rows: Vec<SparseRow>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProgram {
    pub fn new(c: Vec<f64>, rows: Vec<SparseRow>, b: Vec<f64>, cones: Vec<Cone>) -> Result<Self, SdpError> {
        let prog = Self { c, rows, b, cones };
        prog.validate()?;
        Ok(prog)
    }

    pub fn num_vars(&self) -> usize {
        self.cones.iter().map(Cone::len).sum()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        let n = self.num_vars();
        if self.c.len() != n {
            return Err(SdpError::Malformed(format!("objective has {} entries, cones need {n}", self.c.len())));
        }
        if self.b.len() != self.rows.len() {
            return Err(SdpError::Malformed(format!("{} rows but {} right-hand sides", self.rows.len(), self.b.len())));
        }
        for (i, row) in self.rows.iter().enumerate() {
            let mut last = None;
            for &(col, v) in row {
                if col >= n {
                    return Err(SdpError::Malformed(format!("row {i} references column {col} >= {n}")));
                }
                if last.is_some_and(|l| l >= col) {
                    return Err(SdpError::Malformed(format!("row {i} columns not strictly increasing")));
                }
                if !v.is_finite() {
                    return Err(SdpError::Malformed(format!("row {i} has a non-finite entry")));
                }
                last = Some(col);
            }
        }
        if self.c.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(SdpError::Malformed("non-finite objective or right-hand side".into()));
        }
        Ok(())
    }

    /// Offsets of each cone block inside the decision vector.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.cones
            .iter()
            .map(|c| {
                let o = off;
                off += c.len();
                o
            })
            .collect()
    }

    pub fn mul_a(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum()).collect()
    }

    pub fn mul_at(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_vars()];
        for (row, yi) in self.rows.iter().zip(y) {
            for &(j, v) in row {
                out[j] += v * yi;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub max_iter: usize,
    pub step_fraction: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol_gap: 1e-8, tol_feas: 1e-8, max_iter: 200, step_fraction: 0.99 }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), SdpError> {
        let ok = self.tol_gap > 0.0
            && self.tol_feas > 0.0
            && self.max_iter > 0
            && self.step_fraction > 0.0
            && self.step_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(SdpError::Malformed(format!("invalid solver settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Primal point (`x/τ` for optimal runs, the raw ray for infeasibility).
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `‖Ax − b‖ / max(1, ‖b‖)` at the returned point.
    pub primal_residual: f64,
    /// `‖Aᵀy + s − c‖ / ‖c‖` at the returned point (unscaled for `c = 0`).
    pub dual_residual: f64,
    /// `|cᵀx − bᵀy| / max(‖c‖∞, |cᵀx|, |bᵀy|)`, with the floor 1 for `c = 0`.
    /// Both measures are invariant under rescaling `c`.
    pub relative_gap: f64,
    pub iterations: usize,
    /// Rows removed by presolve as linearly dependent.
    pub dropped_rows: Vec<usize>,
    /// The program had no interior and was re-solved on the face exposed by
    /// the first run. `x` lies on that face; `s = c − Aᵀy` is dual feasible
    /// on the face only.
    pub face_reduced: bool,
}

impl ConicSolution {
    /// Within a factor of `slack` of the settings' tolerances.
    pub fn is_near_optimal(&self, settings: &SolverSettings, slack: f64) -> bool {
        match self.status {
            SolveStatus::Optimal => true,
            SolveStatus::MaxIter | SolveStatus::NumericalFailure => {
                self.primal_residual <= slack * settings.tol_feas
                    && self.dual_residual <= slack * settings.tol_feas
                    && self.relative_gap <= slack * settings.tol_gap
            }
            _ => false,
        }
    }
}

/// Engine abstraction; [`InteriorPointSolver`] is the in-repo implementation.
pub trait ConicSolver {
    fn solve(&self, prog: &ConicProgram) -> Result<ConicSolution, SdpError>;
}

/// Absolute residuals recomputed from scratch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `‖Ax − b‖₂`
    pub primal: f64,
    /// `‖Aᵀy + s − c‖₂`
    pub dual: f64,
    /// `cᵀx − bᵀy`
    pub gap: f64,
}

/// Recomputes feasibility and duality-gap residuals of `sol` against `prog`
/// without touching solver internals.
pub fn residuals(prog: &ConicProgram, sol: &ConicSolution) -> Residuals {
    let ax = prog.mul_a(&sol.x);
    let primal = ax.iter().zip(&prog.b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let aty = prog.mul_at(&sol.y);
    let dual = aty
        .iter()
        .zip(&sol.s)
        .zip(&prog.c)
        .map(|((a, s), c)| (a + s - c).powi(2))
        .sum::<f64>()
        .sqrt();
    let cx: f64 = prog.c.iter().zip(&sol.x).map(|(c, x)| c * x).sum();
    let by: f64 = prog.b.iter().zip(&sol.y).map(|(b, y)| b * y).sum();
    Residuals { primal, dual, gap: cx - by }
}

/// Smallest eigenvalue of each PSD block (and smallest entry of nonneg
/// blocks) of a vector laid out per `cones`.
pub fn cone_margins(cones: &[Cone], v: &[f64]) -> Vec<f64> {
    let mut off = 0;
    let mut out = Vec::new();
    for cone in cones {
        let len = cone.len();
        let part = &v[off..off + len];
        match *cone {
            Cone::Free(_) => {}
            Cone::Nonneg(_) => out.push(part.iter().copied().fold(f64::INFINITY, f64::min)),
            Cone::Psd(n) => out.push(min_eigenvalue(&smat(n, part))),
        }
        off += len;
    }
    out
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone().symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_layout_round_trips() {
        let n = 4;
        for k in 0..svec_len(n) {
            let (i, j) = svec_coords(n, k);
            assert!(i >= j);
            assert_eq!(svec_index(n, i, j), k);
            assert_eq!(svec_index(n, j, i), k);
        }
        let m = DMatrix::from_fn(3, 3, |i, j| (i + j) as f64 + if i == j { 5.0 } else { 0.0 });
        assert_eq!(smat(3, &svec(&m)), m);
    }

    #[test]
    fn svec_preserves_inner_products() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[4.0, -1.0, -1.0, 0.5]);
        let trace = (&a * &b).trace();
        let dot: f64 = svec(&a).iter().zip(svec(&b)).map(|(x, y)| x * y).sum();
        assert!((trace - dot).abs() < 1e-12);
    }

    #[test]
    fn residuals_of_exact_lp_solution() {
        // min x  s.t. x - s = 1, x free, s >= 0
        let prog = ConicProgram::new(
            vec![1.0, 0.0],
            vec![vec![(0, 1.0), (1, -1.0)]],
            vec![1.0],
            vec![Cone::Free(1), Cone::Nonneg(1)],
        )
        .unwrap();
        let mut sol = ConicSolution {
            status: SolveStatus::Optimal,
            x: vec![1.0, 0.0],
            y: vec![1.0],
            s: vec![0.0, 1.0],
            primal_objective: 1.0,
            dual_objective: 1.0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            relative_gap: 0.0,
            iterations: 0,
            dropped_rows: vec![],
            face_reduced: false,
        };
        let r = residuals(&prog, &sol);
        assert!(r.primal <= 1e-12 && r.dual <= 1e-12 && r.gap.abs() <= 1e-12);
        sol.x[0] += 1e-3;
        let r = residuals(&prog, &sol);
        assert!((r.primal - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn malformed_programs_are_rejected() {
        assert!(ConicProgram::new(vec![1.0], vec![vec![(3, 1.0)]], vec![0.0], vec![Cone::Free(1)]).is_err());
        assert!(ConicProgram::new(vec![1.0, 2.0], vec![], vec![], vec![Cone::Free(1)]).is_err());
        assert!(ConicProgram::new(vec![1.0], vec![vec![(0, 1.0)]], vec![], vec![Cone::Free(1)]).is_err());
    }
}
