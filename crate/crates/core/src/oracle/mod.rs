//! Independent ground truth: finite-difference solutions of the desirability
//! PDE in one and two dimensions, and Monte Carlo rollouts of a policy.

mod fd;
mod rollout;

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::model::ModelError;
use crate::poly::Polynomial;

pub use fd::{fd_reference_1d, fd_reference_2d, fd_solve_1d, fd_solve_2d};
pub use rollout::{rollout, RolloutReport, RolloutSettings, DEFAULT_MAX_STEPS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("finite differences need {expected} state dimension(s), problem has {got}")]
    Dimension { expected: usize, got: usize },
    #[error("unsupported horizon: {0}")]
    Horizon(String),
    #[error("domain is not the rectangle spanned by its bounding box: node {0:?} lies outside")]
    NonRectangular(Vec<f64>),
    #[error("mixed diffusion term Σ_xy is nonzero at {0:?}; the 5-point stencil needs a diagonal Σ_t")]
    MixedDiffusion(Vec<f64>),
    #[error("diffusion along {axis} is not positive at {point:?}")]
    Degenerate { axis: String, point: Vec<f64> },
    #[error("cell Péclet number {peclet:.3} >= 2 along {axis}; {min_nodes} nodes on that axis suffice")]
    Peclet { axis: String, peclet: f64, min_nodes: usize },
    #[error("grid needs at least {min} nodes per axis, got {got}")]
    GridSize { min: usize, got: usize },
    #[error("boundary node {0:?} is not on any boundary piece")]
    Uncovered(Vec<f64>),
    #[error("linear system is singular at row {0}")]
    Singular(usize),
    #[error("invalid rollout settings: {0}")]
    Rollout(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridAxis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    /// Total node count, endpoints included.
    pub n: usize,
}

impl GridAxis {
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }
}

/// Nodal values of Ψ on a tensor grid; the first axis varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSolution {
    pub axes: Vec<GridAxis>,
    pub values: Vec<f64>,
    pub note: String,
    /// Richardson estimate of the nodewise discretization error, when known.
    pub error_estimate: Option<f64>,
}

impl GridSolution {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multi-index of flat node `k`.
    pub fn index(&self, mut k: usize) -> Vec<usize> {
        self.axes
            .iter()
            .map(|a| {
                let i = k % a.n;
                k /= a.n;
                i
            })
            .collect()
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).rev().fold(0, |acc, (&i, a)| acc * a.n + i)
    }

    pub fn point(&self, k: usize) -> Vec<f64> {
        self.index(k).iter().zip(&self.axes).map(|(&i, a)| a.node(i)).collect()
    }

    pub fn points(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        (0..self.len()).map(|k| (self.point(k), self.values[k]))
    }

    /// Node coordinates and value, one row per node.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# schema_version 1; {}", self.note);
        let names: Vec<&str> = self.axes.iter().map(|a| a.name.as_str()).collect();
        let _ = writeln!(out, "{},psi", names.join(","));
        for (p, v) in self.points() {
            let coords: Vec<String> = p.iter().map(|x| format!("{x:?}")).collect();
            let _ = writeln!(out, "{},{v:?}", coords.join(","));
        }
        out
    }

    /// Attaches `max |Ψ_h − Ψ_2h| / 3` over the nodes shared with `coarse`.
    pub fn with_richardson(mut self, coarse: &GridSolution) -> Self {
        self.error_estimate = Some(richardson_estimate(&self, coarse));
        self
    }
}

/// Second-order Richardson estimate of the error of `fine`, whose grid must
/// refine `coarse` by halving the step on every axis.
pub fn richardson_estimate(fine: &GridSolution, coarse: &GridSolution) -> f64 {
    assert_eq!(fine.axes.len(), coarse.axes.len(), "grids of different dimension");
    for (f, c) in fine.axes.iter().zip(&coarse.axes) {
        assert!(f.n == 2 * c.n - 1 && f.lo == c.lo && f.hi == c.hi, "fine grid does not halve the coarse step");
    }
    (0..coarse.len())
        .map(|k| {
            let idx: Vec<usize> = coarse.index(k).iter().map(|i| 2 * i).collect();
            (fine.values[fine.flat(&idx)] - coarse.values[k]).abs() / 3.0
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub nodes: usize,
    pub tol_fd: f64,
    /// `max(low − ref − tol_fd)`; pass when ≤ 0.
    pub low_violation: f64,
    /// `max(ref − tol_fd − up)`; pass when ≤ 0.
    pub up_violation: f64,
    /// Smallest `ref − low` and `up − ref` over the nodes.
    pub low_margin: f64,
    pub up_margin: f64,
    pub worst_low: Vec<f64>,
    pub worst_up: Vec<f64>,
    pub low_pass: bool,
    pub up_pass: bool,
}

impl BoundsReport {
    pub fn pass(&self) -> bool {
        self.low_pass && self.up_pass
    }
}

/// Checks `low ≤ ref + tol_fd` and `up ≥ ref − tol_fd` at every node. Either
/// bound may be absent. Grid coordinates are the polynomial's variables in order.
pub fn verify_bounds(low: Option<&Polynomial>, up: Option<&Polynomial>, reference: &GridSolution) -> BoundsReport {
    let tol_fd = reference.error_estimate.unwrap_or(0.0);
    let low = low.map(Polynomial::compile);
    let up = up.map(Polynomial::compile);
    let mut r = BoundsReport {
        nodes: reference.len(),
        tol_fd,
        low_violation: f64::NEG_INFINITY,
        up_violation: f64::NEG_INFINITY,
        low_margin: f64::INFINITY,
        up_margin: f64::INFINITY,
        worst_low: Vec::new(),
        worst_up: Vec::new(),
        low_pass: true,
        up_pass: true,
    };
    for (p, v) in reference.points() {
        if let Some(l) = &low {
            let gap = v - l.eval(&p);
            if gap < r.low_margin {
                r.low_margin = gap;
                r.worst_low = p.clone();
            }
        }
        if let Some(u) = &up {
            let gap = u.eval(&p) - v;
            if gap < r.up_margin {
                r.up_margin = gap;
                r.worst_up = p;
            }
        }
    }
    if low.is_some() {
        r.low_violation = -r.low_margin - tol_fd;
        r.low_pass = r.low_violation <= 0.0;
    }
    if up.is_some() {
        r.up_violation = -r.up_margin - tol_fd;
        r.up_pass = r.up_violation <= 0.0;
    }
    r
}
