//! JSON problem files. Polynomials are strings in the canonical grammar of
//! [`crate::poly::parse_polynomial`]; matrices are arrays of rows.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::{BoundaryPiece, Dynamics, HorizonSpec, ProblemSpec, SemialgebraicSet, SocProblem, ValidationSettings};
use crate::poly::{parse_polynomial, Polynomial, VariableSpace};
use crate::sdp::SolverSettings;
use crate::sos::{BoundaryGap, CertificateConfig};

use super::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema_version: u32,
    pub name: String,
    pub variables: Vec<String>,
    pub dynamics: DynamicsSection,
    pub cost: CostSection,
    pub domain: DomainSection,
    pub horizon: HorizonSection,
    #[serde(default, skip_serializing_if = "SolverSection::is_empty")]
    pub solver: SolverSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    pub drift: Vec<String>,
    /// `G`, one row per state.
    pub control_gain: Vec<Vec<String>>,
    /// `B`, one row per state.
    pub noise_gain: Vec<Vec<String>>,
    /// Constant `𝓛` with `Σ_ε = 𝓛𝓛ᵀ`.
    pub noise_scale: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub state_cost: String,
    pub control_penalty: Vec<Vec<f64>>,
    pub terminal: Vec<TerminalSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSection {
    pub name: String,
    /// The face equality `h(x) = 0`.
    pub face: String,
    /// Extra inequalities cutting the face down.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<String>,
    pub cost: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub bounding_box: Vec<[f64; 2]>,
    #[serde(default)]
    pub inequalities: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub equalities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HorizonSection {
    FirstExit,
    Finite { horizon: f64, time_variable: String },
    Average { c: f64 },
}

/// Optional overrides of solver and certificate defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_feas: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub include_products: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap_sigma0: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enforce_positivity: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_gap: Option<BoundaryGap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_degree: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_tol: Option<f64>,
}

impl SolverSection {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn solver_settings(&self) -> SolverSettings {
        let d = SolverSettings::default();
        SolverSettings {
            tol_gap: self.tol_gap.unwrap_or(d.tol_gap),
            tol_feas: self.tol_feas.unwrap_or(d.tol_feas),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            ..d
        }
    }

    pub fn certificate_config(&self, deg_psi: u32, deg_mult: u32) -> CertificateConfig {
        let d = CertificateConfig::new(deg_psi, deg_mult);
        CertificateConfig {
            include_products: self.include_products.unwrap_or(d.include_products),
            cap_sigma0: self.cap_sigma0.unwrap_or(d.cap_sigma0),
            enforce_positivity: self.enforce_positivity.unwrap_or(d.enforce_positivity),
            boundary_gap: self.boundary_gap.unwrap_or(d.boundary_gap),
            fit_degree: self.fit_degree.unwrap_or(d.fit_degree),
            ..d
        }
    }

    pub fn validation(&self) -> ValidationSettings {
        let d = ValidationSettings::default();
        ValidationSettings { lambda_tol: self.lambda_tol.unwrap_or(d.lambda_tol), ..d }
    }
}

fn parse_err(field: impl Into<String>, message: impl std::fmt::Display) -> CliError {
    CliError::Parse { field: field.into(), message: message.to_string() }
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let n = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(parse_err(field, "expected a non-empty rectangular array of rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let file: ProblemFile = serde_json::from_str(text).map_err(|e| parse_err(format!("line {} column {}", e.line(), e.column()), e))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(parse_err("schema_version", format!("unsupported version {} (expected {SCHEMA_VERSION})", file.schema_version)));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| parse_err(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem files always serialize")
    }

    /// Parses every polynomial and validates the model.
    pub fn to_problem(&self) -> Result<SocProblem, CliError> {
        let space = VariableSpace::new(self.variables.iter().cloned()).map_err(|e| parse_err("variables", e))?;
        let poly = |field: String, text: &str| parse_polynomial(text, &space).map_err(|e| parse_err(field, e));
        let polys = |field: &str, texts: &[String]| -> Result<Vec<Polynomial>, CliError> {
            texts.iter().enumerate().map(|(i, t)| poly(format!("{field}[{i}]"), t)).collect()
        };
        let grid = |field: &str, rows: &[Vec<String>]| -> Result<Vec<Vec<Polynomial>>, CliError> {
            rows.iter().enumerate().map(|(i, r)| polys(&format!("{field}[{i}]"), r)).collect()
        };
        let d = &self.dynamics;
        let dynamics = Dynamics {
            drift: polys("dynamics.drift", &d.drift)?,
            control_gain: grid("dynamics.control_gain", &d.control_gain)?,
            noise_gain: grid("dynamics.noise_gain", &d.noise_gain)?,
            noise_scale: matrix("dynamics.noise_scale", &d.noise_scale)?,
        };
        let boundary = self
            .cost
            .terminal
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let field = format!("cost.terminal[{i}]");
                Ok(BoundaryPiece {
                    name: t.name.clone(),
                    face: SemialgebraicSet {
                        inequalities: polys(&format!("{field}.constraints"), &t.constraints)?,
                        equalities: vec![poly(format!("{field}.face"), &t.face)?],
                    },
                    terminal_cost: poly(format!("{field}.cost"), &t.cost)?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let horizon = match &self.horizon {
            HorizonSection::FirstExit => HorizonSpec::FirstExit,
            HorizonSection::Average { c } => HorizonSpec::Average { c: *c },
            HorizonSection::Finite { horizon, time_variable } => HorizonSpec::Finite {
                horizon: *horizon,
                time_var: space.index_of(time_variable).ok_or_else(|| parse_err("horizon.time_variable", format!("unknown variable {time_variable:?}")))?,
            },
        };
        let spec = ProblemSpec {
            name: self.name.clone(),
            space: Arc::clone(&space),
            dynamics,
            state_cost: poly("cost.state_cost".into(), &self.cost.state_cost)?,
            control_penalty: matrix("cost.control_penalty", &self.cost.control_penalty)?,
            domain: SemialgebraicSet {
                inequalities: polys("domain.inequalities", &self.domain.inequalities)?,
                equalities: polys("domain.equalities", &self.domain.equalities)?,
            },
            bounding_box: self.domain.bounding_box.iter().map(|b| (b[0], b[1])).collect(),
            boundary,
            horizon,
        };
        Ok(SocProblem::new(spec, &self.solver.validation())?)
    }

    /// Writes a validated problem back out in canonical form.
    pub fn from_problem(problem: &SocProblem, solver: SolverSection) -> Self {
        let strings = |ps: &[Polynomial]| ps.iter().map(ToString::to_string).collect::<Vec<_>>();
        let grid = |rows: &[Vec<Polynomial>]| rows.iter().map(|r| strings(r)).collect::<Vec<_>>();
        let d = &problem.dynamics;
        Self {
            schema_version: SCHEMA_VERSION,
            name: problem.name.clone(),
            variables: problem.space.names().to_vec(),
            dynamics: DynamicsSection {
                drift: strings(&d.drift),
                control_gain: grid(&d.control_gain),
                noise_gain: grid(&d.noise_gain),
                noise_scale: rows_of(&d.noise_scale),
            },
            cost: CostSection {
                state_cost: problem.cost.state_cost.to_string(),
                control_penalty: rows_of(&problem.cost.control_penalty),
                terminal: problem
                    .boundary
                    .iter()
                    .map(|b| TerminalSection {
                        name: b.name.clone(),
                        face: b.face.equalities[0].to_string(),
                        constraints: strings(&b.face.inequalities),
                        cost: b.terminal_cost.to_string(),
                    })
                    .collect(),
            },
            domain: DomainSection {
                bounding_box: problem.bounding_box.iter().map(|&(lo, hi)| [lo, hi]).collect(),
                inequalities: strings(&problem.domain.inequalities),
                equalities: strings(&problem.domain.equalities),
            },
            horizon: match problem.horizon {
                HorizonSpec::FirstExit => HorizonSection::FirstExit,
                HorizonSpec::Average { c } => HorizonSection::Average { c },
                HorizonSpec::Finite { horizon, time_var } => HorizonSection::Finite { horizon, time_variable: problem.space.names()[time_var].clone() },
            },
            solver,
        }
    }
}

/// Loads and validates a problem file.
pub fn load_problem(path: &Path) -> Result<(SocProblem, SolverSection), CliError> {
    let file = ProblemFile::load(path)?;
    let problem = file.to_problem()?;
    Ok((problem, file.solver))
}
