//! Sparse multivariate polynomials with `f64` coefficients over a named
//! variable space.
//!
//! Terms are kept in a `BTreeMap` keyed by [`Monomial`], whose ordering is
//! graded lexicographic. Every map, Gram basis and printed report built on
//! top of this module therefore comes out in the same order on every run.

mod parse;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

pub use parse::parse_polynomial;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("variable spaces differ: [{left}] vs [{right}]")]
    SpaceMismatch { left: String, right: String },
    #[error("point has {got} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("variable index {index} out of range for a {dim}-variable space")]
    VariableOutOfRange { index: usize, dim: usize },
    #[error("invalid variable space: {0}")]
    InvalidSpace(String),
    #[error("parse error at column {column}: {message}")]
    Parse { column: usize, message: String },
}

/// Ordered list of indeterminate names shared by every polynomial of a problem.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariableSpace {
    names: Vec<String>,
}

impl VariableSpace {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Arc<Self>, PolyError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(PolyError::InvalidSpace("no variables".into()));
        }
        for (i, name) in names.iter().enumerate() {
            let valid = name
                .chars()
                .next()
                .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid {
                return Err(PolyError::InvalidSpace(format!("bad variable name {name:?}")));
            }
            if names[..i].contains(name) {
                return Err(PolyError::InvalidSpace(format!("duplicate variable {name:?}")));
            }
        }
        Ok(Arc::new(Self { names }))
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl fmt::Display for VariableSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.names.join(", "))
    }
}

/// Exponent vector, one entry per indeterminate.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Monomial(SmallVec<[u32; 4]>);

impl Monomial {
    pub fn one(dim: usize) -> Self {
        Monomial(SmallVec::from_elem(0, dim))
    }

    pub fn var(dim: usize, index: usize) -> Self {
        let mut m = Self::one(dim);
        m.0[index] = 1;
        m
    }

    pub fn from_exponents(exps: &[u32]) -> Self {
        Monomial(SmallVec::from_slice(exps))
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn exponent(&self, index: usize) -> u32 {
        self.0[index]
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.dim(), other.dim());
        Monomial(self.0.iter().zip(other.0.iter()).map(|(a, b)| a + b).collect())
    }

    /// Copy with the exponent of `index` set to zero.
    pub fn without(&self, index: usize) -> Monomial {
        let mut m = self.clone();
        m.0[index] = 0;
        m
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(point)
            .filter(|(e, _)| **e > 0)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.as_slice().cmp(other.0.as_slice()))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All monomials of total degree `<= max_degree`, ascending graded-lex order.
pub fn monomial_basis(dim: usize, max_degree: u32) -> Vec<Monomial> {
    let all: Vec<usize> = (0..dim).collect();
    monomial_basis_over(dim, &all, max_degree)
}

/// Like [`monomial_basis`] but only the variables in `vars` may appear.
pub fn monomial_basis_over(dim: usize, vars: &[usize], max_degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    let mut current = Monomial::one(dim);
    fn rec(vars: &[usize], left: u32, current: &mut Monomial, out: &mut Vec<Monomial>) {
        match vars.split_first() {
            None => out.push(current.clone()),
            Some((&v, rest)) => {
                for e in 0..=left {
                    current.0[v] = e;
                    rec(rest, left - e, current, out);
                }
                current.0[v] = 0;
            }
        }
    }
    rec(vars, max_degree, &mut current, &mut out);
    out.sort();
    out
}

/// Binomial coefficient `C(n, k)` as `u64`.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Sparse polynomial. Immutable value semantics; the variable space is shared.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    space: Arc<VariableSpace>,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(space: &Arc<VariableSpace>) -> Self {
        Self { space: space.clone(), terms: BTreeMap::new() }
    }

    pub fn constant(space: &Arc<VariableSpace>, c: f64) -> Self {
        Self::monomial(space, Monomial::one(space.dim()), c)
    }

    pub fn var(space: &Arc<VariableSpace>, index: usize) -> Self {
        Self::monomial(space, Monomial::var(space.dim(), index), 1.0)
    }

    pub fn monomial(space: &Arc<VariableSpace>, m: Monomial, c: f64) -> Self {
        assert_eq!(m.dim(), space.dim(), "monomial does not conform to the space");
        let mut terms = BTreeMap::new();
        if c != 0.0 {
            terms.insert(m, c);
        }
        Self { space: space.clone(), terms }
    }

    /// Builds a polynomial from (monomial, coefficient) pairs, summing repeats
    /// and dropping exact zeros.
    pub fn from_terms(space: &Arc<VariableSpace>, terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut map: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (m, c) in terms {
            assert_eq!(m.dim(), space.dim(), "monomial does not conform to the space");
            *map.entry(m).or_insert(0.0) += c;
        }
        map.retain(|_, c| *c != 0.0);
        Self { space: space.clone(), terms: map }
    }

    pub fn space(&self) -> &Arc<VariableSpace> {
        &self.space
    }

    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, c)| (m, *c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coefficient(&Monomial::one(self.space.dim()))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; `0` for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().next_back().map_or(0, Monomial::degree)
    }

    pub fn degree_in(&self, index: usize) -> u32 {
        self.terms.keys().map(|m| m.exponent(index)).max().unwrap_or(0)
    }

    pub fn depends_on(&self, index: usize) -> bool {
        self.terms.keys().any(|m| m.exponent(index) > 0)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(Monomial::is_one)
    }

    fn check_space(&self, other: &Polynomial) -> Result<(), PolyError> {
        if Arc::ptr_eq(&self.space, &other.space) || self.space == other.space {
            Ok(())
        } else {
            Err(PolyError::SpaceMismatch {
                left: self.space.to_string(),
                right: other.space.to_string(),
            })
        }
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_space(other)?;
        Ok(self.combine(other, 1.0))
    }

    pub fn try_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_space(other)?;
        Ok(self.combine(other, -1.0))
    }

    fn combine(&self, other: &Polynomial, sign: f64) -> Polynomial {
        let mut terms = self.terms.clone();
        for (m, c) in &other.terms {
            *terms.entry(m.clone()).or_insert(0.0) += sign * c;
        }
        terms.retain(|_, c| *c != 0.0);
        Polynomial { space: self.space.clone(), terms }
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_space(other)?;
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                *terms.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        terms.retain(|_, c| *c != 0.0);
        Ok(Polynomial { space: self.space.clone(), terms })
    }

    pub fn scale(&self, alpha: f64) -> Polynomial {
        let mut terms = BTreeMap::new();
        for (m, c) in &self.terms {
            let v = alpha * c;
            if v != 0.0 {
                terms.insert(m.clone(), v);
            }
        }
        Polynomial { space: self.space.clone(), terms }
    }

    pub fn neg(&self) -> Polynomial {
        self.scale(-1.0)
    }

    pub fn add_constant(&self, c: f64) -> Polynomial {
        self.combine(&Polynomial::constant(&self.space, c), 1.0)
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut out = Polynomial::constant(&self.space, 1.0);
        for _ in 0..k {
            out = out.try_mul(self).expect("same space");
        }
        out
    }

    /// Formal partial derivative with respect to variable `index`.
    pub fn differentiate(&self, index: usize) -> Result<Polynomial, PolyError> {
        let dim = self.space.dim();
        if index >= dim {
            return Err(PolyError::VariableOutOfRange { index, dim });
        }
        let terms = self.terms.iter().filter_map(|(m, c)| {
            let e = m.exponent(index);
            (e > 0).then(|| {
                let mut d = m.clone();
                d.0[index] -= 1;
                (d, c * e as f64)
            })
        });
        Ok(Polynomial::from_terms(&self.space, terms))
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64, PolyError> {
        if point.len() != self.space.dim() {
            return Err(PolyError::DimensionMismatch { expected: self.space.dim(), got: point.len() });
        }
        Ok(self.eval_unchecked(point))
    }

    pub(crate) fn eval_unchecked(&self, point: &[f64]) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.eval(point)).sum()
    }

    /// Fixes variable `index` to `value`. The result stays in the same space
    /// and no longer depends on that variable.
    pub fn substitute(&self, index: usize, value: f64) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .map(|(m, c)| (m.without(index), c * value.powi(m.exponent(index) as i32)));
        Polynomial::from_terms(&self.space, terms)
    }

    /// Largest coefficient-wise absolute difference.
    pub fn max_coeff_diff(&self, other: &Polynomial) -> Result<f64, PolyError> {
        Ok(self.try_sub(other)?.terms.values().fold(0.0, |acc, c| acc.max(c.abs())))
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |acc, c| acc.max(c.abs()))
    }

    pub fn compile(&self) -> CompiledPolynomial {
        let dim = self.space.dim();
        let mut exps = Vec::with_capacity(dim * self.terms.len());
        let mut coeffs = Vec::with_capacity(self.terms.len());
        for (m, c) in &self.terms {
            exps.extend(m.exponents().iter().map(|&e| e as i32));
            coeffs.push(*c);
        }
        CompiledPolynomial { dim, exps, coeffs }
    }
}

/// Flat evaluation form used in inner loops (rollouts, dense sampling).
#[derive(Clone, Debug)]
pub struct CompiledPolynomial {
    dim: usize,
    exps: Vec<i32>,
    coeffs: Vec<f64>,
}

impl CompiledPolynomial {
    pub fn eval(&self, point: &[f64]) -> f64 {
        debug_assert_eq!(point.len(), self.dim);
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate() {
            let mut term = *c;
            for (e, x) in self.exps[k * self.dim..(k + 1) * self.dim].iter().zip(point) {
                if *e > 0 {
                    term *= x.powi(*e);
                }
            }
            acc += term;
        }
        acc
    }
}

fn format_coefficient(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{}", c as i64)
    } else {
        format!("{c:?}")
    }
}

impl fmt::Display for Polynomial {
    /// Canonical text form, descending graded-lex order, e.g.
    /// `2*x1^3 + 5*x1^2 + 1*x1`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (m, c)) in self.terms.iter().rev().enumerate() {
            let sign = if *c < 0.0 { "-" } else { "+" };
            match (k, sign) {
                (0, "-") => write!(f, "-")?,
                (0, _) => {}
                _ => write!(f, " {sign} ")?,
            }
            write!(f, "{}", format_coefficient(c.abs()))?;
            for (i, &e) in m.exponents().iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*{}", self.space.names[i])?,
                    _ => write!(f, "*{}^{}", self.space.names[i], e)?,
                }
            }
        }
        Ok(())
    }
}
