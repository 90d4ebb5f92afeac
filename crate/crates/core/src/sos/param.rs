//! Polynomials whose coefficients are affine in decision variables.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::pde::LinearPoly;
use crate::poly::{Monomial, Polynomial, VariableSpace};

/// `constant + Σ coeff·x[var]`, terms sorted by variable with no zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    pub fn var(id: usize, coeff: f64) -> Self {
        Self { constant: 0.0, terms: if coeff != 0.0 { vec![(id, coeff)] } else { vec![] } }
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.is_empty()
    }

    pub fn add_scaled(&self, other: &AffineExpr, alpha: f64) -> AffineExpr {
        let mut terms = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        while i < self.terms.len() || j < other.terms.len() {
            let next = match (self.terms.get(i), other.terms.get(j)) {
                (Some(&(a, ca)), Some(&(b, cb))) if a == b => {
                    i += 1;
                    j += 1;
                    (a, ca + alpha * cb)
                }
                (Some(&(a, ca)), Some(&(b, _))) if a < b => {
                    i += 1;
                    (a, ca)
                }
                (Some(&(a, ca)), None) => {
                    i += 1;
                    (a, ca)
                }
                (_, Some(&(b, cb))) => {
                    j += 1;
                    (b, alpha * cb)
                }
                (None, None) => unreachable!(),
            };
            if next.1 != 0.0 {
                terms.push(next);
            }
        }
        AffineExpr { constant: self.constant + alpha * other.constant, terms }
    }

    pub fn scale(&self, alpha: f64) -> AffineExpr {
        AffineExpr {
            constant: alpha * self.constant,
            terms: self.terms.iter().map(|&(v, c)| (v, alpha * c)).filter(|t| t.1 != 0.0).collect(),
        }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * values[v]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamPolynomial {
    space: Arc<VariableSpace>,
    terms: BTreeMap<Monomial, AffineExpr>,
}

impl ParamPolynomial {
    pub fn zero(space: &Arc<VariableSpace>) -> Self {
        Self { space: space.clone(), terms: BTreeMap::new() }
    }

    pub fn from_polynomial(p: &Polynomial) -> Self {
        Self {
            space: p.space().clone(),
            terms: p.terms().map(|(m, c)| (m.clone(), AffineExpr::constant(c))).collect(),
        }
    }

    /// `Σ x[id]·m` over the given (variable, monomial) pairs.
    pub fn linear_combination(space: &Arc<VariableSpace>, vars: &[(usize, Monomial)]) -> Self {
        let mut out = Self::zero(space);
        for (id, m) in vars {
            out.add_term(m.clone(), &AffineExpr::var(*id, 1.0), 1.0);
        }
        out
    }

    /// The scalar decision variable `x[id]` as a constant polynomial.
    pub fn decision(space: &Arc<VariableSpace>, id: usize) -> Self {
        Self::linear_combination(space, &[(id, Monomial::one(space.dim()))])
    }

    fn add_term(&mut self, m: Monomial, e: &AffineExpr, alpha: f64) {
        match self.terms.entry(m) {
            Entry::Occupied(mut o) => {
                let v = o.get().add_scaled(e, alpha);
                if v.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = v;
                }
            }
            Entry::Vacant(slot) => {
                let v = e.scale(alpha);
                if !v.is_zero() {
                    slot.insert(v);
                }
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &AffineExpr)> {
        self.terms.iter()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn depends_on(&self, index: usize) -> bool {
        self.terms.keys().any(|m| m.exponent(index) > 0)
    }

    pub fn substitute(&self, index: usize, value: f64) -> Self {
        let mut out = Self::zero(&self.space);
        for (m, e) in &self.terms {
            out.add_term(m.without(index), e, value.powi(m.exponent(index) as i32));
        }
        out
    }

    /// Numeric polynomial at a decision vector.
    pub fn evaluate(&self, values: &[f64]) -> Polynomial {
        Polynomial::from_terms(&self.space, self.terms.iter().map(|(m, e)| (m.clone(), e.eval(values))))
    }
}

impl LinearPoly for ParamPolynomial {
    fn space(&self) -> &Arc<VariableSpace> {
        &self.space
    }

    fn zero_like(&self) -> Self {
        Self::zero(&self.space)
    }

    fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, e) in &other.terms {
            out.add_term(m.clone(), e, 1.0);
        }
        out
    }

    fn scale(&self, alpha: f64) -> Self {
        let mut out = Self::zero(&self.space);
        for (m, e) in &self.terms {
            let s = e.scale(alpha);
            if !s.is_zero() {
                out.terms.insert(m.clone(), s);
            }
        }
        out
    }

    fn mul_poly(&self, p: &Polynomial) -> Self {
        let mut out = Self::zero(&self.space);
        for (m, e) in &self.terms {
            for (pm, pc) in p.terms() {
                out.add_term(m.mul(pm), e, pc);
            }
        }
        out
    }

    fn diff(&self, index: usize) -> Self {
        let mut out = Self::zero(&self.space);
        for (m, e) in &self.terms {
            let k = m.exponent(index);
            if k > 0 {
                let mut exps = m.exponents().to_vec();
                exps[index] -= 1;
                out.add_term(Monomial::from_exponents(&exps), e, k as f64);
            }
        }
        out
    }
}
