//! Parser for the canonical polynomial text form.
//!
//! Accepts sums of products of numbers and `var^k` factors, with optional
//! whitespace, unary signs and parenthesised sub-expressions:
//!
//! ```text
//! expr    := ['+'|'-'] term (('+'|'-') term)*
//! term    := factor ('*' factor)*
//! factor  := primary ['^' integer]
//! primary := number | identifier | '(' expr ')'
//! ```

use std::sync::Arc;

use super::{PolyError, Polynomial, VariableSpace};

pub fn parse_polynomial(text: &str, space: &Arc<VariableSpace>) -> Result<Polynomial, PolyError> {
    let mut parser = Parser { src: text.as_bytes(), pos: 0, space };
    let p = parser.expr()?;
    parser.skip_ws();
    if parser.pos != parser.src.len() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(p)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    space: &'a Arc<VariableSpace>,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> PolyError {
        PolyError::Parse { column: self.pos + 1, message: message.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Polynomial, PolyError> {
        let mut sign = 1.0;
        match self.peek() {
            Some(b'-') => {
                sign = -1.0;
                self.pos += 1;
            }
            Some(b'+') => self.pos += 1,
            _ => {}
        }
        let mut acc = self.term()?.scale(sign);
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = acc.try_add(&self.term()?)?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = acc.try_sub(&self.term()?)?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Polynomial, PolyError> {
        let mut acc = self.factor()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            acc = acc.try_mul(&self.factor()?)?;
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Polynomial, PolyError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.error("expected a nonnegative integer exponent"));
            }
            let k: u32 = std::str::from_utf8(&self.src[start..self.pos])
                .unwrap()
                .parse()
                .map_err(|_| self.error("exponent too large"))?;
            if k > 64 {
                return Err(self.error("exponent too large"));
            }
            return Ok(base.pow(k));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Polynomial, PolyError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                match self.space.index_of(name) {
                    Some(i) => Ok(Polynomial::var(self.space, i)),
                    None => {
                        self.pos = start;
                        Err(self.error(format!("unknown variable {name:?} (space: {})", self.space)))
                    }
                }
            }
            Some(_) => Err(self.error("expected a number, variable or '('")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Polynomial, PolyError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.src.get(self.pos), Some(b'e') | Some(b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(self);
            if exp_start == self.pos {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value: f64 = text.parse().map_err(|_| {
            let mut e = self.error(format!("malformed number {text:?}"));
            if let PolyError::Parse { column, .. } = &mut e {
                *column = start + 1;
            }
            e
        })?;
        Ok(Polynomial::constant(self.space, value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_canonical_and_loose_forms() {
        let s = VariableSpace::new(["x", "y"]).unwrap();
        let a = parse_polynomial("2*x^3 + 5*x^2 + 1*x", &s).unwrap();
        let b = parse_polynomial("  x*(2*x^2+5*x + 1) ", &s).unwrap();
        assert_eq!(a, b);
        let c = parse_polynomial("1 - (y - 1)^2", &s).unwrap();
        assert_eq!(c, parse_polynomial("-y^2 + 2*y", &s).unwrap());
        let d = parse_polynomial("4.5399929762484854e-5*x", &s).unwrap();
        assert_eq!(d.terms().next().unwrap().1, 4.5399929762484854e-5);
    }

    #[test]
    fn reports_error_columns() {
        let s = VariableSpace::new(["x"]).unwrap();
        match parse_polynomial("x + z", &s) {
            Err(PolyError::Parse { column, message }) => {
                assert_eq!(column, 5);
                assert!(message.contains("unknown variable"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_polynomial("x +", &s).is_err());
        assert!(parse_polynomial("2 x", &s).is_err());
        assert!(parse_polynomial("x^", &s).is_err());
        assert!(parse_polynomial("(x + 1", &s).is_err());
    }

    #[test]
    fn display_round_trips() {
        let s = VariableSpace::new(["x", "y"]).unwrap();
        let p = parse_polynomial("0.1*x^3*y - 1/3", &s);
        assert!(p.is_err());
        let p = parse_polynomial("0.1*x^3*y - 0.3333333333333333 + 7e-12*y^5", &s).unwrap();
        let back = parse_polynomial(&p.to_string(), &s).unwrap();
        assert_eq!(p, back);
    }
}
