//! Sparse multivariate polynomials with real coefficients.
//!
//! Monomials are ordered graded-lexicographically: by total degree first, then
//! by descending exponent of `x1`, `x2`, ... so that the degree-2 basis in two
//! variables reads `[1, x1, x2, x1^2, x1*x2, x2^2]`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coefficients with magnitude below this are dropped after every operation.
pub const PRUNE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    #[error("variable count mismatch: {left} vs {right}")]
    VarMismatch { left: usize, right: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

/// Exponent vector of a monomial `x1^e1 * ... * xn^en`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(n_vars: usize) -> Self {
        Monomial(vec![0; n_vars])
    }

    /// The monomial `x_{i+1}` (zero-based index `i`).
    pub fn var(n_vars: usize, i: usize) -> Self {
        let mut e = vec![0; n_vars];
        e[i] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn n_vars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// True when every exponent is even.
    pub fn is_even(&self) -> bool {
        self.0.iter().all(|e| e % 2 == 0)
    }

    /// Half of an even monomial.
    pub fn half(&self) -> Option<Monomial> {
        self.is_even().then(|| Monomial(self.0.iter().map(|e| e / 2).collect()))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .filter(|(e, _)| **e > 0)
            .map(|(&e, &xi)| xi.powi(e as i32))
            .product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_one() {
            return write!(f, "1");
        }
        let mut first = true;
        for (i, &e) in self.0.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            if e == 1 {
                write!(f, "x{}", i + 1)?;
            } else {
                write!(f, "x{}^{}", i + 1, e)?;
            }
        }
        Ok(())
    }
}

/// All monomials in `n_vars` variables of total degree at most `max_degree`,
/// in graded-lexicographic order.
pub fn monomial_basis(n_vars: usize, max_degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for d in 0..=max_degree {
        out.extend(monomials_of_degree(n_vars, d));
    }
    out
}

/// Monomials of exact total degree `degree`, graded-lex order.
pub fn monomials_of_degree(n_vars: usize, degree: u32) -> Vec<Monomial> {
    fn rec(prefix: &mut Vec<u32>, left: u32, n: usize, out: &mut Vec<Monomial>) {
        if prefix.len() + 1 == n {
            prefix.push(left);
            out.push(Monomial(prefix.clone()));
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            rec(prefix, left - e, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n_vars == 0 {
        if degree == 0 {
            out.push(Monomial(vec![]));
        }
        return out;
    }
    rec(&mut Vec::with_capacity(n_vars), degree, n_vars, &mut out);
    out
}

/// Sparse polynomial: monomial to coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    n_vars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(n_vars: usize) -> Self {
        Polynomial {
            n_vars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n_vars: usize, c: f64) -> Self {
        Self::from_terms(n_vars, [(Monomial::one(n_vars), c)])
    }

    /// The polynomial `x_{i+1}`.
    pub fn var(n_vars: usize, i: usize) -> Self {
        Self::from_terms(n_vars, [(Monomial::var(n_vars, i), 1.0)])
    }

    pub fn monomial(m: Monomial, c: f64) -> Self {
        let n = m.n_vars();
        Self::from_terms(n, [(m, c)])
    }

    /// Builds a polynomial, summing repeated monomials and pruning tiny terms.
    pub fn from_terms(n_vars: usize, terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut map = BTreeMap::new();
        for (m, c) in terms {
            assert_eq!(m.n_vars(), n_vars, "monomial arity does not match polynomial");
            *map.entry(m).or_insert(0.0) += c;
        }
        let mut p = Polynomial { n_vars, terms: map };
        p.prune();
        p
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() >= PRUNE_THRESHOLD);
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(Monomial::is_one)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    fn check(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.n_vars != other.n_vars {
            return Err(PolyError::VarMismatch {
                left: self.n_vars,
                right: other.n_vars,
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            *out.terms.entry(m.clone()).or_insert(0.0) += c;
        }
        out.prune();
        Ok(out)
    }

    pub fn try_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            *out.terms.entry(m.clone()).or_insert(0.0) -= c;
        }
        out.prune();
        Ok(out)
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check(other)?;
        let mut map: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                *map.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        let mut out = Polynomial {
            n_vars: self.n_vars,
            terms: map,
        };
        out.prune();
        Ok(out)
    }

    pub fn scale(&self, k: f64) -> Polynomial {
        let mut out = Polynomial {
            n_vars: self.n_vars,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * k)).collect(),
        };
        out.prune();
        out
    }

    pub fn powi(&self, k: u32) -> Polynomial {
        let mut out = Polynomial::constant(self.n_vars, 1.0);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, PolyError> {
        if x.len() != self.n_vars {
            return Err(PolyError::DimensionMismatch {
                expected: self.n_vars,
                got: x.len(),
            });
        }
        Ok(self.eval(x))
    }

    /// Direct term summation. `x` must have `n_vars` entries.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n_vars);
        self.terms.iter().map(|(m, c)| c * m.eval(x)).sum()
    }

    /// Partial derivative with respect to `x_{i+1}`.
    pub fn derivative(&self, i: usize) -> Polynomial {
        let terms = self.terms.iter().filter_map(|(m, &c)| {
            let e = m.0[i];
            (e > 0).then(|| {
                let mut exps = m.0.clone();
                exps[i] -= 1;
                (Monomial(exps), c * e as f64)
            })
        });
        Polynomial::from_terms(self.n_vars, terms)
    }

    pub fn gradient(&self) -> PolynomialVector {
        PolynomialVector::new((0..self.n_vars).map(|i| self.derivative(i)).collect())
            .expect("partials share the variable count")
    }

    /// Parses the text syntax `-7.635*x1^2 - 3.439*x1*x2 + 0.5*x1 + 7.402`.
    /// Variable indices are 1-based and must not exceed `n_vars`.
    pub fn parse(s: &str, n_vars: usize) -> Result<Polynomial, PolyError> {
        Parser::new(s, n_vars).parse()
    }
}

impl fmt::Display for Polynomial {
    /// Highest-degree terms first, full round-trip precision.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut order: Vec<(&Monomial, f64)> = self.terms.iter().map(|(m, &c)| (m, c)).collect();
        order.sort_by(|a, b| b.0.degree().cmp(&a.0.degree()).then(a.0.cmp(b.0)));
        for (k, (m, c)) in order.into_iter().enumerate() {
            let mag = c.abs();
            if k == 0 {
                if c < 0.0 {
                    write!(f, "-")?;
                }
            } else if c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            if m.is_one() {
                write!(f, "{mag:?}")?;
            } else if mag == 1.0 {
                write!(f, "{m}")?;
            } else {
                write!(f, "{mag:?}*{m}")?;
            }
        }
        Ok(())
    }
}

macro_rules! forward_binop {
    ($tr:ident, $method:ident, $inner:ident) => {
        impl $tr<&Polynomial> for &Polynomial {
            type Output = Polynomial;
            /// Panics on mismatched variable counts; use the `try_` form to handle it.
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                self.$inner(rhs).expect("polynomial variable count mismatch")
            }
        }
        impl $tr<Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: Polynomial) -> Polynomial {
                (&self).$method(&rhs)
            }
        }
        impl $tr<&Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                (&self).$method(rhs)
            }
        }
        impl $tr<Polynomial> for &Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: Polynomial) -> Polynomial {
                self.$method(&rhs)
            }
        }
    };
}

forward_binop!(Add, add, try_add);
forward_binop!(Sub, sub, try_sub);
forward_binop!(Mul, mul, try_mul);

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &Polynomial {
    type Output = Polynomial;
    fn mul(self, k: f64) -> Polynomial {
        self.scale(k)
    }
}

impl Mul<f64> for Polynomial {
    type Output = Polynomial;
    fn mul(self, k: f64) -> Polynomial {
        self.scale(k)
    }
}

/// Ordered list of polynomials sharing a variable count.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialVector(Vec<Polynomial>);

impl PolynomialVector {
    pub fn new(entries: Vec<Polynomial>) -> Result<Self, PolyError> {
        if let Some(first) = entries.first() {
            for p in &entries[1..] {
                first.check(p)?;
            }
        }
        Ok(PolynomialVector(entries))
    }

    pub fn zeros(n_vars: usize, len: usize) -> Self {
        PolynomialVector(vec![Polynomial::zero(n_vars); len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Polynomial> {
        self.0.iter()
    }

    pub fn entries(&self) -> &[Polynomial] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Polynomial> {
        self.0
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().map(|p| p.eval(x)).collect()
    }

    pub fn dot(&self, other: &PolynomialVector) -> Result<Polynomial, PolyError> {
        if self.len() != other.len() {
            return Err(PolyError::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        let n = self.0.first().map_or(0, Polynomial::n_vars);
        let mut acc = Polynomial::zero(n);
        for (a, b) in self.0.iter().zip(&other.0) {
            acc = acc.try_add(&a.try_mul(b)?)?;
        }
        Ok(acc)
    }
}

impl std::ops::Index<usize> for PolynomialVector {
    type Output = Polynomial;
    fn index(&self, i: usize) -> &Polynomial {
        &self.0[i]
    }
}

impl FromIterator<Polynomial> for PolynomialVector {
    fn from_iter<T: IntoIterator<Item = Polynomial>>(iter: T) -> Self {
        PolynomialVector::new(iter.into_iter().collect()).expect("polynomial variable count mismatch")
    }
}

/// Row-major matrix of polynomials, e.g. the input matrix `g(x)` (n rows, m columns).
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Polynomial>,
}

impl PolynomialMatrix {
    pub fn from_rows(n_vars: usize, rows: Vec<Vec<Polynomial>>) -> Result<Self, PolyError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(PolyError::DimensionMismatch {
                    expected: c,
                    got: row.len(),
                });
            }
            for p in row {
                if p.n_vars() != n_vars {
                    return Err(PolyError::VarMismatch {
                        left: n_vars,
                        right: p.n_vars(),
                    });
                }
                data.push(p);
            }
        }
        Ok(PolynomialMatrix { rows: r, cols: c, data })
    }

    pub fn zeros(n_vars: usize, rows: usize, cols: usize) -> Self {
        PolynomialMatrix {
            rows,
            cols,
            data: vec![Polynomial::zero(n_vars); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> &Polynomial {
        &self.data[r * self.cols + c]
    }

    /// `G(x) * v(x)`.
    pub fn mul_vec(&self, v: &PolynomialVector) -> Result<PolynomialVector, PolyError> {
        if v.len() != self.cols {
            return Err(PolyError::DimensionMismatch {
                expected: self.cols,
                got: v.len(),
            });
        }
        (0..self.rows)
            .map(|r| {
                let row = PolynomialVector((0..self.cols).map(|c| self.get(r, c).clone()).collect());
                row.dot(v)
            })
            .collect::<Result<Vec<_>, _>>()
            .and_then(PolynomialVector::new)
    }

    /// Numeric value at `x`, row-major.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.data.iter().map(|p| p.eval(x)).collect()
    }
}

/// `dB/dx * (f + g u)` as a single polynomial.
pub fn lie_derivative(
    b: &Polynomial,
    f: &PolynomialVector,
    g: &PolynomialMatrix,
    u: &PolynomialVector,
) -> Result<Polynomial, PolyError> {
    let n = b.n_vars();
    if f.len() != n {
        return Err(PolyError::DimensionMismatch {
            expected: n,
            got: f.len(),
        });
    }
    let field = if g.cols() == 0 || u.is_empty() {
        if g.cols() != u.len() {
            return Err(PolyError::DimensionMismatch {
                expected: g.cols(),
                got: u.len(),
            });
        }
        f.clone()
    } else {
        if g.rows() != n {
            return Err(PolyError::DimensionMismatch {
                expected: n,
                got: g.rows(),
            });
        }
        let gu = g.mul_vec(u)?;
        f.iter()
            .zip(gu.iter())
            .map(|(a, b)| a.try_add(b))
            .collect::<Result<Vec<_>, _>>()
            .and_then(PolynomialVector::new)?
    };
    b.gradient().dot(&field)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    n_vars: usize,
}

impl<'a> Parser<'a> {
    fn new(s: &'a str, n_vars: usize) -> Self {
        Parser {
            src: s.as_bytes(),
            pos: 0,
            n_vars,
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, PolyError> {
        Err(PolyError::Parse {
            pos: self.pos,
            msg: msg.into(),
        })
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

    fn parse(mut self) -> Result<Polynomial, PolyError> {
        let mut terms = Vec::new();
        let mut sign = 1.0;
        match self.peek() {
            None => return self.err("empty polynomial"),
            Some(b'-') => {
                sign = -1.0;
                self.pos += 1;
            }
            Some(b'+') => self.pos += 1,
            _ => {}
        }
        loop {
            let (m, c) = self.term()?;
            terms.push((m, sign * c));
            match self.peek() {
                None => break,
                Some(b'+') => sign = 1.0,
                Some(b'-') => sign = -1.0,
                Some(ch) => return self.err(format!("unexpected '{}'", ch as char)),
            }
            self.pos += 1;
        }
        Ok(Polynomial::from_terms(self.n_vars, terms))
    }

    fn term(&mut self) -> Result<(Monomial, f64), PolyError> {
        let mut coeff = 1.0;
        let mut exps = vec![0u32; self.n_vars];
        let mut first = true;
        loop {
            if !first {
                match self.peek() {
                    Some(b'*') => self.pos += 1,
                    _ => break,
                }
            }
            first = false;
            match self.peek() {
                Some(b'x') => {
                    let (i, e) = self.variable()?;
                    exps[i] += e;
                }
                Some(ch) if ch.is_ascii_digit() || ch == b'.' => coeff *= self.number()?,
                Some(ch) => return self.err(format!("expected factor, found '{}'", ch as char)),
                None => return self.err("expected factor, found end of input"),
            }
        }
        Ok((Monomial(exps), coeff))
    }

    fn number(&mut self) -> Result<f64, PolyError> {
        let start = self.pos;
        let s = self.src;
        while self.pos < s.len() && (s[self.pos].is_ascii_digit() || s[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < s.len() && (s[self.pos] == b'+' || s[self.pos] == b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < s.len() && s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if digits == self.pos {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).expect("ascii slice");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => {
                self.pos = start;
                self.err(format!("invalid number '{text}'"))
            }
        }
    }

    fn integer(&mut self) -> Result<u32, PolyError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected integer");
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .expect("ascii slice")
            .parse()
            .or_else(|_| self.err("integer out of range"))
    }

    fn variable(&mut self) -> Result<(usize, u32), PolyError> {
        self.pos += 1; // 'x'
        let at = self.pos;
        let idx = self.integer()? as usize;
        if idx == 0 || idx > self.n_vars {
            self.pos = at;
            return self.err(format!("variable x{idx} out of range 1..={}", self.n_vars));
        }
        let mut e = 1;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            e = self.integer()?;
        }
        Ok((idx - 1, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Polynomial {
        Polynomial::parse(s, 2).unwrap()
    }

    #[test]
    fn basis_order_and_counts() {
        let b = monomial_basis(2, 1);
        assert_eq!(b.iter().map(|m| m.to_string()).collect::<Vec<_>>(), ["1", "x1", "x2"]);
        let b = monomial_basis(2, 2);
        assert_eq!(
            b.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
            ["1", "x1", "x2", "x1^2", "x1*x2", "x2^2"]
        );
        assert_eq!(monomial_basis(3, 2).len(), 10);
        let mut sorted = b.clone();
        sorted.sort();
        assert_eq!(sorted, b);
    }

    #[test]
    fn square_of_sum() {
        let s = p("x1 + x2");
        assert_eq!(&s * &s, p("x1^2 + 2*x1*x2 + x2^2"));
        assert_eq!(&s + &Polynomial::zero(2), s);
    }

    #[test]
    fn mismatched_vars_is_error() {
        let a = Polynomial::var(2, 0);
        let b = Polynomial::var(3, 0);
        assert!(matches!(a.try_add(&b), Err(PolyError::VarMismatch { .. })));
        assert!(a.evaluate(&[1.0]).is_err());
    }

    #[test]
    fn evaluation_and_printed_constant() {
        let b1 = p("-7.635*x1^2 - 3.439*x1*x2 - 3.4024*x2^2 + 0.5*x1 - 0.4*x2 + 7.402");
        assert!((b1.eval(&[0.0, 0.0]) - 7.402).abs() < 1e-15);
        let hand = -7.635 - 3.439 - 3.4024 + 0.5 - 0.4 + 7.402;
        assert!((b1.eval(&[1.0, 1.0]) - hand).abs() < 1e-12);
        assert_eq!(p("x1^2 + x2^2").eval(&[1.0, 1.0]), 2.0);
    }

    #[test]
    fn derivatives() {
        let c = Polynomial::parse("0.3333333333333333*x1^3", 1).unwrap();
        let d = c.derivative(0);
        assert!((d.coeff(&Monomial::new(vec![2])) - 1.0).abs() < 1e-15);
        let g = Polynomial::constant(2, 4.0).gradient();
        assert!(g.iter().all(Polynomial::is_zero));
    }

    #[test]
    fn lie_derivative_examples() {
        let n = 2;
        let b = Polynomial::var(n, 0);
        let f = PolynomialVector::new(vec![Polynomial::var(n, 1), Polynomial::zero(n)]).unwrap();
        let g = PolynomialMatrix::zeros(n, 2, 0);
        let u = PolynomialVector::new(vec![]).unwrap();
        assert_eq!(lie_derivative(&b, &f, &g, &u).unwrap(), Polynomial::var(n, 1));

        let b = p("x1^2 + x2^2");
        let f = PolynomialVector::new(vec![p("-x1"), p("-x2")]).unwrap();
        assert_eq!(lie_derivative(&b, &f, &g, &u).unwrap(), p("-2*x1^2 - 2*x2^2"));

        let bad = PolynomialVector::new(vec![p("x1")]).unwrap();
        assert!(lie_derivative(&b, &bad, &g, &u).is_err());
    }

    #[test]
    fn parse_display_round_trip() {
        let src = "-7.635*x1^2 - 3.439*x1*x2 + 0.5*x1 + 7.402";
        let a = p(src);
        assert_eq!(a.to_string(), src);
        assert_eq!(p(&a.to_string()), a);
        assert_eq!(p(" 2 * x1 ^ 2 - x2+1e-3 "), p("2*x1^2 - x2 + 0.001"));
        assert_eq!(p("x1*x1*3"), p("3*x1^2"));
        assert_eq!(p("-x1"), -Polynomial::var(2, 0));
    }

    #[test]
    fn parse_errors() {
        assert!(Polynomial::parse("", 2).is_err());
        assert!(Polynomial::parse("x3", 2).is_err());
        assert!(Polynomial::parse("x0", 2).is_err());
        assert!(Polynomial::parse("2*+x1", 2).is_err());
        assert!(Polynomial::parse("x1 x2", 2).is_err());
        assert!(Polynomial::parse("1.2.3", 2).is_err());
    }

    #[test]
    fn prune_tiny_coefficients() {
        let a = p("x1 + 1");
        let b = p("x1 + 0.9999999999999");
        let d = &a - &b;
        assert!(d.terms().all(|(m, _)| m.is_one()));
        assert!((&a - &a).is_zero());
    }
}
