//! Sum-of-squares programs over polynomial decision variables, compiled to
//! block SDPs by coefficient matching.
//!
//! Every SOS constraint `p(x) in Sigma[x]` gets its own Gram block `Q` over a
//! monomial vector `Z` and one equality per monomial of `Z^T Q Z`. Decision
//! polynomials of SOS kind own a Gram block of their own; free and scalar
//! decision polynomials map to free SDP variables.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::poly::{monomial_basis, Monomial, PolyError, Polynomial};
use crate::sdp::{
    self, Block, BlockValue, Entry, ObjectiveSense, SdpError, SdpProblem, SdpSettings, SdpSolution, SdpStatus,
};

/// Coefficient mismatch accepted between an expression and `Z^T Q Z`.
pub const MATCH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SosError {
    #[error("basis contains duplicate monomial {0}")]
    DuplicateMonomial(String),
    #[error("product of two decision-dependent expressions")]
    BilinearExpression,
    #[error("expression must have constant coefficients")]
    NonScalarExpression,
    #[error("solution status is {0:?}, not optimal")]
    ExtractOnNonOptimal(SdpStatus),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Free,
    Sos,
    Scalar,
}

/// Handle to a decision polynomial registered in a [`SosProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DecisionPoly(usize);

#[derive(Debug, Clone)]
struct VarInfo {
    kind: VarKind,
    /// Coefficient basis (free/scalar) or Gram basis (sos).
    basis: Vec<Monomial>,
    first_unknown: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unknown {
    Free { var: usize, index: usize },
    Gram { var: usize, row: usize, col: usize },
}

/// Polynomial expression affine in the program's unknowns:
/// `constant + sum_j coeff_j(x) * unknown_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    constant: Polynomial,
    terms: BTreeMap<usize, Polynomial>,
}

impl AffineExpr {
    pub fn constant(p: Polynomial) -> Self {
        AffineExpr {
            constant: p,
            terms: BTreeMap::new(),
        }
    }

    pub fn zero(n_vars: usize) -> Self {
        AffineExpr::constant(Polynomial::zero(n_vars))
    }

    pub fn n_vars(&self) -> usize {
        self.constant.n_vars()
    }

    pub fn constant_part(&self) -> &Polynomial {
        &self.constant
    }

    /// True when no unknown appears.
    pub fn is_fixed(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .values()
            .map(Polynomial::degree)
            .fold(self.constant.degree(), u32::max)
    }

    fn support(&self) -> BTreeSet<Monomial> {
        let mut out: BTreeSet<Monomial> = self.constant.terms().map(|(m, _)| m.clone()).collect();
        for p in self.terms.values() {
            out.extend(p.terms().map(|(m, _)| m.clone()));
        }
        out
    }

    pub fn try_add(&self, other: &AffineExpr) -> Result<AffineExpr, SosError> {
        let mut out = self.clone();
        out.constant = out.constant.try_add(&other.constant)?;
        for (&k, p) in &other.terms {
            let merged = match out.terms.get(&k) {
                Some(q) => q.try_add(p)?,
                None => p.clone(),
            };
            if merged.is_zero() {
                out.terms.remove(&k);
            } else {
                out.terms.insert(k, merged);
            }
        }
        Ok(out)
    }

    pub fn try_sub(&self, other: &AffineExpr) -> Result<AffineExpr, SosError> {
        self.try_add(&other.scale(-1.0))
    }

    pub fn scale(&self, k: f64) -> AffineExpr {
        AffineExpr {
            constant: self.constant.scale(k),
            terms: self
                .terms
                .iter()
                .map(|(&j, p)| (j, p.scale(k)))
                .filter(|(_, p)| !p.is_zero())
                .collect(),
        }
    }

    pub fn mul_poly(&self, p: &Polynomial) -> Result<AffineExpr, SosError> {
        let mut terms = BTreeMap::new();
        for (&j, q) in &self.terms {
            let r = q.try_mul(p)?;
            if !r.is_zero() {
                terms.insert(j, r);
            }
        }
        Ok(AffineExpr {
            constant: self.constant.try_mul(p)?,
            terms,
        })
    }

    /// Product of two expressions; fails unless at least one side is fixed.
    pub fn try_mul(&self, other: &AffineExpr) -> Result<AffineExpr, SosError> {
        match (self.is_fixed(), other.is_fixed()) {
            (_, true) => self.mul_poly(&other.constant),
            (true, false) => other.mul_poly(&self.constant),
            (false, false) => Err(SosError::BilinearExpression),
        }
    }

    /// Applies a linear map on polynomials to the constant and every term.
    pub fn map_linear(
        &self,
        op: impl Fn(&Polynomial) -> Result<Polynomial, PolyError>,
    ) -> Result<AffineExpr, SosError> {
        let mut terms = BTreeMap::new();
        for (&j, q) in &self.terms {
            let r = op(q)?;
            if !r.is_zero() {
                terms.insert(j, r);
            }
        }
        Ok(AffineExpr {
            constant: op(&self.constant)?,
            terms,
        })
    }

    pub fn add_poly(&self, p: &Polynomial) -> Result<AffineExpr, SosError> {
        let mut out = self.clone();
        out.constant = out.constant.try_add(p)?;
        Ok(out)
    }

    pub fn sub_poly(&self, p: &Polynomial) -> Result<AffineExpr, SosError> {
        self.add_poly(&p.scale(-1.0))
    }

    /// Substitutes unknown values.
    pub fn substitute(&self, values: &[f64]) -> Polynomial {
        let mut out = self.constant.clone();
        for (&j, p) in &self.terms {
            out = &out + &p.scale(values[j]);
        }
        out
    }

    /// Constant coefficient of each unknown, for scalar (degree-0) expressions.
    fn scalar_terms(&self) -> Result<(f64, Vec<(usize, f64)>), SosError> {
        if self.degree() > 0 {
            return Err(SosError::NonScalarExpression);
        }
        let one = Monomial::one(self.n_vars());
        Ok((
            self.constant.coeff(&one),
            self.terms.iter().map(|(&j, p)| (j, p.coeff(&one))).collect(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Eq,
    /// `expr >= 0`
    Ge,
    /// `expr <= 0`
    Le,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// How programs without an objective are posed to the SDP solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FindMode {
    /// Minimize zero; any feasible point is optimal.
    #[default]
    ZeroObjective,
    /// Maximize the smallest eigenvalue margin of all Gram blocks.
    Margin,
}

#[derive(Debug, Clone)]
pub struct SosProgram {
    n_vars: usize,
    vars: Vec<VarInfo>,
    unknowns: Vec<Unknown>,
    sos_constraints: Vec<AffineExpr>,
    linear_constraints: Vec<(AffineExpr, Relation)>,
    objective: Option<(AffineExpr, Sense)>,
    newton_reduction: bool,
    find_mode: FindMode,
}

/// Gram certificate of one SOS constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct SosWitness {
    pub basis: Vec<Monomial>,
    pub gram: DMatrix<f64>,
    /// Max coefficient magnitude of `expr - Z^T Q Z`.
    pub residual: f64,
    pub min_eigenvalue: f64,
}

impl SosWitness {
    /// `Z^T Q Z` as a polynomial.
    pub fn polynomial(&self, n_vars: usize) -> Polynomial {
        gram_polynomial(n_vars, &self.basis, &self.gram)
    }
}

#[derive(Debug, Clone)]
pub struct SosSolution {
    pub status: SdpStatus,
    pub sdp: SdpSolution,
    values: Vec<f64>,
    /// Gram blocks of the SOS constraints, in insertion order.
    grams: Vec<(Vec<Monomial>, DMatrix<f64>)>,
}

impl SosSolution {
    /// Optimal, or stalled with tight primal feasibility.
    pub fn is_usable(&self) -> bool {
        match self.status {
            SdpStatus::Optimal => true,
            SdpStatus::SlowProgress => self.sdp.primal_residual <= MATCH_TOL,
            _ => false,
        }
    }

    pub fn unknown_values(&self) -> &[f64] {
        &self.values
    }
}

/// Compiled SDP plus the bookkeeping needed to read the solution back.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub sdp: SdpProblem,
    locations: Vec<Location>,
    constraint_blocks: Vec<(usize, Vec<Monomial>)>,
}

#[derive(Debug, Clone, Copy)]
enum Location {
    Free(usize, usize),
    Psd(usize, usize, usize),
}

impl SosProgram {
    pub fn new(n_vars: usize) -> Self {
        SosProgram {
            n_vars,
            vars: Vec::new(),
            unknowns: Vec::new(),
            sos_constraints: Vec::new(),
            linear_constraints: Vec::new(),
            objective: None,
            newton_reduction: false,
            find_mode: FindMode::ZeroObjective,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_unknowns(&self) -> usize {
        self.unknowns.len()
    }

    pub fn n_sos_constraints(&self) -> usize {
        self.sos_constraints.len()
    }

    pub fn set_newton_reduction(&mut self, on: bool) {
        self.newton_reduction = on;
    }

    pub fn set_find_mode(&mut self, mode: FindMode) {
        self.find_mode = mode;
    }

    /// Registers a decision polynomial. For `Sos` the basis is the Gram
    /// basis `Z`, so the polynomial is `Z^T Q Z`; for `Scalar` it must be `[1]`.
    pub fn declare_poly(&mut self, basis: Vec<Monomial>, kind: VarKind) -> Result<DecisionPoly, SosError> {
        let mut seen = BTreeSet::new();
        for m in &basis {
            if m.n_vars() != self.n_vars {
                return Err(PolyError::VarMismatch {
                    left: self.n_vars,
                    right: m.n_vars(),
                }
                .into());
            }
            if !seen.insert(m.clone()) {
                return Err(SosError::DuplicateMonomial(m.to_string()));
            }
        }
        if kind == VarKind::Scalar && (basis.len() != 1 || !basis[0].is_one()) {
            return Err(SosError::NonScalarExpression);
        }
        let var = self.vars.len();
        let first_unknown = self.unknowns.len();
        match kind {
            VarKind::Free | VarKind::Scalar => {
                for index in 0..basis.len() {
                    self.unknowns.push(Unknown::Free { var, index });
                }
            }
            VarKind::Sos => {
                for row in 0..basis.len() {
                    for col in row..basis.len() {
                        self.unknowns.push(Unknown::Gram { var, row, col });
                    }
                }
            }
        }
        self.vars.push(VarInfo {
            kind,
            basis,
            first_unknown,
        });
        Ok(DecisionPoly(var))
    }

    /// Free polynomial with all monomials up to `degree`.
    pub fn free_poly(&mut self, degree: u32) -> DecisionPoly {
        self.declare_poly(monomial_basis(self.n_vars, degree), VarKind::Free)
            .expect("monomial basis is duplicate-free")
    }

    /// SOS polynomial of degree `2 * (degree / 2)`.
    pub fn sos_poly(&mut self, degree: u32) -> DecisionPoly {
        self.declare_poly(monomial_basis(self.n_vars, degree / 2), VarKind::Sos)
            .expect("monomial basis is duplicate-free")
    }

    pub fn scalar(&mut self) -> DecisionPoly {
        self.declare_poly(vec![Monomial::one(self.n_vars)], VarKind::Scalar)
            .expect("single monomial")
    }

    pub fn kind(&self, v: DecisionPoly) -> VarKind {
        self.vars[v.0].kind
    }

    pub fn basis(&self, v: DecisionPoly) -> &[Monomial] {
        &self.vars[v.0].basis
    }

    /// Number of unknowns owned by `v`.
    pub fn var_unknowns(&self, v: DecisionPoly) -> usize {
        let k = self.vars[v.0].basis.len();
        match self.vars[v.0].kind {
            VarKind::Sos => k * (k + 1) / 2,
            _ => k,
        }
    }

    /// The decision polynomial as an affine expression.
    pub fn expr(&self, v: DecisionPoly) -> AffineExpr {
        let info = &self.vars[v.0];
        let mut e = AffineExpr::zero(self.n_vars);
        let mut j = info.first_unknown;
        match info.kind {
            VarKind::Free | VarKind::Scalar => {
                for m in &info.basis {
                    e.terms.insert(j, Polynomial::monomial(m.clone(), 1.0));
                    j += 1;
                }
            }
            VarKind::Sos => {
                let k = info.basis.len();
                for r in 0..k {
                    for c in r..k {
                        let w = if r == c { 1.0 } else { 2.0 };
                        e.terms
                            .insert(j, Polynomial::monomial(info.basis[r].mul(&info.basis[c]), w));
                        j += 1;
                    }
                }
            }
        }
        e
    }

    /// Coefficient of monomial `index` of a free/scalar variable, or the
    /// Gram entry `(index, index)` of an SOS variable, as a scalar expression.
    pub fn coefficient(&self, v: DecisionPoly, index: usize) -> AffineExpr {
        let info = &self.vars[v.0];
        let k = info.basis.len();
        let j = match info.kind {
            VarKind::Free | VarKind::Scalar => info.first_unknown + index,
            VarKind::Sos => info.first_unknown + gram_offset(k, index, index),
        };
        let mut e = AffineExpr::zero(self.n_vars);
        e.terms.insert(j, Polynomial::constant(self.n_vars, 1.0));
        e
    }

    /// Trace of the Gram matrix of an SOS variable.
    pub fn gram_trace(&self, v: DecisionPoly) -> AffineExpr {
        let k = self.vars[v.0].basis.len();
        let mut e = AffineExpr::zero(self.n_vars);
        for i in 0..k {
            e = e.try_add(&self.coefficient(v, i)).expect("same arity");
        }
        e
    }

    pub fn add_sos_constraint(&mut self, expr: AffineExpr) -> Result<usize, SosError> {
        if expr.n_vars() != self.n_vars {
            return Err(PolyError::VarMismatch {
                left: self.n_vars,
                right: expr.n_vars(),
            }
            .into());
        }
        self.sos_constraints.push(expr);
        Ok(self.sos_constraints.len() - 1)
    }

    pub fn add_linear_constraint(&mut self, expr: AffineExpr, rel: Relation) -> Result<(), SosError> {
        expr.scalar_terms()?;
        self.linear_constraints.push((expr, rel));
        Ok(())
    }

    pub fn set_objective(&mut self, expr: AffineExpr, sense: Sense) -> Result<(), SosError> {
        expr.scalar_terms()?;
        self.objective = Some((expr, sense));
        Ok(())
    }

    fn gram_basis(&self, expr: &AffineExpr) -> Vec<Monomial> {
        let half = expr.degree().div_ceil(2);
        let mut basis = monomial_basis(self.n_vars, half);
        if !self.newton_reduction {
            return basis;
        }
        // Drop z whose square cannot appear: z^2 outside the support and not
        // produced by any cross term of the remaining basis.
        let support = expr.support();
        loop {
            let mut removed = false;
            let mut i = 0;
            while i < basis.len() {
                let sq = basis[i].mul(&basis[i]);
                let needed = support.contains(&sq)
                    || basis.iter().enumerate().any(|(a, za)| {
                        a != i
                            && basis
                                .iter()
                                .enumerate()
                                .any(|(b, zb)| b != i && b != a && za.mul(zb) == sq)
                    });
                if needed {
                    i += 1;
                } else {
                    basis.remove(i);
                    removed = true;
                }
            }
            if !removed {
                return basis;
            }
        }
    }

    pub fn compile(&self) -> Result<Compiled, SosError> {
        let mut blocks = Vec::new();
        let n_free: usize = self
            .vars
            .iter()
            .filter(|v| v.kind != VarKind::Sos)
            .map(|v| v.basis.len())
            .sum();
        let n_slack = self
            .linear_constraints
            .iter()
            .filter(|(_, r)| *r != Relation::Eq)
            .count();
        let free_block = (n_free > 0).then(|| {
            blocks.push(Block::Free(n_free));
            blocks.len() - 1
        });
        let slack_block = (n_slack > 0).then(|| {
            blocks.push(Block::Nonneg(n_slack));
            blocks.len() - 1
        });
        let mut var_block = vec![0usize; self.vars.len()];
        let mut var_free_offset = vec![0usize; self.vars.len()];
        let mut off = 0;
        for (i, v) in self.vars.iter().enumerate() {
            if v.kind == VarKind::Sos {
                blocks.push(Block::Psd(v.basis.len()));
                var_block[i] = blocks.len() - 1;
            } else {
                var_free_offset[i] = off;
                off += v.basis.len();
            }
        }
        let locations: Vec<Location> = self
            .unknowns
            .iter()
            .map(|u| match *u {
                Unknown::Free { var, index } => Location::Free(free_block.unwrap(), var_free_offset[var] + index),
                Unknown::Gram { var, row, col } => Location::Psd(var_block[var], row, col),
            })
            .collect();
        let unknown_entry = |j: usize, coef: f64| -> Entry {
            match locations[j] {
                Location::Free(b, i) => Entry::scalar(b, i, coef),
                Location::Psd(b, r, c) => Entry::new(b, r, c, if r == c { coef } else { coef / 2.0 }),
            }
        };

        let sense = match (self.objective.is_some(), self.find_mode) {
            (false, FindMode::Margin) => ObjectiveSense::Feasibility,
            _ => ObjectiveSense::Minimize,
        };
        let mut constraint_blocks = Vec::new();
        let mut rows: Vec<(Vec<Entry>, f64)> = Vec::new();
        for expr in &self.sos_constraints {
            let basis = self.gram_basis(expr);
            blocks.push(Block::Psd(basis.len().max(1)));
            let blk = blocks.len() - 1;
            // monomial -> Gram entries producing it
            let mut products: BTreeMap<Monomial, Vec<(usize, usize)>> = BTreeMap::new();
            for r in 0..basis.len() {
                for c in r..basis.len() {
                    products.entry(basis[r].mul(&basis[c])).or_default().push((r, c));
                }
            }
            let mut monos: BTreeSet<Monomial> = expr.support();
            monos.extend(products.keys().cloned());
            for m in monos {
                let mut entries = Vec::new();
                if let Some(pairs) = products.get(&m) {
                    for &(r, c) in pairs {
                        // <A, X> counts off-diagonal entries twice, matching 2 Q_rc.
                        entries.push(Entry::new(blk, r, c, 1.0));
                    }
                }
                for (&j, p) in &expr.terms {
                    let a = p.coeff(&m);
                    if a != 0.0 {
                        entries.push(unknown_entry(j, -a));
                    }
                }
                rows.push((entries, expr.constant.coeff(&m)));
            }
            constraint_blocks.push((blk, basis));
        }
        let mut slack = 0;
        for (expr, rel) in &self.linear_constraints {
            let (c0, coefs) = expr.scalar_terms()?;
            let mut entries: Vec<Entry> = coefs.iter().map(|&(j, a)| unknown_entry(j, a)).collect();
            match rel {
                Relation::Eq => {}
                Relation::Ge => {
                    entries.push(Entry::scalar(slack_block.unwrap(), slack, -1.0));
                    slack += 1;
                }
                Relation::Le => {
                    entries.push(Entry::scalar(slack_block.unwrap(), slack, 1.0));
                    slack += 1;
                }
            }
            rows.push((entries, -c0));
        }
        let mut sdp = SdpProblem::new(blocks, sense);
        for (entries, rhs) in rows {
            sdp.add_constraint(entries, rhs);
        }
        if let Some((expr, s)) = &self.objective {
            let sign = if *s == Sense::Maximize { -1.0 } else { 1.0 };
            let (_, coefs) = expr.scalar_terms()?;
            sdp.objective = coefs.iter().map(|&(j, a)| unknown_entry(j, sign * a)).collect();
        }
        Ok(Compiled {
            sdp,
            locations,
            constraint_blocks,
        })
    }

    pub fn solve(&self, settings: &SdpSettings) -> Result<SosSolution, SosError> {
        let compiled = self.compile()?;
        let sol = sdp::solve(&compiled.sdp, settings)?;
        Ok(self.read_back(&compiled, sol))
    }

    fn read_back(&self, compiled: &Compiled, sol: SdpSolution) -> SosSolution {
        let values = compiled
            .locations
            .iter()
            .map(|loc| match *loc {
                Location::Free(b, i) => sol.x[b].as_vector().map_or(0.0, |v| v[i]),
                Location::Psd(b, r, c) => sol.x[b].as_matrix().map_or(0.0, |m| m[(r, c)]),
            })
            .collect();
        let grams = compiled
            .constraint_blocks
            .iter()
            .map(|(b, basis)| {
                let m = match &sol.x[*b] {
                    BlockValue::Psd(m) => m.clone(),
                    _ => DMatrix::zeros(0, 0),
                };
                let k = basis.len();
                (basis.clone(), m.view((0, 0), (k, k)).into_owned())
            })
            .collect();
        SosSolution {
            status: sol.status,
            sdp: sol,
            values,
            grams,
        }
    }

    /// Value of a decision polynomial in a usable solution.
    pub fn extract(&self, sol: &SosSolution, v: DecisionPoly) -> Result<Polynomial, SosError> {
        if !sol.is_usable() {
            return Err(SosError::ExtractOnNonOptimal(sol.status));
        }
        Ok(self.expr(v).substitute(&sol.values))
    }

    /// Value of an arbitrary expression in a usable solution.
    pub fn evaluate(&self, sol: &SosSolution, e: &AffineExpr) -> Result<Polynomial, SosError> {
        if !sol.is_usable() {
            return Err(SosError::ExtractOnNonOptimal(sol.status));
        }
        Ok(e.substitute(&sol.values))
    }

    /// Gram witness of SOS constraint `id`, with its round-trip residual.
    pub fn witness(&self, sol: &SosSolution, id: usize) -> Result<SosWitness, SosError> {
        let expr = self.evaluate(sol, &self.sos_constraints[id])?;
        let (basis, gram) = &sol.grams[id];
        let residual = (&expr - &gram_polynomial(self.n_vars, basis, gram)).max_abs_coeff();
        Ok(SosWitness {
            basis: basis.clone(),
            gram: gram.clone(),
            residual,
            min_eigenvalue: sdp::min_eigenvalue(gram),
        })
    }
}

fn gram_offset(k: usize, row: usize, col: usize) -> usize {
    // row-major upper triangle
    row * k - row * (row + 1) / 2 + col
}

/// `Z^T Q Z`.
pub fn gram_polynomial(n_vars: usize, basis: &[Monomial], gram: &DMatrix<f64>) -> Polynomial {
    let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
    for (r, zr) in basis.iter().enumerate() {
        for (c, zc) in basis.iter().enumerate() {
            *terms.entry(zr.mul(zc)).or_insert(0.0) += gram[(r, c)];
        }
    }
    Polynomial::from_terms(n_vars, terms)
}

/// Result of [`check_sos`].
#[derive(Debug, Clone, PartialEq)]
pub enum SosCheck {
    Sos(SosWitness),
    NotSos,
}

impl SosCheck {
    pub fn is_sos(&self) -> bool {
        matches!(self, SosCheck::Sos(_))
    }

    pub fn witness(&self) -> Option<&SosWitness> {
        match self {
            SosCheck::Sos(w) => Some(w),
            SosCheck::NotSos => None,
        }
    }
}

/// Decides SOS membership numerically. The solved Gram matrix is projected
/// onto the PSD cone and the coefficient residual re-checked against `tol`.
pub fn check_sos(p: &Polynomial, tol: f64) -> SosCheck {
    check_sos_with(p, tol, &SdpSettings::default())
}

pub fn check_sos_with(p: &Polynomial, tol: f64, settings: &SdpSettings) -> SosCheck {
    if p.is_zero() {
        let n = p.n_vars();
        return SosCheck::Sos(SosWitness {
            basis: vec![Monomial::one(n)],
            gram: DMatrix::zeros(1, 1),
            residual: 0.0,
            min_eigenvalue: 0.0,
        });
    }
    if p.degree() % 2 == 1 {
        return SosCheck::NotSos;
    }
    let mut prog = SosProgram::new(p.n_vars());
    prog.add_sos_constraint(AffineExpr::constant(p.clone()))
        .expect("matching arity");
    let Ok(sol) = prog.solve(settings) else {
        return SosCheck::NotSos;
    };
    if !sol.is_usable() {
        return SosCheck::NotSos;
    }
    let (basis, gram) = &sol.grams[0];
    let projected = sdp::project_psd(gram);
    let residual = (p - &gram_polynomial(p.n_vars(), basis, &projected)).max_abs_coeff();
    if residual > tol {
        return SosCheck::NotSos;
    }
    SosCheck::Sos(SosWitness {
        basis: basis.clone(),
        min_eigenvalue: sdp::min_eigenvalue(&projected),
        gram: projected,
        residual,
    })
}
