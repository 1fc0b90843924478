//! Dense primal-dual interior-point solver for small block semidefinite programs.
//!
//! Primal form:
//!
//! ```text
//! minimize   <C, X>
//! subject to <A_i, X> = b_i,   i = 1..p
//!            X = diag(X_1, ..., X_q),  each X_j PSD, nonnegative or free
//! ```
//!
//! The method is an infeasible-start path-following scheme with the HKM search
//! direction and a Mehrotra predictor-corrector step. The Schur complement is
//! assembled densely; free variables are kept native and enter through an
//! augmented (quasi-definite) system instead of being split.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Block {
    /// Symmetric PSD matrix of the given order.
    Psd(usize),
    /// Vector of nonnegative scalars.
    Nonneg(usize),
    /// Vector of unrestricted scalars.
    Free(usize),
}

impl Block {
    pub fn size(&self) -> usize {
        match *self {
            Block::Psd(k) | Block::Nonneg(k) | Block::Free(k) => k,
        }
    }
}

/// One coefficient of a block matrix. For PSD blocks an off-diagonal entry
/// `(r, c)` sets both `(r, c)` and `(c, r)`; for vector blocks `row == col`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl Entry {
    pub fn new(block: usize, row: usize, col: usize, value: f64) -> Self {
        Entry { block, row, col, value }
    }

    /// Entry of a vector (nonnegative or free) block.
    pub fn scalar(block: usize, index: usize, value: f64) -> Self {
        Entry::new(block, index, index, value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpConstraint {
    pub entries: Vec<Entry>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ObjectiveSense {
    Minimize,
    /// Maximize a margin `t <= 1` with `X - t I` PSD (and `x - t >= 0` on
    /// nonnegative blocks); the objective matrix is ignored.
    Feasibility,
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub blocks: Vec<Block>,
    pub objective: Vec<Entry>,
    pub constraints: Vec<SdpConstraint>,
    pub sense: ObjectiveSense,
}

impl SdpProblem {
    pub fn new(blocks: Vec<Block>, sense: ObjectiveSense) -> Self {
        SdpProblem {
            blocks,
            objective: Vec::new(),
            constraints: Vec::new(),
            sense,
        }
    }

    pub fn add_constraint(&mut self, entries: Vec<Entry>, rhs: f64) -> usize {
        self.constraints.push(SdpConstraint { entries, rhs });
        self.constraints.len() - 1
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        let check = |e: &Entry, what: &str| -> Result<(), SdpError> {
            let Some(block) = self.blocks.get(e.block) else {
                return Err(SdpError::Malformed(format!("{what}: block {} out of range", e.block)));
            };
            let k = block.size();
            if e.row >= k || e.col >= k {
                return Err(SdpError::Malformed(format!(
                    "{what}: index ({}, {}) outside block {} of order {k}",
                    e.row, e.col, e.block
                )));
            }
            if !matches!(block, Block::Psd(_)) && e.row != e.col {
                return Err(SdpError::Malformed(format!(
                    "{what}: off-diagonal entry in vector block {}",
                    e.block
                )));
            }
            if !e.value.is_finite() {
                return Err(SdpError::Malformed(format!("{what}: non-finite coefficient")));
            }
            Ok(())
        };
        if self.blocks.iter().any(|b| b.size() == 0) {
            return Err(SdpError::Malformed("empty block".into()));
        }
        for e in &self.objective {
            check(e, "objective")?;
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(SdpError::Malformed(format!("constraint {i}: non-finite rhs")));
            }
            for e in &c.entries {
                check(e, &format!("constraint {i}"))?;
            }
        }
        Ok(())
    }

    /// Plain-text sparse dump: one `matrix block row col value` line per entry,
    /// where matrix 0 is the objective and matrix `i` is constraint `i`
    /// (1-based). Header comments list the blocks and right-hand sides.
    pub fn write_triplets(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "# sense {:?}", self.sense)?;
        for (j, b) in self.blocks.iter().enumerate() {
            writeln!(w, "# block {j} {b:?}")?;
        }
        let rhs: Vec<String> = self.constraints.iter().map(|c| format!("{:e}", c.rhs)).collect();
        writeln!(w, "# rhs {}", rhs.join(" "))?;
        for e in &self.objective {
            writeln!(w, "0 {} {} {} {:e}", e.block, e.row, e.col, e.value)?;
        }
        for (i, c) in self.constraints.iter().enumerate() {
            for e in &c.entries {
                writeln!(w, "{} {} {} {} {:e}", i + 1, e.block, e.row, e.col, e.value)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockValue {
    Psd(DMatrix<f64>),
    Nonneg(DVector<f64>),
    Free(DVector<f64>),
}

impl BlockValue {
    pub fn as_matrix(&self) -> Option<&DMatrix<f64>> {
        match self {
            BlockValue::Psd(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&DVector<f64>> {
        match self {
            BlockValue::Nonneg(v) | BlockValue::Free(v) => Some(v),
            BlockValue::Psd(_) => None,
        }
    }

    fn get(&self, r: usize, c: usize) -> f64 {
        match self {
            BlockValue::Psd(m) => m[(r, c)],
            BlockValue::Nonneg(v) | BlockValue::Free(v) => v[r],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    SlowProgress,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: Vec<BlockValue>,
    pub y: DVector<f64>,
    pub s: Vec<BlockValue>,
    pub status: SdpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    /// Achieved margin `t*` for feasibility-sense problems.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SdpSettings {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub tol_psd: f64,
    pub tol_strict: f64,
    pub max_iterations: usize,
}

impl Default for SdpSettings {
    fn default() -> Self {
        SdpSettings {
            tol_feas: 1e-8,
            tol_gap: 1e-7,
            tol_psd: 1e-8,
            tol_strict: 1e-9,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("iteration limit reached after {iterations} iterations (primal {primal_residual:.2e}, dual {dual_residual:.2e}, gap {gap:.2e})")]
    IterationLimit {
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
        gap: f64,
    },
}

/// `(primal residual, dual residual, relative gap)` as
/// `|A(X) - b|_inf`, `|A^T y + S - C|_inf` and `|<C,X> - b^T y| / (1 + |b^T y|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

pub fn residuals(problem: &SdpProblem, sol: &SdpSolution) -> Residuals {
    let mut primal = 0.0f64;
    let mut aty: Vec<BlockValue> = zero_values(&problem.blocks);
    let mut bty = 0.0;
    for (i, c) in problem.constraints.iter().enumerate() {
        let mut ax = 0.0;
        for e in &c.entries {
            let off = matches!(problem.blocks[e.block], Block::Psd(_)) && e.row != e.col;
            let mult = if off { 2.0 } else { 1.0 };
            ax += mult * e.value * sol.x[e.block].get(e.row, e.col);
            let yi = sol.y.get(i).copied().unwrap_or(0.0);
            add_entry(&mut aty[e.block], e, yi);
        }
        primal = primal.max((ax - c.rhs).abs());
        bty += c.rhs * sol.y.get(i).copied().unwrap_or(0.0);
    }
    let mut cmat = zero_values(&problem.blocks);
    let mut cx = 0.0;
    for e in &problem.objective {
        add_entry(&mut cmat[e.block], e, 1.0);
    }
    let mut dual = 0.0f64;
    for (j, block) in problem.blocks.iter().enumerate() {
        let k = block.size();
        for r in 0..k {
            let cols = if matches!(block, Block::Psd(_)) { 0..k } else { r..r + 1 };
            for c in cols {
                let sv = match (&sol.s.get(j), block) {
                    (Some(v), _) => v.get(r, c),
                    (None, _) => 0.0,
                };
                let res = aty[j].get(r, c) + sv - cmat[j].get(r, c);
                dual = dual.max(res.abs());
                cx += cmat[j].get(r, c) * sol.x[j].get(r, c);
            }
        }
    }
    Residuals {
        primal,
        dual,
        gap: (cx - bty).abs() / (1.0 + bty.abs()),
    }
}

fn zero_values(blocks: &[Block]) -> Vec<BlockValue> {
    blocks
        .iter()
        .map(|b| match *b {
            Block::Psd(k) => BlockValue::Psd(DMatrix::zeros(k, k)),
            Block::Nonneg(k) => BlockValue::Nonneg(DVector::zeros(k)),
            Block::Free(k) => BlockValue::Free(DVector::zeros(k)),
        })
        .collect()
}

fn add_entry(v: &mut BlockValue, e: &Entry, scale: f64) {
    match v {
        BlockValue::Psd(m) => {
            m[(e.row, e.col)] += scale * e.value;
            if e.row != e.col {
                m[(e.col, e.row)] += scale * e.value;
            }
        }
        BlockValue::Nonneg(x) | BlockValue::Free(x) => x[e.row] += scale * e.value,
    }
}

/// Solves the problem. `Feasibility`-sense problems report `Optimal` only
/// when the achieved margin exceeds `tol_strict`, `Infeasible` otherwise.
pub fn solve(problem: &SdpProblem, settings: &SdpSettings) -> Result<SdpSolution, SdpError> {
    problem.validate()?;
    match problem.sense {
        ObjectiveSense::Minimize => {
            let mut sol = Solver::new(problem, settings).run()?;
            let r = residuals(problem, &sol);
            sol.primal_residual = r.primal;
            sol.dual_residual = r.dual;
            sol.duality_gap = r.gap;
            Ok(sol)
        }
        ObjectiveSense::Feasibility => solve_margin(problem, settings),
    }
}

fn solve_margin(problem: &SdpProblem, settings: &SdpSettings) -> Result<SdpSolution, SdpError> {
    let nb = problem.blocks.len();
    let t_block = nb;
    let slack_block = nb + 1;
    let mut blocks = problem.blocks.clone();
    blocks.push(Block::Free(1));
    blocks.push(Block::Nonneg(1));
    let mut aug = SdpProblem::new(blocks, ObjectiveSense::Minimize);
    for c in &problem.constraints {
        let mut shift = 0.0;
        for e in &c.entries {
            match problem.blocks[e.block] {
                Block::Psd(_) | Block::Nonneg(_) if e.row == e.col => shift += e.value,
                _ => {}
            }
        }
        let mut entries = c.entries.clone();
        entries.push(Entry::scalar(t_block, 0, shift));
        aug.add_constraint(entries, c.rhs);
    }
    aug.add_constraint(
        vec![Entry::scalar(t_block, 0, 1.0), Entry::scalar(slack_block, 0, 1.0)],
        1.0,
    );
    aug.objective.push(Entry::scalar(t_block, 0, -1.0));

    let inner = Solver::new(&aug, settings).run()?;
    let t = inner.x[t_block].get(0, 0);
    let mut x: Vec<BlockValue> = inner.x[..nb].to_vec();
    for v in &mut x {
        match v {
            BlockValue::Psd(m) => {
                for i in 0..m.nrows() {
                    m[(i, i)] += t;
                }
            }
            BlockValue::Nonneg(v) => v.add_scalar_mut(t),
            BlockValue::Free(_) => {}
        }
    }
    let status = match inner.status {
        SdpStatus::Optimal | SdpStatus::SlowProgress if t > settings.tol_strict => inner.status,
        SdpStatus::Optimal | SdpStatus::SlowProgress | SdpStatus::Infeasible => SdpStatus::Infeasible,
        SdpStatus::Unbounded => SdpStatus::Unbounded,
    };
    let mut sol = SdpSolution {
        x,
        y: inner.y.rows(0, problem.constraints.len()).into_owned(),
        s: inner.s[..nb].to_vec(),
        status,
        primal_residual: 0.0,
        dual_residual: inner.dual_residual,
        duality_gap: inner.duality_gap,
        primal_objective: t,
        dual_objective: inner.dual_objective,
        iterations: inner.iterations,
        margin: Some(t),
    };
    sol.primal_residual = residuals(problem, &sol).primal;
    Ok(sol)
}

/// Constraint data restricted to one PSD block.
struct PsdPart {
    constraint: usize,
    mat: DMatrix<f64>,
}

struct Solver<'a> {
    settings: &'a SdpSettings,
    blocks: Vec<Block>,
    /// For each original block: index into psd / lp / free storage.
    slot: Vec<usize>,
    psd_sizes: Vec<usize>,
    n_lp: usize,
    n_free: usize,
    p: usize,
    /// Per PSD block, the constraints touching it.
    psd_parts: Vec<Vec<PsdPart>>,
    /// Per constraint, sparse (lp index, value).
    lp_rows: Vec<Vec<(usize, f64)>>,
    free_rows: Vec<Vec<(usize, f64)>>,
    b: DVector<f64>,
    c_psd: Vec<DMatrix<f64>>,
    c_lp: DVector<f64>,
    c_free: DVector<f64>,
    /// Row scaling `d_i` and objective scaling `gamma`.
    row_scale: DVector<f64>,
    obj_scale: f64,
}

#[derive(Clone)]
struct Iterate {
    x: Vec<DMatrix<f64>>,
    xl: DVector<f64>,
    v: DVector<f64>,
    y: DVector<f64>,
    s: Vec<DMatrix<f64>>,
    sl: DVector<f64>,
}

/// Residual multiple of `tol_feas` below which a stalled iterate is returned.
const NEAR_FEASIBLE: f64 = 100.0;

struct Best {
    it: Iterate,
    iter: usize,
    merit: f64,
    pres: f64,
    dres: f64,
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dxl: DVector<f64>,
    dv: DVector<f64>,
    dy: DVector<f64>,
    ds: Vec<DMatrix<f64>>,
    dsl: DVector<f64>,
}

struct Residual {
    rp: DVector<f64>,
    rd: Vec<DMatrix<f64>>,
    rdl: DVector<f64>,
    rf: DVector<f64>,
}

impl<'a> Solver<'a> {
    fn new(problem: &SdpProblem, settings: &'a SdpSettings) -> Self {
        let mut slot = Vec::with_capacity(problem.blocks.len());
        let mut psd_sizes = Vec::new();
        let (mut n_lp, mut n_free) = (0, 0);
        for b in &problem.blocks {
            match *b {
                Block::Psd(k) => {
                    slot.push(psd_sizes.len());
                    psd_sizes.push(k);
                }
                Block::Nonneg(k) => {
                    slot.push(n_lp);
                    n_lp += k;
                }
                Block::Free(k) => {
                    slot.push(n_free);
                    n_free += k;
                }
            }
        }
        let p = problem.constraints.len();

        // Row scaling to unit infinity norm.
        let row_scale = DVector::from_iterator(
            p,
            problem.constraints.iter().map(|c| {
                let m = c.entries.iter().fold(0.0f64, |a, e| a.max(e.value.abs()));
                if m > 0.0 {
                    1.0 / m
                } else {
                    1.0
                }
            }),
        );
        let obj_max = problem.objective.iter().fold(0.0f64, |a, e| a.max(e.value.abs()));
        let obj_scale = obj_max.max(1.0);

        let mut psd_parts: Vec<Vec<PsdPart>> = psd_sizes.iter().map(|_| Vec::new()).collect();
        let mut lp_rows = vec![Vec::new(); p];
        let mut free_rows = vec![Vec::new(); p];
        let mut b = DVector::zeros(p);
        for (i, c) in problem.constraints.iter().enumerate() {
            let d = row_scale[i];
            b[i] = c.rhs * d;
            for e in &c.entries {
                let j = slot[e.block];
                match problem.blocks[e.block] {
                    Block::Psd(k) => {
                        let parts = &mut psd_parts[j];
                        if parts.last().map_or(true, |pp| pp.constraint != i) {
                            parts.push(PsdPart {
                                constraint: i,
                                mat: DMatrix::zeros(k, k),
                            });
                        }
                        let m = &mut parts.last_mut().unwrap().mat;
                        m[(e.row, e.col)] += d * e.value;
                        if e.row != e.col {
                            m[(e.col, e.row)] += d * e.value;
                        }
                    }
                    Block::Nonneg(_) => lp_rows[i].push((j + e.row, d * e.value)),
                    Block::Free(_) => free_rows[i].push((j + e.row, d * e.value)),
                }
            }
        }
        let mut c_psd: Vec<DMatrix<f64>> = psd_sizes.iter().map(|&k| DMatrix::zeros(k, k)).collect();
        let mut c_lp = DVector::zeros(n_lp);
        let mut c_free = DVector::zeros(n_free);
        for e in &problem.objective {
            let j = slot[e.block];
            let v = e.value / obj_scale;
            match problem.blocks[e.block] {
                Block::Psd(_) => {
                    c_psd[j][(e.row, e.col)] += v;
                    if e.row != e.col {
                        c_psd[j][(e.col, e.row)] += v;
                    }
                }
                Block::Nonneg(_) => c_lp[j + e.row] += v,
                Block::Free(_) => c_free[j + e.row] += v,
            }
        }
        Solver {
            settings,
            blocks: problem.blocks.clone(),
            slot,
            psd_sizes,
            n_lp,
            n_free,
            p,
            psd_parts,
            lp_rows,
            free_rows,
            b,
            c_psd,
            c_lp,
            c_free,
            row_scale,
            obj_scale,
        }
    }

    fn cone_dim(&self) -> usize {
        self.psd_sizes.iter().sum::<usize>() + self.n_lp
    }

    /// `A(X) + A_l x + A_f v`.
    fn apply_a(&self, x: &[DMatrix<f64>], xl: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.p);
        for (j, parts) in self.psd_parts.iter().enumerate() {
            for part in parts {
                out[part.constraint] += part.mat.dot(&x[j]);
            }
        }
        for i in 0..self.p {
            for &(k, a) in &self.lp_rows[i] {
                out[i] += a * xl[k];
            }
            for &(k, a) in &self.free_rows[i] {
                out[i] += a * v[k];
            }
        }
        out
    }

    /// `sum_i y_i A_i` split by cone.
    fn apply_at(&self, y: &DVector<f64>) -> (Vec<DMatrix<f64>>, DVector<f64>, DVector<f64>) {
        let mut psd: Vec<DMatrix<f64>> = self.psd_sizes.iter().map(|&k| DMatrix::zeros(k, k)).collect();
        for (j, parts) in self.psd_parts.iter().enumerate() {
            for part in parts {
                psd[j] += &part.mat * y[part.constraint];
            }
        }
        let mut lp = DVector::zeros(self.n_lp);
        let mut fr = DVector::zeros(self.n_free);
        for i in 0..self.p {
            for &(k, a) in &self.lp_rows[i] {
                lp[k] += a * y[i];
            }
            for &(k, a) in &self.free_rows[i] {
                fr[k] += a * y[i];
            }
        }
        (psd, lp, fr)
    }

    fn initial_point(&self) -> Iterate {
        let n = self.cone_dim().max(1) as f64;
        let mut xi: f64 = 10.0f64.max(n.sqrt());
        let mut eta: f64 = 10.0f64.max(n.sqrt());
        for i in 0..self.p {
            let mut norm2 = 0.0;
            for parts in &self.psd_parts {
                for part in parts.iter().filter(|pp| pp.constraint == i) {
                    norm2 += part.mat.norm_squared();
                }
            }
            norm2 += self.lp_rows[i].iter().map(|(_, a)| a * a).sum::<f64>();
            let na = norm2.sqrt();
            xi = xi.max((1.0 + self.b[i].abs()) / (1.0 + na));
            eta = eta.max(na);
        }
        let cnorm = self.c_psd.iter().map(|c| c.norm_squared()).sum::<f64>() + self.c_lp.norm_squared();
        eta = eta.max(cnorm.sqrt());
        Iterate {
            x: self.psd_sizes.iter().map(|&k| DMatrix::identity(k, k) * xi).collect(),
            xl: DVector::from_element(self.n_lp, xi),
            v: DVector::zeros(self.n_free),
            y: DVector::zeros(self.p),
            s: self.psd_sizes.iter().map(|&k| DMatrix::identity(k, k) * eta).collect(),
            sl: DVector::from_element(self.n_lp, eta),
        }
    }

    fn residual(&self, it: &Iterate) -> Residual {
        let rp = &self.b - self.apply_a(&it.x, &it.xl, &it.v);
        let (aty, atyl, atyf) = self.apply_at(&it.y);
        let rd = (0..self.psd_sizes.len())
            .map(|j| &self.c_psd[j] - &aty[j] - &it.s[j])
            .collect();
        let rdl = &self.c_lp - atyl - &it.sl;
        let rf = &self.c_free - atyf;
        Residual { rp, rd, rdl, rf }
    }

    fn mu(&self, it: &Iterate) -> f64 {
        let n = self.cone_dim();
        if n == 0 {
            return 0.0;
        }
        let xs: f64 = it.x.iter().zip(&it.s).map(|(x, s)| x.dot(s)).sum::<f64>() + it.xl.dot(&it.sl);
        xs / n as f64
    }

    fn objectives(&self, it: &Iterate) -> (f64, f64) {
        let pobj = it.x.iter().zip(&self.c_psd).map(|(x, c)| x.dot(c)).sum::<f64>()
            + it.xl.dot(&self.c_lp)
            + it.v.dot(&self.c_free);
        (pobj, self.b.dot(&it.y))
    }

    /// Residuals in the original (unscaled) units.
    fn unscaled_metrics(&self, it: &Iterate, r: &Residual) -> (f64, f64, f64) {
        let pres =
            r.rp.iter()
                .zip(self.row_scale.iter())
                .fold(0.0f64, |a, (rp, d)| a.max((rp / d).abs()));
        let mut dres = 0.0f64;
        for m in &r.rd {
            dres = dres.max(m.amax());
        }
        dres = dres.max(r.rdl.amax()).max(r.rf.amax());
        dres *= self.obj_scale;
        let (pobj, dobj) = self.objectives(it);
        let g = self.obj_scale;
        let gap = g * (pobj - dobj).abs() / (1.0 + g * dobj.abs());
        (pres, dres, gap)
    }

    fn schur(&self, it: &Iterate, sinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let p = self.p;
        let mut m = DMatrix::zeros(p, p);
        for (j, parts) in self.psd_parts.iter().enumerate() {
            let x = &it.x[j];
            let si = &sinv[j];
            for pi in parts {
                let g = x * &pi.mat * si;
                for pj in parts {
                    m[(pi.constraint, pj.constraint)] += pj.mat.dot(&g);
                }
            }
        }
        if self.n_lp > 0 {
            let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n_lp];
            for (i, row) in self.lp_rows.iter().enumerate() {
                for &(k, a) in row {
                    cols[k].push((i, a));
                }
            }
            for (k, col) in cols.iter().enumerate() {
                let d = it.xl[k] / it.sl[k];
                for &(i, ai) in col {
                    for &(l, al) in col {
                        m[(i, l)] += ai * al * d;
                    }
                }
            }
        }
        let mt = m.transpose();
        (m + mt) * 0.5
    }

    fn factor(&self, m: &DMatrix<f64>) -> Result<KktSystem, SdpError> {
        let p = self.p;
        let nf = self.n_free;
        let mut af = DMatrix::zeros(p, nf);
        for (i, row) in self.free_rows.iter().enumerate() {
            for &(k, a) in row {
                af[(i, k)] += a;
            }
        }
        let diag_max = (0..p).fold(0.0f64, |a, i| a.max(m[(i, i)].abs())).max(1.0);
        let mut k = DMatrix::zeros(p + nf, p + nf);
        k.view_mut((0, 0), (p, p)).copy_from(m);
        k.view_mut((0, p), (p, nf)).copy_from(&af);
        k.view_mut((p, 0), (nf, p)).copy_from(&af.transpose());
        let exact = k.clone();
        let delta = 1e-13 * diag_max;
        for i in 0..p {
            k[(i, i)] += delta;
        }
        for i in p..p + nf {
            k[(i, i)] -= delta;
        }
        let lu = k.lu();
        if !lu.is_invertible() {
            return Err(SdpError::NumericalFailure("singular Schur complement".into()));
        }
        Ok(KktSystem { lu, exact })
    }

    fn direction(
        &self,
        it: &Iterate,
        res: &Residual,
        sinv: &[DMatrix<f64>],
        kkt: &KktSystem,
        sigma_mu: f64,
        corr: Option<&Direction>,
    ) -> Result<Direction, SdpError> {
        let nb = self.psd_sizes.len();
        let mut h = Vec::with_capacity(nb);
        let mut t = Vec::with_capacity(nb);
        for j in 0..nb {
            let mut hj = &sinv[j] * sigma_mu - &it.x[j];
            if let Some(c) = corr {
                hj -= &c.dx[j] * &c.ds[j] * &sinv[j];
            }
            let tj = &hj - &it.x[j] * &res.rd[j] * &sinv[j];
            h.push(hj);
            t.push(tj);
        }
        let mut hl = DVector::zeros(self.n_lp);
        for k in 0..self.n_lp {
            let corr_k = corr.map_or(0.0, |c| c.dxl[k] * c.dsl[k]);
            hl[k] = (sigma_mu - corr_k) / it.sl[k] - it.xl[k];
        }
        let tl = DVector::from_fn(self.n_lp, |k, _| hl[k] - it.xl[k] / it.sl[k] * res.rdl[k]);
        let ry = &res.rp - self.apply_a(&t, &tl, &DVector::zeros(self.n_free));
        let mut rhs = DVector::zeros(self.p + self.n_free);
        rhs.rows_mut(0, self.p).copy_from(&ry);
        rhs.rows_mut(self.p, self.n_free).copy_from(&res.rf);
        let sol = kkt.solve(&rhs)?;
        let dy = sol.rows(0, self.p).into_owned();
        let dv = sol.rows(self.p, self.n_free).into_owned();
        let (atdy, atdyl, _) = self.apply_at(&dy);
        let mut ds = Vec::with_capacity(nb);
        let mut dx = Vec::with_capacity(nb);
        for j in 0..nb {
            let dsj = &res.rd[j] - &atdy[j];
            let raw = &h[j] - &it.x[j] * &dsj * &sinv[j];
            dx.push((&raw + raw.transpose()) * 0.5);
            ds.push(dsj);
        }
        let dsl = &res.rdl - atdyl;
        let dxl = DVector::from_fn(self.n_lp, |k, _| hl[k] - it.xl[k] / it.sl[k] * dsl[k]);
        Ok(Direction {
            dx,
            dxl,
            dv,
            dy,
            ds,
            dsl,
        })
    }

    fn run(&self) -> Result<SdpSolution, SdpError> {
        let settings = self.settings;
        let mut it = self.initial_point();
        let mut stalls = 0;
        let n_cone = self.cone_dim();
        const TOL_INFEAS: f64 = 1e-8;
        const STAGNATION: usize = 6;
        let mut best: Option<Best> = None;

        for iter in 0..=settings.max_iterations {
            let res = self.residual(&it);
            let (pres, dres, gap) = self.unscaled_metrics(&it, &res);
            let (pobj, dobj) = self.objectives(&it);

            let tiny_gap = n_cone == 0 || gap <= settings.tol_gap;
            if pres <= settings.tol_feas && dres <= settings.tol_feas && tiny_gap {
                return Ok(self.finish(it, SdpStatus::Optimal, iter));
            }
            if let Some(status) = self.detect_infeasibility(&it, dobj, pobj, TOL_INFEAS) {
                return Ok(self.finish(it, status, iter));
            }
            let merit = (pres / settings.tol_feas)
                .max(dres / settings.tol_feas)
                .max(if tiny_gap { 0.0 } else { gap / settings.tol_gap });
            if best.as_ref().map_or(true, |b| merit < b.merit) {
                best = Some(Best {
                    it: it.clone(),
                    iter,
                    merit,
                    pres,
                    dres,
                });
            }
            // Weakly feasible problems lose accuracy near the end; fall back to
            // the most accurate iterate once progress has stopped.
            let b = best.as_ref().unwrap();
            let stagnant = iter >= b.iter + STAGNATION;
            if (stagnant || iter == settings.max_iterations)
                && b.pres <= NEAR_FEASIBLE * settings.tol_feas
                && b.dres <= NEAR_FEASIBLE * settings.tol_feas
            {
                let b = best.take().unwrap();
                return Ok(self.finish(b.it, SdpStatus::SlowProgress, iter));
            }
            if iter == settings.max_iterations {
                return Err(SdpError::IterationLimit {
                    iterations: iter,
                    primal_residual: pres,
                    dual_residual: dres,
                    gap,
                });
            }

            let mu = self.mu(&it);
            let mut sinv = Vec::with_capacity(self.psd_sizes.len());
            for s in &it.s {
                match s.clone().cholesky() {
                    Some(chol) => sinv.push(chol.inverse()),
                    None => {
                        let b = best.take().unwrap();
                        if b.pres <= NEAR_FEASIBLE * settings.tol_feas && b.dres <= NEAR_FEASIBLE * settings.tol_feas {
                            return Ok(self.finish(b.it, SdpStatus::SlowProgress, iter));
                        }
                        return Err(SdpError::NumericalFailure("dual slack lost definiteness".into()));
                    }
                }
            }
            let m = self.schur(&it, &sinv);
            let kkt = self.factor(&m)?;

            let aff = self.direction(&it, &res, &sinv, &kkt, 0.0, None)?;
            let ap_aff = self.max_step_primal(&it, &aff).min(1.0);
            let ad_aff = self.max_step_dual(&it, &aff).min(1.0);
            let sigma = if n_cone == 0 || mu <= 0.0 {
                0.0
            } else {
                let mut xs = 0.0;
                for j in 0..self.psd_sizes.len() {
                    let xa = &it.x[j] + &aff.dx[j] * ap_aff;
                    let sa = &it.s[j] + &aff.ds[j] * ad_aff;
                    xs += xa.dot(&sa);
                }
                let xla = &it.xl + &aff.dxl * ap_aff;
                let sla = &it.sl + &aff.dsl * ad_aff;
                xs += xla.dot(&sla);
                let mu_aff = (xs / n_cone as f64).max(0.0);
                (mu_aff / mu).powi(3).clamp(0.0, 1.0)
            };
            let dir = self.direction(&it, &res, &sinv, &kkt, sigma * mu, Some(&aff))?;
            let tau = if iter < 2 { 0.9 } else { 0.98 };
            let ap = (tau * self.max_step_primal(&it, &dir)).min(1.0);
            let ad = (tau * self.max_step_dual(&it, &dir)).min(1.0);

            if ap < 1e-9 && ad < 1e-9 {
                stalls += 1;
                if stalls >= 3 {
                    return Ok(self.finish(it, SdpStatus::SlowProgress, iter));
                }
            } else {
                stalls = 0;
            }

            for j in 0..self.psd_sizes.len() {
                it.x[j] += &dir.dx[j] * ap;
                it.s[j] += &dir.ds[j] * ad;
                it.s[j] = (&it.s[j] + it.s[j].transpose()) * 0.5;
            }
            it.xl += &dir.dxl * ap;
            it.v += &dir.dv * ap;
            it.y += &dir.dy * ad;
            it.sl += &dir.dsl * ad;

            let finite = it.y.iter().all(|v| v.is_finite())
                && it.v.iter().all(|v| v.is_finite())
                && it.x.iter().all(|m| m.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(SdpError::NumericalFailure("non-finite iterate".into()));
            }
        }
        unreachable!("loop returns on the final iteration")
    }

    fn detect_infeasibility(&self, it: &Iterate, dobj: f64, pobj: f64, tol: f64) -> Option<SdpStatus> {
        if dobj > 0.0 {
            // Certificate of primal infeasibility: A^T y <= 0, A_f^T y = 0, b^T y > 0.
            let (aty, atyl, atyf) = self.apply_at(&it.y);
            let mut norm2 = atyf.norm_squared();
            for j in 0..self.psd_sizes.len() {
                norm2 += (&aty[j] + &it.s[j]).norm_squared();
            }
            norm2 += (&atyl + &it.sl).norm_squared();
            // Weakly feasible problems also produce diverging y; those are
            // left to the near-feasible fallback.
            let rp = &self.b - self.apply_a(&it.x, &it.xl, &it.v);
            let far = rp.amax() > NEAR_FEASIBLE * self.settings.tol_feas * (1.0 + self.b.amax());
            if norm2.sqrt() / dobj < tol && far {
                return Some(SdpStatus::Infeasible);
            }
        }
        if pobj < 0.0 {
            let ax = self.apply_a(&it.x, &it.xl, &it.v);
            if ax.norm() / (-pobj) < tol {
                return Some(SdpStatus::Unbounded);
            }
        }
        None
    }

    fn max_step_primal(&self, it: &Iterate, d: &Direction) -> f64 {
        let mut a = f64::INFINITY;
        for j in 0..self.psd_sizes.len() {
            a = a.min(max_psd_step(&it.x[j], &d.dx[j]));
        }
        a.min(max_lp_step(&it.xl, &d.dxl))
    }

    fn max_step_dual(&self, it: &Iterate, d: &Direction) -> f64 {
        let mut a = f64::INFINITY;
        for j in 0..self.psd_sizes.len() {
            a = a.min(max_psd_step(&it.s[j], &d.ds[j]));
        }
        a.min(max_lp_step(&it.sl, &d.dsl))
    }

    fn finish(&self, it: Iterate, status: SdpStatus, iterations: usize) -> SdpSolution {
        let g = self.obj_scale;
        let mut x = Vec::with_capacity(self.blocks.len());
        let mut s = Vec::with_capacity(self.blocks.len());
        for (bi, b) in self.blocks.iter().enumerate() {
            let j = self.slot[bi];
            match *b {
                Block::Psd(_) => {
                    let xm = &it.x[j];
                    x.push(BlockValue::Psd((xm + xm.transpose()) * 0.5));
                    s.push(BlockValue::Psd(&it.s[j] * g));
                }
                Block::Nonneg(k) => {
                    x.push(BlockValue::Nonneg(it.xl.rows(j, k).into_owned()));
                    s.push(BlockValue::Nonneg(it.sl.rows(j, k) * g));
                }
                Block::Free(k) => {
                    x.push(BlockValue::Free(it.v.rows(j, k).into_owned()));
                    s.push(BlockValue::Free(DVector::zeros(k)));
                }
            }
        }
        let y = DVector::from_fn(self.p, |i, _| g * self.row_scale[i] * it.y[i]);
        let (pobj, dobj) = self.objectives(&it);
        SdpSolution {
            x,
            y,
            s,
            status,
            primal_residual: 0.0,
            dual_residual: 0.0,
            duality_gap: 0.0,
            primal_objective: g * pobj,
            dual_objective: g * dobj,
            iterations,
            margin: None,
        }
    }
}

struct KktSystem {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    exact: DMatrix<f64>,
}

impl KktSystem {
    fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>, SdpError> {
        let mut z = self
            .lu
            .solve(rhs)
            .ok_or_else(|| SdpError::NumericalFailure("KKT solve failed".into()))?;
        for _ in 0..2 {
            let r = rhs - &self.exact * &z;
            if let Some(dz) = self.lu.solve(&r) {
                z += dz;
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::NumericalFailure("non-finite search direction".into()));
        }
        Ok(z)
    }
}

/// Largest `a` with `x + a dx` PSD, given `x` positive definite.
fn max_psd_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(chol) = x.clone().cholesky() else {
        return 0.0;
    };
    let l = chol.l();
    let Some(linv) = l.try_inverse() else {
        return 0.0;
    };
    let w = &linv * dx * linv.transpose();
    let w = (&w + w.transpose()) * 0.5;
    let lmin = SymmetricEigen::new(w).eigenvalues.min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn max_lp_step(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of a symmetric matrix (`+inf` for an empty one).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Projection onto the PSD cone (negative eigenvalues clipped to zero).
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_by_one(rhs: f64) -> SdpProblem {
        let mut p = SdpProblem::new(vec![Block::Psd(1)], ObjectiveSense::Minimize);
        p.objective.push(Entry::new(0, 0, 0, 1.0));
        p.add_constraint(vec![Entry::new(0, 0, 0, 1.0)], rhs);
        p
    }

    #[test]
    fn scalar_minimum() {
        let sol = solve(&one_by_one(1.0), &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.primal_objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn negative_scalar_is_infeasible() {
        let sol = solve(&one_by_one(-1.0), &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn rank_one_boundary_point() {
        let mut p = SdpProblem::new(vec![Block::Psd(2)], ObjectiveSense::Minimize);
        p.add_constraint(vec![Entry::new(0, 0, 0, 1.0)], 1.0);
        p.add_constraint(vec![Entry::new(0, 1, 1, 1.0)], 1.0);
        p.add_constraint(vec![Entry::new(0, 0, 1, 0.5)], 1.0);
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert!(matches!(sol.status, SdpStatus::Optimal | SdpStatus::SlowProgress));
        let x = sol.x[0].as_matrix().unwrap();
        assert!((x[(0, 1)] - 1.0).abs() < 1e-6);
        assert!(min_eigenvalue(x) > -1e-8);

        // Same set under margin maximization has no interior.
        p.sense = ObjectiveSense::Feasibility;
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        assert!(sol.margin.unwrap() <= 1e-6);
    }

    #[test]
    fn free_and_nonneg_blocks() {
        // minimize v s.t. v - x = 2, x >= 0  ->  v = 2
        let mut p = SdpProblem::new(vec![Block::Free(1), Block::Nonneg(1)], ObjectiveSense::Minimize);
        p.objective.push(Entry::scalar(0, 0, 1.0));
        p.add_constraint(vec![Entry::scalar(0, 0, 1.0), Entry::scalar(1, 0, -1.0)], 2.0);
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.primal_objective - 2.0).abs() < 1e-6, "{}", sol.primal_objective);
    }

    #[test]
    fn unbounded_lp() {
        // minimize -x s.t. x - y = 0, x,y >= 0
        let mut p = SdpProblem::new(vec![Block::Nonneg(2)], ObjectiveSense::Minimize);
        p.objective.push(Entry::scalar(0, 0, -1.0));
        p.add_constraint(vec![Entry::scalar(0, 0, 1.0), Entry::scalar(0, 1, -1.0)], 0.0);
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Unbounded);
    }

    #[test]
    fn malformed_entries_rejected() {
        let mut p = SdpProblem::new(vec![Block::Nonneg(2)], ObjectiveSense::Minimize);
        p.add_constraint(vec![Entry::new(0, 0, 1, 1.0)], 0.0);
        assert!(matches!(
            solve(&p, &SdpSettings::default()),
            Err(SdpError::Malformed(_))
        ));
        let mut p = SdpProblem::new(vec![Block::Psd(2)], ObjectiveSense::Minimize);
        p.add_constraint(vec![Entry::new(0, 2, 0, 1.0)], 0.0);
        assert!(p.validate().is_err());
    }

    #[test]
    fn empty_problem_is_optimal() {
        let p = SdpProblem::new(vec![], ObjectiveSense::Minimize);
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
    }

    #[test]
    fn residuals_of_zero_matrix() {
        let p = one_by_one(3.0);
        let sol = SdpSolution {
            x: vec![BlockValue::Psd(DMatrix::zeros(1, 1))],
            y: DVector::zeros(1),
            s: vec![BlockValue::Psd(DMatrix::zeros(1, 1))],
            status: SdpStatus::SlowProgress,
            primal_residual: 0.0,
            dual_residual: 0.0,
            duality_gap: 0.0,
            primal_objective: 0.0,
            dual_objective: 0.0,
            iterations: 0,
            margin: None,
        };
        assert_eq!(residuals(&p, &sol).primal, 3.0);
    }

    #[test]
    fn triplet_dump_lists_every_entry() {
        let p = one_by_one(1.0);
        let mut buf = Vec::new();
        p.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data, ["0 0 0 0 1e0", "1 0 0 0 1e0"]);
    }
}
