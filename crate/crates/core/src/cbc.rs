//! Control barrier certificate synthesis by bilinear alternation.
//!
//! A certificate `(B, u, sigma_safe, sigma_init, lambda1, lambda2)` satisfies
//!
//! ```text
//! -B + sigma_safe * s - eps1          in Sigma
//!  B - sigma_init * w                 in Sigma
//!  dB/dx (f + g u) + lambda1 B - eps2 in Sigma
//! -lambda2_i B + A_i u + b_i          in Sigma   (each row i)
//! ```
//!
//! The products `lambda1 * B` and `dB/dx * g u` are bilinear, so synthesis
//! alternates between a controller step (B fixed), a certificate step (u and
//! the multipliers fixed) and a multiplier refresh.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{monomial_basis, PolyError, Polynomial, PolynomialMatrix, PolynomialVector};
use crate::sdp::{self, Block, Entry, ObjectiveSense, SdpProblem, SdpSettings, SdpStatus};
use crate::sos::{
    check_sos_with, AffineExpr, DecisionPoly, Relation, Sense, SosCheck, SosError, SosProgram, SosWitness, MATCH_TOL,
};
use crate::verify::{safe_set_bbox, BoundingBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degrees {
    pub b: u32,
    pub u: u32,
    pub sigma_safe: u32,
    pub sigma_init: u32,
    pub sigma_cont: u32,
    pub sigma_enl: u32,
    pub sigma_cbf: u32,
    pub lambda1: u32,
    pub lambda2: u32,
}

impl Default for Degrees {
    fn default() -> Self {
        Degrees {
            b: 2,
            u: 1,
            sigma_safe: 2,
            sigma_init: 2,
            sigma_cont: 2,
            sigma_enl: 2,
            sigma_cbf: 2,
            lambda1: 2,
            lambda2: 0,
        }
    }
}

impl Degrees {
    /// Sets one degree by name (`b`, `u`, `sigma_safe`, ...).
    pub fn set(&mut self, key: &str, value: u32) -> Result<(), CbcError> {
        let slot = match key {
            "b" | "B" => &mut self.b,
            "u" => &mut self.u,
            "sigma_safe" => &mut self.sigma_safe,
            "sigma_init" => &mut self.sigma_init,
            "sigma_cont" => &mut self.sigma_cont,
            "sigma_enl" => &mut self.sigma_enl,
            "sigma_cbf" => &mut self.sigma_cbf,
            "lambda1" => &mut self.lambda1,
            "lambda2" => &mut self.lambda2,
            _ => return Err(CbcError::InvalidProblem(format!("unknown degree key `{key}`"))),
        };
        *slot = value;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epsilons {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
}

impl Default for Epsilons {
    fn default() -> Self {
        Epsilons {
            e1: 1e-3,
            e2: 1e-3,
            e3: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Cbc,
    Cbf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    InitController,
    InitCbc,
    Controller,
    Certificate,
    Multipliers,
    Certify,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CbcError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("input set is unbounded along u{}", .0 + 1)]
    UnboundedInputSet(usize),
    #[error("{stage:?} program infeasible ({status}); increase the polynomial degrees or try another seed for a different initialization objective")]
    Infeasible { stage: Stage, status: String },
    #[error("initialization failed: {0}")]
    InitializationFailed(String),
    #[error("certificate condition {0} failed the SOS check")]
    CertificateRejected(String),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Control-affine system with semi-algebraic safe and initial sets and a
/// polytopic input set `{u | A u + b >= 0}`.
#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub n: usize,
    pub m: usize,
    pub f: PolynomialVector,
    pub g: PolynomialMatrix,
    pub s: Polynomial,
    pub w: Polynomial,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub degrees: Degrees,
    pub epsilons: Epsilons,
}

impl SynthesisProblem {
    /// Validates dimensions and checks that the input polytope is bounded.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        f: PolynomialVector,
        g: PolynomialMatrix,
        s: Polynomial,
        w: Polynomial,
        a: DMatrix<f64>,
        b: DVector<f64>,
        degrees: Degrees,
        epsilons: Epsilons,
    ) -> Result<Self, CbcError> {
        let n = s.n_vars();
        let m = g.cols();
        let bad = |msg: String| Err(CbcError::InvalidProblem(msg));
        if f.len() != n || f.iter().any(|p| p.n_vars() != n) {
            return bad(format!("f must have {n} entries in {n} variables"));
        }
        if m > 0 && g.rows() != n {
            return bad(format!("g must have {n} rows, got {}", g.rows()));
        }
        if m > 0 && g.get(0, 0).n_vars() != n {
            return bad("g uses a different number of variables".into());
        }
        if w.n_vars() != n {
            return bad("initial set polynomial has wrong arity".into());
        }
        if s.is_constant() || w.is_constant() {
            return bad("safe and initial set polynomials must be nonconstant".into());
        }
        if a.ncols() != m || a.nrows() != b.len() {
            return bad(format!(
                "input constraints must be h x {m} with h-vector, got {}x{} and {}",
                a.nrows(),
                a.ncols(),
                b.len()
            ));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return bad("non-finite input constraint data".into());
        }
        let problem = SynthesisProblem {
            n,
            m,
            f,
            g,
            s,
            w,
            a,
            b,
            degrees,
            epsilons,
        };
        for j in 0..m {
            for dir in [1.0, -1.0] {
                if input_extent(&problem.a, &problem.b, j, dir) == Extent::Unbounded {
                    return Err(CbcError::UnboundedInputSet(j));
                }
            }
        }
        Ok(problem)
    }

    pub fn n_input_constraints(&self) -> usize {
        self.b.len()
    }

    /// `A u + b` at a concrete input.
    pub fn input_slack(&self, u: &[f64]) -> Vec<f64> {
        (0..self.b.len())
            .map(|i| (0..self.m).map(|j| self.a[(i, j)] * u[j]).sum::<f64>() + self.b[i])
            .collect()
    }

    /// `f(x) + g(x) u`.
    pub fn vector_field(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut dx = self.f.eval(x);
        if self.m > 0 {
            let g = self.g.eval(x);
            for (i, d) in dx.iter_mut().enumerate() {
                for j in 0..self.m {
                    *d += g[i * self.m + j] * u[j];
                }
            }
        }
        dx
    }

    /// Column `j` of `dB/dx * g` as a polynomial.
    fn grad_dot_g(&self, grad: &PolynomialVector, j: usize) -> Polynomial {
        let mut out = Polynomial::zero(self.n);
        for i in 0..self.n {
            out = &out + &(&grad[i] * self.g.get(i, j));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Extent {
    Bounded,
    Unbounded,
    Empty,
}

/// LP `max dir * u_j s.t. A u + b >= 0`.
fn input_extent(a: &DMatrix<f64>, b: &DVector<f64>, j: usize, dir: f64) -> Extent {
    let (h, m) = a.shape();
    let mut blocks = vec![Block::Free(m)];
    if h > 0 {
        blocks.push(Block::Nonneg(h));
    }
    let mut lp = SdpProblem::new(blocks, ObjectiveSense::Minimize);
    lp.objective.push(Entry::scalar(0, j, -dir));
    for i in 0..h {
        let mut entries: Vec<Entry> = (0..m)
            .filter(|&k| a[(i, k)] != 0.0)
            .map(|k| Entry::scalar(0, k, a[(i, k)]))
            .collect();
        entries.push(Entry::scalar(1, i, -1.0));
        lp.add_constraint(entries, -b[i]);
    }
    match sdp::solve(&lp, &SdpSettings::default()) {
        Ok(sol) => match sol.status {
            SdpStatus::Unbounded => Extent::Unbounded,
            SdpStatus::Infeasible => Extent::Empty,
            _ => Extent::Bounded,
        },
        // A stalled LP along a free direction signals an unbounded ray.
        Err(_) => Extent::Unbounded,
    }
}

/// `u0 = numerator / denominator` from the initialization program.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalController {
    pub numerator: PolynomialVector,
    pub denominator: Polynomial,
}

impl RationalController {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let d = self.denominator.eval(x);
        self.numerator.iter().map(|p| p.eval(x) / d).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub b: Polynomial,
    pub u: PolynomialVector,
    pub sigma_safe: Polynomial,
    pub sigma_init: Polynomial,
    /// Effective multiplier in the derivative condition; `alpha - sigma_cbf`
    /// in CBF mode.
    pub lambda1: Polynomial,
    pub lambda2: PolynomialVector,
    pub sigma_enl: Option<Polynomial>,
    pub sigma_cbf: Option<Polynomial>,
    pub mode: Mode,
    pub alpha: Option<f64>,
    /// `(condition name, Gram witness)` for each verified condition.
    pub witnesses: Vec<(String, SosWitness)>,
}

impl Certificate {
    /// Polynomials that must be SOS for the certificate to hold, named
    /// `safe`, `init`, `derivative`, `input_i`.
    pub fn conditions(&self, problem: &SynthesisProblem) -> Result<Vec<(String, Polynomial)>, CbcError> {
        let eps = problem.epsilons;
        let n = problem.n;
        let mut out = Vec::new();
        out.push((
            "safe".to_string(),
            &(&(-&self.b) + &(&self.sigma_safe * &problem.s)) - &Polynomial::constant(n, eps.e1),
        ));
        out.push(("init".to_string(), &self.b - &(&self.sigma_init * &problem.w)));
        let lie = crate::poly::lie_derivative(&self.b, &problem.f, &problem.g, &self.u)?;
        out.push((
            "derivative".to_string(),
            &(&lie + &(&self.lambda1 * &self.b)) - &Polynomial::constant(n, eps.e2),
        ));
        for i in 0..problem.n_input_constraints() {
            let mut p = -(&self.lambda2[i] * &self.b);
            for j in 0..problem.m {
                p = &p + &self.u[j].scale(problem.a[(i, j)]);
            }
            p = &p + &Polynomial::constant(n, problem.b[i]);
            out.push((format!("input_{}", i + 1), p));
        }
        Ok(out)
    }
}

/// Runs `check_sos` on every condition; returns the witnesses on success.
pub fn certify(problem: &SynthesisProblem, cert: &Certificate) -> Result<Vec<(String, SosWitness)>, CbcError> {
    certify_with(problem, cert, &SdpSettings::default())
}

fn certify_with(
    problem: &SynthesisProblem,
    cert: &Certificate,
    settings: &SdpSettings,
) -> Result<Vec<(String, SosWitness)>, CbcError> {
    let mut out = Vec::new();
    for (name, p) in cert.conditions(problem)? {
        match check_sos_with(&p, MATCH_TOL, settings) {
            SosCheck::Sos(w) => out.push((name, w)),
            SosCheck::NotSos => return Err(CbcError::CertificateRejected(name)),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMethod {
    /// Initialization programs with a zero objective.
    Direct,
    /// Initialization programs with the given randomized objective attempt.
    RandomObjective(usize),
    /// `B0 = w`, the initial-set polynomial.
    InitialSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxIterations,
    Converged,
    ControllerInfeasible,
    CertificateInfeasible,
    CertificationFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub b: Polynomial,
    pub u: PolynomialVector,
    pub lambda1: Polynomial,
    pub lambda2: PolynomialVector,
    pub area: f64,
    pub alpha: Option<f64>,
    pub controller_status: SdpStatus,
    pub cbc_status: SdpStatus,
    /// `None` when the multiplier refresh failed and the controller-step
    /// multipliers were kept.
    pub multiplier_status: Option<SdpStatus>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub init: InitMethod,
    pub b0: Polynomial,
    pub area0: f64,
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub max_iterations: usize,
    /// Relative area growth below which the alternation stops.
    pub growth_tol: f64,
    pub seed: u64,
    /// Randomized-objective initialization attempts before falling back to `B0 = w`.
    pub init_retries: usize,
    pub mode: Mode,
    pub sdp: SdpSettings,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            max_iterations: 20,
            growth_tol: 0.01,
            seed: 0,
            init_retries: 3,
            mode: Mode::Cbc,
            sdp: SdpSettings::default(),
        }
    }
}

/// Shape of the multiplier `lambda1` in the derivative condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaForm {
    /// Free polynomial.
    Free,
    /// `alpha - sigma_cbf` with `alpha >= 0` maximized (or fixed) and
    /// `trace(sigma_cbf) <= 1`.
    Cbf { fixed_alpha: Option<f64> },
}

impl From<Mode> for LambdaForm {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Cbc => LambdaForm::Free,
            Mode::Cbf => LambdaForm::Cbf { fixed_alpha: None },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerStep {
    pub u: PolynomialVector,
    pub lambda1: Polynomial,
    pub lambda2: PolynomialVector,
    pub alpha: Option<f64>,
    pub sigma_cbf: Option<Polynomial>,
    pub status: SdpStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbcStep {
    pub b: Polynomial,
    pub sigma_safe: Polynomial,
    pub sigma_init: Polynomial,
    pub sigma_enl: Option<Polynomial>,
    pub status: SdpStatus,
}

fn infeasible(stage: Stage, status: SdpStatus) -> CbcError {
    CbcError::Infeasible {
        stage,
        status: format!("{status:?}"),
    }
}

fn solve_program(prog: &SosProgram, stage: Stage, settings: &SdpSettings) -> Result<crate::sos::SosSolution, CbcError> {
    match prog.solve(settings) {
        Ok(sol) if sol.is_usable() => Ok(sol),
        Ok(sol) => Err(infeasible(stage, sol.status)),
        Err(SosError::Sdp(e)) => Err(CbcError::Infeasible {
            stage,
            status: e.to_string(),
        }),
        Err(e) => Err(e.into()),
    }
}

fn constant(n: usize, c: f64) -> Polynomial {
    Polynomial::constant(n, c)
}

/// Initialization controller: numerator `k` and `sigma_cont` with
/// `A k + b sigma_cont` and `sigma_cont - eps3` SOS, so `u0 = k / sigma_cont`
/// is admissible everywhere. `objective` weights the numerator coefficients
/// (with `trace(sigma_cont) = 1` as normalization).
pub fn init_controller(
    problem: &SynthesisProblem,
    objective: Option<&[f64]>,
    settings: &SdpSettings,
) -> Result<RationalController, CbcError> {
    let n = problem.n;
    let d = problem.degrees;
    let mut prog = SosProgram::new(n);
    let k: Vec<DecisionPoly> = (0..problem.m).map(|_| prog.free_poly(d.u)).collect();
    let sc = prog.sos_poly(d.sigma_cont);
    for i in 0..problem.n_input_constraints() {
        let mut e = prog.expr(sc).scale(problem.b[i]);
        for (j, kj) in k.iter().enumerate() {
            e = e.try_add(&prog.expr(*kj).scale(problem.a[(i, j)]))?;
        }
        prog.add_sos_constraint(e)?;
    }
    prog.add_sos_constraint(prog.expr(sc).sub_poly(&constant(n, problem.epsilons.e3))?)?;
    if let Some(weights) = objective {
        let mut obj = AffineExpr::zero(n);
        let mut w = weights.iter().cycle();
        for kj in &k {
            for idx in 0..prog.basis(*kj).len() {
                obj = obj.try_add(&prog.coefficient(*kj, idx).scale(*w.next().unwrap_or(&0.0)))?;
            }
        }
        prog.set_objective(obj, Sense::Minimize)?;
        prog.add_linear_constraint(prog.gram_trace(sc).sub_poly(&constant(n, 1.0))?, Relation::Eq)?;
    }
    let sol = solve_program(&prog, Stage::InitController, settings)?;
    let numerator = k
        .iter()
        .map(|kj| prog.extract(&sol, *kj))
        .collect::<Result<Vec<_>, _>>()?;
    let ctrl = RationalController {
        numerator: PolynomialVector::new(numerator)?,
        denominator: prog.extract(&sol, sc)?,
    };
    // Admissibility of u0 on a sampled box.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..=3.0)).collect();
        let u = ctrl.eval(&x);
        if problem.input_slack(&u).iter().any(|v| *v < -1e-8) {
            return Err(CbcError::Infeasible {
                stage: Stage::InitController,
                status: "initial controller violates the input set at a sample".into(),
            });
        }
    }
    Ok(ctrl)
}

/// Initial certificate for the rational controller `u0`: conditions on the
/// safe and initial sets plus
/// `sigma_cont * dB/dx (f + g u0) + lambda1_0 B - eps2 in Sigma` with `lambda1_0 = 1`.
pub fn init_cbc(
    problem: &SynthesisProblem,
    u0: &RationalController,
    settings: &SdpSettings,
) -> Result<CbcStep, CbcError> {
    let n = problem.n;
    let d = problem.degrees;
    let mut prog = SosProgram::new(n);
    let bv = prog.free_poly(d.b);
    let ss = prog.sos_poly(d.sigma_safe);
    let si = prog.sos_poly(d.sigma_init);
    add_set_conditions(&mut prog, problem, bv, ss, si)?;
    let sc = &u0.denominator;
    let k = &u0.numerator;
    let weak = prog.expr(bv).map_linear(|p| {
        let grad = p.gradient();
        let mut out = &grad.dot(&problem.f)? * sc;
        for j in 0..problem.m {
            out = &out + &(&problem.grad_dot_g(&grad, j) * &k[j]);
        }
        Ok(&out + p)
    })?;
    prog.add_sos_constraint(weak.sub_poly(&constant(n, problem.epsilons.e2))?)?;
    let sol = solve_program(&prog, Stage::InitCbc, settings)?;
    Ok(CbcStep {
        b: prog.extract(&sol, bv)?,
        sigma_safe: prog.extract(&sol, ss)?,
        sigma_init: prog.extract(&sol, si)?,
        sigma_enl: None,
        status: sol.status,
    })
}

fn add_set_conditions(
    prog: &mut SosProgram,
    problem: &SynthesisProblem,
    bv: DecisionPoly,
    ss: DecisionPoly,
    si: DecisionPoly,
) -> Result<(), CbcError> {
    let n = problem.n;
    let safe = prog
        .expr(ss)
        .mul_poly(&problem.s)?
        .try_sub(&prog.expr(bv))?
        .sub_poly(&constant(n, problem.epsilons.e1))?;
    prog.add_sos_constraint(safe)?;
    let init = prog.expr(bv).try_sub(&prog.expr(si).mul_poly(&problem.w)?)?;
    prog.add_sos_constraint(init)?;
    Ok(())
}

/// Controller step: with `B` fixed, finds `u`, `lambda1`, `lambda2` meeting
/// the derivative and input conditions.
pub fn update_controller(
    problem: &SynthesisProblem,
    b_prev: &Polynomial,
    form: LambdaForm,
    settings: &SdpSettings,
) -> Result<ControllerStep, CbcError> {
    let n = problem.n;
    let d = problem.degrees;
    let mut prog = SosProgram::new(n);
    let u: Vec<DecisionPoly> = (0..problem.m).map(|_| prog.free_poly(d.u)).collect();
    let lambda = LambdaVars::declare(&mut prog, problem, form)?;
    let l2: Vec<DecisionPoly> = (0..problem.n_input_constraints())
        .map(|_| prog.free_poly(d.lambda2))
        .collect();

    let grad = b_prev.gradient();
    let mut deriv = AffineExpr::constant(grad.dot(&problem.f)?);
    for (j, uj) in u.iter().enumerate() {
        deriv = deriv.try_add(&prog.expr(*uj).mul_poly(&problem.grad_dot_g(&grad, j))?)?;
    }
    deriv = deriv
        .try_add(&lambda.expr(&prog).mul_poly(b_prev)?)?
        .sub_poly(&constant(n, problem.epsilons.e2))?;
    prog.add_sos_constraint(deriv)?;
    for (i, l2i) in l2.iter().enumerate() {
        let mut e = prog.expr(*l2i).mul_poly(b_prev)?.scale(-1.0);
        for (j, uj) in u.iter().enumerate() {
            e = e.try_add(&prog.expr(*uj).scale(problem.a[(i, j)]))?;
        }
        prog.add_sos_constraint(e.add_poly(&constant(n, problem.b[i]))?)?;
    }
    let sol = solve_program(&prog, Stage::Controller, settings)?;
    let u = u
        .iter()
        .map(|v| prog.extract(&sol, *v))
        .collect::<Result<Vec<_>, _>>()?;
    let lambda2 = l2
        .iter()
        .map(|v| prog.extract(&sol, *v))
        .collect::<Result<Vec<_>, _>>()?;
    let (lambda1, alpha, sigma_cbf) = lambda.extract(&prog, &sol)?;
    Ok(ControllerStep {
        u: PolynomialVector::new(u)?,
        lambda1,
        lambda2: PolynomialVector::new(lambda2)?,
        alpha,
        sigma_cbf,
        status: sol.status,
    })
}

/// Decision variables of `lambda1` in either form.
enum LambdaVars {
    Free(DecisionPoly),
    Cbf {
        alpha: Option<DecisionPoly>,
        fixed: f64,
        sigma: DecisionPoly,
    },
}

impl LambdaVars {
    fn declare(prog: &mut SosProgram, problem: &SynthesisProblem, form: LambdaForm) -> Result<Self, CbcError> {
        let d = problem.degrees;
        let n = problem.n;
        Ok(match form {
            LambdaForm::Free => LambdaVars::Free(prog.free_poly(d.lambda1)),
            LambdaForm::Cbf { fixed_alpha } => {
                let sigma = prog.sos_poly(d.sigma_cbf);
                prog.add_linear_constraint(
                    prog.gram_trace(sigma).scale(-1.0).add_poly(&constant(n, 1.0))?,
                    Relation::Ge,
                )?;
                let alpha = match fixed_alpha {
                    Some(_) => None,
                    None => {
                        let a = prog.scalar();
                        prog.add_linear_constraint(prog.expr(a), Relation::Ge)?;
                        prog.set_objective(prog.expr(a), Sense::Maximize)?;
                        Some(a)
                    }
                };
                LambdaVars::Cbf {
                    alpha,
                    fixed: fixed_alpha.unwrap_or(0.0),
                    sigma,
                }
            }
        })
    }

    fn expr(&self, prog: &SosProgram) -> AffineExpr {
        match self {
            LambdaVars::Free(v) => prog.expr(*v),
            LambdaVars::Cbf { alpha, fixed, sigma } => {
                let n = prog.n_vars();
                let base = match alpha {
                    Some(a) => prog.expr(*a),
                    None => AffineExpr::constant(constant(n, *fixed)),
                };
                base.try_sub(&prog.expr(*sigma)).expect("same arity")
            }
        }
    }

    fn extract(
        &self,
        prog: &SosProgram,
        sol: &crate::sos::SosSolution,
    ) -> Result<(Polynomial, Option<f64>, Option<Polynomial>), CbcError> {
        let l1 = prog.evaluate(sol, &self.expr(prog))?;
        Ok(match self {
            LambdaVars::Free(_) => (l1, None, None),
            LambdaVars::Cbf { alpha, fixed, sigma } => {
                let a = match alpha {
                    Some(a) => prog.extract(sol, *a)?.coeff(&crate::poly::Monomial::one(prog.n_vars())),
                    None => *fixed,
                };
                (l1, Some(a), Some(prog.extract(sol, *sigma)?))
            }
        })
    }
}

/// Certificate step: with `u`, `lambda1`, `lambda2` fixed, finds `B` and the
/// set multipliers, requiring `B - sigma_enl * B_prev in Sigma` when `b_prev`
/// is given so that `{B_prev >= 0}` is contained in `{B >= 0}`.
pub fn update_cbc(
    problem: &SynthesisProblem,
    u: &PolynomialVector,
    lambda1: &Polynomial,
    lambda2: &PolynomialVector,
    b_prev: Option<&Polynomial>,
    settings: &SdpSettings,
) -> Result<CbcStep, CbcError> {
    let n = problem.n;
    let d = problem.degrees;
    let mut prog = SosProgram::new(n);
    let bv = prog.free_poly(d.b);
    let ss = prog.sos_poly(d.sigma_safe);
    let si = prog.sos_poly(d.sigma_init);
    add_set_conditions(&mut prog, problem, bv, ss, si)?;

    let deriv = prog.expr(bv).map_linear(|p| {
        let lie = crate::poly::lie_derivative(p, &problem.f, &problem.g, u)?;
        Ok(&lie + &(lambda1 * p))
    })?;
    prog.add_sos_constraint(deriv.sub_poly(&constant(n, problem.epsilons.e2))?)?;
    for i in 0..problem.n_input_constraints() {
        let mut slack = constant(n, problem.b[i]);
        for j in 0..problem.m {
            slack = &slack + &u[j].scale(problem.a[(i, j)]);
        }
        let e = prog.expr(bv).mul_poly(&lambda2[i])?.scale(-1.0).add_poly(&slack)?;
        prog.add_sos_constraint(e)?;
    }
    let se = match b_prev {
        Some(bp) => {
            let se = prog.sos_poly(d.sigma_enl);
            let e = prog.expr(bv).try_sub(&prog.expr(se).mul_poly(bp)?)?;
            prog.add_sos_constraint(e)?;
            Some(se)
        }
        None => None,
    };
    let sol = solve_program(&prog, Stage::Certificate, settings)?;
    Ok(CbcStep {
        b: prog.extract(&sol, bv)?,
        sigma_safe: prog.extract(&sol, ss)?,
        sigma_init: prog.extract(&sol, si)?,
        sigma_enl: se.map(|v| prog.extract(&sol, v)).transpose()?,
        status: sol.status,
    })
}

/// Multiplier refresh: the controller program with `u` fixed as well.
pub fn update_multipliers(
    problem: &SynthesisProblem,
    b: &Polynomial,
    u: &PolynomialVector,
    form: LambdaForm,
    settings: &SdpSettings,
) -> Result<ControllerStep, CbcError> {
    let n = problem.n;
    let d = problem.degrees;
    let mut prog = SosProgram::new(n);
    let lambda = LambdaVars::declare(&mut prog, problem, form)?;
    let l2: Vec<DecisionPoly> = (0..problem.n_input_constraints())
        .map(|_| prog.free_poly(d.lambda2))
        .collect();
    let lie = crate::poly::lie_derivative(b, &problem.f, &problem.g, u)?;
    let deriv = lambda
        .expr(&prog)
        .mul_poly(b)?
        .add_poly(&lie)?
        .sub_poly(&constant(n, problem.epsilons.e2))?;
    prog.add_sos_constraint(deriv)?;
    for (i, l2i) in l2.iter().enumerate() {
        let mut slack = constant(n, problem.b[i]);
        for j in 0..problem.m {
            slack = &slack + &u[j].scale(problem.a[(i, j)]);
        }
        prog.add_sos_constraint(prog.expr(*l2i).mul_poly(b)?.scale(-1.0).add_poly(&slack)?)?;
    }
    let sol = solve_program(&prog, Stage::Multipliers, settings)?;
    let lambda2 = l2
        .iter()
        .map(|v| prog.extract(&sol, *v))
        .collect::<Result<Vec<_>, _>>()?;
    let (lambda1, alpha, sigma_cbf) = lambda.extract(&prog, &sol)?;
    Ok(ControllerStep {
        u: u.clone(),
        lambda1,
        lambda2: PolynomialVector::new(lambda2)?,
        alpha,
        sigma_cbf,
        status: sol.status,
    })
}

/// Searches all multipliers for a given `(B, u)` and certifies the result.
/// Used for certificates that only carry the barrier and the controller.
pub fn complete_certificate(
    problem: &SynthesisProblem,
    b: &Polynomial,
    u: &PolynomialVector,
    mode: Mode,
    settings: &SdpSettings,
) -> Result<Certificate, CbcError> {
    let n = problem.n;
    let d = problem.degrees;
    let mut prog = SosProgram::new(n);
    let ss = prog.sos_poly(d.sigma_safe);
    let si = prog.sos_poly(d.sigma_init);
    let safe = prog
        .expr(ss)
        .mul_poly(&problem.s)?
        .sub_poly(b)?
        .sub_poly(&constant(n, problem.epsilons.e1))?;
    prog.add_sos_constraint(safe)?;
    prog.add_sos_constraint(prog.expr(si).mul_poly(&problem.w)?.scale(-1.0).add_poly(b)?)?;
    let sol = solve_program(&prog, Stage::Certify, settings)?;
    let mults = update_multipliers(problem, b, u, LambdaForm::from(mode), settings)?;
    let mut cert = Certificate {
        b: b.clone(),
        u: u.clone(),
        sigma_safe: prog.extract(&sol, ss)?,
        sigma_init: prog.extract(&sol, si)?,
        lambda1: mults.lambda1,
        lambda2: mults.lambda2,
        sigma_enl: None,
        sigma_cbf: mults.sigma_cbf,
        mode,
        alpha: mults.alpha,
        witnesses: Vec::new(),
    };
    cert.witnesses = certify_with(problem, &cert, settings)?;
    Ok(cert)
}

/// Fraction of a grid (200 per axis in 2D) over `bbox` where `B >= 0`.
pub fn area_proxy(b: &Polynomial, bbox: &BoundingBox) -> f64 {
    const N: usize = 200;
    let n = bbox.dim();
    match n {
        1 | 2 => {
            let pts = bbox.grid(N);
            pts.iter().filter(|x| b.eval(x) >= 0.0).count() as f64 / pts.len() as f64
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0xa4ea);
            let total = N * N;
            (0..total).filter(|_| b.eval(&bbox.sample(&mut rng)) >= 0.0).count() as f64 / total as f64
        }
    }
}

/// Initial certificate candidate `B0`.
pub fn initialize(problem: &SynthesisProblem, options: &SynthesisOptions) -> (Polynomial, InitMethod) {
    let settings = &options.sdp;
    let attempt = |objective: Option<&[f64]>| -> Option<Polynomial> {
        let u0 = init_controller(problem, objective, settings).ok()?;
        init_cbc(problem, &u0, settings).ok().map(|s| s.b)
    };
    if let Some(b) = attempt(None) {
        return (b, InitMethod::Direct);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let n_coeffs = problem.m * monomial_basis(problem.n, problem.degrees.u).len();
    for k in 0..options.init_retries {
        let weights: Vec<f64> = (0..n_coeffs.max(1)).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if let Some(b) = attempt(Some(&weights)) {
            return (b, InitMethod::RandomObjective(k + 1));
        }
    }
    (problem.w.clone(), InitMethod::InitialSet)
}

/// Full alternation. Infeasible update steps end the loop and the last
/// certified tuple is returned.
pub fn synthesize(
    problem: &SynthesisProblem,
    options: &SynthesisOptions,
) -> Result<(Certificate, IterationTrace), CbcError> {
    let bbox = safe_set_bbox(&problem.s).map_err(|e| CbcError::InvalidProblem(format!("safe set: {e}")))?;
    let (mut b0, mut init) = initialize(problem, options);
    let form = LambdaForm::from(options.mode);
    if init != InitMethod::InitialSet && update_controller(problem, &b0, form, &options.sdp).is_err() {
        b0 = problem.w.clone();
        init = InitMethod::InitialSet;
    }
    let area0 = area_proxy(&b0, &bbox);
    let mut trace = IterationTrace {
        init,
        b0: b0.clone(),
        area0,
        records: Vec::new(),
        stop: StopReason::MaxIterations,
    };
    let mut best: Option<Certificate> = None;
    let mut b_prev = b0;
    let mut area_prev = area0;
    let mut first_error = None;

    for k in 1..=options.max_iterations {
        let ctrl = match update_controller(problem, &b_prev, form, &options.sdp) {
            Ok(c) => c,
            Err(e) => {
                trace.stop = StopReason::ControllerInfeasible;
                first_error.get_or_insert(e);
                break;
            }
        };
        let step = match update_cbc(
            problem,
            &ctrl.u,
            &ctrl.lambda1,
            &ctrl.lambda2,
            Some(&b_prev),
            &options.sdp,
        ) {
            Ok(s) => s,
            Err(e) => {
                trace.stop = StopReason::CertificateInfeasible;
                first_error.get_or_insert(e);
                break;
            }
        };
        let refreshed = update_multipliers(problem, &step.b, &ctrl.u, form, &options.sdp).ok();
        let mults = refreshed.clone().unwrap_or_else(|| ctrl.clone());
        let mut cert = Certificate {
            b: step.b.clone(),
            u: ctrl.u.clone(),
            sigma_safe: step.sigma_safe.clone(),
            sigma_init: step.sigma_init.clone(),
            lambda1: mults.lambda1.clone(),
            lambda2: mults.lambda2.clone(),
            sigma_enl: step.sigma_enl.clone(),
            sigma_cbf: mults.sigma_cbf.clone(),
            mode: options.mode,
            alpha: mults.alpha,
            witnesses: Vec::new(),
        };
        cert.witnesses = match certify_with(problem, &cert, &options.sdp) {
            Ok(w) => w,
            Err(_) if refreshed.is_some() => {
                // Fall back to the multipliers the certificate step was solved with.
                cert.lambda1 = ctrl.lambda1.clone();
                cert.lambda2 = ctrl.lambda2.clone();
                cert.sigma_cbf = ctrl.sigma_cbf.clone();
                cert.alpha = ctrl.alpha;
                match certify_with(problem, &cert, &options.sdp) {
                    Ok(w) => w,
                    Err(e) => {
                        trace.stop = StopReason::CertificationFailed;
                        first_error.get_or_insert(e);
                        break;
                    }
                }
            }
            Err(e) => {
                trace.stop = StopReason::CertificationFailed;
                first_error.get_or_insert(e);
                break;
            }
        };
        let area = area_proxy(&step.b, &bbox);
        trace.records.push(IterationRecord {
            iteration: k,
            b: step.b.clone(),
            u: ctrl.u.clone(),
            lambda1: cert.lambda1.clone(),
            lambda2: cert.lambda2.clone(),
            area,
            alpha: cert.alpha,
            controller_status: ctrl.status,
            cbc_status: step.status,
            multiplier_status: refreshed.map(|r| r.status),
        });
        best = Some(cert);
        let growth = (area - area_prev) / area_prev.max(1e-12);
        b_prev = step.b;
        area_prev = area;
        if k > 1 && growth < options.growth_tol {
            trace.stop = StopReason::Converged;
            break;
        }
    }
    match best {
        Some(cert) => Ok((cert, trace)),
        None => Err(match first_error {
            Some(e) => CbcError::InitializationFailed(e.to_string()),
            None => CbcError::InitializationFailed("no iterations run".into()),
        }),
    }
}

/// Synthesis with the class-K style derivative condition, maximizing `alpha`.
pub fn synthesize_cbf(
    problem: &SynthesisProblem,
    options: &SynthesisOptions,
) -> Result<(Certificate, IterationTrace), CbcError> {
    let options = SynthesisOptions {
        mode: Mode::Cbf,
        ..options.clone()
    };
    synthesize(problem, &options)
}

/// Outcome of [`check_inclusion`].
#[derive(Debug, Clone, PartialEq)]
pub enum Inclusion {
    /// `B_outer - sigma * B_inner` is SOS for the returned `sigma`.
    Certified {
        sigma: Polynomial,
        witness: SosWitness,
    },
    Unknown,
}

impl Inclusion {
    pub fn is_certified(&self) -> bool {
        matches!(self, Inclusion::Certified { .. })
    }
}

/// Searches for SOS `sigma` of the given degree with `B_outer - sigma B_inner`
/// SOS, certifying `{B_inner >= 0}` inside `{B_outer >= 0}`.
pub fn check_inclusion(outer: &Polynomial, inner: &Polynomial, sigma_degree: u32) -> Inclusion {
    check_inclusion_with(outer, inner, sigma_degree, &SdpSettings::default())
}

pub fn check_inclusion_with(
    outer: &Polynomial,
    inner: &Polynomial,
    sigma_degree: u32,
    settings: &SdpSettings,
) -> Inclusion {
    if outer.n_vars() != inner.n_vars() {
        return Inclusion::Unknown;
    }
    let mut prog = SosProgram::new(outer.n_vars());
    let sg = prog.sos_poly(sigma_degree);
    let Ok(e) = prog
        .expr(sg)
        .mul_poly(inner)
        .map(|e| e.scale(-1.0))
        .and_then(|e| e.add_poly(outer))
    else {
        return Inclusion::Unknown;
    };
    if prog.add_sos_constraint(e).is_err() {
        return Inclusion::Unknown;
    }
    let Ok(sol) = prog.solve(settings) else {
        return Inclusion::Unknown;
    };
    let Ok(sigma) = prog.extract(&sol, sg) else {
        return Inclusion::Unknown;
    };
    match check_sos_with(&(outer - &(&sigma * inner)), MATCH_TOL, settings) {
        SosCheck::Sos(witness) => Inclusion::Certified { sigma, witness },
        SosCheck::NotSos => Inclusion::Unknown,
    }
}
