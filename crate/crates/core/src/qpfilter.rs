//! Minimum-intervention safety filter: the admissible input closest to a
//! nominal input, subject to the barrier derivative condition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbc::{Certificate, SynthesisProblem};
use crate::poly::{Polynomial, PolynomialMatrix, PolynomialVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("quadratic program is infeasible")]
    InfeasibleQp,
    #[error("active-set iteration did not terminate (degenerate constraints)")]
    Degenerate,
    #[error("invalid QP data: {0}")]
    Invalid(String),
    #[error("no admissible safe input at state {0:?}")]
    InfeasibleAtState(Vec<f64>),
}

/// Feasibility tolerance on `G u <= h`.
const QP_TOL: f64 = 1e-12;

/// Minimizes `0.5 u^T Q u + c^T u` subject to `G u <= h` with the dual
/// active-set method of Goldfarb and Idnani. `Q` must be positive definite.
pub fn solve_qp(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
) -> Result<DVector<f64>, QpError> {
    let m = q.nrows();
    if q.ncols() != m || c.len() != m || g.ncols() != m || g.nrows() != h.len() {
        return Err(QpError::Invalid("dimension mismatch".into()));
    }
    let qinv = q
        .clone()
        .cholesky()
        .ok_or_else(|| QpError::Invalid("Q is not positive definite".into()))?
        .inverse();
    let k = g.nrows();
    // Constraints in the form n_i^T u >= b_i.
    let normal = |i: usize| -> DVector<f64> { -g.row(i).transpose() };
    let rhs = |i: usize| -> f64 { -h[i] };
    let scale: Vec<f64> = (0..k).map(|i| 1.0 + g.row(i).norm() + h[i].abs()).collect();

    let mut x = -(&qinv * c);
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let max_iter = 50 * (k + 1);
    let mut iter = 0;

    loop {
        // Most violated constraint.
        let mut p = None;
        let mut worst = -QP_TOL;
        for i in (0..k).filter(|i| !active.contains(i)) {
            let s = (normal(i).dot(&x) - rhs(i)) / scale[i];
            if s < worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else {
            return Ok(x);
        };
        let np = normal(p);
        let mut u_plus = mult.clone();
        u_plus.push(0.0);
        loop {
            iter += 1;
            if iter > max_iter {
                return Err(QpError::Degenerate);
            }
            let (z, r) = directions(&qinv, &active, &normal, &np);
            // Partial step: largest step keeping active multipliers >= 0.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, rj) in r.iter().enumerate() {
                if *rj > 0.0 {
                    let t = u_plus[j] / rj;
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let zn = z.dot(&np);
            let t2 = if z.norm() <= 1e-14 * (1.0 + np.norm()) || zn <= 0.0 {
                f64::INFINITY
            } else {
                -(np.dot(&x) - rhs(p)) / zn
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::InfeasibleQp);
            }
            for (j, rj) in r.iter().enumerate() {
                u_plus[j] -= t * rj;
            }
            let last = u_plus.len() - 1;
            u_plus[last] += t;
            if t2.is_finite() {
                x += &z * t;
            }
            if t == t2 {
                active.push(p);
                mult = u_plus;
                break;
            }
            let l = drop.expect("finite partial step has a blocking index");
            active.remove(l);
            u_plus.remove(l);
        }
    }
}

/// Primal direction `z = H n_p` and dual direction `r = N* n_p` for the
/// active set.
fn directions(
    qinv: &DMatrix<f64>,
    active: &[usize],
    normal: &impl Fn(usize) -> DVector<f64>,
    np: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let m = qinv.nrows();
    if active.is_empty() {
        return (qinv * np, DVector::zeros(0));
    }
    let mut nmat = DMatrix::zeros(m, active.len());
    for (j, &i) in active.iter().enumerate() {
        nmat.set_column(j, &normal(i));
    }
    let qn = qinv * &nmat;
    let gram = nmat.transpose() * &qn;
    let gram_inv = gram.clone().try_inverse().unwrap_or_else(|| {
        gram.pseudo_inverse(1e-14)
            .expect("pseudo-inverse of a symmetric matrix")
    });
    let nstar = &gram_inv * qn.transpose();
    let r = &nstar * np;
    let z = qinv * np - &qn * &r;
    (z, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    /// Derivative condition only where `|B(x)| <= band`.
    Switching { band: f64 },
    /// `dB/dx (f + g u) + lambda1 B >= 0` everywhere.
    Relaxed,
}

impl Default for FilterMode {
    fn default() -> Self {
        FilterMode::Relaxed
    }
}

/// Default activation band of the switching mode.
pub const DEFAULT_BAND: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct QpFilter {
    mode: FilterMode,
    b: Polynomial,
    grad: PolynomialVector,
    lambda1: Polynomial,
    f: PolynomialVector,
    g: PolynomialMatrix,
    a: DMatrix<f64>,
    bvec: DVector<f64>,
    m: usize,
}

impl QpFilter {
    pub fn new(problem: &SynthesisProblem, cert: &Certificate, mode: FilterMode) -> Result<Self, QpError> {
        if let FilterMode::Switching { band } = mode {
            if !(band > 0.0) {
                return Err(QpError::Invalid("switching band must be positive".into()));
            }
        }
        if problem.m == 0 {
            return Err(QpError::Invalid("system has no inputs".into()));
        }
        Ok(QpFilter {
            mode,
            b: cert.b.clone(),
            grad: cert.b.gradient(),
            lambda1: cert.lambda1.clone(),
            f: problem.f.clone(),
            g: problem.g.clone(),
            a: problem.a.clone(),
            bvec: problem.b.clone(),
            m: problem.m,
        })
    }

    pub fn mode(&self) -> FilterMode {
        self.mode
    }

    /// Safety constraint at `x` as `(coefficients, offset)` meaning
    /// `coefficients . u + offset >= 0`, or `None` when inactive.
    pub fn safety_constraint(&self, x: &[f64]) -> Option<(Vec<f64>, f64)> {
        let bx = self.b.eval(x);
        let relax = match self.mode {
            FilterMode::Switching { band } if bx.abs() <= band => 0.0,
            FilterMode::Switching { .. } => return None,
            FilterMode::Relaxed => self.lambda1.eval(x) * bx,
        };
        let grad = self.grad.eval(x);
        let f = self.f.eval(x);
        let g = self.g.eval(x);
        let n = grad.len();
        let coef: Vec<f64> = (0..self.m)
            .map(|j| (0..n).map(|i| grad[i] * g[i * self.m + j]).sum())
            .collect();
        let drift: f64 = grad.iter().zip(&f).map(|(a, b)| a * b).sum();
        Some((coef, drift + relax))
    }

    /// Closest admissible input to `u_star` satisfying the active safety constraint.
    pub fn filter(&self, x: &[f64], u_star: &[f64]) -> Result<Vec<f64>, QpError> {
        let m = self.m;
        let safety = self.safety_constraint(x);
        let rows = self.a.nrows() + usize::from(safety.is_some());
        let mut gm = DMatrix::zeros(rows, m);
        let mut h = DVector::zeros(rows);
        for i in 0..self.a.nrows() {
            for j in 0..m {
                gm[(i, j)] = -self.a[(i, j)];
            }
            h[i] = self.bvec[i];
        }
        if let Some((coef, offset)) = &safety {
            let last = rows - 1;
            for j in 0..m {
                gm[(last, j)] = -coef[j];
            }
            h[last] = *offset;
        }
        let q = DMatrix::identity(m, m);
        let c = -DVector::from_column_slice(u_star);
        match solve_qp(&q, &c, &gm, &h) {
            Ok(u) => Ok(u.iter().copied().collect()),
            Err(QpError::InfeasibleQp) => Err(QpError::InfeasibleAtState(x.to_vec())),
            Err(e) => Err(e),
        }
    }
}
