//! Sampling-based verification of barrier certificates and closed-loop
//! simulation. Nothing here relies on SOS machinery.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::cbc::{Certificate, SynthesisProblem};
use crate::poly::{Polynomial, PolynomialVector};
use crate::qpfilter::QpFilter;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("no point with B >= 0 found in the search box")]
    EmptySet,
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        BoundingBox { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Same center, each side scaled by `1 + factor`.
    pub fn inflate(&self, factor: f64) -> BoundingBox {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| {
                let half = 0.5 * (h - l) * (1.0 + factor);
                let c = 0.5 * (h + l);
                (c - half, c + half)
            })
            .unzip();
        BoundingBox { lo, hi }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= *l - 1e-12 && *v <= *h + 1e-12)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if h > l { rng.gen_range(*l..*h) } else { *l })
            .collect()
    }

    /// Tensor grid with `k` points per axis, endpoints included; the last
    /// coordinate varies fastest.
    pub fn grid(&self, k: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self.lo.iter().zip(&self.hi).map(|(l, h)| linspace(*l, *h, k)).collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(out.len() * axis.len());
            for prefix in &out {
                for v in axis {
                    let mut p = prefix.clone();
                    p.push(*v);
                    next.push(p);
                }
            }
            out = next;
        }
        out
    }
}

pub fn linspace(a: f64, b: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.5 * (a + b)],
        _ => (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect(),
    }
}

/// Smallest grid-resolved box containing `{p >= 0}`, searched over growing
/// cubes centered at the origin.
pub fn superlevel_bbox(p: &Polynomial) -> Result<BoundingBox, VerifyError> {
    let n = p.n_vars();
    let mut radius = 4.0;
    for _ in 0..6 {
        let search = BoundingBox::new(vec![-radius; n], vec![radius; n]);
        let points: Vec<Vec<f64>> = if n <= 2 {
            search.grid(if n == 1 { 4001 } else { 401 })
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0xb0c5);
            (0..200_000).map(|_| search.sample(&mut rng)).collect()
        };
        let step = 2.0 * radius / 400.0;
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        let mut found = false;
        let mut touches = false;
        for x in points.iter().filter(|x| p.eval(x) >= 0.0) {
            found = true;
            for i in 0..n {
                lo[i] = lo[i].min(x[i]);
                hi[i] = hi[i].max(x[i]);
                touches |= (x[i].abs() - radius).abs() < 1e-9;
            }
        }
        if !found {
            radius /= 8.0;
            continue;
        }
        if touches {
            radius *= 4.0;
            continue;
        }
        let lo = lo.iter().map(|v| v - step).collect();
        let hi = hi.iter().map(|v| v + step).collect();
        return Ok(BoundingBox::new(lo, hi));
    }
    Err(VerifyError::EmptySet)
}

/// Bounding box of the safe set `{s >= 0}` (not inflated).
pub fn safe_set_bbox(s: &Polynomial) -> Result<BoundingBox, VerifyError> {
    superlevel_bbox(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifySettings {
    pub samples: usize,
    /// Ray count for boundary sampling (evenly spaced angles in 2D,
    /// random directions otherwise).
    pub rays: usize,
    pub random_rays: usize,
    pub seed: u64,
    pub level_tol: f64,
    pub input_tol: f64,
    pub init_tol: f64,
    pub inv_tol: f64,
    pub nudge: f64,
    pub trajectories: usize,
    pub horizon: f64,
    pub dt: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            samples: 10_000,
            rays: 720,
            random_rays: 5000,
            seed: 0,
            level_tol: 1e-8,
            input_tol: 1e-6,
            init_tol: 1e-8,
            inv_tol: 1e-6,
            nudge: 1e-4,
            trajectories: 12,
            horizon: 10.0,
            dt: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundarySamples {
    pub points: Vec<Vec<f64>>,
    /// Interior point the rays start from.
    pub center: Vec<f64>,
    /// Rays that left the box without a sign change.
    pub missed_rays: usize,
}

/// Points on `{B = 0}` by bisection along rays from the grid maximizer of `B`.
/// Rays that reach the edge of `bbox` with `B >= 0` are skipped and counted.
pub fn sample_boundary(
    b: &Polynomial,
    bbox: &BoundingBox,
    count: usize,
    settings: &VerifySettings,
) -> Result<BoundarySamples, VerifyError> {
    let n = bbox.dim();
    let grid = if n <= 2 {
        bbox.grid(if n == 1 { 4001 } else { 400 })
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x9e37);
        (0..160_000).map(|_| bbox.sample(&mut rng)).collect()
    };
    let (center, best) = grid
        .into_iter()
        .map(|x| {
            let v = b.eval(&x);
            (x, v)
        })
        .fold(
            (Vec::new(), f64::NEG_INFINITY),
            |acc, (x, v)| if v > acc.1 { (x, v) } else { acc },
        );
    if !(best >= 0.0) {
        return Err(VerifyError::EmptySet);
    }
    let directions: Vec<Vec<f64>> = match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            (0..count)
                .map(|_| {
                    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                    v.into_iter().map(|a| a / norm).collect()
                })
                .collect()
        }
    };
    let mut points = Vec::new();
    let mut missed = 0;
    for d in &directions {
        match ray_crossing(b, bbox, &center, d, settings.level_tol) {
            Some(x) => points.push(x),
            None => missed += 1,
        }
    }
    Ok(BoundarySamples {
        points,
        center,
        missed_rays: missed,
    })
}

fn ray_crossing(b: &Polynomial, bbox: &BoundingBox, c: &[f64], d: &[f64], tol: f64) -> Option<Vec<f64>> {
    // Exit parameter of the ray from the box.
    let mut t_max = f64::INFINITY;
    for i in 0..c.len() {
        if d[i] > 0.0 {
            t_max = t_max.min((bbox.hi[i] - c[i]) / d[i]);
        } else if d[i] < 0.0 {
            t_max = t_max.min((bbox.lo[i] - c[i]) / d[i]);
        }
    }
    if !t_max.is_finite() || t_max <= 0.0 {
        return None;
    }
    let at = |t: f64| -> Vec<f64> { c.iter().zip(d).map(|(a, b)| a + t * b).collect() };
    const STEPS: usize = 400;
    let mut t_lo = 0.0;
    let mut t_hi = None;
    for k in 1..=STEPS {
        let t = t_max * k as f64 / STEPS as f64;
        if b.eval(&at(t)) < 0.0 {
            t_hi = Some(t);
            break;
        }
        t_lo = t;
    }
    let mut t_hi = t_hi?;
    let mut x = at(t_hi);
    for _ in 0..200 {
        let mid = 0.5 * (t_lo + t_hi);
        x = at(mid);
        let v = b.eval(&x);
        if v.abs() <= tol {
            return Some(x);
        }
        if v >= 0.0 {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
        if t_hi - t_lo <= f64::EPSILON * t_max {
            break;
        }
    }
    (b.eval(&x).abs() <= tol).then_some(x)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionResult {
    pub passed: bool,
    /// Worst margin; positive means satisfied with room to spare.
    pub worst_margin: f64,
    pub witness: Option<Vec<f64>>,
    pub samples: usize,
}

impl ConditionResult {
    fn from_margins(margins: impl Iterator<Item = (f64, Vec<f64>)>, pass: impl Fn(f64) -> bool) -> Self {
        let mut worst = f64::INFINITY;
        let mut witness = None;
        let mut count = 0;
        for (m, x) in margins {
            count += 1;
            if m < worst {
                worst = m;
                witness = Some(x);
            }
        }
        ConditionResult {
            passed: pass(worst),
            worst_margin: worst,
            witness,
            samples: count,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySummary {
    pub count: usize,
    pub horizon: f64,
    pub dt: f64,
    pub min_b: f64,
    pub min_s: f64,
    pub diverged: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    /// `B < 0` on sampled points with `s < 0`; margin is `-B`.
    pub safe: ConditionResult,
    /// `B >= 0` on sampled points with `w >= 0`; margin is `B`.
    pub init: ConditionResult,
    /// `dB/dx (f + g u) > 0` on sampled `{B = 0}`.
    pub derivative: ConditionResult,
    /// `min_i (A u + b)_i` on sampled `{B = 0}`.
    pub input: ConditionResult,
    /// Input admissibility on sampled `{B >= 0}`; reported only.
    pub interior_input: ConditionResult,
    pub boundary_samples: usize,
    pub missed_rays: usize,
    pub trajectories: Option<TrajectorySummary>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.safe.passed
            && self.init.passed
            && self.derivative.passed
            && self.input.passed
            && self.boundary_samples > 0
            && self.trajectories.as_ref().map_or(true, |t| t.passed)
    }
}

/// Checks the barrier conditions on samples: `B < 0` outside the safe set,
/// `B >= 0` on the initial set, positive Lie derivative and admissible input
/// on the zero level set; optionally simulates trajectories from just inside
/// the boundary.
pub fn verify_certificate(
    problem: &SynthesisProblem,
    cert: &Certificate,
    settings: &VerifySettings,
) -> Result<VerificationReport, VerifyError> {
    let bbox = safe_set_bbox(&problem.s)?.inflate(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let b = &cert.b;

    let outside: Vec<Vec<f64>> = (0..settings.samples)
        .map(|_| bbox.sample(&mut rng))
        .filter(|x| problem.s.eval(x) < 0.0)
        .collect();
    let safe = ConditionResult::from_margins(outside.into_iter().map(|x| (-b.eval(&x), x)), |m| m > 0.0);

    let init_box = superlevel_bbox(&problem.w)?;
    let inside: Vec<Vec<f64>> = (0..settings.samples)
        .map(|_| init_box.sample(&mut rng))
        .filter(|x| problem.w.eval(x) >= 0.0)
        .collect();
    let init_tol = settings.init_tol;
    let init = ConditionResult::from_margins(inside.into_iter().map(|x| (b.eval(&x), x)), |m| m >= -init_tol);

    let count = if problem.n == 2 {
        settings.rays
    } else {
        settings.random_rays
    };
    // An empty {B >= 0} has no boundary; the initial-set check reports it.
    let boundary = match sample_boundary(b, &bbox, count, settings) {
        Err(VerifyError::EmptySet) => BoundarySamples {
            points: Vec::new(),
            center: Vec::new(),
            missed_rays: 0,
        },
        r => r?,
    };
    let grad = b.gradient();
    let lie = |x: &[f64]| -> f64 {
        let u = cert.u.eval(x);
        let dx = problem.vector_field(x, &u);
        grad.eval(x).iter().zip(&dx).map(|(a, c)| a * c).sum()
    };
    let derivative = ConditionResult::from_margins(boundary.points.iter().map(|x| (lie(x), x.clone())), |m| m > 0.0);
    let min_slack = |x: &[f64]| -> f64 {
        problem
            .input_slack(&cert.u.eval(x))
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    };
    let input_tol = settings.input_tol;
    let input = ConditionResult::from_margins(boundary.points.iter().map(|x| (min_slack(x), x.clone())), |m| {
        m >= -input_tol
    });
    let interior: Vec<Vec<f64>> = (0..settings.samples)
        .map(|_| bbox.sample(&mut rng))
        .filter(|x| b.eval(x) >= 0.0)
        .collect();
    let interior_input =
        ConditionResult::from_margins(interior.into_iter().map(|x| (min_slack(&x), x)), |m| m >= -input_tol);

    let trajectories = if settings.trajectories > 0 && !boundary.points.is_empty() {
        let starts = nudged_starts(b, &boundary.points, settings.trajectories, settings.nudge);
        let controller = Controller::Polynomial(&cert.u);
        let mut trajs = Vec::with_capacity(starts.len());
        for x0 in &starts {
            trajs.push(simulate(problem, &controller, x0, settings.horizon, settings.dt)?);
        }
        let inv = invariance_check(problem, cert, &trajs, settings.inv_tol);
        Some(TrajectorySummary {
            count: trajs.len(),
            horizon: settings.horizon,
            dt: settings.dt,
            min_b: inv.min_b,
            min_s: inv.min_s,
            diverged: trajs.iter().filter(|t| t.outcome != SimOutcome::Completed).count(),
            passed: inv.passed,
        })
    } else {
        None
    };

    Ok(VerificationReport {
        safe,
        init,
        derivative,
        input,
        interior_input,
        boundary_samples: boundary.points.len(),
        missed_rays: boundary.missed_rays,
        trajectories,
    })
}

/// `count` boundary points spread evenly over `points`, each moved `nudge`
/// along the gradient of `B` (into `{B > 0}`).
pub fn nudged_starts(b: &Polynomial, points: &[Vec<f64>], count: usize, nudge: f64) -> Vec<Vec<f64>> {
    if points.is_empty() || count == 0 {
        return Vec::new();
    }
    let grad = b.gradient();
    (0..count)
        .map(|k| {
            let x = &points[k * points.len() / count];
            let g = grad.eval(x);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return x.clone();
            }
            x.iter().zip(&g).map(|(a, gi)| a + nudge * gi / norm).collect()
        })
        .collect()
}

/// Feedback law used in simulation.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    /// No input (all components zero).
    Zero,
    Polynomial(&'a PolynomialVector),
    /// Nominal polynomial law passed through a safety filter.
    Filtered {
        filter: &'a QpFilter,
        nominal: &'a PolynomialVector,
    },
}

impl Controller<'_> {
    fn input(&self, m: usize, x: &[f64]) -> Option<Vec<f64>> {
        match self {
            Controller::Zero => Some(vec![0.0; m]),
            Controller::Polynomial(u) => Some(u.eval(x)),
            Controller::Filtered { filter, nominal } => filter.filter(x, &nominal.eval(x)).ok(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SimOutcome {
    Completed,
    /// `|x|` exceeded `1e6`; the trajectory stops at the last finite state.
    Diverged {
        time: f64,
    },
    /// The safety filter had no feasible input.
    FilterInfeasible {
        time: f64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Input applied at each recorded state.
    pub inputs: Vec<Vec<f64>>,
    pub outcome: SimOutcome,
}

impl Trajectory {
    /// CSV with columns `t, x1..xn, u1..um`.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.inputs.first().map_or(0, Vec::len);
        let mut head = vec!["t".to_string()];
        head.extend((1..=n).map(|i| format!("x{i}")));
        head.extend((1..=m).map(|i| format!("u{i}")));
        let mut out = head.join(",");
        out.push('\n');
        for k in 0..self.times.len() {
            let mut row = vec![format!("{}", self.times[k])];
            row.extend(self.states[k].iter().map(|v| format!("{v}")));
            row.extend(self.inputs[k].iter().map(|v| format!("{v}")));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

const DIVERGENCE_NORM: f64 = 1e6;

/// Classic RK4 on `xdot = f(x) + g(x) u(x)` with the feedback evaluated at
/// every stage.
pub fn simulate(
    problem: &SynthesisProblem,
    controller: &Controller<'_>,
    x0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<Trajectory, VerifyError> {
    if !(dt > 0.0) || !(horizon >= dt) {
        return Err(VerifyError::InvalidSettings(format!(
            "need dt > 0 and horizon >= dt, got dt={dt}, horizon={horizon}"
        )));
    }
    if x0.len() != problem.n {
        return Err(VerifyError::InvalidSettings(format!(
            "initial state has {} entries, expected {}",
            x0.len(),
            problem.n
        )));
    }
    let steps = (horizon / dt).round() as usize;
    let m = problem.m;
    let rhs = |x: &[f64]| -> Option<Vec<f64>> {
        let u = controller.input(m, x)?;
        Some(problem.vector_field(x, &u))
    };
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    let mut outcome = SimOutcome::Completed;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let Some(u) = controller.input(m, &x) else {
            outcome = SimOutcome::FilterInfeasible { time: t };
            break;
        };
        times.push(t);
        states.push(x.clone());
        inputs.push(u);
        if k == steps {
            break;
        }
        let Some(next) = rk4_step(&rhs, &x, dt) else {
            outcome = SimOutcome::FilterInfeasible { time: t };
            break;
        };
        if next.iter().map(|v| v * v).sum::<f64>().sqrt() > DIVERGENCE_NORM || next.iter().any(|v| !v.is_finite()) {
            outcome = SimOutcome::Diverged { time: t + dt };
            break;
        }
        x = next;
    }
    Ok(Trajectory {
        times,
        states,
        inputs,
        outcome,
    })
}

fn rk4_step(rhs: &impl Fn(&[f64]) -> Option<Vec<f64>>, x: &[f64], h: f64) -> Option<Vec<f64>> {
    let axpy = |a: &[f64], k: &[f64], s: f64| -> Vec<f64> { a.iter().zip(k).map(|(u, v)| u + s * v).collect() };
    let k1 = rhs(x)?;
    let k2 = rhs(&axpy(x, &k1, 0.5 * h))?;
    let k3 = rhs(&axpy(x, &k2, 0.5 * h))?;
    let k4 = rhs(&axpy(x, &k3, h))?;
    Some(
        (0..x.len())
            .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvarianceResult {
    pub passed: bool,
    pub min_b: f64,
    pub min_s: f64,
}

/// Passes iff `B >= -inv_tol` and `s >= 0` along every trajectory and no
/// trajectory was cut short.
pub fn invariance_check(
    problem: &SynthesisProblem,
    cert: &Certificate,
    trajectories: &[Trajectory],
    inv_tol: f64,
) -> InvarianceResult {
    let mut min_b = f64::INFINITY;
    let mut min_s = f64::INFINITY;
    let mut complete = true;
    for tr in trajectories {
        complete &= tr.outcome == SimOutcome::Completed;
        for x in &tr.states {
            min_b = min_b.min(cert.b.eval(x));
            min_s = min_s.min(problem.s.eval(x));
        }
    }
    InvarianceResult {
        passed: complete && min_b >= -inv_tol && min_s >= 0.0,
        min_b,
        min_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Polynomial {
        Polynomial::parse(s, 2).unwrap()
    }

    #[test]
    fn disc_bbox() {
        let bb = safe_set_bbox(&p("3 - x1^2 - x2^2")).unwrap();
        let r = 3f64.sqrt();
        for i in 0..2 {
            assert!(bb.lo[i] <= -r && bb.lo[i] > -r - 0.05);
            assert!(bb.hi[i] >= r && bb.hi[i] < r + 0.05);
        }
        let inf = bb.inflate(0.5);
        assert!((inf.hi[0] - inf.lo[0] - 1.5 * (bb.hi[0] - bb.lo[0])).abs() < 1e-12);
    }

    #[test]
    fn unit_circle_boundary() {
        let b = p("1 - x1^2 - x2^2");
        let bb = BoundingBox::new(vec![-2.0, -2.0], vec![2.0, 2.0]);
        let s = sample_boundary(&b, &bb, 720, &VerifySettings::default()).unwrap();
        assert_eq!(s.points.len(), 720);
        for x in &s.points {
            assert!(b.eval(x).abs() <= 1e-8);
            assert!(((x[0] * x[0] + x[1] * x[1]).sqrt() - 1.0).abs() <= 1e-6);
            assert!(bb.contains(x));
        }
    }

    #[test]
    fn constant_positive_b_has_no_boundary() {
        let bb = BoundingBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let s = sample_boundary(&p("1"), &bb, 36, &VerifySettings::default()).unwrap();
        assert!(s.points.is_empty());
        assert_eq!(s.missed_rays, 36);
        assert_eq!(
            sample_boundary(&p("-1"), &bb, 36, &VerifySettings::default()).unwrap_err(),
            VerifyError::EmptySet
        );
    }

    #[test]
    fn grid_layout() {
        let bb = BoundingBox::new(vec![0.0, 10.0], vec![1.0, 11.0]);
        let g = bb.grid(3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[1], vec![0.0, 10.5]);
        assert_eq!(linspace(0.0, 1.0, 5)[4], 1.0);
    }
}
