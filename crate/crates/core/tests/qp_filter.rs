mod common;

use cbc_core::qpfilter::{solve_qp, DEFAULT_BAND};
use cbc_core::verify::{invariance_check, nudged_starts, safe_set_bbox, sample_boundary, SimOutcome};
use cbc_core::{
    simulate, synthesize, Controller, FilterMode, PolynomialVector, QpFilter, SynthesisOptions, VerifySettings,
};
use common::{lti, nonlinear, p, printed_certificate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn objective(u: &[f64], c: &DVector<f64>) -> f64 {
    0.5 * (u[0] * u[0] + u[1] * u[1]) + c[0] * u[0] + c[1] * u[1]
}

fn feasible(g: &DMatrix<f64>, h: &DVector<f64>, u: &[f64], tol: f64) -> bool {
    (0..g.nrows()).all(|i| g[(i, 0)] * u[0] + g[(i, 1)] * u[1] <= h[i] + tol)
}

/// Best grid point on a 400x400 grid over `[lo, hi]^2`.
fn grid_min(
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    c: &DVector<f64>,
    lo: [f64; 2],
    hi: [f64; 2],
) -> Option<(f64, [f64; 2])> {
    let k = 400;
    let mut best: Option<(f64, [f64; 2])> = None;
    for i in 0..k {
        for j in 0..k {
            let u = [
                lo[0] + (hi[0] - lo[0]) * i as f64 / (k - 1) as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / (k - 1) as f64,
            ];
            if feasible(g, h, &u, 0.0) {
                let f = objective(&u, c);
                if best.map_or(true, |(b, _)| f < b) {
                    best = Some((f, u));
                }
            }
        }
    }
    best
}

#[test]
fn random_qps_match_grid_oracle_and_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let q = DMatrix::identity(2, 2);
    for case in 0..20 {
        let g = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
        // Feasible by construction around a random point in the box.
        let u0 = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let h = DVector::from_fn(4, |i, _| (g.row(i) * &u0)[0] + rng.gen_range(0.0..0.5));
        let c = DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
        let u = solve_qp(&q, &c, &g, &h).unwrap();
        let f_qp = objective(u.as_slice(), &c);
        assert!(feasible(&g, &h, u.as_slice(), 1e-9), "case {case}");

        // Zoom the 400x400 grid three times around the incumbent.
        let mut half = 4.0;
        let mut center = [0.0, 0.0];
        let mut f_grid = f64::INFINITY;
        for _ in 0..3 {
            let (f, at) = grid_min(
                &g,
                &h,
                &c,
                [center[0] - half, center[1] - half],
                [center[0] + half, center[1] + half],
            )
            .unwrap();
            f_grid = f_grid.min(f);
            center = at;
            half /= 20.0;
        }
        assert!(f_grid >= f_qp - 1e-9, "case {case}: grid beats QP");
        assert!(f_grid - f_qp <= 1e-3, "case {case}: {f_grid} vs {f_qp}");

        // KKT: stationarity with nonnegative multipliers on active rows.
        let active: Vec<usize> = (0..4).filter(|&i| ((g.row(i) * &u)[0] - h[i]).abs() <= 1e-9).collect();
        let grad = &u + &c;
        if active.is_empty() {
            assert!(grad.norm() <= 1e-9, "case {case}");
        } else {
            let ga = DMatrix::from_fn(2, active.len(), |r, k| g[(active[k], r)]);
            let lambda = (ga.transpose() * &ga).pseudo_inverse(1e-12).unwrap() * ga.transpose() * (-&grad);
            assert!((&grad + &ga * &lambda).norm() <= 1e-9, "case {case}");
            assert!(lambda.iter().all(|l| *l >= -1e-9), "case {case}");
        }
    }
}

#[test]
fn interior_nominal_input_passes_through() {
    let prob = lti();
    let filter = QpFilter::new(
        &prob,
        &printed_certificate(),
        FilterMode::Switching { band: DEFAULT_BAND },
    )
    .unwrap();
    let u = filter.filter(&[0.4, 0.4], &[1.0, -2.0]).unwrap();
    assert_eq!(u, vec![1.0, -2.0]);
    let u = filter.filter(&[0.4, 0.4], &[4.0, -3.0]).unwrap();
    assert!((u[0] - 2.5).abs() < 1e-12 && (u[1] + 2.5).abs() < 1e-12);
}

#[test]
fn adversarial_input_on_the_boundary_is_corrected() {
    let prob = lti();
    let cert = printed_certificate();
    let filter = QpFilter::new(&prob, &cert, FilterMode::Switching { band: DEFAULT_BAND }).unwrap();
    let bbox = safe_set_bbox(&prob.s).unwrap().inflate(0.5);
    let pts = sample_boundary(&cert.b, &bbox, 72, &VerifySettings::default())
        .unwrap()
        .points;
    let grad = cert.b.gradient();
    for x in &pts {
        let gx = grad.eval(x);
        // Push straight down the gradient (outward) at full strength.
        let u_star = [-10.0 * gx[0], -10.0 * gx[1]];
        let u = filter.filter(x, &u_star).unwrap();
        let xdot = prob.vector_field(x, &u);
        let lie: f64 = gx.iter().zip(&xdot).map(|(a, b)| a * b).sum();
        assert!(lie >= -1e-9, "{lie} at {x:?}");
        assert!(prob.input_slack(&u).iter().all(|s| *s >= -1e-9));
    }
}

#[test]
fn filter_is_idempotent_and_minimal() {
    let prob = lti();
    let cert = printed_certificate();
    let filter = QpFilter::new(&prob, &cert, FilterMode::Relaxed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        if cert.b.eval(&x) < 0.0 {
            continue;
        }
        let u_star = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let Ok(u) = filter.filter(&x, &u_star) else {
            continue;
        };
        let again = filter.filter(&x, &u).unwrap();
        assert!((again[0] - u[0]).abs() <= 1e-9 && (again[1] - u[1]).abs() <= 1e-9);

        let dist = ((u[0] - u_star[0]).powi(2) + (u[1] - u_star[1]).powi(2)).sqrt();
        let (coef, offset) = filter.safety_constraint(&x).unwrap();
        let mut accepted = 0;
        while accepted < 1000 {
            let v = [rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)];
            if coef[0] * v[0] + coef[1] * v[1] + offset < 0.0 {
                continue;
            }
            accepted += 1;
            let dv = ((v[0] - u_star[0]).powi(2) + (v[1] - u_star[1]).powi(2)).sqrt();
            assert!(dist <= dv + 1e-9);
        }
    }
}

#[test]
fn closed_loop_with_destabilizing_nominal_stays_in_the_set() {
    let prob = nonlinear();
    let (cert, _) = synthesize(&prob, &SynthesisOptions::default()).unwrap();
    let filter = QpFilter::new(&prob, &cert, FilterMode::Relaxed).unwrap();
    let nominal = PolynomialVector::new(vec![p("1.5*x1 + 1.5*x2"), p("1.5*x1 + 1.5*x2")]).unwrap();
    let bbox = safe_set_bbox(&prob.s).unwrap().inflate(0.5);
    let settings = VerifySettings::default();
    let pts = sample_boundary(&cert.b, &bbox, 720, &settings).unwrap().points;
    let mut starts = nudged_starts(&cert.b, &pts, 8, settings.nudge);
    starts.push(vec![0.4, 0.4]);
    let ctrl = Controller::Filtered {
        filter: &filter,
        nominal: &nominal,
    };
    let trs: Vec<_> = starts
        .iter()
        .map(|x0| simulate(&prob, &ctrl, x0, 10.0, 1e-3).unwrap())
        .collect();
    for tr in &trs {
        assert_eq!(tr.outcome, SimOutcome::Completed);
        for u in &tr.inputs {
            assert!(prob.input_slack(u).iter().all(|s| *s >= -1e-9));
        }
    }
    let res = invariance_check(&prob, &cert, &trs, 1e-4);
    assert!(res.passed, "{res:?}");
}
