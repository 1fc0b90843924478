mod common;

use cbc_core::verify::{invariance_check, nudged_starts, safe_set_bbox, sample_boundary, SimOutcome};
use cbc_core::{
    simulate, verify_certificate, Controller, Degrees, Epsilons, PolynomialMatrix, PolynomialVector, SynthesisProblem,
    VerifySettings,
};
use common::{box_input, lti, p, printed_certificate, SAFE};
use std::f64::consts::PI;

fn oscillator() -> SynthesisProblem {
    let a = nalgebra::DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let b = nalgebra::DVector::from_vec(vec![1.0, 1.0]);
    SynthesisProblem::new(
        PolynomialVector::new(vec![p("x2"), p("-x1")]).unwrap(),
        PolynomialMatrix::zeros(2, 2, 1),
        p(SAFE),
        p("1 - x1^2 - x2^2"),
        a,
        b,
        Degrees::default(),
        Epsilons::default(),
    )
    .unwrap()
}

fn endpoint_error(dt: f64, horizon: f64) -> f64 {
    let tr = simulate(&oscillator(), &Controller::Zero, &[1.0, 0.0], horizon, dt).unwrap();
    let t = *tr.times.last().unwrap();
    let x = tr.states.last().unwrap();
    ((x[0] - t.cos()).powi(2) + (x[1] + t.sin()).powi(2)).sqrt()
}

#[test]
fn harmonic_oscillator_full_period() {
    let dt = 1e-3;
    let tr = simulate(&oscillator(), &Controller::Zero, &[1.0, 0.0], 2.0 * PI, dt).unwrap();
    assert_eq!(tr.outcome, SimOutcome::Completed);
    for w in tr.times.windows(2) {
        assert!((w[1] - w[0] - dt).abs() <= 1e-12);
    }
    assert_eq!(tr.states.len(), tr.times.len());
    assert_eq!(tr.inputs.len(), tr.times.len());
    assert!(endpoint_error(dt, 2.0 * PI) <= 1e-6);
}

#[test]
fn rk4_is_fourth_order() {
    let coarse = endpoint_error(0.02, 4.0);
    let fine = endpoint_error(0.01, 4.0);
    let ratio = coarse / fine;
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn zero_field_keeps_state() {
    let (a, b) = box_input(1.0);
    let prob = SynthesisProblem::new(
        PolynomialVector::new(vec![p("0"), p("0")]).unwrap(),
        PolynomialMatrix::zeros(2, 2, 2),
        p(SAFE),
        p("1 - x1^2 - x2^2"),
        a,
        b,
        Degrees::default(),
        Epsilons::default(),
    )
    .unwrap();
    let tr = simulate(&prob, &Controller::Zero, &[0.3, -0.2], 1.0, 0.01).unwrap();
    assert!(tr.states.iter().all(|x| x == &vec![0.3, -0.2]));
}

#[test]
fn unstable_plant_leaves_the_safe_set() {
    let prob = lti();
    let tr = simulate(&prob, &Controller::Zero, &[0.4, 0.4], 10.0, 1e-3).unwrap();
    assert!(tr.states.iter().any(|x| prob.s.eval(x) < 0.0));
    let res = invariance_check(&prob, &printed_certificate(), &[tr], 1e-6);
    assert!(!res.passed);
    assert!(res.min_s < 0.0);
}

#[test]
fn printed_certificate_passes_sampling_checks() {
    let prob = lti();
    let cert = printed_certificate();
    let settings = VerifySettings {
        trajectories: 0,
        ..Default::default()
    };
    let rep = verify_certificate(&prob, &cert, &settings).unwrap();
    assert!(rep.passed(), "{rep:#?}");
    assert!(rep.safe.worst_margin > 0.0);
    assert!(rep.derivative.worst_margin > 0.0);
    assert!(rep.input.worst_margin >= -1e-6);
    assert!(rep.boundary_samples >= 720);
}

#[test]
fn boundary_samples_lie_on_the_level_set() {
    let b = p(common::B1);
    let bbox = safe_set_bbox(&p(SAFE)).unwrap().inflate(0.5);
    let s = sample_boundary(&b, &bbox, 720, &VerifySettings::default()).unwrap();
    assert_eq!(s.points.len(), 720);
    for x in &s.points {
        assert!(b.eval(x).abs() <= 1e-8);
        assert!(bbox.contains(x));
        // The zero level set is a closed curve inside the safe disc.
        assert!(x[0] * x[0] + x[1] * x[1] < 3.0);
    }
}

#[test]
fn hundred_trajectories_from_the_printed_boundary_stay_inside() {
    let prob = lti();
    let cert = printed_certificate();
    let bbox = safe_set_bbox(&prob.s).unwrap().inflate(0.5);
    let settings = VerifySettings::default();
    let pts = sample_boundary(&cert.b, &bbox, 720, &settings).unwrap().points;
    let starts = nudged_starts(&cert.b, &pts, 100, settings.nudge);
    let trs: Vec<_> = starts
        .iter()
        .map(|x0| simulate(&prob, &Controller::Polynomial(&cert.u), x0, 10.0, 1e-3).unwrap())
        .collect();
    let res = invariance_check(&prob, &cert, &trs, 1e-4);
    assert!(res.passed, "{res:?}");
}

#[test]
fn interior_starts_keep_positive_barrier() {
    let prob = lti();
    let cert = printed_certificate();
    let starts = [[0.4, 0.4], [0.5, 0.3], [0.3, 0.5], [0.2, 0.4]];
    let trs: Vec<_> = starts
        .iter()
        .map(|x0| {
            assert!(cert.b.eval(x0) > 0.0);
            simulate(&prob, &Controller::Polynomial(&cert.u), x0, 10.0, 1e-3).unwrap()
        })
        .collect();
    let res = invariance_check(&prob, &cert, &trs, 1e-6);
    assert!(res.passed && res.min_b > 0.0);
}

#[test]
fn negative_constant_fails_the_initial_set_check() {
    let prob = lti();
    let mut cert = printed_certificate();
    cert.b = p("-1");
    let settings = VerifySettings {
        trajectories: 0,
        ..Default::default()
    };
    let rep = verify_certificate(&prob, &cert, &settings).unwrap();
    assert!(!rep.init.passed);
    let w = rep.init.witness.clone().unwrap();
    assert!(prob.w.eval(&w) >= 0.0);
    assert!(!rep.passed());
}

#[test]
fn trajectory_csv_columns() {
    let prob = lti();
    let cert = printed_certificate();
    let tr = simulate(&prob, &Controller::Polynomial(&cert.u), &[0.4, 0.4], 0.01, 1e-3).unwrap();
    let csv = tr.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,x1,x2,u1,u2");
    assert_eq!(lines.count(), 11);
}
