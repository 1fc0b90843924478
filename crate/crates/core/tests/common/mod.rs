#![allow(dead_code)]

use cbc_core::{
    Certificate, Degrees, Epsilons, Mode, Polynomial, PolynomialMatrix, PolynomialVector, SynthesisProblem,
};
use nalgebra::{DMatrix, DVector};

pub fn p(s: &str) -> Polynomial {
    Polynomial::parse(s, 2).unwrap()
}

pub fn box_input(bound: f64) -> (DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
        DVector::from_element(4, bound),
    )
}

pub const SAFE: &str = "3 - x1^2 - x2^2";
pub const INIT: &str = "-0.16 + 0.8*x1 + 0.8*x2 - x1^2 - x2^2";

pub fn lti() -> SynthesisProblem {
    let (a, b) = box_input(2.5);
    SynthesisProblem::new(
        PolynomialVector::new(vec![p("2*x1 + x2"), p("3*x1 + x2")]).unwrap(),
        PolynomialMatrix::from_rows(2, vec![vec![p("1"), p("0")], vec![p("0"), p("1")]]).unwrap(),
        p(SAFE),
        p(INIT),
        a,
        b,
        Degrees::default(),
        Epsilons::default(),
    )
    .unwrap()
}

pub fn nonlinear() -> SynthesisProblem {
    let (a, b) = box_input(1.5);
    SynthesisProblem::new(
        PolynomialVector::new(vec![p("x2"), p("x1 + 0.3333333333333333*x1^3 + x2")]).unwrap(),
        PolynomialMatrix::from_rows(
            2,
            vec![vec![p("x1^2 + x2 + 1"), p("0")], vec![p("0"), p("x2^2 + x1 + 1")]],
        )
        .unwrap(),
        p(SAFE),
        p(INIT),
        a,
        b,
        Degrees::default(),
        Epsilons::default(),
    )
    .unwrap()
}

pub const B1: &str = "-7.635*x1^2 - 3.439*x1*x2 - 3.4024*x2^2 + 0.5*x1 - 0.4*x2 + 7.402";
pub const U1: &str = "-2.32*x1 - 1.11*x2 + 0.022";
pub const U2: &str = "-2.12*x1 - 1.27*x2 - 0.046";

/// The printed LTI certificate with empty multipliers.
pub fn printed_certificate() -> Certificate {
    let zero = Polynomial::zero(2);
    Certificate {
        b: p(B1),
        u: PolynomialVector::new(vec![p(U1), p(U2)]).unwrap(),
        sigma_safe: zero.clone(),
        sigma_init: zero.clone(),
        lambda1: zero.clone(),
        lambda2: PolynomialVector::new(vec![zero.clone(); 4]).unwrap(),
        sigma_enl: None,
        sigma_cbf: None,
        mode: Mode::Cbc,
        alpha: None,
        witnesses: Vec::new(),
    }
}
