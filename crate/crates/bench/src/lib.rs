//! Fixtures shared by the benchmarks.

use cbc_core::poly::monomial_basis;
use cbc_core::sdp::{Block, Entry, ObjectiveSense, SdpProblem};
use cbc_core::{Degrees, Epsilons, Polynomial, PolynomialMatrix, PolynomialVector, SynthesisProblem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn p(s: &str) -> Polynomial {
    Polynomial::parse(s, 2).expect("fixture polynomial")
}

fn box_input(bound: f64) -> (DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
        DVector::from_element(4, bound),
    )
}

const SAFE: &str = "3 - x1^2 - x2^2";
const INIT: &str = "-0.16 + 0.8*x1 + 0.8*x2 - x1^2 - x2^2";

/// Unstable linear plant with box inputs of half-width 2.5.
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

/// Cubic plant with state-dependent diagonal input gains.
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

pub fn printed_barrier() -> Polynomial {
    p("-7.635*x1^2 - 3.439*x1*x2 - 3.4024*x2^2 + 0.5*x1 - 0.4*x2 + 7.402")
}

pub fn printed_controller() -> PolynomialVector {
    PolynomialVector::new(vec![p("-2.32*x1 - 1.11*x2 + 0.022"), p("-2.12*x1 - 1.27*x2 - 0.046")]).unwrap()
}

/// Sum of `terms` squares of random polynomials of degree `half_degree`.
pub fn random_sos(seed: u64, half_degree: u32, terms: usize) -> Polynomial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = monomial_basis(2, half_degree);
    let mut sum = Polynomial::zero(2);
    for _ in 0..terms {
        let q = Polynomial::from_terms(2, basis.iter().cloned().map(|m| (m, rng.gen_range(-1.0..1.0))));
        sum = &sum + &(&q * &q);
    }
    sum
}

/// Primal and dual strictly feasible SDP with one `k x k` block and `m`
/// constraints.
pub fn random_sdp(seed: u64, k: usize, m: usize) -> SdpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_mat = |shift: f64| {
        let a = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
        if shift > 0.0 {
            &a * a.transpose() + DMatrix::identity(k, k) * shift
        } else {
            (&a + a.transpose()) * 0.5
        }
    };
    let x0 = rand_mat(0.1);
    let mut c = rand_mat(0.1);
    let entries = |m: &DMatrix<f64>| {
        let mut out = Vec::new();
        for r in 0..k {
            for col in r..k {
                out.push(Entry::new(0, r, col, m[(r, col)]));
            }
        }
        out
    };
    let mut prob = SdpProblem::new(vec![Block::Psd(k)], ObjectiveSense::Minimize);
    for i in 0..m {
        let a = rand_mat(0.0);
        let y0 = ((i as f64) * 0.37).sin();
        c += &a * y0;
        prob.add_constraint(entries(&a), a.dot(&x0));
    }
    prob.objective = entries(&c);
    prob
}
