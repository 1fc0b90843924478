mod common;

use cbc_core::poly::{lie_derivative, monomial_basis};
use cbc_core::{Monomial, Polynomial, PolynomialVector};
use common::{nonlinear, p, B1};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn binomial(n: u64, k: u64) -> u64 {
    (1..=k).fold(1, |acc, i| acc * (n - k + i) / i)
}

fn poly_strategy(n: usize, max_degree: u32, coef: f64) -> impl Strategy<Value = Polynomial> {
    let basis = monomial_basis(n, max_degree);
    let len = basis.len();
    proptest::collection::vec(-coef..coef, len)
        .prop_map(move |c| Polynomial::from_terms(n, basis.clone().into_iter().zip(c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn product_evaluates_as_product(
        a in poly_strategy(2, 4, 5.0),
        b in poly_strategy(2, 4, 5.0),
        x in proptest::collection::vec(-2.0f64..2.0, 2),
    ) {
        let lhs = (&a * &b).eval(&x);
        let rhs = a.eval(&x) * b.eval(&x);
        // Cancellation bound: scale by the product of absolute-term sums.
        let abs_sum = |q: &Polynomial| q.terms().map(|(m, c)| c.abs() * m.eval(&x).abs()).sum::<f64>();
        let scale = (abs_sum(&a) * abs_sum(&b)).max(1e-300);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(rhs.abs()));
    }

    #[test]
    fn gradient_matches_central_differences(
        q in poly_strategy(2, 4, 10.0),
        x in proptest::collection::vec(-2.0f64..2.0, 2),
    ) {
        let g = q.gradient().eval(&x);
        let h = 1e-5;
        for i in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (q.eval(&xp) - q.eval(&xm)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "{} vs {}", fd, g[i]);
        }
    }
}

#[test]
fn basis_size_order_and_distinctness() {
    for n in 1..=4usize {
        for d in 0..=5u32 {
            let basis = monomial_basis(n, d);
            assert_eq!(basis.len() as u64, binomial(n as u64 + d as u64, d as u64));
            for w in basis.windows(2) {
                assert!(w[0] < w[1], "{} !< {}", w[0], w[1]);
                assert!(w[0].degree() <= w[1].degree());
            }
        }
    }
    let b = monomial_basis(2, 2);
    let expect = [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]];
    for (m, e) in b.iter().zip(expect) {
        assert_eq!(m.exponents(), &e);
    }
}

#[test]
fn printed_certificate_evaluations() {
    let b = p(B1);
    assert!((b.eval(&[0.0, 0.0]) - 7.402).abs() < 1e-12);
    let hand = -7.635 - 3.439 - 3.4024 + 0.5 - 0.4 + 7.402;
    assert!((b.eval(&[1.0, 1.0]) - hand).abs() < 1e-12);
}

#[test]
fn gradient_of_cubic_and_constant() {
    let d = p("0.3333333333333333*x1^3").derivative(0);
    assert_eq!(d.n_terms(), 1);
    assert!((d.coeff(&Monomial::new(vec![2, 0])) - 1.0).abs() < 1e-15);
    assert!(p("4").gradient().iter().all(|g| g.is_zero()));
}

#[test]
fn lie_derivative_matches_pointwise_oracle() {
    let prob = nonlinear();
    let b = p(B1);
    let u = PolynomialVector::new(vec![p("0.3*x1 - x2 + 0.1"), p("-0.7*x1 + 0.2*x2 - 0.4")]).unwrap();
    let lie = lie_derivative(&b, &prob.f, &prob.g, &u).unwrap();
    let grad = b.gradient();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let xdot = prob.vector_field(&x, &u.eval(&x));
        let numeric: f64 = grad.eval(&x).iter().zip(&xdot).map(|(a, b)| a * b).sum();
        assert!((lie.eval(&x) - numeric).abs() <= 1e-9 * numeric.abs().max(1.0));
    }
}

#[test]
fn trivial_lie_derivatives() {
    let zero_g = cbc_core::PolynomialMatrix::zeros(2, 2, 0);
    let none = PolynomialVector::zeros(2, 0);
    let f = PolynomialVector::new(vec![p("x2"), p("0")]).unwrap();
    assert_eq!(lie_derivative(&p("x1"), &f, &zero_g, &none).unwrap(), p("x2"));
    let f = PolynomialVector::new(vec![p("-x1"), p("-x2")]).unwrap();
    assert_eq!(
        lie_derivative(&p("x1^2 + x2^2"), &f, &zero_g, &none).unwrap(),
        p("-2*x1^2 - 2*x2^2")
    );
}
