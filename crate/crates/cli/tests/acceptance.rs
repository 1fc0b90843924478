//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line straight to stderr (not captured by the harness) and then asserts.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use cbc_cli::files::{CertificateFile, ProblemFile};
use cbc_core::poly::monomial_basis;
use cbc_core::sdp::{self, residuals, solve, Block, Entry, ObjectiveSense, SdpProblem};
use cbc_core::sos::MATCH_TOL;
use cbc_core::verify::safe_set_bbox;
use cbc_core::{
    check_sos, synthesize, Certificate, FilterMode, Polynomial, QpFilter, SdpSettings, SdpStatus, SosCheck,
    SynthesisOptions, SynthesisProblem,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: usize, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} - {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn bundled(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("problems")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn cbc(args: &[&str]) -> (Output, Duration) {
    let t = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_cbc"))
        .args(args)
        .output()
        .expect("spawn cbc");
    (out, t.elapsed())
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn load_problem(name: &str) -> SynthesisProblem {
    let pf = ProblemFile::load(Path::new(&bundled(name))).unwrap();
    pf.to_problem(pf.degrees().unwrap()).unwrap()
}

fn load_cert(path: &Path, problem: &SynthesisProblem) -> Certificate {
    CertificateFile::load(path)
        .unwrap()
        .to_certificate(problem.n_input_constraints())
        .unwrap()
        .0
}

/// Runs `synth` into `dir` and returns (exit code, runtime).
fn synth_into(problem: &str, dir: &Path) -> (i32, Duration) {
    let (out, t) = cbc(&["synth", &bundled(problem), "--out", dir.to_str().unwrap()]);
    (out.status.code().unwrap(), t)
}

/// The sampled checks of criterion 1 on a verification document.
fn sampled_conditions_hold(doc: &serde_json::Value) -> Result<(), String> {
    let s = &doc["sampling"];
    let margin = |k: &str| s[k]["worst_margin"].as_f64().unwrap_or(f64::NEG_INFINITY);
    let count = |k: &str| s[k]["samples"].as_u64().unwrap_or(0);
    if !(s["safe"]["passed"] == true && margin("safe") > 0.0) {
        return Err(format!("B not negative outside S (margin {})", margin("safe")));
    }
    if !(s["init"]["passed"] == true && margin("init") >= 0.0) {
        return Err(format!("B negative on I (margin {})", margin("init")));
    }
    if !(count("derivative") == 720 && margin("derivative") > 0.0) {
        return Err(format!(
            "Lie derivative {} over {} boundary samples",
            margin("derivative"),
            count("derivative")
        ));
    }
    if !(count("input") == 720 && margin("input") >= -1e-6) {
        return Err(format!("input slack {}", margin("input")));
    }
    Ok(())
}

#[test]
fn criterion_1_printed_certificate_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let (out, t) = cbc(&[
        "verify",
        &bundled("lti_unstable.json"),
        &bundled("lti_printed_certificate.json"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let code = out.status.code().unwrap();
    let doc = json(dir.path().join("verification.json"));
    let checks = sampled_conditions_hold(&doc);
    let pass = code == 0 && checks.is_ok() && t < Duration::from_secs(5);
    report(
        1,
        pass,
        &format!(
            "exit {code}, {:.2}s, {}",
            t.as_secs_f64(),
            checks.err().unwrap_or_else(|| "all sampled checks hold".into())
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_lti_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let (code, t) = synth_into("lti_unstable.json", dir.path());
    let cert_path = dir.path().join("certificate.json");
    let (out, _) = cbc(&[
        "verify",
        &bundled("lti_unstable.json"),
        cert_path.to_str().unwrap(),
        "--out",
        dir.path().join("v").to_str().unwrap(),
    ]);
    let vcode = out.status.code().unwrap();
    let checks = sampled_conditions_hold(&json(dir.path().join("v/verification.json")));
    let prob = load_problem("lti_unstable.json");
    let cert = load_cert(&cert_path, &prob);
    let shape = cert.b.degree() == 2 && cert.u.iter().all(|u| u.degree() <= 1);
    let pass = code == 0 && vcode == 0 && checks.is_ok() && shape && t < Duration::from_secs(60);
    report(
        2,
        pass,
        &format!(
            "synth exit {code} in {:.2}s, verify exit {vcode}, deg B {}, {}",
            t.as_secs_f64(),
            cert.b.degree(),
            checks.err().unwrap_or_else(|| "sampled checks hold".into())
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_nonlinear_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let (code, t) = synth_into("nonlinear_affine.json", dir.path());
    let prob = load_problem("nonlinear_affine.json");
    let bounds_ok = prob.b.iter().all(|b| *b == 1.5);
    let cert = load_cert(&dir.path().join("certificate.json"), &prob);
    let verified = json(dir.path().join("verification.json"))["passed"] == true;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut covers = true;
    let mut inside = true;
    for _ in 0..10_000 {
        // Uniform in the disc I: center (0.4, 0.4), radius 0.4.
        let r = 0.4 * rng.gen::<f64>().sqrt();
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let x = [0.4 + r * th.cos(), 0.4 + r * th.sin()];
        covers &= cert.b.eval(&x) >= 0.0;
        let y = [rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)];
        if cert.b.eval(&y) >= 0.0 {
            inside &= y[0] * y[0] + y[1] * y[1] < 3.0;
        }
    }
    let pass = code == 0 && verified && bounds_ok && covers && inside && t < Duration::from_secs(300);
    report(
        3,
        pass,
        &format!(
            "exit {code} in {:.2}s, verified {verified}, contains I {covers}, inside radius sqrt(3) {inside}",
            t.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_cbc_contains_cbf() {
    let dir = tempfile::tempdir().unwrap();
    let (out, t) = cbc(&[
        "compare",
        &bundled("nonlinear_affine.json"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let code = out.status.code().unwrap();
    let doc = json(dir.path().join("compare.json"));
    let prob = load_problem("nonlinear_affine.json");
    let cbc_b = load_cert(&dir.path().join("cbc_certificate.json"), &prob).b;
    let cbf_b = load_cert(&dir.path().join("cbf_certificate.json"), &prob).b;
    // Independent re-check of the returned multiplier.
    let witness_ok = doc["sigma"].as_str().is_some_and(|s| {
        let sigma = Polynomial::parse(s, 2).unwrap();
        check_sos(&sigma, MATCH_TOL).is_sos() && check_sos(&(&cbc_b - &(&sigma * &cbf_b)), MATCH_TOL).is_sos()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sampled = (0..10_000).all(|_| {
        let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        cbf_b.eval(&x) < 0.0 || cbc_b.eval(&x) >= -1e-8
    });
    let pass = code == 0 && doc["inclusion_certified"] == true && witness_ok && sampled;
    report(
        4,
        pass,
        &format!(
            "exit {code} in {:.2}s, SOS witness {witness_ok}, sampled containment {sampled}, alpha {}",
            t.as_secs_f64(),
            doc["alpha"]
        ),
    );
    assert!(pass);
}

/// Returns (min B, min s, completed runs) from a 100-start simulation.
fn simulate_100(problem: &str, cert: &Path, controller: &str, dir: &Path) -> (i32, f64, f64, u64) {
    let (out, _) = cbc(&[
        "simulate",
        &bundled(problem),
        cert.to_str().unwrap(),
        "--starts",
        "100",
        "--horizon",
        "10",
        "--dt",
        "1e-3",
        "--controller",
        controller,
        "--out",
        dir.to_str().unwrap(),
    ]);
    let doc = json(dir.join("simulation.json"));
    (
        out.status.code().unwrap(),
        doc["min_b"].as_f64().unwrap_or(f64::NEG_INFINITY),
        doc["min_s"].as_f64().unwrap_or(f64::NEG_INFINITY),
        doc["completed"].as_u64().unwrap_or(0),
    )
}

#[test]
fn criterion_5_invariance_at_desk_scale() {
    let mut lines = Vec::new();
    let mut pass = true;
    for plant in ["nonlinear_affine.json", "lti_unstable.json"] {
        let dir = tempfile::tempdir().unwrap();
        let (code, _) = synth_into(plant, dir.path());
        if code != 0 {
            pass = false;
            lines.push(format!("{plant}: synth exit {code}"));
            continue;
        }
        let (_, min_b, min_s, done) = simulate_100(
            plant,
            &dir.path().join("certificate.json"),
            "polynomial",
            &dir.path().join("sim"),
        );
        let ok = min_b >= -1e-4 && min_s >= 0.0 && done == 100;
        pass &= ok;
        lines.push(format!(
            "{plant}: min B {min_b:.2e}, min s {min_s:.3}, {done}/100 completed"
        ));
    }
    let dir = tempfile::tempdir().unwrap();
    let (_, _, min_s, _) = simulate_100(
        "lti_unstable.json",
        Path::new(&bundled("lti_printed_certificate.json")),
        "zero",
        dir.path(),
    );
    let exits = min_s < 0.0;
    pass &= exits;
    lines.push(format!("zero controller leaves S: {exits}"));
    report(5, pass, &lines.join("; "));
    assert!(pass);
}

fn random_symmetric(rng: &mut impl Rng, k: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
    (&m + m.transpose()) * 0.5
}

fn random_pd(rng: &mut impl Rng, k: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(k, k) * 0.1
}

fn upper_entries(block: usize, m: &DMatrix<f64>) -> Vec<Entry> {
    let mut out = Vec::new();
    for r in 0..m.nrows() {
        for c in r..m.ncols() {
            out.push(Entry::new(block, r, c, m[(r, c)]));
        }
    }
    out
}

/// Strictly primal and dual feasible: `b = A(X0)`, `C = A^T(y0) + S0`.
fn random_feasible_sdp(rng: &mut impl Rng) -> SdpProblem {
    let sizes: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..=5)).collect();
    let mut prob = SdpProblem::new(sizes.iter().map(|&k| Block::Psd(k)).collect(), ObjectiveSense::Minimize);
    let x0: Vec<DMatrix<f64>> = sizes.iter().map(|&k| random_pd(rng, k)).collect();
    let mut c: Vec<DMatrix<f64>> = sizes.iter().map(|&k| random_pd(rng, k)).collect();
    let dim: usize = sizes.iter().map(|k| k * (k + 1) / 2).sum();
    for _ in 0..rng.gen_range(1..=dim) {
        let y0 = rng.gen_range(-1.0..1.0);
        let mut entries = Vec::new();
        let mut rhs = 0.0;
        for (j, &k) in sizes.iter().enumerate() {
            let a = random_symmetric(rng, k);
            rhs += a.dot(&x0[j]);
            c[j] += &a * y0;
            entries.extend(upper_entries(j, &a));
        }
        prob.add_constraint(entries, rhs);
    }
    for (j, cj) in c.iter().enumerate() {
        prob.objective.extend(upper_entries(j, cj));
    }
    prob
}

fn random_poly(rng: &mut impl Rng, degree: u32, scale: f64) -> Polynomial {
    Polynomial::from_terms(
        2,
        monomial_basis(2, degree)
            .into_iter()
            .map(|m| (m, rng.gen_range(-scale..scale))),
    )
}

#[test]
fn criterion_6_solver_suite() {
    let settings = SdpSettings::default();
    let mut notes = Vec::new();

    // min tr(diag(1, 2) X) s.t. tr X = 1 has optimum 1.
    let mut tr = SdpProblem::new(vec![Block::Psd(2)], ObjectiveSense::Minimize);
    tr.objective = vec![Entry::new(0, 0, 0, 1.0), Entry::new(0, 1, 1, 2.0)];
    tr.add_constraint(vec![Entry::new(0, 0, 0, 1.0), Entry::new(0, 1, 1, 1.0)], 1.0);
    let trace_ok = solve(&tr, &settings).is_ok_and(|s| (s.primal_objective - 1.0).abs() <= 1e-6);
    notes.push(format!("trace example {trace_ok}"));

    let mut neg = SdpProblem::new(vec![Block::Psd(1)], ObjectiveSense::Minimize);
    neg.add_constraint(vec![Entry::new(0, 0, 0, 1.0)], -1.0);
    let infeasible_ok = solve(&neg, &settings).is_ok_and(|s| s.status == SdpStatus::Infeasible);
    notes.push(format!("1x1 infeasible detected {infeasible_ok}"));

    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst_gap: f64 = 0.0;
    let mut random_ok = true;
    for _ in 0..50 {
        let prob = random_feasible_sdp(&mut rng);
        match solve(&prob, &settings) {
            Ok(sol) if sol.status == SdpStatus::Optimal => {
                let r = residuals(&prob, &sol);
                worst_gap = worst_gap.max(r.gap);
                random_ok &= r.gap <= 1e-7
                    && sol
                        .x
                        .iter()
                        .all(|x| x.as_matrix().map_or(true, |m| sdp::min_eigenvalue(m) >= -1e-8));
            }
            _ => random_ok = false,
        }
    }
    notes.push(format!("50 random SDPs {random_ok} (worst gap {worst_gap:.1e})"));

    let mut sos_ok = true;
    for _ in 0..50 {
        let mut sum = Polynomial::zero(2);
        for _ in 0..rng.gen_range(1..=3) {
            let q = random_poly(&mut rng, 2, 2.0);
            sum = &sum + &(&q * &q);
        }
        sos_ok &= check_sos(&sum, MATCH_TOL).is_sos();
    }
    notes.push(format!("50 random sums of squares accepted {sos_ok}"));
    let motzkin = Polynomial::parse("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", 2).unwrap();
    let rejects =
        !check_sos(&motzkin, MATCH_TOL).is_sos() && !check_sos(&Polynomial::constant(2, -1.0), MATCH_TOL).is_sos();
    notes.push(format!("Motzkin and -1 rejected {rejects}"));

    let pass = trace_ok && infeasible_ok && random_ok && sos_ok && rejects;
    report(6, pass, &notes.join(", "));
    assert!(pass);
}

#[test]
fn criterion_7_property_suites() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut notes = Vec::new();

    let mut grad_ok = true;
    let mut hom_ok = true;
    for _ in 0..200 {
        let a = random_poly(&mut rng, 4, 5.0);
        let b = random_poly(&mut rng, 4, 5.0);
        let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let g = a.gradient().eval(&x);
        let h = 1e-5;
        for i in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[i] += h;
            xm[i] -= h;
            let fd = (a.eval(&xp) - a.eval(&xm)) / (2.0 * h);
            grad_ok &= (fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0);
        }
        let abs_sum = |q: &Polynomial| q.terms().map(|(m, c)| c.abs() * m.eval(&x).abs()).sum::<f64>();
        let prod = a.eval(&x) * b.eval(&x);
        hom_ok &= ((&a * &b).eval(&x) - prod).abs() <= 1e-10 * (abs_sum(&a) * abs_sum(&b)).max(prod.abs());
        let sum = a.eval(&x) + b.eval(&x);
        hom_ok &= ((&a + &b).eval(&x) - sum).abs() <= 1e-10 * (abs_sum(&a) + abs_sum(&b)).max(1.0);
    }
    notes.push(format!(
        "gradient vs differences {grad_ok}, evaluation homomorphism {hom_ok}"
    ));

    let mut round_trip = true;
    for _ in 0..20 {
        let q = random_poly(&mut rng, 2, 2.0);
        let p = &q * &q;
        round_trip &= match check_sos(&p, MATCH_TOL) {
            SosCheck::Sos(w) => (&p - &w.polynomial(2)).max_abs_coeff() <= 1e-6 && w.residual <= 1e-6,
            SosCheck::NotSos => false,
        };
    }
    notes.push(format!("SOS round trip {round_trip}"));

    let prob = load_problem("nonlinear_affine.json");
    let monotone = match synthesize(&prob, &SynthesisOptions::default()) {
        Ok((_, trace)) => {
            let bbox = safe_set_bbox(&prob.s).unwrap();
            let pts: Vec<Vec<f64>> = (0..5000).map(|_| bbox.sample(&mut rng)).collect();
            let mut prev = &trace.b0;
            let mut ok = !trace.records.is_empty();
            for rec in &trace.records {
                ok &= pts.iter().all(|x| prev.eval(x) < 0.0 || rec.b.eval(x) >= -1e-8);
                prev = &rec.b;
            }
            ok && trace.records.windows(2).all(|w| w[1].area >= w[0].area)
        }
        Err(_) => false,
    };
    notes.push(format!("monotone enlargement {monotone}"));

    let lti = load_problem("lti_unstable.json");
    let cert = load_cert(Path::new(&bundled("lti_printed_certificate.json")), &lti);
    let filter = QpFilter::new(&lti, &cert, FilterMode::Relaxed).unwrap();
    let mut qp_ok = true;
    let mut tested = 0;
    while tested < 20 {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let u_star = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        if cert.b.eval(&x) < 0.0 {
            continue;
        }
        let Ok(u) = filter.filter(&x, &u_star) else {
            continue;
        };
        tested += 1;
        let again = filter.filter(&x, &u).unwrap();
        qp_ok &= (again[0] - u[0]).abs() <= 1e-9 && (again[1] - u[1]).abs() <= 1e-9;
        let dist = (u[0] - u_star[0]).hypot(u[1] - u_star[1]);
        let (coef, offset) = filter.safety_constraint(&x).unwrap();
        for _ in 0..500 {
            let v = [rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)];
            if coef[0] * v[0] + coef[1] * v[1] + offset >= 0.0 {
                qp_ok &= dist <= (v[0] - u_star[0]).hypot(v[1] - u_star[1]) + 1e-9;
            }
        }
    }
    notes.push(format!("QP filter idempotent and minimal {qp_ok}"));

    let pass = grad_ok && hom_ok && round_trip && monotone && qp_ok;
    report(7, pass, &notes.join(", "));
    assert!(pass);
}
