//! The five verbs. Each returns an exit code or a [`CliError`].

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cbc_core::cbc::area_proxy;
use cbc_core::qpfilter::DEFAULT_BAND;
use cbc_core::verify::{invariance_check, nudged_starts, safe_set_bbox, sample_boundary, BoundingBox, SimOutcome};
use cbc_core::{
    certify, check_inclusion, complete_certificate, simulate as run_sim, synthesize, verify_certificate, CbcError,
    Certificate, Controller, Degrees, FilterMode, IterationTrace, Mode, Polynomial, PolynomialVector, QpFilter,
    SdpSettings, SosWitness, SynthesisOptions, SynthesisProblem, Trajectory, VerificationReport, VerifySettings,
};
use serde::Serialize;

use crate::files::{write_json, CertificateFile, Metadata, ProblemFile};
use crate::plot::{contours, Contour, Grid, Svg, PALETTE};
use crate::{
    CliError, CompareCmd, ControllerArg, FilterArg, LevelsetCmd, SimArgs, SimulateCmd, SynthArgs, SynthCmd, VerifyCmd,
    EXIT_OK, EXIT_VERIFY,
};

const SVG_SIZE: f64 = 600.0;
/// Boundary samples used for starts and the inward-flow check.
const BOUNDARY_SAMPLES: usize = 720;
/// Allowed dip of `B` along simulated trajectories.
const INV_TOL: f64 = 1e-4;

fn out_dir(dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn degrees_with(pf: &ProblemFile, overrides: &[(String, u32)]) -> Result<Degrees, CliError> {
    let mut d = pf.degrees()?;
    for (k, v) in overrides {
        d.set(k, *v)
            .map_err(|e| CliError::Usage(format!("--degrees {k}: {e}")))?;
    }
    Ok(d)
}

fn synthesis_options(pf: &ProblemFile, args: &SynthArgs, mode: Mode) -> SynthesisOptions {
    let mut opts = SynthesisOptions {
        seed: args.seed.unwrap_or(pf.seed),
        mode,
        ..Default::default()
    };
    if let Some(k) = args.max_iters {
        opts.max_iterations = k;
    }
    opts
}

fn synthesis_error(e: CbcError) -> CliError {
    match e {
        CbcError::InvalidProblem(m) => CliError::Parse(m),
        e => CliError::Infeasible(e.to_string()),
    }
}

fn verify_settings(trajectories: usize, sim: &SimArgs) -> Result<VerifySettings, CliError> {
    if !(sim.dt > 0.0) || !(sim.horizon >= sim.dt) {
        return Err(CliError::Usage(format!(
            "--dt must be positive and --horizon at least --dt (got {} and {})",
            sim.dt, sim.horizon
        )));
    }
    Ok(VerifySettings {
        trajectories,
        horizon: sim.horizon,
        dt: sim.dt,
        ..Default::default()
    })
}

fn metadata(trace: Option<&IterationTrace>, source: &Path) -> Metadata {
    Metadata {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        iterations: trace.map(|t| t.records.len()),
        stop: trace.map(|t| format!("{:?}", t.stop)),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs()),
        source: source.file_name().map(|s| s.to_string_lossy().into_owned()),
    }
}

fn join_polys(v: &PolynomialVector) -> String {
    v.iter().map(|p| p.to_string()).collect::<Vec<_>>().join("; ")
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

/// One row per iteration; row 0 is the initial candidate.
pub fn trace_csv(trace: &IterationTrace) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "iteration",
        "area",
        "alpha",
        "controller",
        "certificate",
        "multipliers",
        "B",
        "u",
    ])
    .map_err(csv_err)?;
    w.write_record([
        "0".to_string(),
        format!("{}", trace.area0),
        String::new(),
        format!("{:?}", trace.init),
        String::new(),
        String::new(),
        trace.b0.to_string(),
        String::new(),
    ])
    .map_err(csv_err)?;
    for r in &trace.records {
        w.write_record([
            r.iteration.to_string(),
            format!("{}", r.area),
            r.alpha.map(|a| format!("{a}")).unwrap_or_default(),
            format!("{:?}", r.controller_status),
            format!("{:?}", r.cbc_status),
            r.multiplier_status
                .map(|s| format!("{s:?}"))
                .unwrap_or_else(|| "Kept".into()),
            r.b.to_string(),
            join_polys(&r.u),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

/// All trajectories in one table with a leading trajectory index.
pub fn trajectories_csv(trs: &[Trajectory], n: usize, m: usize) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["trajectory".to_string(), "t".to_string()];
    head.extend((1..=n).map(|i| format!("x{i}")));
    head.extend((1..=m).map(|i| format!("u{i}")));
    w.write_record(&head).map_err(csv_err)?;
    for (k, tr) in trs.iter().enumerate() {
        for i in 0..tr.times.len() {
            let mut row = vec![k.to_string(), format!("{}", tr.times[i])];
            row.extend(tr.states[i].iter().map(|v| format!("{v}")));
            row.extend(tr.inputs[i].iter().map(|v| format!("{v}")));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Debug, Serialize)]
struct ConditionWitness {
    name: String,
    residual: f64,
    min_eigenvalue: f64,
    gram_size: usize,
}

#[derive(Debug, Serialize)]
struct SosSummary {
    certified: bool,
    /// `file` when the multipliers came with the certificate, `searched`
    /// when they were recomputed.
    multipliers: &'static str,
    conditions: Vec<ConditionWitness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl SosSummary {
    fn new(source: &'static str, result: Result<&[(String, SosWitness)], String>) -> Self {
        match result {
            Ok(ws) => SosSummary {
                certified: true,
                multipliers: source,
                conditions: ws
                    .iter()
                    .map(|(name, w)| ConditionWitness {
                        name: name.clone(),
                        residual: w.residual,
                        min_eigenvalue: w.min_eigenvalue,
                        gram_size: w.basis.len(),
                    })
                    .collect(),
                error: None,
            },
            Err(e) => SosSummary {
                certified: false,
                multipliers: source,
                conditions: Vec::new(),
                error: Some(e),
            },
        }
    }
}

#[derive(Debug, Serialize)]
struct VerificationDoc<'a> {
    passed: bool,
    sos: SosSummary,
    sampling: &'a VerificationReport,
}

fn print_report(label: &str, sos: &SosSummary, rep: &VerificationReport) {
    println!("{label}");
    println!(
        "  sos conditions: {} ({} multipliers{})",
        if sos.certified { "certified" } else { "NOT certified" },
        sos.multipliers,
        sos.error.as_ref().map(|e| format!(", {e}")).unwrap_or_default()
    );
    let line = |name: &str, c: &cbc_core::verify::ConditionResult| {
        println!(
            "  {name:<14} {} worst margin {:+.3e} over {} samples",
            if c.passed { "pass" } else { "FAIL" },
            c.worst_margin,
            c.samples
        );
    };
    line("safe", &rep.safe);
    line("init", &rep.init);
    line("derivative", &rep.derivative);
    line("input", &rep.input);
    line("interior input", &rep.interior_input);
    if let Some(t) = &rep.trajectories {
        println!(
            "  trajectories   {} {} runs, min B {:+.3e}, min s {:+.3e}",
            if t.passed { "pass" } else { "FAIL" },
            t.count,
            t.min_b,
            t.min_s
        );
    }
}

pub fn synth(cmd: &SynthCmd) -> Result<i32, CliError> {
    let pf = ProblemFile::load(&cmd.problem)?;
    let problem = pf.to_problem(degrees_with(&pf, &cmd.synth.degrees)?)?;
    let mode = cmd.mode.map(Mode::from).unwrap_or(pf.mode);
    let settings = verify_settings(cmd.trajectories, &cmd.sim)?;
    let dir = out_dir(&cmd.out.out)?;
    let opts = synthesis_options(&pf, &cmd.synth, mode);
    let (cert, trace) = synthesize(&problem, &opts).map_err(synthesis_error)?;

    CertificateFile::from_certificate(&cert, metadata(Some(&trace), &cmd.problem))
        .save(&dir.join("certificate.json"))?;
    write_text(&dir.join("trace.csv"), &trace_csv(&trace)?)?;

    let rep = verify_certificate(&problem, &cert, &settings).map_err(|e| CliError::Verification(e.to_string()))?;
    let sos = SosSummary::new("file", Ok(&cert.witnesses));
    let passed = rep.passed();
    println!(
        "synthesized {:?} certificate in {} iterations (init {:?}, stop {:?})",
        mode,
        trace.records.len(),
        trace.init,
        trace.stop
    );
    println!("B = {}", cert.b);
    for (j, u) in cert.u.iter().enumerate() {
        println!("u{} = {u}", j + 1);
    }
    if let Some(a) = cert.alpha {
        println!("alpha = {a}");
    }
    print_report("verification:", &sos, &rep);
    write_json(
        &dir.join("verification.json"),
        &VerificationDoc {
            passed,
            sos,
            sampling: &rep,
        },
    )?;
    Ok(if passed { EXIT_OK } else { EXIT_VERIFY })
}

/// Problem, certificate and whether multipliers were present in the file.
fn load_pair(
    problem_path: &Path,
    cert_path: &Path,
    overrides: &[(String, u32)],
) -> Result<(SynthesisProblem, Certificate, bool), CliError> {
    let pf = ProblemFile::load(problem_path)?;
    let cf = CertificateFile::load(cert_path)?;
    cf.check_dims(&pf)?;
    let problem = pf.to_problem(degrees_with(&pf, overrides)?)?;
    let (cert, had) = cf.to_certificate(problem.n_input_constraints())?;
    Ok((problem, cert, had))
}

/// Re-certifies the SOS conditions, searching multipliers when missing.
fn sos_check(problem: &SynthesisProblem, cert: &mut Certificate, had: bool) -> SosSummary {
    if had {
        match certify(problem, cert) {
            Ok(ws) => {
                cert.witnesses = ws;
                SosSummary::new("file", Ok(&cert.witnesses))
            }
            Err(e) => SosSummary::new("file", Err(e.to_string())),
        }
    } else {
        match complete_certificate(problem, &cert.b, &cert.u, cert.mode, &SdpSettings::default()) {
            Ok(full) => {
                *cert = full;
                SosSummary::new("searched", Ok(&cert.witnesses))
            }
            Err(e) => SosSummary::new("searched", Err(e.to_string())),
        }
    }
}

pub fn verify(cmd: &VerifyCmd) -> Result<i32, CliError> {
    let (problem, mut cert, had) = load_pair(&cmd.problem, &cmd.certificate, &cmd.degrees)?;
    let settings = verify_settings(cmd.trajectories, &cmd.sim)?;
    let dir = out_dir(&cmd.out.out)?;
    let sos = sos_check(&problem, &mut cert, had);
    let rep = verify_certificate(&problem, &cert, &settings).map_err(|e| CliError::Verification(e.to_string()))?;
    let passed = sos.certified && rep.passed();
    print_report("verification:", &sos, &rep);
    write_json(
        &dir.join("verification.json"),
        &VerificationDoc {
            passed,
            sos,
            sampling: &rep,
        },
    )?;
    println!("{}", if passed { "PASSED" } else { "FAILED" });
    Ok(if passed { EXIT_OK } else { EXIT_VERIFY })
}

/// Plot window: the safe set's box with a margin.
fn plot_box(problem: &SynthesisProblem) -> Result<BoundingBox, CliError> {
    safe_set_bbox(&problem.s)
        .map(|b| b.inflate(0.15))
        .map_err(|e| CliError::Verification(format!("safe set: {e}")))
}

fn sampling_box(problem: &SynthesisProblem) -> Result<BoundingBox, CliError> {
    safe_set_bbox(&problem.s)
        .map(|b| b.inflate(0.5))
        .map_err(|e| CliError::Verification(format!("safe set: {e}")))
}

/// Canvas with the safe set, the initial set and `B = 0` drawn.
fn base_svg(problem: &SynthesisProblem, b: &Polynomial, bbox: &BoundingBox, k: usize) -> (Svg, Vec<Contour>) {
    let mut svg = Svg::new(bbox, SVG_SIZE);
    for c in contours(&Grid::sample(&problem.s, bbox, k), 0.0) {
        svg.contour(&c, "black", 1.5, None);
    }
    for c in contours(&Grid::sample(&problem.w, bbox, k), 0.0) {
        svg.contour(&c, "#2ca02c", 1.5, Some("6 4"));
    }
    let zero = contours(&Grid::sample(b, bbox, k), 0.0);
    for c in &zero {
        svg.contour(c, "#d62728", 2.5, None);
    }
    (svg, zero)
}

#[derive(Debug, Serialize)]
struct ContourSummary {
    pieces: usize,
    all_closed: bool,
}

impl ContourSummary {
    fn of(cs: &[Contour]) -> Self {
        ContourSummary {
            pieces: cs.len(),
            all_closed: !cs.is_empty() && cs.iter().all(|c| c.closed),
        }
    }
}

#[derive(Debug, Serialize)]
struct InwardSummary {
    samples: usize,
    inward: usize,
}

#[derive(Debug, Serialize)]
struct SimulationDoc {
    controller: String,
    trajectories: usize,
    completed: usize,
    invariance_passed: bool,
    min_b: f64,
    min_s: f64,
    inputs_admissible: bool,
    inward_flow: InwardSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    contour: Option<ContourSummary>,
}

pub fn simulate(cmd: &SimulateCmd) -> Result<i32, CliError> {
    let (problem, mut cert, had) = load_pair(&cmd.problem, &cmd.certificate, &[])?;
    verify_settings(0, &cmd.sim)?;
    if cmd.grid < 2 {
        return Err(CliError::Usage("--grid must be at least 2".into()));
    }
    let dir = out_dir(&cmd.out.out)?;
    let n = problem.n;

    let nominal = if cmd.nominal.is_empty() {
        PolynomialVector::zeros(n, problem.m)
    } else {
        if cmd.nominal.len() != problem.m {
            return Err(CliError::Usage(format!(
                "--nominal: expected {} components, got {}",
                problem.m,
                cmd.nominal.len()
            )));
        }
        let ps = cmd
            .nominal
            .iter()
            .enumerate()
            .map(|(j, s)| Polynomial::parse(s, n).map_err(|e| CliError::Usage(format!("--nominal[{j}]: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        PolynomialVector::new(ps).map_err(|e| CliError::Usage(e.to_string()))?
    };
    if cmd.controller == ControllerArg::QpFilter && !had && cmd.filter == FilterArg::Relaxed {
        // The relaxed constraint needs lambda1; keep zero if none is found.
        if let Ok(full) = complete_certificate(&problem, &cert.b, &cert.u, cert.mode, &SdpSettings::default()) {
            cert = full;
        }
    }
    let filter = match cmd.controller {
        ControllerArg::QpFilter => {
            let mode = match cmd.filter {
                FilterArg::Relaxed => FilterMode::Relaxed,
                FilterArg::Switching => FilterMode::Switching { band: DEFAULT_BAND },
            };
            Some(QpFilter::new(&problem, &cert, mode).map_err(|e| CliError::Usage(e.to_string()))?)
        }
        _ => None,
    };
    let controller = match (&filter, cmd.controller) {
        (Some(f), _) => Controller::Filtered {
            filter: f,
            nominal: &nominal,
        },
        (None, ControllerArg::Zero) => Controller::Zero,
        _ => Controller::Polynomial(&cert.u),
    };

    let settings = VerifySettings::default();
    let samples = sample_boundary(&cert.b, &sampling_box(&problem)?, BOUNDARY_SAMPLES, &settings)
        .map_err(|e| CliError::Verification(format!("boundary sampling: {e}")))?;
    let starts = nudged_starts(&cert.b, &samples.points, cmd.starts, settings.nudge);
    let trs = starts
        .iter()
        .map(|x0| run_sim(&problem, &controller, x0, cmd.sim.horizon, cmd.sim.dt))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    write_text(&dir.join("trajectories.csv"), &trajectories_csv(&trs, n, problem.m)?)?;

    // Inward flow on the sampled boundary under the same feedback.
    let grad = cert.b.gradient();
    let mut arrows = Vec::new();
    let mut inward = 0;
    for x in &samples.points {
        let u = match &controller {
            Controller::Zero => vec![0.0; problem.m],
            Controller::Polynomial(u) => u.eval(x),
            Controller::Filtered { filter, nominal } => match filter.filter(x, &nominal.eval(x)) {
                Ok(u) => u,
                Err(_) => continue,
            },
        };
        let xdot = problem.vector_field(x, &u);
        let lie: f64 = grad.eval(x).iter().zip(&xdot).map(|(a, b)| a * b).sum();
        if lie > 0.0 {
            inward += 1;
        }
        arrows.push((x.clone(), xdot));
    }

    let inv = invariance_check(&problem, &cert, &trs, INV_TOL);
    let inputs_admissible = trs.iter().all(|tr| {
        tr.inputs
            .iter()
            .all(|u| problem.input_slack(u).iter().all(|s| *s >= -1e-9))
    });
    let contour = if n == 2 {
        let bbox = plot_box(&problem)?;
        let (mut svg, zero) = base_svg(&problem, &cert.b, &bbox, cmd.grid);
        let step = (arrows.len() / 36).max(1);
        for (x, v) in arrows.iter().step_by(step) {
            svg.arrow([x[0], x[1]], [v[0], v[1]], 0.12, "#444");
        }
        for (k, tr) in trs.iter().enumerate() {
            let stride = (tr.states.len() / 500).max(1);
            let pts: Vec<[f64; 2]> = tr.states.iter().step_by(stride).map(|x| [x[0], x[1]]).collect();
            svg.polyline(&pts, PALETTE[k % PALETTE.len()], 1.0);
        }
        svg.label("black: safe set, green dashed: initial set, red: B = 0", 0);
        svg.label(
            &format!(
                "{} trajectories, inward flow at {inward}/{} boundary samples",
                trs.len(),
                samples.points.len()
            ),
            1,
        );
        write_text(&dir.join("simulation.svg"), &svg.finish())?;
        Some(ContourSummary::of(&zero))
    } else {
        None
    };

    let doc = SimulationDoc {
        controller: format!("{:?}", cmd.controller),
        trajectories: trs.len(),
        completed: trs.iter().filter(|t| t.outcome == SimOutcome::Completed).count(),
        invariance_passed: inv.passed,
        min_b: inv.min_b,
        min_s: inv.min_s,
        inputs_admissible,
        inward_flow: InwardSummary {
            samples: samples.points.len(),
            inward,
        },
        contour,
    };
    write_json(&dir.join("simulation.json"), &doc)?;
    println!(
        "{} trajectories: min B {:+.3e}, min s {:+.3e}, invariance {}",
        doc.trajectories,
        doc.min_b,
        doc.min_s,
        if inv.passed { "holds" } else { "VIOLATED" }
    );
    println!("inward flow at {inward}/{} boundary samples", samples.points.len());
    Ok(if trs.is_empty() || inv.passed {
        EXIT_OK
    } else {
        EXIT_VERIFY
    })
}

#[derive(Debug, Serialize)]
struct LevelsetDoc {
    which: String,
    grid: usize,
    min: f64,
    max: f64,
    /// Range over grid nodes with `B >= 0`.
    min_in_set: Option<f64>,
    max_in_set: Option<f64>,
    levels: Vec<f64>,
    contour_pieces: usize,
}

/// Levels for the chosen function: `0` for `B`, evenly spaced interior
/// levels otherwise; none when the grid is flat.
fn levels_for(which: &str, min: f64, max: f64) -> Vec<f64> {
    if which == "B" {
        return vec![0.0];
    }
    if max - min <= 1e-12 * max.abs().max(1.0) {
        return Vec::new();
    }
    (1..12).map(|k| min + (max - min) * k as f64 / 12.0).collect()
}

pub fn levelset(cmd: &LevelsetCmd) -> Result<i32, CliError> {
    let (problem, cert, _) = load_pair(&cmd.problem, &cmd.certificate, &[])?;
    if problem.n != 2 {
        return Err(CliError::Usage(format!(
            "levelset needs a planar problem, state_dim is {}",
            problem.n
        )));
    }
    if cmd.grid < 2 {
        return Err(CliError::Usage("--grid must be at least 2".into()));
    }
    let func = if cmd.which == "B" {
        cert.b.clone()
    } else {
        let j = cmd
            .which
            .strip_prefix('u')
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|k| (1..=problem.m).contains(k))
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "--which: expected B or u1..u{}, got `{}`",
                    problem.m, cmd.which
                ))
            })?;
        cert.u[j - 1].clone()
    };
    let dir = out_dir(&cmd.out.out)?;
    let bbox = plot_box(&problem)?;
    let grid = Grid::sample(&func, &bbox, cmd.grid);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x1", "x2", "value"]).map_err(csv_err)?;
    let mut in_set: Option<(f64, f64)> = None;
    for (jy, y) in grid.ys.iter().enumerate() {
        for (ix, x) in grid.xs.iter().enumerate() {
            let v = grid.at(ix, jy);
            w.write_record([format!("{x}"), format!("{y}"), format!("{v}")])
                .map_err(csv_err)?;
            if cert.b.eval(&[*x, *y]) >= 0.0 {
                in_set = Some(in_set.map_or((v, v), |(lo, hi)| (lo.min(v), hi.max(v))));
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    let name = format!("levelset_{}", cmd.which);
    std::fs::write(dir.join(format!("{name}.csv")), bytes).map_err(|e| CliError::Io(e.to_string()))?;

    let (min, max) = grid.min_max();
    let levels = levels_for(&cmd.which, min, max);
    let mut svg = Svg::new(&bbox, SVG_SIZE);
    for c in contours(&Grid::sample(&problem.s, &bbox, cmd.grid), 0.0) {
        svg.contour(&c, "black", 1.5, None);
    }
    if cmd.which != "B" {
        for c in contours(&Grid::sample(&cert.b, &bbox, cmd.grid), 0.0) {
            svg.contour(&c, "#999", 1.0, Some("4 3"));
        }
    }
    let mut pieces = 0;
    for (k, level) in levels.iter().enumerate() {
        let cs = contours(&grid, *level);
        pieces += cs.len();
        let color = if cmd.which == "B" {
            "#d62728"
        } else {
            PALETTE[k % PALETTE.len()]
        };
        for c in &cs {
            svg.contour(c, color, 1.5, None);
        }
    }
    svg.label(&format!("{} level lines over [{min:.3}, {max:.3}]", cmd.which), 0);
    write_text(&dir.join(format!("{name}.svg")), &svg.finish())?;

    let doc = LevelsetDoc {
        which: cmd.which.clone(),
        grid: cmd.grid,
        min,
        max,
        min_in_set: in_set.map(|r| r.0),
        max_in_set: in_set.map(|r| r.1),
        levels,
        contour_pieces: pieces,
    };
    write_json(&dir.join(format!("{name}.json")), &doc)?;
    println!(
        "{}: grid range [{min}, {max}], {} level lines",
        cmd.which,
        doc.levels.len()
    );
    if let Some((lo, hi)) = in_set {
        println!("  range over B >= 0: [{lo}, {hi}]");
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct CompareDoc {
    inclusion_certified: bool,
    sigma: Option<String>,
    alpha: Option<f64>,
    area_cbc: f64,
    area_cbf: f64,
    iterations_cbc: usize,
    iterations_cbf: usize,
}

pub fn compare(cmd: &CompareCmd) -> Result<i32, CliError> {
    let pf = ProblemFile::load(&cmd.problem)?;
    let problem = pf.to_problem(degrees_with(&pf, &cmd.synth.degrees)?)?;
    if cmd.grid < 2 {
        return Err(CliError::Usage("--grid must be at least 2".into()));
    }
    let dir = out_dir(&cmd.out.out)?;
    let (cbc, cbc_trace) =
        synthesize(&problem, &synthesis_options(&pf, &cmd.synth, Mode::Cbc)).map_err(synthesis_error)?;
    let (cbf, cbf_trace) =
        synthesize(&problem, &synthesis_options(&pf, &cmd.synth, Mode::Cbf)).map_err(synthesis_error)?;
    CertificateFile::from_certificate(&cbc, metadata(Some(&cbc_trace), &cmd.problem))
        .save(&dir.join("cbc_certificate.json"))?;
    CertificateFile::from_certificate(&cbf, metadata(Some(&cbf_trace), &cmd.problem))
        .save(&dir.join("cbf_certificate.json"))?;

    let inclusion = check_inclusion(&cbc.b, &cbf.b, cmd.sigma_degree);
    let area_box = safe_set_bbox(&problem.s).map_err(|e| CliError::Verification(e.to_string()))?;
    let doc = CompareDoc {
        inclusion_certified: inclusion.is_certified(),
        sigma: match &inclusion {
            cbc_core::Inclusion::Certified { sigma, .. } => Some(sigma.to_string()),
            cbc_core::Inclusion::Unknown => None,
        },
        alpha: cbf.alpha,
        area_cbc: area_proxy(&cbc.b, &area_box),
        area_cbf: area_proxy(&cbf.b, &area_box),
        iterations_cbc: cbc_trace.records.len(),
        iterations_cbf: cbf_trace.records.len(),
    };
    write_json(&dir.join("compare.json"), &doc)?;
    if problem.n == 2 {
        let bbox = plot_box(&problem)?;
        let (mut svg, _) = base_svg(&problem, &cbc.b, &bbox, cmd.grid);
        for c in contours(&Grid::sample(&cbf.b, &bbox, cmd.grid), 0.0) {
            svg.contour(&c, "#1f77b4", 2.0, Some("8 4"));
        }
        svg.label("red: CBC zero level set, blue dashed: CBF zero level set", 0);
        write_text(&dir.join("compare.svg"), &svg.finish())?;
    }
    println!("B_cbc = {}", cbc.b);
    println!("B_cbf = {}", cbf.b);
    if let Some(a) = cbf.alpha {
        println!("alpha = {a}");
    }
    println!(
        "area fraction: cbc {:.4}, cbf {:.4}; inclusion {}",
        doc.area_cbc,
        doc.area_cbf,
        if doc.inclusion_certified {
            "certified"
        } else {
            "NOT certified"
        }
    );
    Ok(if doc.inclusion_certified { EXIT_OK } else { EXIT_VERIFY })
}
