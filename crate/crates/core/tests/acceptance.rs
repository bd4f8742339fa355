//! Runs every acceptance criterion at its stated tolerance and prints one
//! PASS/FAIL line per criterion. Exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use hotspot_core::analysis::{self, CheckRecord};
use hotspot_core::fem::{self, EigenOptions};
use hotspot_core::geometry::{DomainSpec, Point2, PolygonWithSlit};
use hotspot_core::mesh::Mesh;
use hotspot_core::pipeline::{self, Command, EpsilonSummary, MeshSettings, RunConfig, SolverSettings, SweepRow};
use hotspot_core::rbm::{hitting_probability, RbmConfig, RbmDomain, Target};

const KERNEL_MAX_TIME: Duration = Duration::from_secs(600);
const KERNEL_MAX_TRIANGLES: usize = 400_000;
const RBM_MAX_TIME: Duration = Duration::from_secs(300);
const SOLVER_ORACLE_TOL: f64 = 0.01;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

/// All records whose name matches `base` exactly or carries an `[eps=…]` tag.
fn records<'a>(checks: &'a [CheckRecord], base: &str) -> Vec<&'a CheckRecord> {
    checks
        .iter()
        .filter(|c| c.name == base || c.name.strip_prefix(base).is_some_and(|r| r.starts_with("[eps=")))
        .collect()
}

fn summarize(checks: &[&CheckRecord]) -> Outcome {
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} (measured {:e}, threshold {:e})", c.name, c.measured, c.threshold))
        .collect();
    let pass = !checks.is_empty() && failed.is_empty();
    let detail = if checks.is_empty() {
        "no records".to_string()
    } else if failed.is_empty() {
        format!("{} checks", checks.len())
    } else {
        format!("failed: {}", failed.join("; "))
    };
    Outcome::new(pass, detail)
}

fn kernel(main: &EpsilonSummary, elapsed: Duration) -> Outcome {
    let checks = pipeline::main_checks(main);
    let mut recs = records(&checks, "kernel_mu1");
    recs.extend(records(&checks, "kernel_cv"));
    let s = summarize(&recs);
    let tris = main.topology.faces;
    let pass = s.pass && elapsed <= KERNEL_MAX_TIME && tris <= KERNEL_MAX_TRIANGLES;
    Outcome::new(
        pass,
        format!(
            "mu1 = {:e}, mu2 = {:e}, cv = {:e}, {tris} triangles, {:.1} s; {}",
            main.mu1,
            main.mu2,
            main.kernel_cv,
            elapsed.as_secs_f64(),
            s.detail
        ),
    )
}

fn lemma1(sweep_checks: &[CheckRecord], rows: &[SweepRow]) -> Outcome {
    let recs = records(sweep_checks, "sweep_lemma1_bound");
    // every sweep ε must contribute a record
    let s = summarize(&recs);
    let pass = s.pass && recs.len() == rows.len();
    let bounds: Vec<String> = rows.iter().map(|r| format!("{:e}: {:e} <= {:e}", r.epsilon, r.mu2, r.bound)).collect();
    Outcome::new(pass, format!("{}; {}", bounds.join(", "), s.detail))
}

fn trend(sweep_checks: &[CheckRecord], rows: &[SweepRow]) -> Outcome {
    let mut recs = records(sweep_checks, "sweep_mu2_decreasing");
    recs.extend(records(sweep_checks, "sweep_log_scaling"));
    let s = summarize(&recs);
    let mu: Vec<String> = rows.iter().map(|r| format!("{:e}", r.mu2)).collect();
    Outcome::new(s.pass, format!("mu2 = [{}]; {}", mu.join(", "), s.detail))
}

fn by_sweep(sweep_checks: &[CheckRecord], rows: &[SweepRow], bases: &[&str]) -> Outcome {
    let recs: Vec<&CheckRecord> = bases.iter().flat_map(|b| records(sweep_checks, b)).collect();
    let s = summarize(&recs);
    let pass = s.pass && recs.len() == bases.len() * rows.len();
    Outcome::new(pass, s.detail)
}

/// The unit square has `μ2 = μ3 = π²`, so the detector must refuse it.
fn simplicity(main: &EpsilonSummary) -> Outcome {
    let on_d = CheckRecord::above("simplicity", main.simplicity.gap, pipeline::SIMPLICITY_FACTOR * main.simplicity.err_est);
    let opts = EigenOptions { k: 4, ..Default::default() };
    let mu: Vec<Vec<fem::EigenPair>> = [32, 64]
        .iter()
        .map(|&n| {
            let mesh = Mesh::rectangle(1.0, 1.0, n, n).unwrap();
            let (k, m) = fem::assemble(&mesh).unwrap();
            fem::smallest_eigenpairs(&k, &m, &opts).unwrap()
        })
        .collect();
    let err = analysis::richardson(mu[0][1].value, mu[1][1].value);
    let square = analysis::simplicity_gap(&mu[1], err).unwrap();
    let detector_ok = square.gap <= pipeline::SIMPLICITY_FACTOR * square.err_est;
    Outcome::new(
        on_d.pass && detector_ok,
        format!(
            "D: gap {:e} vs 10 x {:e}; square: gap {:e} vs 10 x {:e} ({})",
            main.simplicity.gap,
            main.simplicity.err_est,
            square.gap,
            square.err_est,
            if detector_ok { "rejected" } else { "wrongly accepted" }
        ),
    )
}

fn symmetry(main: &EpsilonSummary) -> Outcome {
    let r = main.symmetry.residual;
    Outcome::new(r <= pipeline::SYMMETRY_TOL, format!("residual {r:e} (tol {:e})", pipeline::SYMMETRY_TOL))
}

fn cone(main: &EpsilonSummary) -> Outcome {
    match &main.cone {
        Some(c) => {
            let frac = c.violations as f64 / c.total.max(1) as f64;
            Outcome::new(
                frac <= pipeline::CONE_MAX_FRACTION && c.total == pipeline::CONE_SAMPLES,
                format!("{} / {} violations at tol {:e}", c.violations, c.total, pipeline::CONE_TOL),
            )
        }
        None => Outcome::new(false, "cone check not run"),
    }
}

fn solver_oracle() -> Outcome {
    let mesh = Mesh::rectangle(1.0, 1.0, 64, 64).unwrap();
    let (k, m) = fem::assemble(&mesh).unwrap();
    let eigs = fem::smallest_eigenpairs(&k, &m, &EigenOptions { k: 6, ..Default::default() }).unwrap();
    let mut exact: Vec<f64> = (0..4).flat_map(|a| (0..4).map(move |b| PI * PI * (a * a + b * b) as f64)).collect();
    exact.sort_by(f64::total_cmp);
    let worst = (1..6).map(|j| (eigs[j].value - exact[j]).abs() / exact[j]).fold(0.0, f64::max);
    Outcome::new(worst <= SOLVER_ORACLE_TOL, format!("worst relative error {worst:e} over the first 5 nonzero"))
}

/// `P(sup_{s ≤ t} |B_s| ≥ 1)` for standard Brownian motion from 0.
fn exit_series(t: f64) -> f64 {
    let s: f64 = (0..200)
        .map(|n| {
            let k = (2 * n + 1) as f64;
            (-1f64).powi(n) / k * (-k * k * PI * PI * t / 8.0).exp()
        })
        .sum();
    1.0 - 4.0 / PI * s
}

fn rbm(cfg: &RunConfig, main_curve: &analysis::NodalCurve) -> Outcome {
    let t0 = Instant::now();
    let rect = PolygonWithSlit::simple(vec![
        Point2::new(4.0, -0.05),
        Point2::new(8.0, -0.05),
        Point2::new(8.0, 0.05),
        Point2::new(4.0, 0.05),
    ]);
    let dom = RbmDomain::new(&rect).unwrap();
    let target = Target::new(
        "x=5|x=7",
        vec![
            (Point2::new(5.0, -0.05), Point2::new(5.0, 0.05)),
            (Point2::new(7.0, -0.05), Point2::new(7.0, 0.05)),
        ],
    );
    let rc = RbmConfig { n_paths: 10_000, ..cfg.rbm_config() };
    let thin = hitting_probability(&dom, Point2::new(6.0, 0.0), &target, &rc).unwrap();
    let exact = exit_series(rc.horizon);
    let thin_ok = (thin.probability - exact).abs() <= 3.0 * thin.half_width;

    let spec = DomainSpec::new(cfg.epsilon).unwrap();
    let mut c = cfg.clone();
    c.rbm.n_paths = 10_000;
    let r = pipeline::rbm_stage(&spec, &c, Some(main_curve)).unwrap();
    let (p1, p2) = (r.p1.min(), &r.p2.min);
    let positive = p1.probability > 0.0 && p2.probability > 0.0 && p1.excludes_zero() && p2.excludes_zero();
    let reported = r.mu2_bound.value.is_finite() || r.mu2_bound.saturated;
    let elapsed = t0.elapsed();
    Outcome::new(
        thin_ok && positive && reported && elapsed <= RBM_MAX_TIME,
        format!(
            "thin {:.4} ± {:.4} vs {exact:.4}; p1 {:.4} [{:.4}, {:.4}]; p2 {:.4} [{:.4}, {:.4}] ({:?} gamma); \
             -log(1 - p1 p2) = {:e}; {:.1} s",
            thin.probability,
            thin.half_width,
            p1.probability,
            p1.ci_low,
            p1.ci_high,
            p2.probability,
            p2.ci_low,
            p2.ci_high,
            r.gamma_source,
            r.mu2_bound.value,
            elapsed.as_secs_f64()
        ),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        mesh: MeshSettings { h_max: 8.0, h_hub: 0.1, ..Default::default() },
        solver: SolverSettings { k: 6, ..Default::default() },
        sweep_epsilons: vec![1.0 / 2000.0, 1.0 / 4000.0],
        out_dir: dir.path().to_path_buf(),
        rbm: pipeline::RbmSettings { n_paths: 1000, ..Default::default() },
        ..Default::default()
    };
    // the report records the output directory, so both runs share it
    let _ = pipeline::run(Command::All, &cfg);
    let first = snapshot(dir.path());
    let _ = pipeline::run(Command::All, &cfg);
    let second = snapshot(dir.path());
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    let pass = !first.is_empty() && first.len() == second.len() && differing.is_empty();
    Outcome::new(pass, format!("{} artifacts, differing: {differing:?}", first.len()))
}

fn main() {
    let cfg = RunConfig::default();
    let spec = DomainSpec::new(cfg.epsilon).unwrap();
    let t0 = Instant::now();
    let main_run = pipeline::analyze_epsilon(&spec, &cfg, true).expect("analysis at the default ε");
    let elapsed = t0.elapsed();
    let main = &main_run.summary;
    let rows = pipeline::epsilon_sweep(&cfg);
    let sweep = pipeline::sweep_checks(&rows);

    let results = [
        ("kernel exactness", kernel(main, elapsed)),
        ("discrete lemma 1 bound", lemma1(&sweep, &rows)),
        ("mu2 trend", trend(&sweep, &rows)),
        ("nodal line in M", by_sweep(&sweep, &rows, &["nodal_in_m", "nodal_domains"])),
        ("simplicity", simplicity(main)),
        (
            "argmax at the hub",
            by_sweep(&sweep, &rows, &["sign_normalization", "argmax_interior", "argmax_near_origin", "argmax_margin"]),
        ),
        ("symmetry", symmetry(main)),
        ("cone monotonicity", cone(main)),
        ("solver oracle", solver_oracle()),
        ("rbm oracles", rbm(&cfg, &main_run.curve)),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
