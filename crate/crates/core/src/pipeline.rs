//! Run orchestration: configuration, the solve and analysis stages, the
//! epsilon sweep, the Monte Carlo stage and the verification report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, CheckRecord, ConeCheck, Extremum, Lemma1, NodalCheck, NodalCurve, Simplicity, SymmetryResidual,
};
use crate::error::{Error, Result};
use crate::export::{self, names};
use crate::fem::{self, EigenOptions, EigenPair, SparseSymMatrix};
use crate::geometry::{self, DomainSpec, Point2, RegionLabel};
use crate::mesh::{self, Mesh, SizeField, TopologyReport};
use crate::rbm::{self, GridEstimate, Mu2Bound, P1Estimate, RbmConfig, RbmRow};

pub const DEFAULT_EPSILON: f64 = 1.0 / 3200.0;
pub const DEFAULT_SWEEP: [f64; 3] = [1.0 / 2000.0, 1.0 / 4000.0, 1.0 / 8000.0];
pub const KERNEL_RATIO: f64 = 1e-10;
pub const KERNEL_CV: f64 = 1e-6;
/// Lemma 1 violations are tolerated up to this multiple of the solver residual.
pub const LEMMA1_RESIDUAL_FACTOR: f64 = 10.0;
pub const SIMPLICITY_FACTOR: f64 = 10.0;
pub const MARGIN_FACTOR: f64 = 5.0;
pub const ARGMAX_RADIUS: f64 = 0.05;
pub const SYMMETRY_TOL: f64 = 1e-2;
pub const CONE_SAMPLES: usize = 10_000;
pub const CONE_TOL: f64 = 1e-3;
pub const CONE_MAX_FRACTION: f64 = 1e-3;
pub const CONE_SEED: u64 = 0x5eed;
/// The log-scaled bound may vary by less than this factor across the sweep.
pub const LOG_SCALING_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSettings {
    pub h_max: f64,
    /// Defaults to `ε/3`; values above `ε/3` are clamped.
    pub h_neck: Option<f64>,
    pub h_hub: f64,
    pub grading_ratio: f64,
    pub min_angle_deg: f64,
}

impl Default for MeshSettings {
    fn default() -> Self {
        let d = SizeField::for_domain(&DomainSpec::new(DEFAULT_EPSILON).expect("default epsilon"));
        MeshSettings {
            h_max: d.h_max,
            h_neck: None,
            h_hub: d.h_hub,
            grading_ratio: d.grading_ratio,
            min_angle_deg: mesh::DEFAULT_MIN_ANGLE,
        }
    }
}

impl MeshSettings {
    pub fn size_field(&self, spec: &DomainSpec) -> SizeField {
        let cap = spec.epsilon / 3.0;
        SizeField {
            h_max: self.h_max,
            h_neck: self.h_neck.unwrap_or(cap).min(cap),
            h_hub: self.h_hub,
            grading_ratio: self.grading_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub k: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = EigenOptions::default();
        SolverSettings { k: 12, tol: d.tol, max_iter: d.max_iter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmSettings {
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl Default for RbmSettings {
    fn default() -> Self {
        let d = RbmConfig::default();
        RbmSettings { n_paths: d.n_paths, dt: d.dt, horizon: d.horizon, seed: d.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub epsilon: f64,
    pub mesh: MeshSettings,
    pub solver: SolverSettings,
    pub sweep_epsilons: Vec<f64>,
    pub rbm: RbmSettings,
    pub out_dir: PathBuf,
    /// Also write the stiffness and mass matrices in coordinate form.
    pub export_matrices: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epsilon: DEFAULT_EPSILON,
            mesh: MeshSettings::default(),
            solver: SolverSettings::default(),
            sweep_epsilons: DEFAULT_SWEEP.to_vec(),
            rbm: RbmSettings::default(),
            out_dir: PathBuf::from("out"),
            export_matrices: false,
        }
    }
}

/// Configuration keys, in echo order.
pub const CONFIG_KEYS: [&str; 17] = [
    "epsilon",
    "mesh.h_max",
    "mesh.h_neck",
    "mesh.h_hub",
    "mesh.grading_ratio",
    "mesh.min_angle_deg",
    "solver.k",
    "solver.tol",
    "solver.max_iter",
    "sweep.epsilons",
    "rbm.n_paths",
    "rbm.dt",
    "rbm.horizon",
    "rbm.seed",
    "out_dir",
    "export_matrices",
    "threads",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::param(format!("cannot parse {key} = {value:?}")))
}

impl RunConfig {
    /// Sets one dotted key. Hyphens in key names are accepted for underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "epsilon" => self.epsilon = parse(&key, v)?,
            "mesh.h_max" => self.mesh.h_max = parse(&key, v)?,
            "mesh.h_neck" => self.mesh.h_neck = if v == "auto" { None } else { Some(parse(&key, v)?) },
            "mesh.h_hub" => self.mesh.h_hub = parse(&key, v)?,
            "mesh.grading_ratio" => self.mesh.grading_ratio = parse(&key, v)?,
            "mesh.min_angle_deg" => self.mesh.min_angle_deg = parse(&key, v)?,
            "solver.k" => self.solver.k = parse(&key, v)?,
            "solver.tol" => self.solver.tol = parse(&key, v)?,
            "solver.max_iter" => self.solver.max_iter = parse(&key, v)?,
            "sweep.epsilons" | "epsilons" => {
                self.sweep_epsilons = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(&key, s))
                    .collect::<Result<_>>()?
            }
            "rbm.n_paths" => self.rbm.n_paths = parse(&key, v)?,
            "rbm.dt" => self.rbm.dt = parse(&key, v)?,
            "rbm.horizon" => self.rbm.horizon = parse(&key, v)?,
            "rbm.seed" => self.rbm.seed = parse(&key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "export_matrices" => self.export_matrices = parse(&key, v)?,
            // thread count is process state, handled by the front end
            "threads" => {}
            other => return Err(Error::param(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::param(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// `key = value` lines that reproduce this configuration exactly.
    pub fn echo(&self) -> String {
        let f = |x: f64| format!("{x:?}");
        let mut lines = vec![
            ("epsilon", f(self.epsilon)),
            ("mesh.h_max", f(self.mesh.h_max)),
            ("mesh.h_neck", self.mesh.h_neck.map_or("auto".to_string(), f)),
            ("mesh.h_hub", f(self.mesh.h_hub)),
            ("mesh.grading_ratio", f(self.mesh.grading_ratio)),
            ("mesh.min_angle_deg", f(self.mesh.min_angle_deg)),
            ("solver.k", self.solver.k.to_string()),
            ("solver.tol", f(self.solver.tol)),
            ("solver.max_iter", self.solver.max_iter.to_string()),
            ("sweep.epsilons", self.sweep_epsilons.iter().map(|&e| f(e)).collect::<Vec<_>>().join(",")),
            ("rbm.n_paths", self.rbm.n_paths.to_string()),
            ("rbm.dt", f(self.rbm.dt)),
            ("rbm.horizon", f(self.rbm.horizon)),
            ("rbm.seed", self.rbm.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("export_matrices", self.export_matrices.to_string()),
        ];
        lines.retain(|(k, _)| CONFIG_KEYS.contains(k));
        lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        DomainSpec::new(self.epsilon)?;
        self.mesh.size_field(&DomainSpec::new(self.epsilon)?).validate()?;
        if self.solver.k < 3 {
            return Err(Error::param(format!("solver.k must be at least 3 (got {})", self.solver.k)));
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            return Err(Error::param(format!("solver.tol must lie in (0, 1) (got {})", self.solver.tol)));
        }
        for &e in &self.sweep_epsilons {
            DomainSpec::new(e)?;
        }
        self.rbm_config().validate()
    }

    pub fn rbm_config(&self) -> RbmConfig {
        RbmConfig {
            dt: self.rbm.dt,
            horizon: self.rbm.horizon,
            n_paths: self.rbm.n_paths,
            seed: self.rbm.seed,
            ..RbmConfig::default()
        }
    }

    pub fn eigen_options(&self) -> EigenOptions {
        EigenOptions { k: self.solver.k, tol: self.solver.tol, max_iter: self.solver.max_iter, ..Default::default() }
    }
}

/// The fixed constants of the construction, as echoed by `--version`.
pub fn constants() -> Vec<(&'static str, &'static str)> {
    vec![
        ("epsilon upper limit", "1/200"),
        ("small-eigenvalue bound regime", "epsilon < 1/1600"),
        ("test-function inner radius", "400ε"),
        ("test-function log scale", "800ε"),
        ("hot-spot disc", "A = B(0, 1/10)"),
        ("nodal diameter cutoff", "10^-10"),
    ]
}

/// Mesh, matrices and eigenpairs at one refinement level.
#[derive(Debug, Clone)]
pub struct Solved {
    pub spec: DomainSpec,
    pub mesh: Mesh,
    pub k: SparseSymMatrix,
    pub m: SparseSymMatrix,
    pub eigs: Vec<EigenPair>,
}

pub fn mesh_spec(spec: &DomainSpec, cfg: &RunConfig, level: u32) -> Result<Mesh> {
    let domain = geometry::build_domain(spec)?;
    mesh::triangulate(&domain, &cfg.mesh.size_field(spec).refined(level), cfg.mesh.min_angle_deg)
}

pub fn solve_spec(spec: &DomainSpec, cfg: &RunConfig, level: u32) -> Result<Solved> {
    let mesh = mesh_spec(spec, cfg, level)?;
    let (k, m) = fem::assemble(&mesh)?;
    let eigs = fem::smallest_eigenpairs(&k, &m, &cfg.eigen_options())?;
    Ok(Solved { spec: *spec, mesh, k, m, eigs })
}

/// The first eigenpair whose sign-normalized argmax is an interior node near the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HubMode {
    /// One-based position in the spectrum (`1` is the constant).
    pub index: usize,
    pub value: f64,
    pub margin: f64,
}

fn hub_mode(mesh: &Mesh, eigs: &[EigenPair]) -> Option<HubMode> {
    eigs.iter().enumerate().skip(1).find_map(|(j, e)| {
        let (phi, _) = analysis::sign_normalize(mesh, &e.vector).ok()?;
        let ext = analysis::extremum_report(mesh, &phi);
        (ext.interior && ext.distance_to_origin <= ARGMAX_RADIUS)
            .then_some(HubMode { index: j + 1, value: e.value, margin: ext.margin })
    })
}

/// Everything measured for one `ε` on two refinement levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub epsilon: f64,
    pub mesh_id: String,
    pub topology: TopologyReport,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub mu2_coarse: f64,
    /// Richardson estimate of the error in `μ2`.
    pub mu2_err: f64,
    /// Coefficient of variation of the first eigenvector.
    pub kernel_cv: f64,
    pub lemma1: Option<Lemma1>,
    pub nodal: NodalCheck,
    pub nodal_domains: usize,
    /// `∫_A φ2` after sign normalization; `None` when the sign is ambiguous.
    pub c2: Option<f64>,
    pub extremum: Extremum,
    pub margin_coarse: f64,
    /// Richardson estimate of the error in the margin.
    pub margin_err: f64,
    pub simplicity: Simplicity,
    pub symmetry: SymmetryResidual,
    pub cone: Option<ConeCheck>,
    pub hub_mode: Option<HubMode>,
}

/// An analysed `ε` with the fine-level data kept for export.
#[derive(Debug, Clone)]
pub struct EpsilonRun {
    pub summary: EpsilonSummary,
    pub fine: Solved,
    pub phi2: Vec<f64>,
    pub curve: NodalCurve,
}

fn normalized_phi2(mesh: &Mesh, eigs: &[EigenPair]) -> (Vec<f64>, Option<f64>) {
    match analysis::sign_normalize(mesh, &eigs[1].vector) {
        Ok((phi, c2)) => (phi, Some(c2)),
        Err(_) => (eigs[1].vector.clone(), None),
    }
}

fn coefficient_of_variation(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean.abs()
}

/// Solves on the configured mesh and on its refinement, and runs every check
/// on the finer one. The cone check is optional because it dominates the cost
/// of a sweep.
pub fn analyze_epsilon(spec: &DomainSpec, cfg: &RunConfig, with_cone: bool) -> Result<EpsilonRun> {
    let coarse = solve_spec(spec, cfg, 0)?;
    let fine = solve_spec(spec, cfg, 1)?;
    let (phi_c, _) = normalized_phi2(&coarse.mesh, &coarse.eigs);
    let margin_coarse = analysis::extremum_report(&coarse.mesh, &phi_c).margin;

    let mesh = &fine.mesh;
    let eigs = &fine.eigs;
    let (phi2, c2) = normalized_phi2(mesh, eigs);
    let curve = analysis::nodal_curves(mesh, &phi2)?;
    let extremum = analysis::extremum_report(mesh, &phi2);
    let mu2_err = analysis::richardson(coarse.eigs[1].value, eigs[1].value);
    let lemma1 = if spec.epsilon < DomainSpec::LEMMA1_MAX_EPSILON {
        Some(analysis::lemma1(spec, mesh, &fine.k, &fine.m)?)
    } else {
        None
    };
    let cone = if with_cone {
        Some(analysis::cone_monotonicity_check(spec, mesh, &phi2, CONE_SAMPLES, CONE_TOL, CONE_SEED)?)
    } else {
        None
    };
    let summary = EpsilonSummary {
        epsilon: spec.epsilon,
        mesh_id: export::mesh_id(mesh),
        topology: mesh.topology_report(),
        eigenvalues: eigs.iter().map(|e| e.value).collect(),
        residuals: eigs.iter().map(|e| e.residual).collect(),
        mu1: eigs[0].value,
        mu2: eigs[1].value,
        mu3: eigs[2].value,
        mu2_coarse: coarse.eigs[1].value,
        mu2_err,
        kernel_cv: coefficient_of_variation(&eigs[0].vector),
        lemma1,
        nodal: analysis::check_nodal_in_m(spec, &curve),
        nodal_domains: analysis::nodal_domain_count(mesh, &phi2),
        c2,
        extremum,
        margin_coarse,
        margin_err: analysis::richardson(margin_coarse, extremum.margin),
        simplicity: analysis::simplicity_gap(eigs, mu2_err)?,
        symmetry: analysis::symmetry_residual(mesh, &phi2),
        cone,
        hub_mode: hub_mode(mesh, eigs),
    };
    Ok(EpsilonRun { summary, fine, phi2, curve })
}

fn tag(name: &str, eps: f64) -> String {
    format!("{name}[eps={eps:e}]")
}

fn lemma1_record(name: &str, s: &EpsilonSummary) -> Option<CheckRecord> {
    let l = s.lemma1?;
    let tol = LEMMA1_RESIDUAL_FACTOR * s.residuals[1] * s.mu2;
    Some(CheckRecord::at_most(name, s.mu2, l.bound + tol))
}

fn nodal_records(s: &EpsilonSummary, sweep: bool) -> Vec<CheckRecord> {
    let name = |n: &str| if sweep { tag(n, s.epsilon) } else { n.to_string() };
    let mut domains = CheckRecord::flag(&name("nodal_domains"), s.nodal_domains == 2);
    domains.measured = s.nodal_domains as f64;
    domains.threshold = 2.0;
    domains.margin = -(s.nodal_domains as f64 - 2.0).abs();
    vec![CheckRecord::at_most(&name("nodal_in_m"), s.nodal.outside as f64, 0.0), domains]
}

fn argmax_records(s: &EpsilonSummary, sweep: bool) -> Vec<CheckRecord> {
    let name = |n: &str| if sweep { tag(n, s.epsilon) } else { n.to_string() };
    vec![
        CheckRecord::flag(&name("sign_normalization"), s.c2.is_some()),
        CheckRecord::flag(&name("argmax_interior"), s.extremum.interior),
        CheckRecord::at_most(&name("argmax_near_origin"), s.extremum.distance_to_origin, ARGMAX_RADIUS),
        CheckRecord::above(&name("argmax_margin"), s.extremum.margin, MARGIN_FACTOR * s.margin_err),
    ]
}

/// Checks for the main `ε`.
pub fn main_checks(s: &EpsilonSummary) -> Vec<CheckRecord> {
    let mut out = vec![
        CheckRecord::at_most("kernel_mu1", s.mu1.abs(), KERNEL_RATIO * s.mu2),
        CheckRecord::at_most("kernel_cv", s.kernel_cv, KERNEL_CV),
    ];
    out.extend(lemma1_record("lemma1_bound", s));
    out.extend(nodal_records(s, false));
    out.push(CheckRecord::above("simplicity", s.simplicity.gap, SIMPLICITY_FACTOR * s.simplicity.err_est));
    out.extend(argmax_records(s, false));
    out.push(CheckRecord::at_most("symmetry", s.symmetry.residual, SYMMETRY_TOL));
    if let Some(c) = &s.cone {
        out.push(CheckRecord::at_most(
            "cone_monotonicity",
            c.violations as f64 / c.total.max(1) as f64,
            CONE_MAX_FRACTION,
        ));
    }
    out
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub bound: f64,
    pub nodal_pass: bool,
    pub margin: f64,
    pub summary: Option<EpsilonSummary>,
    pub error: Option<String>,
}

/// Analyses each `ε` of the sweep, largest first. A failing `ε` yields a row
/// carrying the error and the sweep continues.
pub fn epsilon_sweep(cfg: &RunConfig) -> Vec<SweepRow> {
    let mut eps = cfg.sweep_epsilons.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    eps.into_iter()
        .map(|e| {
            let run = DomainSpec::new(e).and_then(|spec| analyze_epsilon(&spec, cfg, false));
            match run {
                Ok(r) => {
                    let s = r.summary;
                    SweepRow {
                        epsilon: e,
                        mu2: s.mu2,
                        mu3: s.mu3,
                        bound: s.lemma1.map_or(f64::NAN, |l| l.bound),
                        nodal_pass: s.nodal.pass,
                        margin: s.extremum.margin,
                        summary: Some(s),
                        error: None,
                    }
                }
                Err(err) => SweepRow {
                    epsilon: e,
                    mu2: f64::NAN,
                    mu3: f64::NAN,
                    bound: f64::NAN,
                    nodal_pass: false,
                    margin: f64::NAN,
                    summary: None,
                    error: Some(err.to_string()),
                },
            }
        })
        .collect()
}

/// `bound · log(1/(800ε))`, which stays of order one if the bound decays like
/// `1/log(1/ε)`.
pub fn log_scaled_bound(eps: f64, bound: f64) -> f64 {
    bound * (1.0 / (800.0 * eps)).ln()
}

pub fn sweep_checks(rows: &[SweepRow]) -> Vec<CheckRecord> {
    let mut out = Vec::new();
    for r in rows {
        match &r.summary {
            Some(s) => {
                out.extend(lemma1_record(&tag("sweep_lemma1_bound", r.epsilon), s));
                out.extend(nodal_records(s, true));
                out.extend(argmax_records(s, true));
            }
            None => out.push(CheckRecord::flag(&tag("sweep_row", r.epsilon), false)),
        }
    }
    // rows are sorted by decreasing ε, so μ2 must decrease along them
    let mu: Vec<f64> = rows.iter().map(|r| r.mu2).collect();
    let worst_step = mu.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let mut dec = CheckRecord::at_most("sweep_mu2_decreasing", worst_step, 0.0);
    dec.pass = rows.len() >= 2 && mu.windows(2).all(|w| w[1] < w[0]);
    out.push(dec);
    let scaled: Vec<f64> = rows.iter().map(|r| log_scaled_bound(r.epsilon, r.bound)).collect();
    let hi = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    let mut scaling = CheckRecord::at_most("sweep_log_scaling", hi / lo, LOG_SCALING_FACTOR);
    scaling.pass = scaling.measured < LOG_SCALING_FACTOR && lo > 0.0 && scaled.iter().all(|x| x.is_finite());
    out.push(scaling);
    out
}

/// Where the `γ` of the `p2` estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaSource {
    /// A nodal component reaching a bridge, extended into `I` along the bridge axis.
    NodalComponent,
    /// No nodal component reaches a bridge; the fixed bridge-axis polyline is used.
    Fixture,
}

/// Extends the first nodal component that enters a bridge by a straight piece
/// along that bridge's axis to `x = 4.9`, just inside `I`.
pub fn gamma_from_nodal(spec: &DomainSpec, curve: &NodalCurve) -> Option<Vec<Point2>> {
    curve.polylines.iter().find_map(|pl| {
        let idx = pl.iter().position(|&p| {
            matches!(geometry::region_of(spec, p), RegionLabel::BridgeInner | RegionLabel::BridgeOuter)
        })?;
        let (g, _) = geometry::canonicalize(pl[idx]);
        let mut gamma = pl[..=idx].to_vec();
        gamma.push(g.apply(Point2::new(5.0, 0.0)));
        gamma.push(g.apply(Point2::new(4.9, 0.0)));
        Some(gamma)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmSummary {
    pub p1: P1Estimate,
    pub p2: GridEstimate,
    pub gamma: Vec<Point2>,
    pub gamma_source: GammaSource,
    /// `−log(1 − p̂1 p̂2)`; a diagnostic only.
    pub mu2_bound: Mu2Bound,
}

impl RbmSummary {
    pub fn rows(&self) -> Vec<RbmRow> {
        let mut rows = self.p1.inner.rows.clone();
        rows.extend(self.p1.outer.rows.iter().cloned());
        rows.extend(self.p2.rows.iter().cloned());
        rows
    }
}

pub fn rbm_stage(spec: &DomainSpec, cfg: &RunConfig, curve: Option<&NodalCurve>) -> Result<RbmSummary> {
    let rc = cfg.rbm_config();
    let p1 = rbm::estimate_p1(spec, &rc)?;
    let nodal = curve
        .and_then(|c| gamma_from_nodal(spec, c))
        .filter(|g| rbm::p2_start_grid(spec, g).is_ok());
    let (gamma, gamma_source) = match nodal {
        Some(g) => (g, GammaSource::NodalComponent),
        None => (rbm::default_gamma(), GammaSource::Fixture),
    };
    let p2 = rbm::estimate_p2(spec, &gamma, &rc)?;
    let mu2_bound = rbm::mu2_lower_bound(p1.min().probability, p2.min.probability)?;
    Ok(RbmSummary { p1, p2, gamma, gamma_source, mu2_bound })
}

pub fn rbm_checks(r: &RbmSummary) -> Vec<CheckRecord> {
    vec![
        CheckRecord::above("rbm_p1_positive", r.p1.min().ci_low, 0.0),
        CheckRecord::above("rbm_p2_positive", r.p2.min.ci_low, 0.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub tool: String,
    pub version: String,
    pub config: String,
    pub constants: Vec<(String, String)>,
    pub epsilon: f64,
    pub mesh_id: String,
    pub all_pass: bool,
    pub checks: Vec<CheckRecord>,
    pub analysis: EpsilonSummary,
    pub sweep: Option<Vec<SweepRow>>,
    pub rbm: Option<RbmSummary>,
}

impl VerificationReport {
    pub fn new(cfg: &RunConfig, analysis: EpsilonSummary, mut checks: Vec<CheckRecord>) -> Self {
        checks.retain(|c| !c.name.is_empty());
        VerificationReport {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.echo(),
            constants: constants().into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            epsilon: analysis.epsilon,
            mesh_id: analysis.mesh_id.clone(),
            all_pass: checks.iter().all(|c| c.pass),
            checks,
            analysis,
            sweep: None,
            rbm: None,
        }
    }

    pub fn failed(&self) -> Vec<&CheckRecord> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    fn refresh(&mut self) {
        self.all_pass = self.checks.iter().all(|c| c.pass);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    Domain,
    Mesh,
    Solve,
    Analyze,
    Sweep,
    Rbm,
    All,
    Export,
}

/// Files written by a command, and the report for commands that verify.
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub report: Option<VerificationReport>,
}

#[derive(Serialize)]
struct DomainArtifact<'a> {
    epsilon: f64,
    outer_x: f64,
    fundamental_vertices: [Point2; 10],
    outer_loop: &'a [Point2],
    hole_loops: &'a [Vec<Point2>],
    slit: Option<[Point2; 2]>,
    area: f64,
    constants: Vec<(&'static str, &'static str)>,
}

fn write_domain(dir: &Path, spec: &DomainSpec) -> Result<PathBuf> {
    let poly = geometry::build_domain(spec)?;
    let art = DomainArtifact {
        epsilon: spec.epsilon,
        outer_x: spec.outer_x,
        fundamental_vertices: geometry::vertices(spec)?,
        outer_loop: &poly.outer_loop,
        hole_loops: &poly.hole_loops,
        slit: poly.slit,
        area: poly.area(),
        constants: constants(),
    };
    let path = dir.join(names::DOMAIN);
    export::write_json(&path, &art)?;
    Ok(path)
}

#[derive(Serialize)]
struct MeshArtifact<'a> {
    mesh_id: String,
    epsilon: f64,
    size: &'a SizeField,
    min_angle_target_deg: f64,
    topology: TopologyReport,
}

fn write_mesh_json(dir: &Path, mesh: &Mesh, spec: &DomainSpec) -> Result<PathBuf> {
    let art = MeshArtifact {
        mesh_id: export::mesh_id(mesh),
        epsilon: spec.epsilon,
        size: &mesh.size,
        min_angle_target_deg: mesh.min_angle_deg,
        topology: mesh.topology_report(),
    };
    let path = dir.join(names::MESH);
    export::write_json(&path, &art)?;
    Ok(path)
}

fn write_solution(dir: &Path, cfg: &RunConfig, solved: &Solved, phi2: &[f64]) -> Result<Vec<PathBuf>> {
    let mut files = vec![write_mesh_json(dir, &solved.mesh, &solved.spec)?];
    let eigen = dir.join(names::EIGEN);
    export::write_eigen_csv(&eigen, &solved.eigs)?;
    let vtk = dir.join(names::MESH_VTK);
    export::write_vtk(&vtk, &solved.mesh, Some(("phi2", phi2)))?;
    files.extend([eigen, vtk]);
    if cfg.export_matrices {
        let (k, m) = (dir.join(names::STIFFNESS), dir.join(names::MASS));
        export::write_matrix(&k, &solved.k)?;
        export::write_matrix(&m, &solved.m)?;
        files.extend([k, m]);
    }
    Ok(files)
}

fn write_sweep_csv(dir: &Path, rows: &[SweepRow]) -> Result<PathBuf> {
    let f = export::fmt_f;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                f(r.epsilon),
                f(r.mu2),
                f(r.mu3),
                f(r.bound),
                r.nodal_pass.to_string(),
                f(r.margin),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let path = dir.join(names::SWEEP);
    export::write_csv(&path, &["epsilon", "mu2", "mu3", "bound", "nodal_pass", "margin", "error"], &table)?;
    Ok(path)
}

/// Runs one command, writing its artifacts into `cfg.out_dir`.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    let dir = cfg.out_dir.as_path();
    if command == Command::Export {
        return Ok(Outcome { files: export::export_plot_data(dir)?, report: None });
    }
    cfg.validate()?;
    let spec = DomainSpec::new(cfg.epsilon)?;
    let mut files = Vec::new();
    let mut report = None;
    match command {
        Command::Domain => files.push(write_domain(dir, &spec)?),
        Command::Mesh => {
            let mesh = mesh_spec(&spec, cfg, 1)?;
            files.push(write_mesh_json(dir, &mesh, &spec)?);
        }
        Command::Solve => {
            let solved = solve_spec(&spec, cfg, 1)?;
            let (phi2, _) = normalized_phi2(&solved.mesh, &solved.eigs);
            files.extend(write_solution(dir, cfg, &solved, &phi2)?);
        }
        Command::Sweep => {
            let rows = epsilon_sweep(cfg);
            files.push(write_sweep_csv(dir, &rows)?);
        }
        Command::Rbm => {
            let solved = solve_spec(&spec, cfg, 1)?;
            let (phi2, _) = normalized_phi2(&solved.mesh, &solved.eigs);
            let curve = analysis::nodal_curves(&solved.mesh, &phi2)?;
            let r = rbm_stage(&spec, cfg, Some(&curve))?;
            let path = dir.join(names::RBM);
            export::write_rbm_csv(&path, &r.rows())?;
            files.push(path);
        }
        Command::Analyze | Command::All => {
            let all = command == Command::All;
            if all {
                files.push(write_domain(dir, &spec)?);
            }
            let run = analyze_epsilon(&spec, cfg, true)?;
            files.extend(write_solution(dir, cfg, &run.fine, &run.phi2)?);
            let nodal = dir.join(names::NODAL);
            export::write_nodal_csv(&nodal, &run.curve)?;
            files.push(nodal);
            let checks = main_checks(&run.summary);
            let mut rep = VerificationReport::new(cfg, run.summary.clone(), checks);
            if all {
                let rows = epsilon_sweep(cfg);
                files.push(write_sweep_csv(dir, &rows)?);
                rep.checks.extend(sweep_checks(&rows));
                rep.sweep = Some(rows);
                let r = rbm_stage(&spec, cfg, Some(&run.curve))?;
                let path = dir.join(names::RBM);
                export::write_rbm_csv(&path, &r.rows())?;
                files.push(path);
                rep.checks.extend(rbm_checks(&r));
                rep.rbm = Some(r);
                let contours = dir.join(names::CONTOURS);
                export::write_contours_csv(&contours, &run.fine.mesh, &run.phi2)?;
                files.push(contours);
            }
            rep.refresh();
            let path = dir.join(names::REPORT);
            export::write_json(&path, &rep)?;
            files.push(path);
            report = Some(rep);
        }
        Command::Export => unreachable!("handled above"),
    }
    Ok(Outcome { files, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("mesh.h-neck", "1e-5").unwrap();
        cfg.set("sweep.epsilons", "5e-4, 2.5e-4").unwrap();
        cfg.set("rbm.seed", "7").unwrap();
        let mut back = RunConfig::default();
        back.apply_kv_text(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.echo(), cfg.echo());
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::default().set("mesh.nope", "1").is_err());
        assert!(RunConfig::default().apply_kv_text("epsilon 3").is_err());
    }

    #[test]
    fn h_neck_clamped() {
        let spec = DomainSpec::new(1.0 / 3200.0).unwrap();
        let m = MeshSettings { h_neck: Some(1.0), ..Default::default() };
        assert_eq!(m.size_field(&spec).h_neck, spec.epsilon / 3.0);
    }

    #[test]
    fn large_epsilon_is_operational_error() {
        let cfg = RunConfig { epsilon: 0.01, ..Default::default() };
        let err = run(Command::Solve, &cfg).unwrap_err();
        assert!(err.to_string().contains("epsilon must be < 1/200"));
    }
}
