//! Scenario execution and artifact layout.
//!
//! Output directory:
//!
//! | path | columns / content |
//! |------|-------------------|
//! | `solution.csv` | `node,x,y,u,tag` |
//! | `solve_diagnostics.jsonl` | one `{iter,residual,energy,step_size}` per line |
//! | `green.csv` | `node,x,y,G,density,tag` |
//! | `green.json` | exhaustion trace (computed source) |
//! | `assumptions.json` | decay trend and potential integrals |
//! | `weight.csv` | `node,x,y,W,ground_state,closed_form,tag` |
//! | `weight.json` | provenance, clip fraction, `c_p` |
//! | `reports/<check>.json`, `.txt`, `.csv` | one verification report each |
//! | `summary.txt` | all reports, aligned text |
//! | `diagnostic.json` | error kind and message (failed construction) |
//! | `manifest.json` | written last |

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{SecondsFormat, Utc};
use hardy_core::{
    build_interval_mesh, build_radial_mesh, build_tensor_mesh, chain_rule_residual, coarea_flux, cp_factor_defect, dirichlet_solve,
    green_potential, hardy_margin, mollified_delta, null_criticality_growth, null_sequence_decay, optimal_pair, radial_green_oracle,
    simp_equivalence, weight_from_green, AnisotropicOracle, CellField, ChainTransform, Direction, Error, GreenOptions, HardyWeight,
    MarginOptions, MatrixField, Mesh, NullSequenceOptions, ProblemSpec, ScalarField, SolveOptions, TestFunctionFamily,
    VerificationReport,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Check, GreenSource, MeshConfig, Pipeline, ScenarioConfig};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONSTRUCTION: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    /// `complete`, `checks_failed` or `construction_error`.
    pub status: String,
    pub partial: bool,
    pub exit_code: i32,
    pub checks: Vec<CheckSummary>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug)]
pub enum RunError {
    Io(io::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Io(e) => write!(f, "i/o: {e}"),
        }
    }
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e)
    }
}

struct Writer {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Writer {
    fn put(&mut self, rel: &str, bytes: &[u8]) -> io::Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.artifacts.push(rel.to_string());
        Ok(())
    }

    fn put_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> io::Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.put(rel, &buf)
    }
}

fn build_mesh(c: &ScenarioConfig) -> hardy_core::Result<Arc<Mesh>> {
    let m = match &c.mesh {
        MeshConfig::Radial { n, r_min, r_max, cells, grading } => build_radial_mesh(*n, *r_min, *r_max, *cells, *grading)?,
        MeshConfig::Interval { a, b, cells, grading } => build_interval_mesh(*a, *b, *cells, *grading)?,
        MeshConfig::Tensor2d { x, y, nx, ny, hole } => build_tensor_mesh(*x, *y, *nx, *ny, *hole)?,
    };
    Ok(Arc::new(m))
}

fn build_spec(c: &ScenarioConfig, mesh: &Arc<Mesh>) -> hardy_core::Result<ProblemSpec> {
    let one_d = mesh.is_one_dimensional();
    let v = CellField::from_fn(mesh.clone(), |x| c.v.value(if one_d { x[0].abs() } else { x[0].hypot(x[1]) }))?;
    ProblemSpec::new(c.p, mesh.clone())?.with_matrix(MatrixField::constant(mesh.clone(), c.a.matrix())?)?.with_potential(v)
}

/// Everything the checks need.
struct Construction {
    spec_v: ProblemSpec,
    spec_weighted: ProblemSpec,
    g: ScalarField,
    weight: HardyWeight,
}

fn oracle_green(c: &ScenarioConfig, mesh: &Arc<Mesh>) -> hardy_core::Result<ScalarField> {
    let g = match c.mesh {
        MeshConfig::Radial { n, .. } => radial_green_oracle(c.p, n, None)?.field(mesh)?,
        _ => AnisotropicOracle { p: c.p, a: c.a.matrix(), center: c.density_center }.field(mesh)?,
    };
    if let Some((i, &x)) = g.values().iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(Error::NonPositive { node: i, value: x });
    }
    Ok(g)
}

fn green_options(c: &ScenarioConfig) -> GreenOptions {
    let mut opts = GreenOptions::default();
    opts.solve = opts.solve.with_tol(c.green_tol);
    opts.monotone_tol = c.tol.monotone;
    opts
}

fn monotonicity_report(c: &ScenarioConfig, defect: f64, levels: usize) -> VerificationReport {
    VerificationReport::new(
        "exhaustion_monotonicity",
        json!({"levels": levels}),
        defect,
        c.tol.monotone,
        Direction::AtMost,
    )
}

/// Geometrically spaced levels between the boundary values of `G` and its
/// values on the density (or on a positive inner boundary).
fn auto_coarea_levels(g: &ScalarField, density: Option<&ScalarField>) -> Vec<f64> {
    let mesh = g.mesh();
    let gv = g.values();
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    for i in 0..mesh.num_nodes() {
        match mesh.tag(i) {
            hardy_core::NodeTag::OuterBoundary => lo = lo.max(gv[i]),
            hardy_core::NodeTag::InnerBoundary if gv[i] > 0.0 => hi = hi.min(gv[i]),
            hardy_core::NodeTag::InnerBoundary => lo = lo.max(gv[i]),
            hardy_core::NodeTag::Interior => {}
        }
        if density.is_some_and(|d| d.values()[i] > 0.0) {
            hi = hi.min(gv[i]);
        }
    }
    if !hi.is_finite() {
        hi = g.max();
    }
    if !(lo > 0.0) {
        lo = 1e-3 * hi;
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..8).map(|j| (a + (b - a) * (0.1 + 0.8 * j as f64 / 7.0)).exp()).collect()
}

fn failed_report(check: Check, err: &Error) -> VerificationReport {
    let mut r = VerificationReport::new(check.name(), json!({}), f64::NAN, 0.0, Direction::AtMost);
    match err {
        Error::UnderResolved(msg) => r.fail(format!("under-resolved: {msg}")),
        _ => r.fail(format!("error: {err}")),
    }
    r
}

fn run_check(c: &ScenarioConfig, k: &Construction, check: Check) -> hardy_core::Result<VerificationReport> {
    let p = c.p;
    let family = || TestFunctionFamily::new(c.family_kind, c.family_count, c.seed.unwrap_or(0));
    match check {
        Check::HardyMargin => {
            let opts = MarginOptions { tol: c.tol.margin, modulate: true, ..MarginOptions::default() };
            hardy_margin(&k.spec_weighted, &k.weight, &family(), &opts)
        }
        Check::OptimalityProbe => {
            let opts = MarginOptions { tol: c.tol.margin, modulate: true, weight_factor: c.probe_factor, ..MarginOptions::default() };
            let inner = hardy_margin(&k.spec_weighted, &k.weight, &family(), &opts)?;
            let mut params = inner.parameters.clone();
            if let serde_json::Value::Object(m) = &mut params {
                m.insert("factor".into(), json!(c.probe_factor));
            }
            let mut r = VerificationReport::new("optimality_probe", params, inner.statistic, c.probe_threshold, Direction::AtMost);
            r.notes = inner.notes;
            if let Some(t) = inner.artifacts {
                r = r.with_table(t);
            }
            Ok(r)
        }
        Check::NullSequenceDecay => {
            let opts = NullSequenceOptions { slope_tol: c.tol.null_slope, ..NullSequenceOptions::default() };
            let critical = k.spec_weighted.minus_weight(&k.weight.w)?;
            null_sequence_decay(&critical, &k.g, &c.null_k, &opts)
        }
        Check::NullCriticalityGrowth => null_criticality_growth(&k.weight, &k.g, &c.null_tau, c.null_t0, c.tol.null_criticality),
        Check::CoareaFlux => {
            let levels = match &c.coarea_levels {
                Some(l) => l.clone(),
                None => {
                    let density = (c.green_source == GreenSource::Computed).then(|| density_field(c, k.g.mesh())).transpose()?;
                    auto_coarea_levels(&k.g, density.as_ref())
                }
            };
            coarea_flux(&k.g, &k.spec_v.a, p, &levels, c.tol.coarea)
        }
        Check::ChainRuleResidual => chain_rule_residual(&k.spec_v, &positive_profile(&k.g), ChainTransform::Power((p - 1.0) / p), c.tol.chain),
        Check::CpFactor => {
            let defect = cp_factor_defect(&positive_profile(&k.g), p)?;
            Ok(VerificationReport::new("cp_factor", json!({"p": p}), defect, c.tol.cp, Direction::AtMost))
        }
        Check::SimpEquivalence => {
            let critical = k.spec_weighted.minus_weight(&k.weight.w)?;
            simp_equivalence(&critical, &k.weight.ground_state, &family())
        }
    }
}

/// `G` itself when positive everywhere, else `G + sup G`.
fn positive_profile(g: &ScalarField) -> ScalarField {
    if g.min() > 0.0 {
        g.clone()
    } else {
        let s = g.max();
        g.map(|v| v + s).expect("shift of a valid field")
    }
}

fn density_field(c: &ScenarioConfig, mesh: &Arc<Mesh>) -> hardy_core::Result<ScalarField> {
    mollified_delta(mesh, c.density_center, c.density_radius, c.density_mass)
}

/// Build, write fields, run the checks; returns the reports.
fn execute(c: &ScenarioConfig, w: &mut Writer) -> Result<Vec<VerificationReport>, Error> {
    let io_err = |e: io::Error| Error::InvalidArgument(format!("writing artifacts: {e}"));
    let mesh = build_mesh(c)?;
    let spec_v = build_spec(c, &mesh)?;
    let mut reports = Vec::new();

    if c.pipeline == Pipeline::Solve {
        let g = ScalarField::constant(mesh.clone(), c.solve_load);
        let zero = ScalarField::zeros(mesh.clone());
        let opts = SolveOptions::default().with_tol(c.green_tol);
        let res = dirichlet_solve(&spec_v, &g, &zero, &opts)?;
        w.put_with("solution.csv", |b| hardy_core::field::write_node_csv(&mesh, &[("u", res.u.values())], b)).map_err(io_err)?;
        w.put("solve_diagnostics.jsonl", res.diagnostics_jsonl().as_bytes()).map_err(io_err)?;
        let mut r = VerificationReport::new(
            "solve_convergence",
            json!({"iterations": res.iterations, "max_u": res.u.max()}),
            res.residual_norm,
            c.green_tol,
            Direction::AtMost,
        );
        if !res.converged {
            r.fail("solver did not converge");
        }
        reports.push(r);
        return Ok(reports);
    }

    let (g, density, weight, spec_weighted) = match c.green_source {
        GreenSource::Oracle => {
            let g = oracle_green(c, &mesh)?;
            let density = ScalarField::zeros(mesh.clone());
            let weight = match c.pipeline {
                Pipeline::Green => None,
                _ => Some(weight_from_green(&spec_v, &g, &density)?),
            };
            (g, density, weight, spec_v.clone())
        }
        GreenSource::Computed => {
            let phi = density_field(c, &mesh)?;
            if c.pipeline == Pipeline::Green {
                let gp = green_potential(&spec_v, &phi, c.green_levels, &green_options(c))?;
                let assumptions = hardy_core::check_assumptions(&spec_v, &gp)?;
                w.put("green.json", gp.sidecar_json().as_bytes()).map_err(io_err)?;
                w.put("assumptions.json", pretty(&assumptions).as_bytes()).map_err(io_err)?;
                reports.push(monotonicity_report(c, gp.max_monotonicity_defect(), gp.trace.len()));
                (gp.g, gp.density, None, spec_v.clone())
            } else {
                let pair = optimal_pair(&spec_v, &phi, c.green_levels, &green_options(c))?;
                w.put("green.json", pair.green.sidecar_json().as_bytes()).map_err(io_err)?;
                let assumptions = json!({"route": pair.route, "check": pair.assumptions});
                w.put("assumptions.json", pretty(&assumptions).as_bytes()).map_err(io_err)?;
                reports.push(monotonicity_report(c, pair.green.max_monotonicity_defect(), pair.green.trace.len()));
                (pair.green.g, pair.green.density, Some(pair.weight), pair.spec_weighted)
            }
        }
    };
    w.put_with("green.csv", |b| hardy_core::field::write_node_csv(&mesh, &[("G", g.values()), ("density", density.values())], b))
        .map_err(io_err)?;
    let Some(weight) = weight else {
        return Ok(reports);
    };
    w.put_with("weight.csv", |b| weight.write_csv(b)).map_err(io_err)?;
    w.put("weight.json", weight.sidecar_json().as_bytes()).map_err(io_err)?;

    let k = Construction { spec_v, spec_weighted, g, weight };
    for check in c.pipeline.checks() {
        let r = run_check(c, &k, check).unwrap_or_else(|e| failed_report(check, &e));
        reports.push(r);
    }
    Ok(reports)
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidMesh(_) => "invalid_mesh",
        Error::MeshMismatch(_) => "mesh_mismatch",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::LevelOutOfRange { .. } => "level_out_of_range",
        Error::NotPositiveDefinite { .. } => "not_positive_definite",
        Error::NonzeroBoundary { .. } => "nonzero_boundary",
        Error::NonPositive { .. } => "non_positive",
        Error::NotConverged { .. } => "not_converged",
        Error::NotSubcritical { .. } => "not_subcritical",
        Error::CriticalitySuspected(_) => "criticality_suspected",
        Error::SingularSystem { .. } => "singular_system",
        Error::UnderResolved(_) => "under_resolved",
        Error::PerturbationTooNegative { .. } => "perturbation_too_negative",
    }
}

/// Resolve the output directory: `root` (or the config's directory) joined
/// with `output.dir`.
pub fn output_dir(c: &ScenarioConfig, config_path: &Path, root: Option<&Path>) -> PathBuf {
    if c.output_dir.is_absolute() {
        return c.output_dir.clone();
    }
    let base = match root {
        Some(r) => r.to_path_buf(),
        None => config_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    base.join(&c.output_dir)
}

/// Run the scenario into `dir`; the manifest is written last.
pub fn run(c: &ScenarioConfig, dir: &Path) -> Result<RunManifest, RunError> {
    let started = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
    fs::create_dir_all(dir)?;
    // a stale manifest would mark an interrupted rerun as complete
    let manifest_path = dir.join("manifest.json");
    if manifest_path.exists() {
        fs::remove_file(&manifest_path)?;
    }
    let mut w = Writer { dir: dir.to_path_buf(), artifacts: Vec::new() };
    let outcome = execute(c, &mut w);
    let (status, exit_code, checks) = match outcome {
        Ok(reports) => {
            let mut summary = String::new();
            for r in &reports {
                let stem = format!("reports/{}", r.check_name);
                w.put(&format!("{stem}.json"), r.to_json().as_bytes())?;
                w.put(&format!("{stem}.txt"), r.to_text().as_bytes())?;
                if let Some(t) = &r.artifacts {
                    w.put_with(&format!("{stem}.csv"), |b| t.write_csv(b))?;
                }
                summary.push_str(&r.to_text());
                summary.push('\n');
            }
            w.put("summary.txt", summary.as_bytes())?;
            let checks: Vec<CheckSummary> = reports.iter().map(|r| CheckSummary { name: r.check_name.clone(), pass: r.pass }).collect();
            if checks.iter().all(|s| s.pass) {
                ("complete", EXIT_PASS, checks)
            } else {
                ("checks_failed", EXIT_CHECK_FAILED, checks)
            }
        }
        Err(e) => {
            let diag = json!({"kind": error_kind(&e), "message": e.to_string(), "pipeline": c.pipeline});
            w.put("diagnostic.json", pretty(&diag).as_bytes())?;
            ("construction_error", EXIT_CONSTRUCTION, Vec::new())
        }
    };
    let manifest = RunManifest {
        config_hash: c.hash.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        status: status.to_string(),
        partial: exit_code == EXIT_CONSTRUCTION,
        exit_code,
        checks,
        artifacts: w.artifacts,
    };
    let tmp = dir.join("manifest.json.tmp");
    fs::write(&tmp, pretty(&manifest))?;
    fs::rename(&tmp, &manifest_path)?;
    Ok(manifest)
}

/// Pretty-print a manifest and the reports it lists.
pub fn render_manifest(path: &Path) -> io::Result<String> {
    let text = fs::read_to_string(path)?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut s = String::new();
    s.push_str(&format!("{:<14} {}\n", "status", m.status));
    s.push_str(&format!("{:<14} {}\n", "exit code", m.exit_code));
    s.push_str(&format!("{:<14} {}\n", "config hash", m.config_hash));
    s.push_str(&format!("{:<14} {}\n", "tool version", m.tool_version));
    s.push_str(&format!("{:<14} {}\n", "started", m.started));
    s.push_str(&format!("{:<14} {}\n", "finished", m.finished));
    s.push_str(&format!("{:<14} {}\n\n", "artifacts", m.artifacts.len()));
    for a in &m.artifacts {
        if a.starts_with("reports/") && a.ends_with(".json") {
            let r: VerificationReport = serde_json::from_str(&fs::read_to_string(dir.join(a))?)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            s.push_str(&r.to_text());
            s.push('\n');
        } else if a == "diagnostic.json" {
            s.push_str(&fs::read_to_string(dir.join(a))?);
            s.push('\n');
        }
    }
    Ok(s)
}
