//! Scenario files: one `dotted.key = value` per line, `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use hardy_core::{FamilyKind, Grading, Hole, SymMatrix};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Every accepted key, in canonical order.
pub const KEYS: &[&str] = &[
    "mesh.kind",
    "mesh.n",
    "mesh.r_min",
    "mesh.r_max",
    "mesh.cells",
    "mesh.grading",
    "mesh.x",
    "mesh.y",
    "mesh.nx",
    "mesh.ny",
    "mesh.hole",
    "operator.p",
    "operator.a",
    "operator.v",
    "density.center",
    "density.radius",
    "density.mass",
    "green.source",
    "green.levels",
    "green.tol",
    "pipeline",
    "solve.load",
    "seed",
    "family.kind",
    "family.count",
    "null.k",
    "null.tau",
    "null.t0",
    "coarea.levels",
    "probe.factor",
    "probe.threshold",
    "tol.margin",
    "tol.coarea",
    "tol.null_slope",
    "tol.null_criticality",
    "tol.chain",
    "tol.cp",
    "tol.monotone",
    "output.dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.0 {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshConfig {
    Radial { n: usize, r_min: f64, r_max: f64, cells: usize, grading: Grading },
    Interval { a: f64, b: f64, cells: usize, grading: Grading },
    Tensor2d { x: [f64; 2], y: [f64; 2], nx: usize, ny: usize, hole: Option<Hole> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixDescriptor {
    Identity,
    Diag(f64, f64),
    Rotated(f64, f64, f64),
}

impl MatrixDescriptor {
    pub fn matrix(self) -> SymMatrix {
        match self {
            MatrixDescriptor::Identity => SymMatrix::scalar(1.0),
            MatrixDescriptor::Diag(a, b) => SymMatrix::diag(a, b),
            MatrixDescriptor::Rotated(a, b, t) => SymMatrix::rotated_diag(a, b, t),
        }
    }
}

/// Potentials as functions of `ρ` (radius on radial meshes, `x` on
/// intervals, `|x|` on the plane).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialDescriptor {
    Zero,
    Constant(f64),
    /// `c ρ^s`
    Radial { c: f64, s: f64 },
    /// `amplitude` on `r0 ≤ ρ ≤ r1`
    Annulus { amplitude: f64, r0: f64, r1: f64 },
}

impl PotentialDescriptor {
    pub fn value(self, rho: f64) -> f64 {
        match self {
            PotentialDescriptor::Zero => 0.0,
            PotentialDescriptor::Constant(c) => c,
            PotentialDescriptor::Radial { c, s } => c * rho.powf(s),
            PotentialDescriptor::Annulus { amplitude, r0, r1 } => {
                if (r0..=r1).contains(&rho) {
                    amplitude
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GreenSource {
    Computed,
    /// Closed-form fundamental solution; requires `V = 0`.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    HardyMargin,
    OptimalityProbe,
    NullSequenceDecay,
    NullCriticalityGrowth,
    CoareaFlux,
    ChainRuleResidual,
    CpFactor,
    SimpEquivalence,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::HardyMargin,
        Check::OptimalityProbe,
        Check::NullSequenceDecay,
        Check::NullCriticalityGrowth,
        Check::CoareaFlux,
        Check::ChainRuleResidual,
        Check::CpFactor,
        Check::SimpEquivalence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::HardyMargin => "hardy_margin",
            Check::OptimalityProbe => "optimality_probe",
            Check::NullSequenceDecay => "null_sequence_decay",
            Check::NullCriticalityGrowth => "null_criticality_growth",
            Check::CoareaFlux => "coarea_flux",
            Check::ChainRuleResidual => "chain_rule_residual",
            Check::CpFactor => "cp_factor",
            Check::SimpEquivalence => "simp_equivalence",
        }
    }

    fn randomized(self) -> bool {
        matches!(self, Check::HardyMargin | Check::OptimalityProbe | Check::SimpEquivalence)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Solve,
    Green,
    Weight,
    VerifyAll,
    Verify(Check),
}

impl Pipeline {
    pub fn checks(&self) -> Vec<Check> {
        match self {
            Pipeline::VerifyAll => Check::ALL.to_vec(),
            Pipeline::Verify(c) => vec![*c],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    pub margin: f64,
    pub coarea: f64,
    pub null_slope: f64,
    pub null_criticality: f64,
    pub chain: f64,
    pub cp: f64,
    pub monotone: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub mesh: MeshConfig,
    pub p: f64,
    pub a: MatrixDescriptor,
    pub v: PotentialDescriptor,
    pub density_center: [f64; 2],
    pub density_radius: f64,
    pub density_mass: f64,
    pub green_source: GreenSource,
    pub green_levels: usize,
    pub green_tol: f64,
    pub pipeline: Pipeline,
    pub solve_load: f64,
    pub seed: Option<u64>,
    pub family_kind: FamilyKind,
    pub family_count: usize,
    pub null_k: Vec<u32>,
    pub null_tau: Vec<f64>,
    pub null_t0: f64,
    pub coarea_levels: Option<Vec<f64>>,
    pub probe_factor: f64,
    pub probe_threshold: f64,
    pub tol: Tolerances,
    pub output_dir: PathBuf,
    /// SHA-256 of the normalized `key=value` lines.
    pub hash: String,
}

/// Raw entries before typing; keeps the line for messages.
struct Entries {
    map: BTreeMap<String, (String, usize)>,
    errors: Vec<String>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.map.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn parse<T>(&mut self, key: &str, default: T, f: impl Fn(&str) -> Result<T, String>) -> T {
        match self.map.get(key) {
            None => default,
            Some((v, line)) => match f(v) {
                Ok(x) => x,
                Err(e) => {
                    self.errors.push(format!("line {line}: {key}: {e}"));
                    default
                }
            },
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> f64 {
        self.parse(key, default, parse_f64)
    }

    fn usize(&mut self, key: &str, default: usize) -> usize {
        self.parse(key, default, |s| s.parse::<usize>().map_err(|_| format!("expected a nonnegative integer, got '{s}'")))
    }

    fn list(&mut self, key: &str, default: Vec<f64>) -> Vec<f64> {
        self.parse(key, default, parse_list)
    }

    fn require(&mut self, key: &str) {
        if !self.map.contains_key(key) {
            self.errors.push(format!("missing required key '{key}'"));
        }
    }

    fn err(&mut self, key: &str, msg: impl fmt::Display) {
        match self.map.get(key) {
            Some((_, line)) => self.errors.push(format!("line {line}: {key}: {msg}")),
            None => self.errors.push(format!("{key}: {msg}")),
        }
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(format!("expected a finite number, got '{s}'")),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|t| parse_f64(t.trim())).collect()
}

/// `name(a, b, ...)` or a bare `name`.
fn parse_call(s: &str) -> Result<(String, Vec<f64>), String> {
    match s.find('(') {
        None => Ok((s.to_string(), Vec::new())),
        Some(i) => {
            let inner = s[i + 1..].strip_suffix(')').ok_or_else(|| format!("unbalanced parentheses in '{s}'"))?;
            Ok((s[..i].trim().to_string(), parse_list(inner)?))
        }
    }
}

fn arity(name: &str, args: &[f64], n: usize) -> Result<(), String> {
    if args.len() == n {
        Ok(())
    } else {
        Err(format!("{name} takes {n} arguments, got {}", args.len()))
    }
}

fn parse_grading(s: &str) -> Result<Grading, String> {
    let (name, args) = parse_call(s)?;
    match name.as_str() {
        "uniform" => arity("uniform", &args, 0).map(|_| Grading::Uniform),
        "log_uniform" => arity("log_uniform", &args, 0).map(|_| Grading::LogUniform),
        "geometric" => {
            arity("geometric", &args, 1)?;
            if args[0] > 0.0 {
                Ok(Grading::Geometric(args[0]))
            } else {
                Err("geometric ratio must be positive".into())
            }
        }
        _ => Err(format!("unknown grading '{name}' (uniform | log_uniform | geometric(ratio))")),
    }
}

fn parse_matrix(s: &str) -> Result<MatrixDescriptor, String> {
    let (name, args) = parse_call(s)?;
    let d = match name.as_str() {
        "identity" => {
            arity("identity", &args, 0)?;
            MatrixDescriptor::Identity
        }
        "diag" => {
            arity("diag", &args, 2)?;
            MatrixDescriptor::Diag(args[0], args[1])
        }
        "rotated" => {
            arity("rotated", &args, 3)?;
            MatrixDescriptor::Rotated(args[0], args[1], args[2])
        }
        _ => return Err(format!("unknown matrix '{name}' (identity | diag(a,b) | rotated(a,b,theta))")),
    };
    if let MatrixDescriptor::Diag(a, b) | MatrixDescriptor::Rotated(a, b, _) = d {
        if !(a > 0.0 && b > 0.0) {
            return Err("matrix eigenvalues must be positive".into());
        }
    }
    Ok(d)
}

fn parse_potential(s: &str) -> Result<PotentialDescriptor, String> {
    let (name, args) = parse_call(s)?;
    match name.as_str() {
        "zero" => arity("zero", &args, 0).map(|_| PotentialDescriptor::Zero),
        "constant" => arity("constant", &args, 1).map(|_| PotentialDescriptor::Constant(args[0])),
        "radial" => arity("radial", &args, 2).map(|_| PotentialDescriptor::Radial { c: args[0], s: args[1] }),
        "annulus" => {
            arity("annulus", &args, 3)?;
            if !(0.0 <= args[1] && args[1] < args[2]) {
                return Err("annulus needs 0 <= r0 < r1".into());
            }
            Ok(PotentialDescriptor::Annulus { amplitude: args[0], r0: args[1], r1: args[2] })
        }
        _ => Err(format!("unknown potential '{name}' (zero | constant(c) | radial(c,s) | annulus(amplitude,r0,r1))")),
    }
}

fn parse_pipeline(s: &str) -> Result<Pipeline, String> {
    match s {
        "solve" => Ok(Pipeline::Solve),
        "green" => Ok(Pipeline::Green),
        "weight" => Ok(Pipeline::Weight),
        "verify_all" => Ok(Pipeline::VerifyAll),
        _ => match s.strip_prefix("verify:") {
            Some(name) => Check::ALL.iter().find(|c| c.name() == name).map(|&c| Pipeline::Verify(c)).ok_or_else(|| {
                let names: Vec<&str> = Check::ALL.iter().map(|c| c.name()).collect();
                format!("unknown check '{name}' (one of {})", names.join(", "))
            }),
            None => Err(format!("unknown pipeline '{s}' (solve | green | weight | verify_all | verify:<check>)")),
        },
    }
}

fn parse_family(s: &str) -> Result<FamilyKind, String> {
    match s {
        "random_bumps" => Ok(FamilyKind::RandomBumps),
        "tensor_sines" => Ok(FamilyKind::TensorSines),
        "hat_products" => Ok(FamilyKind::HatProducts),
        _ => Err(format!("unknown family '{s}' (random_bumps | tensor_sines | hat_products)")),
    }
}

/// Closest known key, matched on the full key or its last segment.
pub fn suggest(key: &str) -> Option<&'static str> {
    let score = |k: &str| {
        let last = k.rsplit('.').next().unwrap_or(k);
        strsim::jaro_winkler(key, k).max(strsim::jaro_winkler(key, last))
    };
    KEYS.iter()
        .map(|k| (score(k), *k))
        .filter(|(s, _)| *s >= 0.7)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k)
}

fn tokenize(text: &str) -> Entries {
    let mut map = BTreeMap::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            errors.push(format!("line {line}: expected 'key = value', got '{content}'"));
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            match suggest(k) {
                Some(s) => errors.push(format!("line {line}: unknown key '{k}' (did you mean '{s}'?)")),
                None => errors.push(format!("line {line}: unknown key '{k}'")),
            }
            continue;
        }
        if v.is_empty() {
            errors.push(format!("line {line}: {k}: empty value"));
            continue;
        }
        if let Some((_, first)) = map.insert(k.to_string(), (v.to_string(), line)) {
            errors.push(format!("line {line}: {k}: duplicate key (first set on line {first})"));
        }
    }
    Entries { map, errors }
}

fn hash_entries(e: &Entries) -> String {
    let mut h = Sha256::new();
    for (k, (v, _)) in &e.map {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    format!("{:x}", h.finalize())
}

pub fn parse_config_str(text: &str) -> Result<ScenarioConfig, ConfigErrors> {
    let mut e = tokenize(text);
    let hash = hash_entries(&e);
    e.require("mesh.kind");
    e.require("operator.p");
    e.require("pipeline");

    let kind = e.raw("mesh.kind").map(|(v, _)| v.to_string()).unwrap_or_else(|| "radial".into());
    let grading_default = if kind == "radial" { Grading::LogUniform } else { Grading::Uniform };
    let grading = e.parse("mesh.grading", grading_default, parse_grading);
    let mesh = match kind.as_str() {
        "radial" | "interval" => {
            let (lo, hi) = if kind == "radial" { (0.01, 100.0) } else { (0.0, 1.0) };
            let r_min = e.f64("mesh.r_min", lo);
            let r_max = e.f64("mesh.r_max", hi);
            let cells = e.usize("mesh.cells", 2000);
            if !(r_min < r_max) {
                e.err("mesh.r_max", format!("must exceed mesh.r_min ({r_max} <= {r_min})"));
            }
            if cells < 8 {
                e.err("mesh.cells", "need at least 8 cells");
            }
            for k in ["mesh.x", "mesh.y", "mesh.nx", "mesh.ny", "mesh.hole"] {
                if e.map.contains_key(k) {
                    e.err(k, format!("not used by {kind} meshes"));
                }
            }
            if kind == "radial" {
                let n = e.usize("mesh.n", 3);
                if n < 2 {
                    e.err("mesh.n", "radial meshes need n >= 2");
                }
                if !(r_min > 0.0) {
                    e.err("mesh.r_min", "must be positive (the origin is never meshed)");
                }
                MeshConfig::Radial { n, r_min, r_max, cells, grading }
            } else {
                if e.map.contains_key("mesh.n") {
                    e.err("mesh.n", "not used by interval meshes");
                }
                MeshConfig::Interval { a: r_min, b: r_max, cells, grading }
            }
        }
        "tensor2d" => {
            let x = e.list("mesh.x", vec![-1.0, 1.0]);
            let y = e.list("mesh.y", vec![-1.0, 1.0]);
            let nx = e.usize("mesh.nx", 100);
            let ny = e.usize("mesh.ny", 100);
            let hole = e.parse("mesh.hole", None, |s| {
                if s == "none" {
                    return Ok(None);
                }
                let v = parse_list(s)?;
                if v.len() != 4 || !(v[0] < v[1] && v[2] < v[3]) {
                    return Err("expected 'x0,x1,y0,y1' with x0 < x1, y0 < y1, or 'none'".into());
                }
                Ok(Some(Hole { x: [v[0], v[1]], y: [v[2], v[3]] }))
            });
            let mut bounds = |key: &str, v: &[f64]| {
                if v.len() != 2 || !(v[0] < v[1]) {
                    e.err(key, "expected 'lo,hi' with lo < hi");
                    [0.0, 1.0]
                } else {
                    [v[0], v[1]]
                }
            };
            let (x, y) = (bounds("mesh.x", &x), bounds("mesh.y", &y));
            if nx < 2 || ny < 2 {
                e.err("mesh.nx", "need at least 2 cells per axis");
            }
            for k in ["mesh.n", "mesh.r_min", "mesh.r_max", "mesh.cells", "mesh.grading"] {
                if e.map.contains_key(k) {
                    e.err(k, "not used by tensor2d meshes");
                }
            }
            MeshConfig::Tensor2d { x, y, nx, ny, hole }
        }
        other => {
            e.err("mesh.kind", format!("unknown mesh kind '{other}' (radial | interval | tensor2d)"));
            MeshConfig::Radial { n: 3, r_min: 0.01, r_max: 100.0, cells: 2000, grading }
        }
    };

    let p = e.f64("operator.p", 2.0);
    if !(p > 1.0) {
        e.err("operator.p", "p must exceed 1");
    }
    let a = e.parse("operator.a", MatrixDescriptor::Identity, parse_matrix);
    if matches!(mesh, MeshConfig::Radial { .. } | MeshConfig::Interval { .. }) && a != MatrixDescriptor::Identity {
        if let MatrixDescriptor::Diag(x, y) | MatrixDescriptor::Rotated(x, y, _) = a {
            if x != y {
                e.err("operator.a", "one-dimensional meshes take only scalar matrices");
            }
        }
    }
    let v = e.parse("operator.v", PotentialDescriptor::Zero, parse_potential);

    let (default_center, default_radius) = match &mesh {
        MeshConfig::Radial { r_min, r_max, .. } => {
            let c = (r_min * r_max).sqrt();
            ([c, 0.0], 0.25 * c)
        }
        MeshConfig::Interval { a, b, .. } => ([0.5 * (a + b), 0.0], 0.1 * (b - a)),
        MeshConfig::Tensor2d { x, y, .. } => ([0.5 * (x[0] + x[1]), 0.5 * (y[0] + y[1])], 0.1 * (x[1] - x[0]).min(y[1] - y[0])),
    };
    let density_center = e.parse("density.center", default_center, |s| {
        let v = parse_list(s)?;
        match v.len() {
            1 => Ok([v[0], 0.0]),
            2 => Ok([v[0], v[1]]),
            _ => Err("expected one or two coordinates".into()),
        }
    });
    let density_radius = e.f64("density.radius", default_radius);
    let density_mass = e.f64("density.mass", 1.0);
    if !(density_radius > 0.0) {
        e.err("density.radius", "must be positive");
    }
    if !(density_mass > 0.0) {
        e.err("density.mass", "must be positive");
    }

    let green_source = e.parse("green.source", GreenSource::Computed, |s| match s {
        "computed" => Ok(GreenSource::Computed),
        "oracle" => Ok(GreenSource::Oracle),
        _ => Err(format!("unknown source '{s}' (computed | oracle)")),
    });
    let green_levels = e.usize("green.levels", 6);
    let green_tol = e.f64("green.tol", 1e-10);
    if green_levels < 1 {
        e.err("green.levels", "need at least one level");
    }
    if !(green_tol > 0.0) {
        e.err("green.tol", "must be positive");
    }
    if green_source == GreenSource::Oracle {
        if v != PotentialDescriptor::Zero {
            e.err("green.source", "the oracle exists only for operator.v = zero");
        }
        match &mesh {
            MeshConfig::Interval { .. } => e.err("green.source", "no oracle on interval meshes"),
            MeshConfig::Radial { n, .. } if (p - *n as f64).abs() < 1e-12 => {
                e.err("green.source", "the radial oracle needs p != n")
            }
            _ => {}
        }
    }

    let pipeline = e.parse("pipeline", Pipeline::VerifyAll, parse_pipeline);
    let solve_load = e.f64("solve.load", 1.0);
    let seed = e.parse("seed", None, |s| s.parse::<u64>().map(Some).map_err(|_| format!("expected an unsigned integer, got '{s}'")));
    if seed.is_none() && pipeline.checks().iter().any(|c| c.randomized()) {
        e.err("seed", "a seed is mandatory for pipelines using random test functions");
    }
    let family_kind = e.parse("family.kind", FamilyKind::RandomBumps, parse_family);
    let family_count = e.usize("family.count", 20);
    if family_count < 1 {
        e.err("family.count", "must be at least 1");
    }

    let null_k = e.parse("null.k", vec![4, 8, 16, 32], |s| {
        let ks: Vec<u32> = s.split(',').map(|t| t.trim().parse::<u32>()).collect::<Result<_, _>>().map_err(|_| format!("expected integers, got '{s}'"))?;
        if ks.len() < 2 || ks.iter().any(|&k| k < 2) {
            return Err("need at least two values, each >= 2".into());
        }
        Ok(ks)
    });
    let null_tau = e.list("null.tau", vec![1e-2, 1e-3, 1e-4, 1e-5]);
    if null_tau.len() < 2 || null_tau.iter().any(|&t| !(t > 0.0)) || null_tau.windows(2).any(|w| w[1] >= w[0]) {
        e.err("null.tau", "need at least two positive, strictly decreasing values");
    }
    let null_t0 = e.f64("null.t0", 1.0);
    if !(null_t0 > 0.0) {
        e.err("null.t0", "must be positive");
    }
    let coarea_levels = e.parse("coarea.levels", None, |s| {
        let v = parse_list(s)?;
        if v.len() < 2 {
            return Err("need at least two levels".into());
        }
        Ok(Some(v))
    });
    let probe_factor = e.f64("probe.factor", 1.5);
    let probe_threshold = e.f64("probe.threshold", -1e-2);
    if !(probe_factor > 1.0) {
        e.err("probe.factor", "must exceed 1");
    }

    let coarea_default = if matches!(mesh, MeshConfig::Tensor2d { .. }) { 0.05 } else { 0.02 };
    let mut tol_of = |key: &str, d: f64| {
        let t = e.f64(key, d);
        if !(t > 0.0) {
            e.err(key, "must be positive");
        }
        t
    };
    let tol = Tolerances {
        margin: tol_of("tol.margin", 1e-6),
        coarea: tol_of("tol.coarea", coarea_default),
        null_slope: tol_of("tol.null_slope", 0.15),
        null_criticality: tol_of("tol.null_criticality", 0.1),
        chain: tol_of("tol.chain", 1e-3),
        cp: tol_of("tol.cp", 1e-12),
        monotone: tol_of("tol.monotone", 1e-12),
    };
    let output_dir = PathBuf::from(e.raw("output.dir").map(|(v, _)| v).unwrap_or("out"));

    if !e.errors.is_empty() {
        return Err(ConfigErrors(e.errors));
    }
    Ok(ScenarioConfig {
        mesh,
        p,
        a,
        v,
        density_center,
        density_radius,
        density_mass,
        green_source,
        green_levels,
        green_tol,
        pipeline,
        solve_load,
        seed,
        family_kind,
        family_count,
        null_k,
        null_tau,
        null_t0,
        coarea_levels,
        probe_factor,
        probe_threshold,
        tol,
        output_dir,
        hash,
    })
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigErrors(vec![format!("{}: {e}", path.display())]))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "mesh.kind = radial\noperator.p = 2\npipeline = verify_all\nseed = 7\n";

    #[test]
    fn minimal_config_parses() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.p, 2.0);
        assert_eq!(c.pipeline, Pipeline::VerifyAll);
        assert!(matches!(c.mesh, MeshConfig::Radial { n: 3, .. }));
        assert_eq!(c.v, PotentialDescriptor::Zero);
    }

    #[test]
    fn all_errors_are_collected() {
        let text = "mesh.kind = radial\noperator.p = 1\nppp = 3\nmesh.cells = 4\npipeline = verify_all\n";
        let errs = parse_config_str(text).unwrap_err().0;
        assert!(errs.iter().any(|e| e.contains("p must exceed 1")), "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("unknown key 'ppp'") && e.contains("operator.p")), "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("at least 8 cells")), "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("seed")), "{errs:?}");
    }

    #[test]
    fn descriptors() {
        assert_eq!(parse_matrix("diag(1, 4)").unwrap(), MatrixDescriptor::Diag(1.0, 4.0));
        assert!(parse_matrix("diag(1)").is_err());
        assert!(parse_matrix("diag(1,-1)").is_err());
        assert_eq!(
            parse_potential("annulus(-0.1,1,2)").unwrap(),
            PotentialDescriptor::Annulus { amplitude: -0.1, r0: 1.0, r1: 2.0 }
        );
        assert_eq!(parse_pipeline("verify:coarea_flux").unwrap(), Pipeline::Verify(Check::CoareaFlux));
        assert!(parse_pipeline("verify:nope").is_err());
        assert_eq!(parse_grading("geometric(1.05)").unwrap(), Grading::Geometric(1.05));
    }

    #[test]
    fn hash_ignores_comments_and_order() {
        let a = parse_config_str(MINIMAL).unwrap();
        let b = parse_config_str("# scenario\nseed = 7\npipeline = verify_all\n\noperator.p = 2 # classical\nmesh.kind = radial\n").unwrap();
        assert_eq!(a.hash, b.hash);
        let c = parse_config_str(&MINIMAL.replace("seed = 7", "seed = 8")).unwrap();
        assert_ne!(a.hash, c.hash);
    }

    #[test]
    fn oracle_needs_zero_potential() {
        let text = format!("{MINIMAL}green.source = oracle\noperator.v = constant(1)\n");
        let errs = parse_config_str(&text).unwrap_err().0;
        assert!(errs.iter().any(|e| e.contains("operator.v = zero")), "{errs:?}");
    }
}
