//! Green potentials by exhaustion with a vanishing potential shift, closed-form
//! radial and anisotropic oracles, and the decay/integrability checks.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::field::{write_node_csv, ScalarField};
use crate::mesh::{exhaustion_around, unit_sphere_area, Mesh, MeshKind};
use crate::operator::{ProblemSpec, SymMatrix};
use crate::solver::{dirichlet_solve, principal_eigen, Init, SolveOptions};
use std::sync::Arc;

/// Distance used by densities: `|r - r₀|` on 1D meshes, Euclidean on tensor meshes.
fn distance(mesh: &Mesh, x: [f64; 2], center: [f64; 2]) -> f64 {
    if mesh.is_one_dimensional() {
        (x[0] - center[0]).abs()
    } else {
        ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt()
    }
}

/// Quartic bump `(1 - (d/radius)²)²` scaled to the given mass. On radial
/// meshes `center[0]` is the shell radius.
pub fn mollified_delta(mesh: &Arc<Mesh>, center: [f64; 2], radius: f64, mass: f64) -> Result<ScalarField> {
    if !(radius > 0.0) || !(mass > 0.0) {
        return Err(Error::InvalidArgument("density radius and mass must be positive".into()));
    }
    let hull = mesh.hull();
    let inside_hull = if mesh.is_one_dimensional() {
        center[0] - radius > hull[0] && center[0] + radius < hull[1]
    } else {
        center[0] - radius > hull[0] && center[0] + radius < hull[1] && center[1] - radius > hull[2] && center[1] + radius < hull[3]
    };
    if !inside_hull {
        return Err(Error::InvalidArgument(format!("density support {center:?} ± {radius} leaves the mesh")));
    }
    if let Some(i) = (0..mesh.num_nodes()).find(|&i| mesh.is_boundary(i) && distance(mesh, mesh.node(i), center) < radius) {
        return Err(Error::InvalidArgument(format!("density support touches boundary node {i}")));
    }
    // at least 4 cells across the support along every axis
    let across = |axis: &[f64], c: f64| axis.iter().filter(|&&x| (x - c).abs() < radius).count();
    let resolved = match mesh.tensor_axes() {
        Some((xs, ys)) => across(xs, center[0]).min(across(ys, center[1])),
        None => across(&mesh.node_x(), center[0]),
    };
    if resolved < 3 {
        return Err(Error::UnderResolved(format!("density of radius {radius} spans fewer than 4 cells")));
    }
    let raw = ScalarField::from_fn(mesh.clone(), |x| {
        let s = distance(mesh, x, center) / radius;
        if s < 1.0 {
            (1.0 - s * s).powi(2)
        } else {
            0.0
        }
    })?;
    let total = raw.integral();
    Ok(raw.scaled(mass / total))
}

/// `r^{(p-n)/(p-1)}` (p ≠ n) or `log(R/r)` (p = n), optionally shifted so that
/// it vanishes at the outer radius `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGreenOracle {
    pub p: f64,
    pub n_dim: usize,
    pub r_outer: Option<f64>,
}

pub fn radial_green_oracle(p: f64, n_dim: usize, r_outer: Option<f64>) -> Result<RadialGreenOracle> {
    if !(p > 1.0) || n_dim < 1 {
        return Err(Error::InvalidArgument(format!("oracle needs p > 1 and n >= 1, got p = {p}, n = {n_dim}")));
    }
    if p == n_dim as f64 && r_outer.is_none() {
        return Err(Error::InvalidArgument("the p = n oracle log(R/r) needs an outer radius".into()));
    }
    Ok(RadialGreenOracle { p, n_dim, r_outer })
}

impl RadialGreenOracle {
    pub fn exponent(&self) -> f64 {
        (self.p - self.n_dim as f64) / (self.p - 1.0)
    }

    fn critical(&self) -> bool {
        self.p == self.n_dim as f64
    }

    pub fn value(&self, r: f64) -> f64 {
        if self.critical() {
            return (self.r_outer.unwrap() / r).ln();
        }
        let a = self.exponent();
        match self.r_outer {
            // p < n: r^a - R^a > 0; p > n: R^a - r^a > 0 with G(0) = R^a
            Some(big) if a < 0.0 => r.powf(a) - big.powf(a),
            Some(big) => big.powf(a) - r.powf(a),
            None => r.powf(a),
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        if self.critical() {
            return -1.0 / r;
        }
        let a = self.exponent();
        let d = a * r.powf(a - 1.0);
        match self.r_outer {
            Some(_) if a > 0.0 => -d,
            _ => d,
        }
    }

    /// `lim_{r→0} G` for the bounded branch (p > n with an outer radius).
    pub fn gamma(&self) -> Option<f64> {
        let a = self.exponent();
        match self.r_outer {
            Some(big) if a > 0.0 && !self.critical() => Some(big.powf(a)),
            _ => None,
        }
    }

    /// Flux `ω_{n-1} r^{n-1}|G'|^{p-1}`, independent of r.
    pub fn flux(&self) -> f64 {
        let r = 1.0;
        unit_sphere_area(self.n_dim) * self.derivative(r).abs().powf(self.p - 1.0)
    }

    pub fn field(&self, mesh: &Arc<Mesh>) -> Result<ScalarField> {
        if mesh.kind() != MeshKind::Radial {
            return Err(Error::InvalidArgument("radial oracle needs a radial mesh".into()));
        }
        ScalarField::from_fn(mesh.clone(), |x| self.value(x[0]))
    }
}

/// Fundamental solution of `-div(|∇u|_A^{p-2}A∇u)` in the plane,
/// a function of `ρ = ⟨A⁻¹(x - x₀), x - x₀⟩^{1/2}`: `ρ^{(p-2)/(p-1)}` for
/// p < 2, `-log ρ` for p = 2, `-ρ^{(p-2)/(p-1)}` for p > 2 (up to constants).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnisotropicOracle {
    pub p: f64,
    pub a: SymMatrix,
    pub center: [f64; 2],
}

impl AnisotropicOracle {
    pub fn rho(&self, x: [f64; 2]) -> f64 {
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        self.a.inverse().quad(d).sqrt()
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        let rho = self.rho(x);
        if self.p == 2.0 {
            -rho.ln()
        } else {
            let a = (self.p - 2.0) / (self.p - 1.0);
            if self.p < 2.0 {
                rho.powf(a)
            } else {
                -rho.powf(a)
            }
        }
    }

    pub fn field(&self, mesh: &Arc<Mesh>) -> Result<ScalarField> {
        ScalarField::from_fn(mesh.clone(), |x| self.value(x))
    }
}

#[derive(Debug, Clone)]
pub struct GreenOptions {
    pub solve: SolveOptions,
    /// Stop the tail once `sup|G^k - G^{k-1}| < change_tol · sup G`.
    pub change_tol: f64,
    pub max_levels: usize,
    /// Allowed `max(G^k - G^{k+1}) / sup G`.
    pub monotone_tol: f64,
    /// `sup G` growth factor that signals criticality.
    pub growth_cap: f64,
}

impl Default for GreenOptions {
    fn default() -> Self {
        GreenOptions {
            solve: SolveOptions::default().with_tol(1e-10),
            change_tol: 1e-8,
            max_levels: 80,
            monotone_tol: 1e-12,
            growth_cap: 1e8,
        }
    }
}

/// One exhaustion level; `shift = 0` marks the final solve with the exact potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExhaustionLevel {
    pub level: usize,
    pub shift: f64,
    pub nodes: usize,
    pub sup: f64,
    pub sup_change: f64,
    /// `max_i (G^{k-1} - G^k)_i / sup G^k`, positive parts only.
    pub monotonicity_defect: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct GreenPotential {
    pub g: ScalarField,
    pub density: ScalarField,
    pub trace: Vec<ExhaustionLevel>,
    /// Operator with `Q(G) = density`.
    pub spec: ProblemSpec,
    pub converged: bool,
    pub density_descriptor: Value,
}

impl GreenPotential {
    pub fn max_monotonicity_defect(&self) -> f64 {
        self.trace.iter().map(|l| l.monotonicity_defect).fold(0.0, f64::max)
    }

    pub fn is_monotone(&self, tol: f64) -> bool {
        self.max_monotonicity_defect() <= tol
    }

    /// Nodes where the density is positive.
    pub fn support_nodes(&self) -> Vec<usize> {
        support_nodes(&self.density)
    }

    /// Node CSV `node,x,y,G,density,tag`.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_node_csv(self.g.mesh(), &[("G", self.g.values()), ("density", self.density.values())], out)
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&json!({
            "p": self.spec.p,
            "n": self.spec.n_dim(),
            "mesh_id": self.spec.mesh.label(),
            "density": self.density_descriptor,
            "converged": self.converged,
            "exhaustion_trace": self.trace,
        }))
        .expect("sidecar serializes")
    }
}

fn support_nodes(density: &ScalarField) -> Vec<usize> {
    density.values().iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, _)| i).collect()
}

/// `G_φ` as the monotone limit of Dirichlet solutions on nested subdomains
/// with potential `V + 2^{-(k-1)}`, `k = 1..levels`, continued on the full
/// mesh with halving shifts until the sup change is below tolerance and
/// closed by a solve with the exact potential.
pub fn green_potential(spec: &ProblemSpec, phi: &ScalarField, levels: usize, opts: &GreenOptions) -> Result<GreenPotential> {
    spec.check_field(phi)?;
    if levels < 1 {
        return Err(Error::InvalidArgument("at least one exhaustion level is required".into()));
    }
    if phi.values().iter().any(|&v| v < 0.0) || phi.max() <= 0.0 {
        return Err(Error::InvalidArgument("density must be nonnegative and nonzero".into()));
    }
    let mesh = spec.mesh.clone();
    let n = mesh.num_nodes();
    let core = support_nodes(phi);
    if core.iter().any(|&i| mesh.is_boundary(i)) {
        return Err(Error::InvalidArgument("density support touches the boundary".into()));
    }

    let mut prev = vec![0.0; n];
    let mut trace: Vec<ExhaustionLevel> = Vec::new();
    let mut first_sup = None;
    let mut converged = false;
    let mut level = 0;
    loop {
        level += 1;
        let on_full = level >= levels;
        let final_solve = converged;
        let shift = if final_solve { 0.0 } else { 0.5f64.powi(level as i32 - 1) };
        let sub = exhaustion_around(&mesh, level.min(levels), levels, &core)?;
        let sub_spec = spec.restrict(&sub)?.with_shifted_potential(shift);
        let sub_phi = ScalarField::new(sub.mesh.clone(), sub.restrict_nodes(phi.values()))?;
        let zero = ScalarField::zeros(sub.mesh.clone());
        let init = if level == 1 || spec.p < 2.0 {
            opts.solve.init.clone()
        } else {
            Init::Given(ScalarField::new(sub.mesh.clone(), sub.restrict_nodes(&prev))?)
        };
        let solved = match dirichlet_solve(&sub_spec, &sub_phi, &zero, &SolveOptions { init, ..opts.solve.clone() }) {
            Ok(s) => s,
            Err(e) => {
                let eig = principal_eigen(&sub_spec, &SolveOptions::default())?;
                if eig.lambda1 <= 0.0 {
                    return Err(Error::CriticalitySuspected(format!(
                        "level {level} (shift {shift:e}) has principal eigenvalue {:.3e}",
                        eig.lambda1
                    )));
                }
                return Err(e);
            }
        };
        let g = sub.extend_by_zero(solved.u.values(), n);
        let mut interior = vec![false; n];
        for (local, &i) in sub.parent_nodes.iter().enumerate() {
            interior[i] = !sub.mesh.is_boundary(local);
        }
        if let Some(i) = (0..n).find(|&i| interior[i] && !(g[i] > 0.0)) {
            return Err(Error::CriticalitySuspected(format!("positivity lost at node {i} on level {level}")));
        }
        let sup = g.iter().cloned().fold(0.0, f64::max);
        let first = *first_sup.get_or_insert(sup);
        if !(sup <= opts.growth_cap * first) {
            return Err(Error::CriticalitySuspected(format!("sup G grew from {first:e} to {sup:e} by level {level}")));
        }
        let sup_change = g.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let defect = g.iter().zip(&prev).map(|(a, b)| (b - a).max(0.0)).fold(0.0, f64::max) / sup;
        trace.push(ExhaustionLevel {
            level,
            shift,
            nodes: sub.parent_nodes.len(),
            sup,
            sup_change,
            monotonicity_defect: defect,
            iterations: solved.iterations,
        });
        prev = g;
        if final_solve {
            break;
        }
        if on_full && sup_change < opts.change_tol * sup {
            converged = true;
        } else if level >= opts.max_levels {
            return Err(Error::CriticalitySuspected(format!(
                "no convergence after {level} levels (last change {:.3e} of sup {sup:.3e})",
                sup_change
            )));
        }
    }
    let g = ScalarField::new(mesh.clone(), prev)?;
    Ok(GreenPotential {
        g,
        density: phi.clone(),
        trace,
        spec: spec.clone(),
        converged,
        density_descriptor: json!({"kind": "field", "mass": phi.integral(), "support_nodes": core.len()}),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub decay_at_infinity: bool,
    /// `(distance, G)` samples moving outward from the density.
    pub trend: Vec<[f64; 2]>,
    /// Log-log slope of the trend.
    pub decay_slope: f64,
    pub integral_vg: f64,
    pub integral_abs_vg: f64,
    pub v_nonpositive: bool,
}

impl AssumptionCheck {
    /// Decay, `∫V G^{p-1} < 0` and `∫|V| G^{p-1} < ∞`.
    pub fn main_hypotheses(&self) -> bool {
        self.decay_at_infinity && self.integral_vg < 0.0 && self.integral_abs_vg.is_finite()
    }

    /// `V ≤ 0` with decay and finite `∫|V| G^{p-1}`.
    pub fn nonpositive_route(&self) -> bool {
        self.decay_at_infinity && self.v_nonpositive && self.integral_abs_vg.is_finite()
    }
}

const TREND_SAMPLES: usize = 8;

/// Quadrature of `∫V G^{p-1}`, `∫|V| G^{p-1}` and the outward trend of G.
pub fn check_assumptions(spec: &ProblemSpec, gp: &GreenPotential) -> Result<AssumptionCheck> {
    spec.check_field(&gp.g)?;
    let p = spec.p;
    let gp1 = gp.g.map(|v| v.max(0.0).powf(p - 1.0))?;
    let v = spec.v.values();
    let abs_v: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let integral_vg = gp1.weighted_power_integral(Some(v), 1.0, false);
    let integral_abs_vg = gp1.weighted_power_integral(Some(&abs_v), 1.0, false);

    let support = gp.support_nodes();
    let trend = outward_trend(&gp.g, &support);
    let decreasing = trend.len() >= 2 && trend.windows(2).all(|w| w[1][1] < w[0][1]);
    let decay_slope = log_log_slope(&trend);
    Ok(AssumptionCheck {
        decay_at_infinity: decreasing && decay_slope < 0.0,
        trend,
        decay_slope,
        integral_vg,
        integral_abs_vg,
        v_nonpositive: v.iter().all(|&x| x <= 0.0),
    })
}

/// Samples of G between twice the support extent and half the distance to
/// the outer boundary, log-spaced.
fn outward_trend(g: &ScalarField, support: &[usize]) -> Vec<[f64; 2]> {
    let mesh = g.mesh();
    let vals = g.values();
    let centroid = {
        let w: f64 = support.iter().map(|&i| vals[i].abs().max(1e-300)).sum();
        let mut c = [0.0, 0.0];
        for &i in support {
            let x = mesh.node(i);
            let wi = vals[i].abs().max(1e-300) / w;
            c[0] += wi * x[0];
            c[1] += wi * x[1];
        }
        c
    };
    if mesh.is_one_dimensional() {
        let xs = mesh.node_x();
        let outer_support = support.iter().map(|&i| xs[i]).fold(f64::NEG_INFINITY, f64::max);
        let x_max = xs[xs.len() - 1];
        let radial = mesh.kind() == MeshKind::Radial;
        let (lo, hi) = if radial { (2.0 * outer_support, 0.5 * x_max) } else { (outer_support + 0.25 * (x_max - outer_support), outer_support + 0.75 * (x_max - outer_support)) };
        if !(hi > lo) {
            return Vec::new();
        }
        (0..TREND_SAMPLES)
            .map(|k| {
                let t = k as f64 / (TREND_SAMPLES - 1) as f64;
                let x = if radial { lo * (hi / lo).powf(t) } else { lo + t * (hi - lo) };
                [if radial { x } else { x - centroid[0] }, interpolate_1d(&xs, vals, x)]
            })
            .collect()
    } else {
        let hull = mesh.hull();
        let extent = support.iter().map(|&i| distance(mesh, mesh.node(i), centroid)).fold(0.0, f64::max);
        let reach = [centroid[0] - hull[0], hull[1] - centroid[0], centroid[1] - hull[2], hull[3] - centroid[1]]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let (lo, hi) = (2.0 * extent.max(1e-12), 0.8 * reach);
        if !(hi > lo) {
            return Vec::new();
        }
        let edges: Vec<f64> = (0..=TREND_SAMPLES).map(|k| lo + (hi - lo) * k as f64 / TREND_SAMPLES as f64).collect();
        let mut sums = vec![(0.0, 0usize); TREND_SAMPLES];
        for i in 0..mesh.num_nodes() {
            let d = distance(mesh, mesh.node(i), centroid);
            if d >= lo && d < hi {
                let b = (((d - lo) / (hi - lo)) * TREND_SAMPLES as f64) as usize;
                let b = b.min(TREND_SAMPLES - 1);
                sums[b].0 += vals[i];
                sums[b].1 += 1;
            }
        }
        sums.iter()
            .enumerate()
            .filter(|(_, s)| s.1 > 0)
            .map(|(b, s)| [0.5 * (edges[b] + edges[b + 1]), s.0 / s.1 as f64])
            .collect()
    }
}

fn interpolate_1d(xs: &[f64], vals: &[f64], x: f64) -> f64 {
    let j = xs.partition_point(|&t| t <= x).clamp(1, xs.len() - 1);
    let s = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    vals[j - 1] + s * (vals[j] - vals[j - 1])
}

/// Least-squares slope of `log y` against `log x` over positive samples.
pub fn log_log_slope(samples: &[[f64; 2]]) -> f64 {
    let pts: Vec<(f64, f64)> = samples.iter().filter(|s| s[0] > 0.0 && s[1] > 0.0).map(|s| (s[0].ln(), s[1].ln())).collect();
    fit_slope(&pts)
}

pub(crate) fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
