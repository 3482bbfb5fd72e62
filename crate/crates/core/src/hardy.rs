//! Hardy weights from positive (super)solutions via `f(t) = t^{(p-1)/p}`.
//!
//! Weights live on cells, like potentials. Away from the density they are
//! the closed form `((p-1)/p)^p |∇G|_A^p / Ḡ^p` with the midpoint gradient
//! and the cell average `Ḡ`; on cells touching the density they come from
//! the discrete residual of `Q_{V/c_p}(f(G))`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::field::{local_gradient, write_node_csv, CellField, ScalarField};
use crate::green::{check_assumptions, green_potential, AssumptionCheck, GreenOptions, GreenPotential};
use crate::mesh::Mesh;
use crate::operator::{apply_q, c_p, MatrixField, ProblemSpec};

/// `(f, f', -Δ_p^{1D} f)` at `t` for `f(t) = t^{(p-1)/p}`.
pub fn transform_f(t: f64, p: f64) -> Result<(f64, f64, f64)> {
    c_p(p)?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("transform needs t > 0, got {t}")));
    }
    let q = (p - 1.0) / p;
    let f = t.powf(q);
    let df = q * t.powf(-1.0 / p);
    let d2f = -q / p * t.powf(-1.0 / p - 1.0);
    // -(|f'|^{p-2} f')' = -(p-1)|f'|^{p-2} f''
    let lap = -(p - 1.0) * df.powf(p - 2.0) * d2f;
    Ok((f, df, lap))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    FromGreenPotential,
    PlaplacianCase1,
    PlaplacianCase2 { gamma: f64 },
    Perturbed { eps: f64 },
}

#[derive(Debug, Clone)]
pub struct HardyWeight {
    pub w: CellField,
    pub ground_state: ScalarField,
    /// Cells where `w` is the closed-form expression.
    pub closed_form_cells: Vec<bool>,
    pub provenance: Provenance,
    pub p: f64,
    pub c_p: f64,
    pub gamma: Option<f64>,
    /// Clipped negative mass over total mass on residual-based cells.
    pub clip_fraction: f64,
    pub hypotheses_verified: bool,
    /// Interior nodes left out of the construction (case γ: `G ∉ (0, γ)`).
    pub excluded_nodes: Vec<usize>,
}

impl HardyWeight {
    pub fn mesh(&self) -> &std::sync::Arc<Mesh> {
        self.w.mesh()
    }

    /// `s·W` with everything else kept (over-weighting probes).
    pub fn scaled(&self, s: f64) -> HardyWeight {
        let mut out = self.clone();
        out.w = self.w.scaled(s);
        out
    }

    /// Node mask: every adjacent cell is closed-form.
    pub fn closed_form_nodes(&self) -> Vec<bool> {
        let mesh = self.mesh();
        mesh.node_cells().iter().map(|cells| cells.iter().all(|&c| self.closed_form_cells[c])).collect()
    }

    /// Measure-weighted average of the adjacent cell weights.
    pub fn node_values(&self) -> Vec<f64> {
        let mesh = self.mesh();
        mesh.node_cells()
            .iter()
            .map(|cells| {
                let (mut s, mut m) = (0.0, 0.0);
                for &c in cells {
                    s += mesh.cell_measure(c) * self.w.values()[c];
                    m += mesh.cell_measure(c);
                }
                if m > 0.0 {
                    s / m
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// `∫ W |u|^p` with the potential quadrature.
    pub fn weighted_norm_pow(&self, u: &ScalarField) -> f64 {
        u.weighted_power_integral(Some(self.w.values()), self.p, true)
    }

    /// Node CSV `node,x,y,W,ground_state,closed_form,tag`.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mask: Vec<f64> = self.closed_form_nodes().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        write_node_csv(
            self.mesh(),
            &[("W", &self.node_values()), ("ground_state", self.ground_state.values()), ("closed_form", &mask)],
            out,
        )
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&json!({
            "provenance": self.provenance,
            "p": self.p,
            "c_p": self.c_p,
            "gamma": self.gamma,
            "clip_fraction": self.clip_fraction,
            "hypotheses_verified": self.hypotheses_verified,
            "excluded_nodes": self.excluded_nodes.len(),
        }))
        .expect("sidecar serializes")
    }
}

fn closed_form_cell(mesh: &Mesh, a: &MatrixField, g: &[f64], c: usize) -> (f64, f64) {
    let nodes = mesh.cell_nodes(c);
    let grad = local_gradient(g, nodes, &mesh.midpoint_grads(c));
    let gbar = nodes.iter().map(|&i| g[i]).sum::<f64>() / nodes.len() as f64;
    (a.get(c).quad(grad).max(0.0).sqrt(), gbar)
}

fn interior_positive(mesh: &Mesh, g: &ScalarField) -> Result<()> {
    if let Some(i) = mesh.interior_nodes().find(|&i| !(g.values()[i] > 0.0)) {
        return Err(Error::NonPositive { node: i, value: g.values()[i] });
    }
    Ok(())
}

/// Closed-form weight `((p-1)/p)^p |∇G/G|_A^p` on every cell, ground state `f(G)`.
pub fn weight_case_one(g: &ScalarField, p: f64, a: &MatrixField) -> Result<HardyWeight> {
    let cp = c_p(p)?;
    let mesh = g.mesh().clone();
    if !std::sync::Arc::ptr_eq(a.mesh(), &mesh) && a.entries().len() != mesh.num_cells() {
        return Err(Error::MeshMismatch("matrix field does not match G".into()));
    }
    interior_positive(&mesh, g)?;
    let k = ((p - 1.0) / p).powf(p);
    let mut w = vec![0.0; mesh.num_cells()];
    let mut closed = vec![false; mesh.num_cells()];
    for c in 0..mesh.num_cells() {
        let (grad, gbar) = closed_form_cell(&mesh, a, g.values(), c);
        if gbar > 0.0 {
            w[c] = k * (grad / gbar).powf(p);
            closed[c] = true;
        }
    }
    Ok(HardyWeight {
        w: CellField::new(mesh.clone(), w)?,
        ground_state: g.map(|v| v.max(0.0).powf((p - 1.0) / p))?,
        closed_form_cells: closed,
        provenance: Provenance::PlaplacianCase1,
        p,
        c_p: cp,
        gamma: None,
        clip_fraction: 0.0,
        hypotheses_verified: false,
        excluded_nodes: Vec::new(),
    })
}

/// Weight for `spec` (which carries `V/c_p`) from a Green potential `G`
/// of `Q_{p,A,V}` with density `density`.
pub fn weight_from_green(spec: &ProblemSpec, g: &ScalarField, density: &ScalarField) -> Result<HardyWeight> {
    spec.check_field(g)?;
    spec.check_field(density)?;
    let mesh = spec.mesh.clone();
    let p = spec.p;
    let mut hw = weight_case_one(g, p, &spec.a)?;
    hw.provenance = Provenance::FromGreenPotential;

    let in_support: Vec<bool> = (0..mesh.num_cells())
        .map(|c| mesh.cell_nodes(c).iter().any(|&i| density.values()[i] > 0.0))
        .collect();
    if !in_support.iter().any(|&b| b) {
        return Ok(hw);
    }
    let r = apply_q(spec, &hw.ground_state)?;
    let mass = mesh.lumped_mass();
    let node_w: Vec<f64> = (0..mesh.num_nodes())
        .map(|i| {
            let v = hw.ground_state.values()[i];
            if mesh.is_boundary(i) || !(v > 0.0) {
                0.0
            } else {
                r.values()[i] / mass[i] / v.powf(p - 1.0)
            }
        })
        .collect();
    let mut w = hw.w.values().to_vec();
    let (mut clipped, mut total) = (0.0, 0.0);
    for c in 0..mesh.num_cells() {
        if !in_support[c] {
            continue;
        }
        let nodes = mesh.cell_nodes(c);
        let raw = nodes.iter().map(|&i| node_w[i]).sum::<f64>() / nodes.len() as f64;
        let m = mesh.cell_measure(c);
        total += m * raw.abs();
        if raw < 0.0 {
            clipped += m * -raw;
        }
        w[c] = raw.max(0.0);
        hw.closed_form_cells[c] = false;
    }
    hw.w = CellField::new(mesh, w)?;
    hw.clip_fraction = if total > 0.0 { clipped / total } else { 0.0 };
    Ok(hw)
}

/// [`weight_from_green`] on a computed potential; the hypotheses are
/// checked against the Green operator and recorded, not enforced.
pub fn weight_from_green_potential(spec: &ProblemSpec, gp: &GreenPotential) -> Result<HardyWeight> {
    let cp = c_p(spec.p)?;
    if spec.p != gp.spec.p {
        return Err(Error::InvalidArgument("weight and Green operators differ in p".into()));
    }
    let expected = gp.spec.v.scaled(1.0 / cp);
    let scale = gp.spec.v.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let off = expected.values().iter().zip(spec.v.values()).any(|(a, b)| (a - b).abs() > 1e-12 * scale.max(1e-300));
    if off || expected.values().len() != spec.v.values().len() {
        return Err(Error::InvalidArgument("the weight operator must carry V/c_p of the Green operator".into()));
    }
    let mut hw = weight_from_green(spec, &gp.g, &gp.density)?;
    hw.hypotheses_verified = check_assumptions(&gp.spec, gp)
        .map(|a| a.main_hypotheses() || a.nonpositive_route())
        .unwrap_or(false);
    Ok(hw)
}

/// Weight `((p-1)/p)^p |∇G/(G(γ-G))|_A^p |γ-2G|^{p-2} [2(p-2)G(γ-G) + γ²]`
/// with ground state `[G(γ-G)]^{(p-1)/p}`.
pub fn weight_case_gamma(g: &ScalarField, gamma: f64, p: f64, a: &MatrixField) -> Result<HardyWeight> {
    let cp = c_p(p)?;
    if p < 2.0 {
        return Err(Error::InvalidArgument(format!("the γ branch needs p ≥ 2, got {p}")));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("γ must be positive, got {gamma}")));
    }
    let mesh = g.mesh().clone();
    if a.entries().len() != mesh.num_cells() {
        return Err(Error::MeshMismatch("matrix field does not match G".into()));
    }
    let inside = |v: f64| v > 0.0 && v < gamma;
    let excluded: Vec<usize> = mesh.interior_nodes().filter(|&i| !inside(g.values()[i])).collect();
    let k = ((p - 1.0) / p).powf(p);
    let mut w = vec![0.0; mesh.num_cells()];
    let mut closed = vec![false; mesh.num_cells()];
    for c in 0..mesh.num_cells() {
        if mesh.cell_nodes(c).iter().any(|&i| !mesh.is_boundary(i) && !inside(g.values()[i])) {
            continue;
        }
        let (grad, gbar) = closed_form_cell(&mesh, a, g.values(), c);
        if !inside(gbar) {
            continue;
        }
        let prod = gbar * (gamma - gbar);
        let mid = (gamma - 2.0 * gbar).abs();
        let mid_pow = if p == 2.0 { 1.0 } else { mid.powf(p - 2.0) };
        w[c] = k * (grad / prod).powf(p) * mid_pow * (2.0 * (p - 2.0) * prod + gamma * gamma);
        closed[c] = true;
    }
    let ground = g.map(|v| if inside(v) { (v * (gamma - v)).powf((p - 1.0) / p) } else { 0.0 })?;
    Ok(HardyWeight {
        w: CellField::new(mesh, w)?,
        ground_state: ground,
        closed_form_cells: closed,
        provenance: Provenance::PlaplacianCase2 { gamma },
        p,
        c_p: cp,
        gamma: Some(gamma),
        clip_fraction: 0.0,
        hypotheses_verified: false,
        excluded_nodes: excluded,
    })
}

/// `W + V₁`, admissible when `V₁ ≥ -εW` cellwise with `0 ≤ ε < 1`.
pub fn perturbed_weight(w: &HardyWeight, v1: &CellField, eps: f64) -> Result<HardyWeight> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("ε must lie in [0, 1), got {eps}")));
    }
    let base = w.w.values();
    if v1.values().len() != base.len() {
        return Err(Error::MeshMismatch("perturbation does not match the weight".into()));
    }
    let bad: Vec<usize> = v1
        .values()
        .iter()
        .zip(base)
        .enumerate()
        .filter(|(_, (&v, &b))| v < -eps * b - 1e-12 * b.abs())
        .map(|(c, _)| c)
        .collect();
    if !bad.is_empty() {
        return Err(Error::PerturbationTooNegative { cells: bad });
    }
    let mut out = w.clone();
    out.w = w.w.add(v1)?;
    out.provenance = Provenance::Perturbed { eps };
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Decay, `∫V G^{p-1} < 0`, `∫|V| G^{p-1} < ∞`.
    MainTheorem,
    /// `V ≤ 0` with decay and finite `∫|V| G^{p-1}`.
    NonpositivePotential,
    Unverified,
}

#[derive(Debug, Clone)]
pub struct OptimalPair {
    /// Operator whose Green potential was built.
    pub spec_v: ProblemSpec,
    /// Operator receiving the weight, potential `V/c_p`.
    pub spec_weighted: ProblemSpec,
    pub green: GreenPotential,
    pub assumptions: AssumptionCheck,
    pub route: Route,
    pub weight: HardyWeight,
}

impl OptimalPair {
    /// The critical operator `Q_{p,A,V/c_p - W}`.
    pub fn critical_spec(&self) -> Result<ProblemSpec> {
        self.spec_weighted.minus_weight(&self.weight.w)
    }
}

/// Green potential of `Q_{p,A,V}`, hypothesis check, and the weight for
/// `Q_{p,A,V/c_p}`.
pub fn optimal_pair(spec_v: &ProblemSpec, phi: &ScalarField, levels: usize, opts: &GreenOptions) -> Result<OptimalPair> {
    let cp = c_p(spec_v.p)?;
    let green = green_potential(spec_v, phi, levels, opts)?;
    let assumptions = check_assumptions(spec_v, &green)?;
    let route = if assumptions.main_hypotheses() {
        Route::MainTheorem
    } else if assumptions.nonpositive_route() {
        Route::NonpositivePotential
    } else {
        Route::Unverified
    };
    let spec_weighted = spec_v.with_scaled_potential(1.0 / cp);
    let mut weight = weight_from_green(&spec_weighted, &green.g, &green.density)?;
    weight.hypotheses_verified = route != Route::Unverified;
    Ok(OptimalPair { spec_v: spec_v.clone(), spec_weighted, green, assumptions, route, weight })
}
