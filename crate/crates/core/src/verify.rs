//! Verification battery: Hardy margins, null sequences, null-criticality,
//! coarea flux, the chain rule for `Q(f(u))` and the simplified energy.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::field::{local_gradient, ScalarField};
use crate::green::fit_slope;
use crate::hardy::{transform_f, HardyWeight};
use crate::level_set::{level_set, Crossing};
use crate::mesh::{unit_sphere_area, Mesh, MeshKind};
use crate::operator::{apply_q, c_p, energy, energy_sim_unchecked, weak_residual_parts, x_y_unchecked, MatrixField, ProblemSpec};
use crate::report::{DataTable, Direction, VerificationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    RandomBumps,
    TensorSines,
    HatProducts,
}

/// Seeded test functions vanishing on the boundary. On radial meshes the
/// members are built in `log r`, so they can span several decades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionFamily {
    pub kind: FamilyKind,
    pub count: usize,
    pub seed: u64,
    /// Fraction of each (log-)extent kept clear of the boundary.
    pub margin: f64,
}

fn smooth_bump(t: f64) -> f64 {
    if t.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    } else {
        0.0
    }
}

fn hat(x: f64, a: f64, apex: f64, b: f64) -> f64 {
    if x <= a || x >= b {
        0.0
    } else if x <= apex {
        (x - a) / (apex - a)
    } else {
        (b - x) / (b - apex)
    }
}

impl TestFunctionFamily {
    pub fn new(kind: FamilyKind, count: usize, seed: u64) -> Self {
        TestFunctionFamily { kind, count, seed, margin: 0.05 }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    fn coords(mesh: &Mesh) -> impl Fn([f64; 2]) -> [f64; 2] {
        let log = mesh.kind() == MeshKind::Radial;
        move |x| if log { [x[0].ln(), 0.0] } else { x }
    }

    pub fn members(&self, mesh: &Arc<Mesh>) -> Result<Vec<ScalarField>> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("empty test-function family".into()));
        }
        if !(0.0..0.5).contains(&self.margin) {
            return Err(Error::InvalidArgument(format!("margin must lie in [0, 0.5), got {}", self.margin)));
        }
        let map = Self::coords(mesh);
        let [x0, x1, y0, y1] = mesh.hull();
        let (lo, hi) = (map([x0, y0]), map([x1, y1]));
        let one_d = mesh.is_one_dimensional();
        let shrink = |a: f64, b: f64| (a + self.margin * (b - a), b - self.margin * (b - a));
        let (ax, bx) = shrink(lo[0], hi[0]);
        let (ay, by) = if one_d { (0.0, 0.0) } else { shrink(lo[1], hi[1]) };
        // smallest bump radius: two cells in mapped coordinates
        let h = (0..mesh.num_cells())
            .map(|c| {
                let [dx, dy] = mesh.cell_size(c);
                let m = mesh.cell_midpoint(c);
                let (p, q) = (map([m[0] - 0.5 * dx, m[1] - 0.5 * dy]), map([m[0] + 0.5 * dx, m[1] + 0.5 * dy]));
                (q[0] - p[0]).max(q[1] - p[1])
            })
            .fold(0.0, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.count);
        for _ in 0..self.count {
            let f: Box<dyn Fn([f64; 2]) -> f64> = match self.kind {
                FamilyKind::RandomBumps => {
                    let extent = if one_d { bx - ax } else { (bx - ax).min(by - ay) };
                    let r_min = (2.0 * h).max(0.02 * extent).min(0.5 * extent);
                    let cx = rng.gen_range(ax + r_min..=bx - r_min);
                    let cy = if one_d { 0.0 } else { rng.gen_range(ay + r_min..=by - r_min) };
                    let mut rad = rng.gen_range(r_min..=0.5 * extent);
                    rad = rad.min(cx - ax).min(bx - cx);
                    if !one_d {
                        rad = rad.min(cy - ay).min(by - cy);
                    }
                    Box::new(move |x| {
                        let d = ((x[0] - cx).powi(2) + (x[1] - cy).powi(2)).sqrt();
                        smooth_bump(d / rad)
                    })
                }
                FamilyKind::TensorSines => {
                    let k = rng.gen_range(1..=4) as f64;
                    let l = rng.gen_range(1..=4) as f64;
                    Box::new(move |x| {
                        if x[0] < ax || x[0] > bx || (!one_d && (x[1] < ay || x[1] > by)) {
                            return 0.0;
                        }
                        let sx = (k * std::f64::consts::PI * (x[0] - ax) / (bx - ax)).sin();
                        let sy = if one_d { 1.0 } else { (l * std::f64::consts::PI * (x[1] - ay) / (by - ay)).sin() };
                        sx * sy
                    })
                }
                FamilyKind::HatProducts => {
                    let mut draw = |a: f64, b: f64| {
                        let mut t = [rng.gen_range(a..b), rng.gen_range(a..b), rng.gen_range(a..b)];
                        t.sort_by(|p, q| p.partial_cmp(q).unwrap());
                        t
                    };
                    let hx = draw(ax, bx);
                    let hy = if one_d { [0.0; 3] } else { draw(ay, by) };
                    Box::new(move |x| {
                        let fx = hat(x[0], hx[0], hx[1], hx[2]);
                        if one_d {
                            fx
                        } else {
                            fx * hat(x[1], hy[0], hy[1], hy[2])
                        }
                    })
                }
            };
            let values: Vec<f64> = (0..mesh.num_nodes())
                .map(|i| if mesh.is_boundary(i) { 0.0 } else { f(map(mesh.node(i))) })
                .collect();
            out.push(ScalarField::new(mesh.clone(), values)?);
        }
        Ok(out)
    }

    /// Members multiplied nodewise by `profile`.
    pub fn modulated_members(&self, profile: &ScalarField) -> Result<Vec<ScalarField>> {
        self.members(profile.mesh())?
            .into_iter()
            .map(|m| {
                let v = m.values().iter().zip(profile.values()).map(|(a, b)| a * b).collect();
                ScalarField::new(profile.mesh().clone(), v)
            })
            .collect()
    }
}

/// Largest relative cell size: `Δr/r` on radial meshes, `h/extent` otherwise.
pub fn mesh_resolution(mesh: &Mesh) -> f64 {
    let [x0, x1, y0, y1] = mesh.hull();
    (0..mesh.num_cells())
        .map(|c| {
            let [dx, dy] = mesh.cell_size(c);
            match mesh.kind() {
                MeshKind::Radial => dx / mesh.cell_midpoint(c)[0],
                MeshKind::Interval => dx / (x1 - x0),
                MeshKind::Tensor2d => (dx / (x1 - x0)).max(dy / (y1 - y0)),
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginOptions {
    pub tol: f64,
    /// Coefficient `C` of the allowance `C·Δx`.
    pub allowance_coeff: f64,
    /// Overrides `tol + C·Δx` when set.
    pub threshold: Option<f64>,
    /// Multiplies the members by the weight's ground state.
    pub modulate: bool,
    /// Factor applied to `W` (1.5 for the over-weighting probe).
    pub weight_factor: f64,
}

impl Default for MarginOptions {
    fn default() -> Self {
        MarginOptions { tol: 1e-6, allowance_coeff: 0.05, threshold: None, modulate: false, weight_factor: 1.0 }
    }
}

/// `min_φ [E(φ) - ∫W|φ|^p] / max(E(φ), ∫W|φ|^p)` over the family.
pub fn hardy_margin(spec: &ProblemSpec, w: &HardyWeight, fam: &TestFunctionFamily, opts: &MarginOptions) -> Result<VerificationReport> {
    spec.check_field(&w.ground_state)?;
    let members = if opts.modulate { fam.modulated_members(&w.ground_state)? } else { fam.members(&spec.mesh)? };
    let mut report = hardy_margin_members(spec, w, &members, opts)?;
    if let serde_json::Value::Object(m) = &mut report.parameters {
        m.insert("family".into(), serde_json::to_value(fam).expect("family serializes"));
    }
    Ok(report)
}

/// [`hardy_margin`] over explicit members.
pub fn hardy_margin_members(spec: &ProblemSpec, w: &HardyWeight, members: &[ScalarField], opts: &MarginOptions) -> Result<VerificationReport> {
    if w.w.values().len() != spec.mesh.num_cells() || spec.p != w.p {
        return Err(Error::MeshMismatch("weight and operator disagree".into()));
    }
    let allowance = opts.allowance_coeff * mesh_resolution(&spec.mesh);
    let threshold = opts.threshold.unwrap_or(-(opts.tol + allowance));
    let scaled = w.scaled(opts.weight_factor);
    let mut table = DataTable::new(&["member", "energy", "weighted", "margin"]);
    let mut worst = f64::INFINITY;
    let mut skipped = 0;
    for (j, phi) in members.iter().enumerate() {
        let e = energy(spec, phi)?.total;
        let wi = scaled.weighted_norm_pow(phi);
        let denom = e.max(wi);
        if !(denom > 0.0) {
            skipped += 1;
            continue;
        }
        let m = (e - wi) / denom;
        worst = worst.min(m);
        table.push(vec![j as f64, e, wi, m]);
    }
    if table.rows.is_empty() {
        return Err(Error::InvalidArgument("no family member has positive energy".into()));
    }
    let mut report = VerificationReport::new(
        "hardy_margin",
        json!({"p": spec.p, "members": members.len(), "weight_factor": opts.weight_factor,
               "allowance": allowance, "modulated": opts.modulate}),
        worst,
        threshold,
        Direction::AtLeast,
    )
    .with_table(table);
    if skipped > 0 {
        report.note(format!("{skipped} members with zero energy and weight skipped"));
    }
    Ok(report)
}

/// Log cutoff `φ_k(s)`: 0 below `k⁻²`, `2 + log s/log k` up to `k⁻¹`, 1 up
/// to `k`, `2 - log s/log k` up to `k²`, 0 beyond.
pub fn null_cutoff(s: f64, k: f64) -> f64 {
    if !(s > 0.0) {
        return 0.0;
    }
    let lk = k.ln();
    let ls = s.ln() / lk;
    if ls <= -2.0 || ls >= 2.0 {
        0.0
    } else if ls < -1.0 {
        2.0 + ls
    } else if ls <= 1.0 {
        1.0
    } else {
        2.0 - ls
    }
}

/// `u_k = φ_k(f(G)) f(G)` nodewise.
pub fn null_sequence_field(g: &ScalarField, p: f64, k: u32) -> Result<ScalarField> {
    c_p(p)?;
    if k < 2 {
        return Err(Error::InvalidArgument(format!("null sequence needs k ≥ 2, got {k}")));
    }
    g.map(|v| {
        if v > 0.0 {
            let s = v.powf((p - 1.0) / p);
            null_cutoff(s, k as f64) * s
        } else {
            0.0
        }
    })
}

/// Largest usable `k`: the `k²` shelf must lie below `f(max G)`, and every
/// boundary node must sit beyond a shelf (`f(G) ≤ k⁻²` or `f(G) ≥ k²`).
pub fn null_sequence_k_max(g: &ScalarField, p: f64) -> f64 {
    let mesh = g.mesh();
    let q = (p - 1.0) / p;
    let mut k_max = g.max().max(0.0).powf(q).sqrt();
    for i in (0..mesh.num_nodes()).filter(|&i| mesh.is_boundary(i)) {
        let s = g.values()[i].max(0.0).powf(q);
        if s > 0.0 {
            k_max = k_max.min(s.sqrt().max(1.0 / s.sqrt()));
        }
    }
    k_max
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSequenceOptions {
    /// Band `ε₀/2 < f(G) < ε₀` carrying the normalization mass.
    pub eps0: f64,
    pub slope_tol: f64,
    pub band_factor: f64,
}

impl Default for NullSequenceOptions {
    fn default() -> Self {
        NullSequenceOptions { eps0: 0.5, slope_tol: 0.15, band_factor: 2.0 }
    }
}

/// Energies of the null sequence on the critical operator `spec_weighted`
/// (potential `V/c_p - W`). The statistic is `|slope / (1-p) - 1|` for the
/// fitted slope of `log Q(u_k)` against `log log k`.
pub fn null_sequence_decay(
    spec_weighted: &ProblemSpec,
    g: &ScalarField,
    k_list: &[u32],
    opts: &NullSequenceOptions,
) -> Result<VerificationReport> {
    spec_weighted.check_field(g)?;
    let p = spec_weighted.p;
    if k_list.len() < 2 {
        return Err(Error::InvalidArgument("at least two k values are needed".into()));
    }
    let k_max = null_sequence_k_max(g, p);
    if let Some(&k) = k_list.iter().find(|&&k| k as f64 > k_max) {
        return Err(Error::UnderResolved(format!(
            "k = {k} needs f(G) to span [k⁻², k²]; this mesh allows k ≤ {k_max:.2}"
        )));
    }
    let mesh = &spec_weighted.mesh;
    let q = (p - 1.0) / p;
    let v = g.map(|x| x.max(0.0).powf(q))?;
    let mass = mesh.lumped_mass();
    let mut table = DataTable::new(&["k", "Q_uk", "X_k", "Y_k", "band_mass"]);
    for &k in k_list {
        let u = null_sequence_field(g, p, k)?;
        let qk = match energy(spec_weighted, &u) {
            Ok(e) => e.total,
            Err(Error::NonzeroBoundary { node, .. }) => {
                return Err(Error::UnderResolved(format!("u_{k} does not vanish at boundary node {node}")));
            }
            Err(e) => return Err(e),
        };
        let w = v.map(|s| null_cutoff(s, k as f64))?;
        let (x, y) = x_y_unchecked(spec_weighted, &v, &w);
        let band: f64 = (0..mesh.num_nodes())
            .filter(|&i| v.values()[i] > 0.5 * opts.eps0 && v.values()[i] < opts.eps0)
            .map(|i| mass[i] * u.values()[i].abs().powf(p))
            .sum();
        table.push(vec![k as f64, qk, x, y, band]);
    }
    let col = |name: &str| table.column(name).expect("column exists");
    let ks = col("k");
    let loglog = |vals: &[f64]| -> f64 {
        let pts: Vec<(f64, f64)> = ks.iter().zip(vals).filter(|(_, v)| **v > 0.0).map(|(k, v)| (k.ln().ln(), v.ln())).collect();
        if pts.len() < ks.len() {
            f64::NAN
        } else {
            fit_slope(&pts)
        }
    };
    let qs = col("Q_uk");
    let slope = loglog(&qs);
    let x_slope = loglog(&col("X_k"));
    let y_slope = loglog(&col("Y_k"));
    let expected = -(p - 1.0);
    let deviation = (slope / expected - 1.0).abs();
    let bands = col("band_mass");
    let band_ratio = bands.iter().cloned().fold(0.0, f64::max) / bands.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut report = VerificationReport::new(
        "null_sequence_decay",
        json!({"p": p, "k": k_list, "slope": slope, "expected_slope": expected, "x_slope": x_slope,
               "y_slope": y_slope, "band_ratio": band_ratio, "k_max": k_max, "eps0": opts.eps0}),
        deviation,
        opts.slope_tol,
        Direction::AtMost,
    )
    .with_table(table);
    report.note(format!("slope of log Q(u_k) vs log log k: {slope:.4} (expected {expected:.4}); X slope {x_slope:.4}"));
    if !(band_ratio <= opts.band_factor) {
        report.fail(format!("band mass varies by {band_ratio:.3}x across k"));
    }
    if qs.windows(2).any(|w| !(w[1] < w[0])) {
        report.fail("Q(u_k) is not decreasing in k");
    }
    Ok(report)
}

/// `I(τ) = ∫_{τ<G<t₀} W v^p` for each τ; the statistic is the spread
/// `max/min - 1` of `I(τ)/log(1/τ)`.
pub fn null_criticality_growth(w: &HardyWeight, g: &ScalarField, tau_list: &[f64], t0: f64, tol: f64) -> Result<VerificationReport> {
    let mesh = w.mesh();
    if g.values().len() != mesh.num_nodes() {
        return Err(Error::MeshMismatch("G does not match the weight".into()));
    }
    let p = w.p;
    let v = w.ground_state.values();
    let gbar: Vec<f64> = (0..mesh.num_cells()).map(|c| g.cell_average(c)).collect();
    let reach = gbar.iter().cloned().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
    let mut table = DataTable::new(&["tau", "I", "ratio"]);
    let mut dropped = Vec::new();
    for &tau in tau_list {
        if !(tau > reach) || !(tau < t0) || !(tau < 1.0) {
            dropped.push(tau);
            continue;
        }
        let mut total = 0.0;
        for c in 0..mesh.num_cells() {
            if gbar[c] > tau && gbar[c] < t0 {
                let nodes = mesh.cell_nodes(c);
                let mean = nodes.iter().map(|&i| v[i].abs().powf(p)).sum::<f64>() / nodes.len() as f64;
                total += w.w.values()[c] * mean * mesh.cell_measure(c);
            }
        }
        table.push(vec![tau, total, total / (1.0 / tau).ln()]);
    }
    if table.rows.len() < 2 {
        return Err(Error::UnderResolved(format!("fewer than two τ resolved (G reaches down to {reach:e})")));
    }
    let ratios = table.column("ratio").expect("column exists");
    let mx = ratios.iter().cloned().fold(0.0, f64::max);
    let mn = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut report = VerificationReport::new(
        "null_criticality_growth",
        json!({"p": p, "tau": tau_list, "t0": t0}),
        mx / mn - 1.0,
        tol,
        Direction::AtMost,
    )
    .with_table(table);
    if !dropped.is_empty() {
        report.note(format!("τ outside the resolved range dropped: {dropped:?}"));
    }
    Ok(report)
}

/// `|∇G|_A^{p-1}·|∇G|_A/|∇G|` from a gradient and its matrix.
fn flux_density(grad: [f64; 2], a: &crate::operator::SymMatrix, p: f64) -> f64 {
    let ga = a.quad(grad).max(0.0).sqrt();
    let ge = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
    if ge == 0.0 {
        0.0
    } else {
        ga.powf(p - 1.0) * ga / ge
    }
}

/// `F(t) = ∫_{G=t} |∇G|_A^{p-1} dσ_A` per level; statistic `max F / min F`.
pub fn coarea_flux(g: &ScalarField, a: &MatrixField, p: f64, t_list: &[f64], tol: f64) -> Result<VerificationReport> {
    c_p(p)?;
    let mesh = g.mesh();
    if a.entries().len() != mesh.num_cells() {
        return Err(Error::MeshMismatch("matrix field does not match G".into()));
    }
    let touches_boundary = |c: usize| mesh.cell_nodes(c).iter().any(|&i| mesh.is_boundary(i));
    let mut table = DataTable::new(&["t", "flux"]);
    let mut dropped = Vec::new();
    for &t in t_list {
        let Ok(ls) = level_set(g, t) else {
            dropped.push(t);
            continue;
        };
        if ls.crossings.is_empty() || ls.crossings.iter().any(|c| touches_boundary(c.cell())) {
            dropped.push(t);
            continue;
        }
        let mut f = 0.0;
        for cr in &ls.crossings {
            match cr {
                Crossing::Point { x, cell } => {
                    let grad = radial_gradient_at(g, *cell, *x);
                    let area = match mesh.kind() {
                        MeshKind::Radial => unit_sphere_area(mesh.n_dim()) * x.powi(mesh.n_dim() as i32 - 1),
                        _ => 1.0,
                    };
                    f += area * flux_density([grad, 0.0], a.get(*cell), p);
                }
                Crossing::Segment { a: pa, b: pb, cell, .. } => {
                    let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
                    let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
                    let grad = local_gradient(g.values(), mesh.cell_nodes(*cell), &mesh.grads_at(*cell, mid));
                    f += len * flux_density(grad, a.get(*cell), p);
                }
            }
        }
        table.push(vec![t, f]);
    }
    if table.rows.len() < 2 {
        return Err(Error::UnderResolved("fewer than two levels lie inside the mesh".into()));
    }
    let fl = table.column("flux").expect("column exists");
    let mx = fl.iter().cloned().fold(0.0, f64::max);
    let mn = fl.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut report = VerificationReport::new(
        "coarea_flux",
        json!({"p": p, "t": t_list, "mesh": mesh.label()}),
        mx / mn,
        1.0 + tol,
        Direction::AtMost,
    )
    .with_table(table);
    if !dropped.is_empty() {
        report.note(format!("levels dropped (outside range or touching the boundary): {dropped:?}"));
    }
    Ok(report)
}

/// `G'` at `x` inside `cell` on a 1D mesh, interpolated linearly between
/// neighbouring cell midpoints.
fn radial_gradient_at(g: &ScalarField, cell: usize, x: f64) -> f64 {
    let mesh = g.mesh();
    let slope = |c: usize| {
        let n = mesh.cell_nodes(c);
        (g.values()[n[1]] - g.values()[n[0]]) / mesh.cell_size(c)[0]
    };
    let mid = mesh.cell_midpoint(cell)[0];
    let other = if x < mid { cell.checked_sub(1) } else { Some(cell + 1).filter(|&c| c < mesh.num_cells()) };
    match other {
        Some(o) => {
            let mo = mesh.cell_midpoint(o)[0];
            let s = (x - mid) / (mo - mid);
            (1.0 - s) * slope(cell) + s * slope(o)
        }
        None => slope(cell),
    }
}

/// Outer function for the chain rule.
#[derive(Debug, Clone, Copy)]
pub enum ChainTransform {
    /// `f(t) = t^q`.
    Power(f64),
    /// `f`, `f'`, `f''`.
    Custom { f: fn(f64) -> f64, df: fn(f64) -> f64, d2f: fn(f64) -> f64 },
}

impl ChainTransform {
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        match *self {
            ChainTransform::Power(q) => (t.powf(q), q * t.powf(q - 1.0), q * (q - 1.0) * t.powf(q - 2.0)),
            ChainTransform::Custom { f, df, d2f } => (f(t), df(t), d2f(t)),
        }
    }
}

/// Discrete `L²` norm of a weak nodal vector over interior nodes.
fn weak_norm(mesh: &Mesh, r: &[f64]) -> f64 {
    let mass = mesh.lumped_mass();
    mesh.interior_nodes().map(|i| r[i] * r[i] / mass[i]).sum::<f64>().sqrt()
}

/// Compares `apply_Q(f(u))` with the termwise right-hand side
/// `-Δ_p^{1D}f(u)|∇u|_A^p + f'(u)^{p-1}(-Δ_{p,A}u + V (f(u)/(f'(u)u))^{p-1} u^{p-1})`.
pub fn chain_rule_residual(spec: &ProblemSpec, u: &ScalarField, f: ChainTransform, tol: f64) -> Result<VerificationReport> {
    spec.check_field(u)?;
    if let Some((i, &x)) = u.values().iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(Error::NonPositive { node: i, value: x });
    }
    let mesh = &spec.mesh;
    let p = spec.p;
    let fu = u.map(|t| f.eval(t).0)?;
    let lhs = apply_q(spec, &fu)?;

    let laplace = apply_q(&spec.clone().with_potential(crate::field::CellField::zeros(mesh.clone()))?, u)?;
    let mass = mesh.lumped_mass();
    let mut grad_p = vec![0.0; mesh.num_nodes()];
    let mut weight = vec![0.0; mesh.num_nodes()];
    for c in 0..mesh.num_cells() {
        let nodes = mesh.cell_nodes(c);
        let a = spec.a.get(c);
        let gp: f64 = mesh
            .quad_rule(c)
            .points()
            .iter()
            .map(|q| q.weight * a.quad(local_gradient(u.values(), nodes, &q.grads)).max(0.0).powf(0.5 * p))
            .sum::<f64>()
            / mesh.cell_measure(c);
        for &i in nodes {
            grad_p[i] += mesh.cell_measure(c) * gp;
            weight[i] += mesh.cell_measure(c);
        }
    }
    let share = 1.0 / mesh.nodes_per_cell() as f64;
    let mut vmass = vec![0.0; mesh.num_nodes()];
    for c in 0..mesh.num_cells() {
        for &i in mesh.cell_nodes(c) {
            vmass[i] += spec.v.values()[c] * mesh.cell_measure(c) * share;
        }
    }
    let mut rhs = vec![0.0; mesh.num_nodes()];
    let mut cp_defect = 0.0f64;
    let cp = c_p(p)?;
    let is_transform = matches!(f, ChainTransform::Power(q) if (q - (p - 1.0) / p).abs() < 1e-15);
    for i in mesh.interior_nodes() {
        let t = u.values()[i];
        let (fv, df, d2f) = f.eval(t);
        let lap1d = -(p - 1.0) * df.abs().powf(p - 2.0) * d2f;
        let ratio = (fv / (df * t)).powf(p - 1.0);
        if is_transform {
            cp_defect = cp_defect.max((ratio / cp - 1.0).abs());
        }
        rhs[i] = lap1d * grad_p[i] / weight[i] * mass[i]
            + df.powf(p - 1.0) * (laplace.values()[i] + vmass[i] * ratio * t.powf(p - 1.0));
    }
    let diff: Vec<f64> = lhs.values().iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let scale = weak_norm(mesh, lhs.values());
    let rel = if scale > 0.0 { weak_norm(mesh, &diff) / scale } else { weak_norm(mesh, &diff) };
    let mut report = VerificationReport::new(
        "chain_rule_residual",
        json!({"p": p, "transform": format!("{f:?}"), "mesh": mesh.label(), "c_p_defect": if is_transform { Some(cp_defect) } else { None }}),
        rel,
        tol,
        Direction::AtMost,
    );
    if is_transform && cp_defect > 1e-12 {
        report.fail(format!("(f/(f'u))^(p-1) deviates from c_p by {cp_defect:e}"));
    }
    Ok(report)
}

/// Nodewise `(f(u)/(f'(u)u))^{p-1} / c_p - 1` for the Hardy transform.
pub fn cp_factor_defect(u: &ScalarField, p: f64) -> Result<f64> {
    let cp = c_p(p)?;
    let mut worst = 0.0f64;
    for &t in u.values() {
        let (f, df, _) = transform_f(t, p)?;
        worst = worst.max(((f / (df * t)).powf(p - 1.0) / cp - 1.0).abs());
    }
    Ok(worst)
}

/// Ratios `E(v w)/E_sim(v, w)` and `E(v w)/(X + X^{2/p} Y^{(p-2)/p})` over
/// the family; passes when both bands are finite and positive. The
/// statistic is the width `max/min` of the first band.
pub fn simp_equivalence(spec: &ProblemSpec, v: &ScalarField, fam: &TestFunctionFamily) -> Result<VerificationReport> {
    spec.check_field(v)?;
    // ground states vanish on Dirichlet boundaries; positivity is required inside
    let mesh = &spec.mesh;
    if let Some(i) = (0..mesh.num_nodes()).find(|&i| !(v.values()[i] > 0.0 || (mesh.is_boundary(i) && v.values()[i] == 0.0))) {
        return Err(Error::NonPositive { node: i, value: v.values()[i] });
    }
    let p = spec.p;
    let (r, mag) = weak_residual_parts(spec, v.values(), None);
    let scale = spec.mesh.interior_nodes().map(|i| mag[i]).fold(0.0, f64::max);
    let res = spec.mesh.interior_nodes().map(|i| r[i].abs()).fold(0.0, f64::max) / scale.max(f64::MIN_POSITIVE);
    let mut table = DataTable::new(&["member", "energy", "energy_sim", "ratio", "bound_ratio"]);
    for (j, w) in fam.members(&spec.mesh)?.iter().enumerate() {
        let vw = ScalarField::new(spec.mesh.clone(), v.values().iter().zip(w.values()).map(|(a, b)| a * b).collect())?;
        let e = energy(spec, &vw)?.total;
        let es = energy_sim_unchecked(spec, v, w);
        let (x, y) = x_y_unchecked(spec, v, w);
        let bound = x + x.powf(2.0 / p) * y.powf((p - 2.0) / p);
        if es > 0.0 {
            table.push(vec![j as f64, e, es, e / es, e / bound]);
        }
    }
    let ratios = table.column("ratio").expect("column exists");
    let bounds = table.column("bound_ratio").expect("column exists");
    let band = |v: &[f64]| {
        (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    };
    let (lo, hi) = band(&ratios);
    let (blo, bhi) = band(&bounds);
    let width = hi / lo;
    let mut report = VerificationReport::new(
        "simp_equivalence",
        json!({"p": p, "ratio_min": lo, "ratio_max": hi, "bound_ratio_min": blo, "bound_ratio_max": bhi, "v_residual": res}),
        width,
        f64::MAX,
        Direction::AtMost,
    )
    .with_table(table);
    if !(lo > 0.0 && hi.is_finite() && blo > 0.0 && bhi.is_finite()) {
        report.fail("ratio band is not finite and positive");
    }
    if !(res < 1e-3) {
        report.fail(format!("invalid v: relative residual {res:.3e}"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::radial_green_oracle;
    use crate::hardy::weight_case_one;
    use crate::mesh::{build_radial_mesh, build_tensor_mesh, Grading};
    use approx::assert_relative_eq;

    fn radial(n: usize, lo: f64, hi: f64, cells: usize) -> Arc<Mesh> {
        Arc::new(build_radial_mesh(n, lo, hi, cells, Grading::LogUniform).unwrap())
    }

    #[test]
    fn families_vanish_on_boundary_and_are_reproducible() {
        let r = radial(3, 0.01, 10.0, 200);
        let t = Arc::new(build_tensor_mesh([-1.0, 1.0], [-1.0, 1.0], 20, 20, None).unwrap());
        for kind in [FamilyKind::RandomBumps, FamilyKind::TensorSines, FamilyKind::HatProducts] {
            for mesh in [&r, &t] {
                let fam = TestFunctionFamily::new(kind, 12, 7);
                let a = fam.members(mesh).unwrap();
                let b = fam.members(mesh).unwrap();
                assert_eq!(a.len(), 12);
                for (x, y) in a.iter().zip(&b) {
                    assert_eq!(x.values(), y.values());
                    assert!((0..mesh.num_nodes()).filter(|&i| mesh.is_boundary(i)).all(|i| x.values()[i] == 0.0));
                    assert!(x.values().iter().any(|&v| v != 0.0), "{kind:?}");
                }
                let c = TestFunctionFamily::new(kind, 12, 8).members(mesh).unwrap();
                assert!(a.iter().zip(&c).any(|(x, y)| x.values() != y.values()));
            }
        }
    }

    #[test]
    fn cutoff_examples() {
        for k in [2u32, 4, 10, 32] {
            let kf = k as f64;
            assert_eq!(null_cutoff(1.0, kf), 1.0);
            assert_eq!(null_cutoff(kf * kf, kf), 0.0);
            assert_relative_eq!(null_cutoff(kf.powf(-1.5), kf), 0.5, max_relative = 1e-12);
            assert_relative_eq!(null_cutoff(kf.powf(1.5), kf), 0.5, max_relative = 1e-12);
        }
        // u_k = s φ_k(s) with s = f(G)
        let m = radial(3, 0.1, 1.0, 10);
        let g = ScalarField::constant(m.clone(), 1.0);
        let u = null_sequence_field(&g, 2.0, 4).unwrap();
        assert!(u.values().iter().all(|&v| v == 1.0));
        let g = ScalarField::constant(m.clone(), 256.0);
        assert!(null_sequence_field(&g, 2.0, 4).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(null_sequence_field(&g, 2.0, 1).is_err());
    }

    fn classical(cells: usize) -> (ProblemSpec, HardyWeight, ScalarField) {
        let m = radial(3, 1e-7, 1e7, cells);
        let g = radial_green_oracle(2.0, 3, None).unwrap().field(&m).unwrap();
        let spec = ProblemSpec::new(2.0, m.clone()).unwrap();
        let hw = weight_case_one(&g, 2.0, &spec.a).unwrap();
        let crit = spec.minus_weight(&hw.w).unwrap();
        (crit, hw, g)
    }

    #[test]
    fn null_sequence_p2_slope() {
        let (crit, _, g) = classical(3000);
        let r = null_sequence_decay(&crit, &g, &[4, 8, 16, 32], &NullSequenceOptions::default()).unwrap();
        assert!(r.pass, "{}", r.to_text());
        let y = r.artifacts.as_ref().unwrap().column("Y_k").unwrap();
        // Y grows like log k
        let ks = [4.0f64, 8.0, 16.0, 32.0];
        let slope = fit_slope(&ks.iter().zip(&y).map(|(k, y)| (k.ln().ln(), y.ln())).collect::<Vec<_>>());
        assert!((slope - 1.0).abs() < 0.15, "{slope}");
        let q = r.artifacts.unwrap().column("Q_uk").unwrap();
        assert!(q[1] < q[0]);
    }

    #[test]
    fn null_sequence_guards_range() {
        let m = radial(3, 0.01, 100.0, 400);
        let g = radial_green_oracle(2.0, 3, None).unwrap().field(&m).unwrap();
        let spec = ProblemSpec::new(2.0, m.clone()).unwrap();
        assert!(matches!(
            null_sequence_decay(&spec, &g, &[4, 32], &NullSequenceOptions::default()),
            Err(Error::UnderResolved(_))
        ));
    }

    #[test]
    fn null_criticality_classical() {
        let (_, hw, g) = classical(2000);
        let taus = [1e-2, 1e-3, 1e-4, 1e-5];
        let r = null_criticality_growth(&hw, &g, &taus, 1.0, 0.1).unwrap();
        assert!(r.pass && r.statistic < 0.01, "{}", r.to_text());
        // I(τ) = π log(1/τ): equal increments per decade
        let i = r.artifacts.as_ref().unwrap().column("I").unwrap();
        let d1 = i[1] - i[0];
        let d2 = i[3] - i[2];
        assert!((d1 / d2 - 1.0).abs() < 0.1);
        assert_relative_eq!(i[3] / (1e5f64).ln(), std::f64::consts::PI, max_relative = 0.01);
        let half = null_criticality_growth(&hw.scaled(0.5), &g, &taus, 1.0, 0.1).unwrap();
        let a = r.artifacts.unwrap().column("ratio").unwrap();
        let b = half.artifacts.unwrap().column("ratio").unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(*y, 0.5 * x, max_relative = 1e-12);
        }
        // τ beyond the mesh is dropped with a note
        let r = null_criticality_growth(&hw, &g, &[1e-2, 1e-3, 1e-9], 1.0, 0.1).unwrap();
        assert_eq!(r.artifacts.unwrap().rows.len(), 2);
        assert!(!r.notes.is_empty());
    }

    #[test]
    fn coarea_radial_power_laws() {
        for (p, n) in [(2.0, 3), (1.5, 3), (3.0, 5)] {
            let m = radial(n, 0.01, 10.0, 2000);
            let o = radial_green_oracle(p, n, None).unwrap();
            let g = o.field(&m).unwrap();
            let ts: Vec<f64> = (1..=8).map(|j| o.value(0.02 * 300f64.powf(j as f64 / 9.0))).collect();
            let r = coarea_flux(&g, &MatrixField::identity(m.clone()), p, &ts, 0.02).unwrap();
            assert!(r.pass, "p={p}: {}", r.to_text());
            let flux = r.artifacts.unwrap().column("flux").unwrap();
            let expected = unit_sphere_area(n) * ((n as f64 - p) / (p - 1.0)).powf(p - 1.0);
            for f in flux {
                assert_relative_eq!(f, expected, max_relative = 1e-3);
            }
        }
    }

    #[test]
    fn coarea_drops_levels_outside() {
        let m = radial(3, 0.1, 10.0, 200);
        let g = radial_green_oracle(2.0, 3, None).unwrap().field(&m).unwrap();
        let r = coarea_flux(&g, &MatrixField::identity(m.clone()), 2.0, &[0.5, 1.0, 100.0], 0.02).unwrap();
        assert_eq!(r.artifacts.unwrap().rows.len(), 2);
        assert!(!r.notes.is_empty());
    }

    fn chain(p: f64, q: f64, cells: usize) -> VerificationReport {
        let n = if p == 2.0 { 3 } else { 5 };
        let m = radial(n, 0.1, 10.0, cells);
        let spec = ProblemSpec::new(p, m.clone()).unwrap();
        let u = radial_green_oracle(p, n, None).unwrap().field(&m).unwrap();
        chain_rule_residual(&spec, &u, ChainTransform::Power(q), 1e-3).unwrap()
    }

    #[test]
    fn chain_rule_identity_map_is_exact() {
        let m = radial(3, 0.1, 10.0, 100);
        let spec = ProblemSpec::new(3.0, m.clone())
            .unwrap()
            .with_potential(crate::field::CellField::from_fn(m.clone(), |x| 0.3 * x[0]).unwrap())
            .unwrap();
        let u = ScalarField::from_fn(m.clone(), |x| 1.0 + x[0] * x[0]).unwrap();
        let r = chain_rule_residual(&spec, &u, ChainTransform::Power(1.0), 1e-12).unwrap();
        assert!(r.statistic < 1e-13, "{}", r.statistic);
    }

    #[test]
    fn chain_rule_converges() {
        for (p, q) in [(2.0, 0.5), (3.0, 2.0 / 3.0)] {
            let coarse = chain(p, q, 500);
            let fine = chain(p, q, 1000);
            assert!(fine.pass, "{}", fine.to_text());
            assert!((coarse.statistic / fine.statistic).log2() >= 0.9, "{} {}", coarse.statistic, fine.statistic);
        }
    }

    #[test]
    fn cp_factor_is_exact() {
        let m = radial(3, 1e-3, 1e3, 100);
        let u = ScalarField::from_fn(m.clone(), |x| x[0]).unwrap();
        for p in [1.5, 2.0, 3.0, 4.0] {
            assert!(cp_factor_defect(&u, p).unwrap() < 1e-12);
        }
    }

    #[test]
    fn hardy_margin_classical() {
        let m = radial(3, 1e-4, 1e4, 1000);
        let g = radial_green_oracle(2.0, 3, None).unwrap().field(&m).unwrap();
        let spec = ProblemSpec::new(2.0, m.clone()).unwrap();
        let hw = weight_case_one(&g, 2.0, &spec.a).unwrap();
        let fam = TestFunctionFamily::new(FamilyKind::RandomBumps, 40, 3);
        let r = hardy_margin(&spec, &hw, &fam, &MarginOptions::default()).unwrap();
        assert!(r.pass && r.statistic > 0.0, "{}", r.to_text());
        // ground-state modulated bumps come close to saturation
        let opts = MarginOptions { modulate: true, ..MarginOptions::default() };
        let near = hardy_margin(&spec, &hw, &fam, &opts).unwrap();
        assert!(near.pass && near.statistic < r.statistic, "{} {}", near.statistic, r.statistic);
        let over = hardy_margin(&spec, &hw, &fam, &MarginOptions { weight_factor: 1.5, ..opts }).unwrap();
        assert!(!over.pass && over.statistic < -1e-2, "{}", over.statistic);
    }

    #[test]
    fn simp_equivalence_cases() {
        // p = 2 with Q(v) = 0: ground-state representation, ratio 1
        let m = radial(3, 0.1, 10.0, 400);
        let spec = ProblemSpec::new(2.0, m.clone()).unwrap();
        let v = radial_green_oracle(2.0, 3, None).unwrap().field(&m).unwrap();
        let fam = TestFunctionFamily::new(FamilyKind::RandomBumps, 20, 11);
        let r = simp_equivalence(&spec, &v, &fam).unwrap();
        assert!(r.pass, "{}", r.to_text());
        assert!((r.parameters["ratio_min"].as_f64().unwrap() - 1.0).abs() < 0.02);
        assert!((r.parameters["ratio_max"].as_f64().unwrap() - 1.0).abs() < 0.02);
        // p = 3, v = 1: E_sim = X and the bound ratio is 1
        let spec = ProblemSpec::new(3.0, m.clone()).unwrap();
        let one = ScalarField::constant(m.clone(), 1.0);
        let r = simp_equivalence(&spec, &one, &fam).unwrap();
        assert!(r.pass);
        assert_relative_eq!(r.parameters["bound_ratio_min"].as_f64().unwrap(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(r.parameters["ratio_max"].as_f64().unwrap(), 1.0, max_relative = 1e-12);
        // a non-solution is tagged
        let bad = ScalarField::from_fn(m.clone(), |x| 1.0 + x[0] * x[0]).unwrap();
        let r = simp_equivalence(&spec, &bad, &fam).unwrap();
        assert!(!r.pass && r.notes.iter().any(|n| n.contains("invalid v")));
    }
}
