//! The quasilinear operator `Q_{p,A,V}(u) = -div(|∇u|_A^{p-2} A∇u) + V|u|^{p-2}u`,
//! its energy, the simplified energy and the `X`/`Y` functionals.
//!
//! Gradient terms use the mesh quadrature rule; zeroth-order terms (potential,
//! load, `L^p` masses) use the trapezoidal rule `Σ_c m_c · mean_{a∈c}`, which
//! keeps the potential term diagonal in the nodal unknowns.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{local_gradient, CellField, ScalarField};
use crate::linalg::BandMatrix;
use crate::mesh::{Mesh, SubMesh};

pub const DEFAULT_EPS_REG: f64 = 1e-10;
/// For p < 2 the regularization caps `|∇u|^{p-2}`; gradients of decaying
/// tails drop below 1e-10 long before the values do.
pub const DEFAULT_EPS_REG_SUBQUADRATIC: f64 = 1e-14;

pub fn default_eps_reg(p: f64) -> f64 {
    if p < 2.0 {
        DEFAULT_EPS_REG_SUBQUADRATIC
    } else {
        DEFAULT_EPS_REG
    }
}

/// Symmetric 2×2 matrix; 1D meshes only read `xx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymMatrix {
    pub const IDENTITY: SymMatrix = SymMatrix { xx: 1.0, xy: 0.0, yy: 1.0 };

    pub fn scalar(a: f64) -> Self {
        SymMatrix { xx: a, xy: 0.0, yy: a }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        SymMatrix { xx: a, xy: 0.0, yy: b }
    }

    /// `R(θ) diag(a, b) R(θ)^T`.
    pub fn rotated_diag(a: f64, b: f64, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        SymMatrix { xx: a * c * c + b * s * s, xy: (a - b) * s * c, yy: a * s * s + b * c * c }
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    pub fn quad(&self, v: [f64; 2]) -> f64 {
        let av = self.apply(v);
        av[0] * v[0] + av[1] * v[1]
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = 0.5 * (self.xx + self.yy);
        let d = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        [m - d, m + d]
    }

    pub fn inverse(&self) -> SymMatrix {
        let det = self.xx * self.yy - self.xy * self.xy;
        SymMatrix { xx: self.yy / det, xy: -self.xy / det, yy: self.xx / det }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }
}

/// `|ξ|_A = ⟨Aξ, ξ⟩^{1/2}`.
pub fn norm_a(xi: [f64; 2], a: &SymMatrix) -> Result<f64> {
    let q = a.quad(xi);
    if q < 0.0 {
        return Err(Error::NotPositiveDefinite { cell: usize::MAX });
    }
    Ok(q.sqrt())
}

/// `c_p = (p/(p-1))^{p-1}`.
pub fn c_p(p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::InvalidArgument(format!("p must exceed 1, got {p}")));
    }
    Ok((p / (p - 1.0)).powf(p - 1.0))
}

/// Symmetric positive-definite matrix per cell.
#[derive(Debug, Clone)]
pub struct MatrixField {
    mesh: Arc<Mesh>,
    entries: Vec<SymMatrix>,
    theta_min: f64,
}

impl MatrixField {
    pub fn new(mesh: Arc<Mesh>, entries: Vec<SymMatrix>) -> Result<Self> {
        if entries.len() != mesh.num_cells() {
            return Err(Error::MeshMismatch(format!("{} matrices for {} cells", entries.len(), mesh.num_cells())));
        }
        let one_d = mesh.is_one_dimensional();
        let mut theta_min = f64::INFINITY;
        for (c, m) in entries.iter().enumerate() {
            let lo = if one_d { m.xx } else { m.eigenvalues()[0] };
            if !(lo > 0.0) || !lo.is_finite() {
                return Err(Error::NotPositiveDefinite { cell: c });
            }
            theta_min = theta_min.min(lo);
        }
        Ok(MatrixField { mesh, entries, theta_min })
    }

    pub fn identity(mesh: Arc<Mesh>) -> Self {
        let n = mesh.num_cells();
        MatrixField { mesh, entries: vec![SymMatrix::IDENTITY; n], theta_min: 1.0 }
    }

    pub fn constant(mesh: Arc<Mesh>, m: SymMatrix) -> Result<Self> {
        let n = mesh.num_cells();
        MatrixField::new(mesh, vec![m; n])
    }

    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn([f64; 2]) -> SymMatrix) -> Result<Self> {
        let entries = (0..mesh.num_cells()).map(|c| f(mesh.cell_midpoint(c))).collect();
        MatrixField::new(mesh, entries)
    }

    pub fn get(&self, cell: usize) -> &SymMatrix {
        &self.entries[cell]
    }

    pub fn entries(&self) -> &[SymMatrix] {
        &self.entries
    }

    /// Smallest eigenvalue over all cells.
    pub fn theta_min(&self) -> f64 {
        self.theta_min
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }
}

/// `(p, A, V)` on a mesh: the data defining `Q_{p,A,V}`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub p: f64,
    pub mesh: Arc<Mesh>,
    pub a: MatrixField,
    /// Piecewise-constant potential.
    pub v: CellField,
    /// Regularization inside the `p - 2` exponent.
    pub eps_reg: f64,
}

impl ProblemSpec {
    /// `A = identity`, `V = 0`.
    pub fn new(p: f64, mesh: Arc<Mesh>) -> Result<Self> {
        c_p(p)?;
        Ok(ProblemSpec {
            p,
            a: MatrixField::identity(mesh.clone()),
            v: CellField::zeros(mesh.clone()),
            mesh,
            eps_reg: default_eps_reg(p),
        })
    }

    pub fn with_matrix(mut self, a: MatrixField) -> Result<Self> {
        if a.entries.len() != self.mesh.num_cells() {
            return Err(Error::MeshMismatch("matrix field does not match mesh".into()));
        }
        self.a = a;
        Ok(self)
    }

    pub fn with_potential(mut self, v: CellField) -> Result<Self> {
        if v.values().len() != self.mesh.num_cells() {
            return Err(Error::MeshMismatch("potential does not match mesh".into()));
        }
        self.v = v;
        Ok(self)
    }

    pub fn with_eps_reg(mut self, eps: f64) -> Self {
        self.eps_reg = eps;
        self
    }

    pub fn n_dim(&self) -> usize {
        self.mesh.n_dim()
    }

    /// Same operator with potential `s·V`.
    pub fn with_scaled_potential(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.v = self.v.scaled(s);
        out
    }

    /// Same operator with potential `V + c`.
    pub fn with_shifted_potential(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.v = CellField::new(self.mesh.clone(), self.v.values().iter().map(|v| v + c).collect())
            .expect("finite shift of a finite potential");
        out
    }

    /// Same operator with potential `V - W`.
    pub fn minus_weight(&self, w: &CellField) -> Result<Self> {
        let neg = w.scaled(-1.0);
        let mut out = self.clone();
        out.v = self.v.add(&neg)?;
        Ok(out)
    }

    /// Restriction to an exhaustion level.
    pub fn restrict(&self, sub: &SubMesh) -> Result<Self> {
        let a = MatrixField::new(sub.mesh.clone(), sub.restrict_cells(&self.a.entries))?;
        let v = CellField::new(sub.mesh.clone(), sub.restrict_cells(self.v.values()))?;
        Ok(ProblemSpec { p: self.p, mesh: sub.mesh.clone(), a, v, eps_reg: self.eps_reg })
    }

    pub(crate) fn check_field(&self, f: &ScalarField) -> Result<()> {
        if f.values().len() != self.mesh.num_nodes() || !f.same_mesh_as(&self.mesh) {
            return Err(Error::MeshMismatch(format!(
                "field on {} used with operator on {}",
                f.mesh().label(),
                self.mesh.label()
            )));
        }
        Ok(())
    }
}

impl ScalarField {
    pub(crate) fn same_mesh_as(&self, mesh: &Arc<Mesh>) -> bool {
        Arc::ptr_eq(self.mesh(), mesh) || (self.mesh().label() == mesh.label() && self.mesh().num_nodes() == mesh.num_nodes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
}

/// JSON form of an energy evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
    pub p: f64,
    pub mesh_id: String,
}

impl EnergyBreakdown {
    pub fn record(&self, spec: &ProblemSpec) -> EnergyRecord {
        EnergyRecord {
            kinetic: self.kinetic,
            potential: self.potential,
            total: self.total,
            p: spec.p,
            mesh_id: spec.mesh.label().to_string(),
        }
    }
}

fn check_boundary_zero(mesh: &Mesh, f: &ScalarField) -> Result<()> {
    for i in 0..mesh.num_nodes() {
        if mesh.is_boundary(i) && f.values()[i] != 0.0 {
            return Err(Error::NonzeroBoundary { node: i, value: f.values()[i] });
        }
    }
    Ok(())
}

/// `∫|∇φ|_A^p` and `∫V|φ|^p` for a boundary-vanishing `φ`.
pub fn energy(spec: &ProblemSpec, phi: &ScalarField) -> Result<EnergyBreakdown> {
    spec.check_field(phi)?;
    check_boundary_zero(&spec.mesh, phi)?;
    Ok(energy_unchecked(spec, phi.values()))
}

pub(crate) fn energy_unchecked(spec: &ProblemSpec, u: &[f64]) -> EnergyBreakdown {
    let mesh = &spec.mesh;
    let p = spec.p;
    let mut kinetic = 0.0;
    let mut potential = 0.0;
    let share = 1.0 / mesh.nodes_per_cell() as f64;
    for c in 0..mesh.num_cells() {
        let nodes = mesh.cell_nodes(c);
        let a = spec.a.get(c);
        for q in mesh.quad_rule(c).points() {
            let g = local_gradient(u, nodes, &q.grads);
            kinetic += q.weight * a.quad(g).max(0.0).powf(0.5 * p);
        }
        let vc = spec.v.values()[c];
        if vc != 0.0 {
            let mean: f64 = nodes.iter().map(|&n| u[n].abs().powf(p)).sum::<f64>() * share;
            potential += vc * mesh.cell_measure(c) * mean;
        }
    }
    EnergyBreakdown { kinetic, potential, total: kinetic + potential }
}

fn check_positive(f: &ScalarField) -> Result<()> {
    if let Some((i, &v)) = f.values().iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NonPositive { node: i, value: v });
    }
    Ok(())
}

/// Simplified energy `∫ v²|∇w|_A²(w|∇v|_A + v|∇w|_A)^{p-2}` for `v > 0`.
pub fn energy_sim(spec: &ProblemSpec, v: &ScalarField, w: &ScalarField) -> Result<f64> {
    spec.check_field(v)?;
    spec.check_field(w)?;
    check_positive(v)?;
    Ok(energy_sim_unchecked(spec, v, w))
}

/// [`energy_sim`] for `v ≥ 0`.
pub(crate) fn energy_sim_unchecked(spec: &ProblemSpec, v: &ScalarField, w: &ScalarField) -> f64 {
    let p = spec.p;
    cell_sum(spec, v, w, |vbar, wbar, gv, gw| {
        if gw == 0.0 {
            return 0.0;
        }
        let base = wbar.abs() * gv + vbar.abs() * gw;
        vbar * vbar * gw * gw * base.powf(p - 2.0)
    })
}

/// `X(w) = ∫ v^p |∇w|_A^p`.
pub fn x_functional(spec: &ProblemSpec, v: &ScalarField, w: &ScalarField) -> Result<f64> {
    spec.check_field(v)?;
    spec.check_field(w)?;
    check_positive(v)?;
    let p = spec.p;
    Ok(cell_sum(spec, v, w, |vbar, _, _, gw| vbar.powf(p) * gw.powf(p)))
}

/// `Y(w) = ∫ |w|^p |∇v|_A^p`.
pub fn y_functional(spec: &ProblemSpec, v: &ScalarField, w: &ScalarField) -> Result<f64> {
    spec.check_field(v)?;
    spec.check_field(w)?;
    check_positive(v)?;
    let p = spec.p;
    Ok(cell_sum(spec, v, w, |_, wbar, gv, _| wbar.abs().powf(p) * gv.powf(p)))
}

/// `(X, Y)` without the positivity check on `v` (ground states vanish on
/// Dirichlet boundaries).
pub(crate) fn x_y_unchecked(spec: &ProblemSpec, v: &ScalarField, w: &ScalarField) -> (f64, f64) {
    let p = spec.p;
    let x = cell_sum(spec, v, w, |vbar, _, _, gw| vbar.abs().powf(p) * gw.powf(p));
    let y = cell_sum(spec, v, w, |_, wbar, gv, _| wbar.abs().powf(p) * gv.powf(p));
    (x, y)
}

/// `Σ_c Σ_q weight · integrand(v̄_c, w̄_c, |∇v|_A, |∇w|_A)`.
fn cell_sum(
    spec: &ProblemSpec,
    v: &ScalarField,
    w: &ScalarField,
    integrand: impl Fn(f64, f64, f64, f64) -> f64,
) -> f64 {
    let mesh = &spec.mesh;
    let mut total = 0.0;
    for c in 0..mesh.num_cells() {
        let nodes = mesh.cell_nodes(c);
        let a = spec.a.get(c);
        let vbar = v.cell_average(c);
        let wbar = w.cell_average(c);
        for q in mesh.quad_rule(c).points() {
            let gv = a.quad(local_gradient(v.values(), nodes, &q.grads)).max(0.0).sqrt();
            let gw = a.quad(local_gradient(w.values(), nodes, &q.grads)).max(0.0).sqrt();
            total += q.weight * integrand(vbar, wbar, gv, gw);
        }
    }
    total
}

/// `|t|^{p-2} t`.
#[inline]
pub fn i_p(t: f64, p: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t.abs().powf(p - 1.0).copysign(t)
    }
}

/// Discrete weak form of `Q_{p,A,V}(u)` tested against every interior hat
/// function; boundary entries are zero.
pub fn apply_q(spec: &ProblemSpec, u: &ScalarField) -> Result<ScalarField> {
    spec.check_field(u)?;
    let mut r = residual_terms(spec, u.values(), None, 0.0).0;
    for i in 0..spec.mesh.num_nodes() {
        if spec.mesh.is_boundary(i) {
            r[i] = 0.0;
        }
    }
    ScalarField::new(spec.mesh.clone(), r)
}

/// `r_i = ∫ k(∇u) A∇u·∇χ_i + ∫ V j(u) χ_i - b_i` at every node (boundary
/// rows included), with `k = (|∇u|_A² + ε²)^{(p-2)/2}` and
/// `j(u) = (u² + ε²)^{(p-2)/2} u`, the regularized problem the solver works on.
#[cfg(test)]
pub(crate) fn weak_residual(spec: &ProblemSpec, u: &[f64], load: Option<&[f64]>) -> Vec<f64> {
    weak_residual_parts(spec, u, load).0
}

/// Residual together with the row magnitudes `Σ|contribution|`.
pub(crate) fn weak_residual_parts(spec: &ProblemSpec, u: &[f64], load: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
    residual_terms(spec, u, load, spec.eps_reg * spec.eps_reg)
}

fn residual_terms(spec: &ProblemSpec, u: &[f64], load: Option<&[f64]>, eps2: f64) -> (Vec<f64>, Vec<f64>) {
    let mesh = &spec.mesh;
    let p = spec.p;
    let share = 1.0 / mesh.nodes_per_cell() as f64;
    let mut r = vec![0.0; mesh.num_nodes()];
    let mut mag = vec![0.0; mesh.num_nodes()];
    for c in 0..mesh.num_cells() {
        let nodes = mesh.cell_nodes(c);
        let a = spec.a.get(c);
        for q in mesh.quad_rule(c).points() {
            let g = local_gradient(u, nodes, &q.grads);
            let ag = a.apply(g);
            let k = flux_coefficient(a.quad(g) + eps2, p);
            for (l, &n) in nodes.iter().enumerate() {
                let t = q.weight * k * (ag[0] * q.grads[l][0] + ag[1] * q.grads[l][1]);
                r[n] += t;
                mag[n] += t.abs();
            }
        }
        let vc = spec.v.values()[c];
        if vc != 0.0 {
            let m = mesh.cell_measure(c) * share;
            for &n in nodes {
                let t = vc * m * regularized_ip(u[n], p, eps2);
                r[n] += t;
                mag[n] += t.abs();
            }
        }
    }
    if let Some(b) = load {
        for ((ri, mi), bi) in r.iter_mut().zip(mag.iter_mut()).zip(b) {
            *ri -= bi;
            *mi += bi.abs();
        }
    }
    (r, mag)
}

#[inline]
fn flux_coefficient(s: f64, p: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else if s == 0.0 {
        // multiplies a zero gradient
        0.0
    } else {
        s.powf(0.5 * (p - 2.0))
    }
}

#[inline]
fn regularized_ip(t: f64, p: f64, eps2: f64) -> f64 {
    if p == 2.0 {
        t
    } else if eps2 == 0.0 {
        i_p(t, p)
    } else {
        (t * t + eps2).powf(0.5 * (p - 2.0)) * t
    }
}

/// `b_i = ∫ g χ_i` with the trapezoidal rule.
pub(crate) fn load_vector(mesh: &Mesh, g: &[f64]) -> Vec<f64> {
    mesh.lumped_mass().iter().zip(g).map(|(m, gi)| m * gi).collect()
}

/// `J(u) = ∫ (1/p)[(|∇u|_A² + ε²)^{p/2} - ε^p] + (1/p)∫V[(u² + ε²)^{p/2} - ε^p] - ∫ g u`.
pub(crate) fn solver_energy(spec: &ProblemSpec, u: &[f64], load: &[f64]) -> f64 {
    let mesh = &spec.mesh;
    let p = spec.p;
    let eps2 = spec.eps_reg * spec.eps_reg;
    let offset = eps2.powf(0.5 * p);
    let share = 1.0 / mesh.nodes_per_cell() as f64;
    let mut j = 0.0;
    for c in 0..mesh.num_cells() {
        let nodes = mesh.cell_nodes(c);
        let a = spec.a.get(c);
        for q in mesh.quad_rule(c).points() {
            let g = local_gradient(u, nodes, &q.grads);
            j += q.weight * ((a.quad(g) + eps2).powf(0.5 * p) - offset) / p;
        }
        let vc = spec.v.values()[c];
        if vc != 0.0 {
            let m = mesh.cell_measure(c) * share;
            j += vc * m * nodes.iter().map(|&n| (u[n] * u[n] + eps2).powf(0.5 * p) - offset).sum::<f64>() / p;
        }
    }
    j - load.iter().zip(u).map(|(b, x)| b * x).sum::<f64>()
}

/// Linearization of the weak residual. `newton = false` freezes the flux
/// coefficient (Picard / Kačanov matrix).
pub(crate) fn assemble_jacobian(spec: &ProblemSpec, u: &[f64], newton: bool) -> BandMatrix {
    let mesh = &spec.mesh;
    let p = spec.p;
    let eps2 = spec.eps_reg * spec.eps_reg;
    let share = 1.0 / mesh.nodes_per_cell() as f64;
    let mut h = BandMatrix::zeros(mesh.num_nodes(), mesh.bandwidth());
    for c in 0..mesh.num_cells() {
        let nodes = mesh.cell_nodes(c);
        let a = spec.a.get(c);
        for q in mesh.quad_rule(c).points() {
            let g = local_gradient(u, nodes, &q.grads);
            let ag = a.apply(g);
            let s = a.quad(g) + eps2;
            let k = flux_coefficient(s, p);
            let k2 = if newton && p != 2.0 { (p - 2.0) * s.powf(0.5 * (p - 4.0)) } else { 0.0 };
            for (la, &na) in nodes.iter().enumerate() {
                let ga = q.grads[la];
                let a_ga = a.apply(ga);
                let ag_ga = ag[0] * ga[0] + ag[1] * ga[1];
                for (lb, &nb) in nodes.iter().enumerate() {
                    let gb = q.grads[lb];
                    let mut d = k * (a_ga[0] * gb[0] + a_ga[1] * gb[1]);
                    if k2 != 0.0 {
                        d += k2 * ag_ga * (ag[0] * gb[0] + ag[1] * gb[1]);
                    }
                    h.add(na, nb, q.weight * d);
                }
            }
        }
        let vc = spec.v.values()[c];
        if vc != 0.0 {
            let m = mesh.cell_measure(c) * share;
            for &n in nodes {
                let coeff = if p == 2.0 {
                    1.0
                } else {
                    let s = u[n] * u[n] + eps2;
                    if newton {
                        s.powf(0.5 * (p - 4.0)) * ((p - 1.0) * u[n] * u[n] + eps2)
                    } else {
                        s.powf(0.5 * (p - 2.0))
                    }
                };
                h.add(n, n, vc * m * coeff);
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_interval_mesh, build_radial_mesh, build_tensor_mesh, Grading};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn a_norms() {
        assert_relative_eq!(norm_a([1.0, 0.0], &SymMatrix::IDENTITY).unwrap(), 1.0);
        assert_relative_eq!(norm_a([1.0, 1.0], &SymMatrix::diag(4.0, 9.0)).unwrap(), 13f64.sqrt());
        assert_relative_eq!(norm_a([3.0, 4.0], &SymMatrix::IDENTITY).unwrap(), 5.0);
        let bad = SymMatrix { xx: 1.0, xy: 0.0, yy: -1.0 };
        assert!(norm_a([0.0, 1.0], &bad).is_err());
    }

    #[test]
    fn c_p_values() {
        assert_relative_eq!(c_p(2.0).unwrap(), 2.0);
        assert_relative_eq!(c_p(3.0).unwrap(), 2.25);
        assert_relative_eq!(c_p(1.5).unwrap(), 1.732_050_8, epsilon = 1e-7);
        assert!(c_p(1.0).is_err());
        assert!(c_p(0.5).is_err());
        for p in [1.1, 1.5, 2.0, 4.0, 10.0] {
            assert!(c_p(p).unwrap() > 1.0);
        }
    }

    #[test]
    fn matrix_field_rejects_indefinite() {
        let m = Arc::new(build_tensor_mesh([0.0, 1.0], [0.0, 1.0], 8, 8, None).unwrap());
        assert!(MatrixField::constant(m.clone(), SymMatrix { xx: 1.0, xy: 2.0, yy: 1.0 }).is_err());
        let f = MatrixField::constant(m, SymMatrix::rotated_diag(1.0, 4.0, 0.3)).unwrap();
        assert_relative_eq!(f.theta_min(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_field_has_zero_energy() {
        let m = Arc::new(build_interval_mesh(0.0, 1.0, 16, Grading::Uniform).unwrap());
        let spec = ProblemSpec::new(3.0, m.clone()).unwrap().with_potential(CellField::constant(m.clone(), 2.0)).unwrap();
        let e = energy(&spec, &ScalarField::zeros(m)).unwrap();
        assert_eq!((e.kinetic, e.potential, e.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn sine_dirichlet_energy() {
        let mut last = f64::INFINITY;
        for n in [50, 100, 200, 400] {
            let m = Arc::new(build_interval_mesh(0.0, 1.0, n, Grading::Uniform).unwrap());
            let spec = ProblemSpec::new(2.0, m.clone()).unwrap();
            let mut phi = ScalarField::from_fn(m.clone(), |x| (PI * x[0]).sin()).unwrap().into_values();
            phi[0] = 0.0;
            phi[n] = 0.0;
            let e = energy(&spec, &ScalarField::new(m, phi).unwrap()).unwrap();
            let err = (e.kinetic - PI * PI / 2.0).abs();
            assert!(err < last);
            last = err;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn energy_rejects_nonzero_boundary() {
        let m = Arc::new(build_interval_mesh(0.0, 1.0, 16, Grading::Uniform).unwrap());
        let spec = ProblemSpec::new(2.0, m.clone()).unwrap();
        let phi = ScalarField::constant(m, 1.0);
        assert!(matches!(energy(&spec, &phi), Err(Error::NonzeroBoundary { .. })));
    }

    #[test]
    fn energy_record_json() {
        let m = Arc::new(build_interval_mesh(0.0, 1.0, 8, Grading::Uniform).unwrap());
        let spec = ProblemSpec::new(2.0, m.clone()).unwrap();
        let e = energy(&spec, &ScalarField::zeros(m)).unwrap();
        let json = serde_json::to_value(e.record(&spec)).unwrap();
        for key in ["kinetic", "potential", "total", "p", "mesh_id"] {
            assert!(json.get(key).is_some());
        }
    }

    fn bump(m: &Arc<Mesh>, lo: f64, hi: f64) -> ScalarField {
        ScalarField::from_fn(m.clone(), |x| {
            let s = (2.0 * x[0] - lo - hi) / (hi - lo);
            if s.abs() < 1.0 {
                (1.0 - s * s).powi(2)
            } else {
                0.0
            }
        })
        .unwrap()
    }

    proptest! {
        #[test]
        fn energy_is_p_homogeneous(lambda in 0.01f64..50.0, p in 1.2f64..4.0, v in -1.0f64..1.0) {
            let m = Arc::new(build_radial_mesh(3, 0.1, 2.0, 40, Grading::LogUniform).unwrap());
            let spec = ProblemSpec::new(p, m.clone()).unwrap()
                .with_potential(CellField::constant(m.clone(), v)).unwrap();
            let phi = bump(&m, 0.3, 1.5);
            let e1 = energy(&spec, &phi).unwrap().total;
            let e2 = energy(&spec, &phi.scaled(lambda)).unwrap().total;
            prop_assert!((e2 - lambda.powf(p) * e1).abs() <= 1e-12 * (lambda.powf(p) * e1).abs().max(1e-300));
        }
    }

    #[test]
    fn simplified_energy_special_cases() {
        let m = Arc::new(build_interval_mesh(0.0, 1.0, 400, Grading::Uniform).unwrap());
        let v1 = ScalarField::constant(m.clone(), 1.0);
        let w = ScalarField::from_fn(m.clone(), |x| x[0] * (1.0 - x[0])).unwrap();
        // constant w kills the integrand
        let spec3 = ProblemSpec::new(3.0, m.clone()).unwrap();
        assert_eq!(energy_sim(&spec3, &v1, &ScalarField::constant(m.clone(), 0.7)).unwrap(), 0.0);
        // p = 3, v = 1: ∫|1 - 2x|³ = 1/4
        assert_relative_eq!(energy_sim(&spec3, &v1, &w).unwrap(), 0.25, max_relative = 1e-4);
        // p = 2 reduces to ∫ v²|∇w|²
        let spec2 = ProblemSpec::new(2.0, m.clone()).unwrap();
        let v = ScalarField::from_fn(m.clone(), |x| 1.0 + x[0]).unwrap();
        let direct: f64 = (0..m.num_cells())
            .map(|c| {
                let g = crate::field::gradient(&w).get(c)[0];
                v.cell_average(c).powi(2) * g * g * m.cell_measure(c)
            })
            .sum();
        assert_relative_eq!(energy_sim(&spec2, &v, &w).unwrap(), direct, max_relative = 1e-13);
        assert!(energy_sim(&spec2, &ScalarField::zeros(m.clone()), &w).is_err());
    }

    #[test]
    fn x_and_y_special_cases() {
        let m = Arc::new(build_interval_mesh(0.0, 1.0, 64, Grading::Uniform).unwrap());
        let spec = ProblemSpec::new(2.0, m.clone()).unwrap();
        let one = ScalarField::constant(m.clone(), 1.0);
        let x = ScalarField::from_fn(m.clone(), |p| p[0]).unwrap();
        assert_eq!(x_functional(&spec, &x.map(|t| t + 1.0).unwrap(), &one).unwrap(), 0.0);
        assert_eq!(y_functional(&spec, &one, &x).unwrap(), 0.0);
        assert_relative_eq!(x_functional(&spec, &one, &x).unwrap(), 1.0, max_relative = 1e-13);
    }

    #[test]
    fn ground_state_representation_at_p2() {
        // v = 1 + x is harmonic on (0, 1); energy(v w) = ∫ v²|w'|² up to O(h²)
        let errs: Vec<f64> = [50, 100, 200]
            .iter()
            .map(|&n| {
                let m = Arc::new(build_interval_mesh(0.0, 1.0, n, Grading::Uniform).unwrap());
                let spec = ProblemSpec::new(2.0, m.clone()).unwrap();
                let v = ScalarField::from_fn(m.clone(), |x| 1.0 + x[0]).unwrap();
                let w = bump(&m, 0.1, 0.9);
                let vw = ScalarField::new(m.clone(), v.values().iter().zip(w.values()).map(|(a, b)| a * b).collect()).unwrap();
                let e = energy(&spec, &vw).unwrap().total;
                let s = energy_sim(&spec, &v, &w).unwrap();
                (e - s).abs() / s
            })
            .collect();
        assert!(errs[2] < 1e-4);
        assert!(errs[0] / errs[2] > 12.0, "{errs:?}");
    }

    #[test]
    fn linear_is_discretely_harmonic() {
        let m = Arc::new(build_interval_mesh(0.0, 1.0, 20, Grading::Geometric(1.1)).unwrap());
        let spec = ProblemSpec::new(2.0, m.clone()).unwrap();
        let u = ScalarField::from_fn(m, |x| 3.0 * x[0] - 1.0).unwrap();
        let r = apply_q(&spec, &u).unwrap();
        assert!(r.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn fundamental_solution_is_nearly_discretely_harmonic() {
        let res: Vec<f64> = [40, 80, 160]
            .iter()
            .map(|&n| {
                let m = Arc::new(build_radial_mesh(3, 0.1, 1.0, n, Grading::LogUniform).unwrap());
                let spec = ProblemSpec::new(2.0, m.clone()).unwrap();
                let u = ScalarField::from_fn(m.clone(), |x| 1.0 / x[0]).unwrap();
                let r = apply_q(&spec, &u).unwrap();
                let mass = m.lumped_mass();
                // strong-form density of the residual
                r.values().iter().zip(&mass).map(|(a, b)| (a / b).abs()).fold(0.0, f64::max)
            })
            .collect();
        // the strong form |Δ(1/r)| terms are of size r^{-3} ~ 10³
        assert!(res.iter().all(|&r| r < 1e-6), "{res:?}");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for (p, mesh) in [
            (3.0, Arc::new(build_interval_mesh(0.0, 1.0, 10, Grading::Uniform).unwrap())),
            (1.5, Arc::new(build_radial_mesh(3, 0.2, 1.0, 10, Grading::Uniform).unwrap())),
            (2.5, Arc::new(build_tensor_mesh([0.0, 1.0], [0.0, 1.0], 8, 8, None).unwrap())),
        ] {
            let a = MatrixField::constant(mesh.clone(), SymMatrix::rotated_diag(1.0, 3.0, 0.4)).unwrap();
            let a = if mesh.is_one_dimensional() { MatrixField::identity(mesh.clone()) } else { a };
            let spec = ProblemSpec::new(p, mesh.clone()).unwrap()
                .with_matrix(a).unwrap()
                .with_potential(CellField::from_fn(mesh.clone(), |x| 0.5 + x[0]).unwrap()).unwrap();
            let u: Vec<f64> = (0..mesh.num_nodes()).map(|i| {
                let x = mesh.node(i);
                1.0 + (2.0 * x[0] + x[1]).sin()
            }).collect();
            let h = assemble_jacobian(&spec, &u, true);
            let r0 = weak_residual(&spec, &u, None);
            let step = 1e-6;
            for j in [1usize, mesh.num_nodes() / 2] {
                let mut up = u.clone();
                up[j] += step;
                let r1 = weak_residual(&spec, &up, None);
                for i in 0..mesh.num_nodes() {
                    let fd = (r1[i] - r0[i]) / step;
                    assert!((fd - h.get(i, j)).abs() < 1e-4 * (1.0 + fd.abs()), "p={p} ({i},{j}) fd={fd} h={}", h.get(i, j));
                }
            }
        }
    }

    #[test]
    fn residual_is_gradient_of_solver_energy() {
        let m = Arc::new(build_radial_mesh(3, 0.2, 1.0, 12, Grading::Uniform).unwrap());
        let spec = ProblemSpec::new(2.7, m.clone()).unwrap().with_potential(CellField::constant(m.clone(), 0.3)).unwrap();
        let u: Vec<f64> = (0..m.num_nodes()).map(|i| (3.0 * m.node(i)[0]).cos()).collect();
        let load = vec![0.1; m.num_nodes()];
        let r = weak_residual(&spec, &u, Some(&load));
        for j in 0..m.num_nodes() {
            let h = 1e-6;
            let mut up = u.clone();
            up[j] += h;
            let mut um = u.clone();
            um[j] -= h;
            let fd = (solver_energy(&spec, &up, &load) - solver_energy(&spec, &um, &load)) / (2.0 * h);
            assert!((fd - r[j]).abs() < 1e-7, "{j}: {fd} vs {}", r[j]);
        }
    }
}
