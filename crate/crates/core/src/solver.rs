//! Nonlinear Dirichlet solves `Q_{p,A,V}(u) = g` and the principal eigenvalue.
//!
//! The discrete residual is the gradient of
//! `J(u) = ∫(1/p)|∇u|_A^p + (1/p)V|u|^p - g u`, so Newton steps are globalized
//! by a line search on `J`. The eigenvalue uses the nonlinear inverse power
//! iteration `Q_σ(w) = |u|^{p-2}u`, `u ← |w| / ‖w‖_p`.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::linalg::BandMatrix;
use crate::operator::{assemble_jacobian, energy_unchecked, i_p, load_vector, solver_energy, weak_residual_parts, ProblemSpec};
use crate::report::{Direction, VerificationReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Damping {
    Fixed(f64),
    LineSearch,
}

#[derive(Debug, Clone)]
pub enum Init {
    Zero,
    Given(ScalarField),
    /// Start from the `p = 2` solution with the same data (p > 2; zero otherwise).
    P2Warmstart,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub tol_residual: f64,
    pub damping: Damping,
    pub init: Init,
    /// Verify `λ₁ > 0` before solving.
    pub checked: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { max_iters: 200, tol_residual: 1e-10, damping: Damping::LineSearch, init: Init::P2Warmstart, checked: false }
    }
}

impl SolveOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol_residual = tol;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn checked(mut self) -> Self {
        self.checked = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol_residual > 0.0) {
            return Err(Error::InvalidArgument("tol_residual must be positive".into()));
        }
        if let Damping::Fixed(a) = self.damping {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidArgument(format!("fixed damping must lie in (0, 1], got {a}")));
            }
        }
        Ok(())
    }
}

/// One line of solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub residual: f64,
    pub energy: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: ScalarField,
    /// `max_i |r_i| / max_j Σ|terms of row j|` over interior rows.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

impl SolveResult {
    /// Diagnostics as JSON lines.
    pub fn diagnostics_jsonl(&self) -> String {
        self.history.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
    }
}

#[derive(Debug, Clone)]
pub struct EigenResult {
    pub lambda1: f64,
    /// Nonnegative, `‖u1‖_{L^p} = 1`.
    pub u1: ScalarField,
    pub iterations: usize,
    pub converged: bool,
    /// Relative change of the quotient in the last iteration.
    pub last_change: f64,
}

/// Residual and `max_i |r_i| / max_j Σ|terms of row j|` over interior rows.
fn residual(spec: &ProblemSpec, u: &[f64], load: &[f64]) -> (Vec<f64>, f64) {
    let (r, mag) = weak_residual_parts(spec, u, Some(load));
    let interior = || spec.mesh.interior_nodes();
    let scale = interior().map(|i| mag[i]).fold(0.0, f64::max);
    let rel = if scale > 0.0 { interior().map(|i| r[i].abs()).fold(0.0, f64::max) / scale } else { 0.0 };
    (r, rel)
}

const STALL_ITERS: usize = 10;

/// Solve `Q(u) = g` with `u = boundary_values` on boundary nodes (interior
/// entries of `boundary_values` are ignored).
pub fn dirichlet_solve(
    spec: &ProblemSpec,
    g: &ScalarField,
    boundary_values: &ScalarField,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    opts.validate()?;
    spec.check_field(g)?;
    spec.check_field(boundary_values)?;
    if opts.checked {
        let eig = principal_eigen(spec, &SolveOptions::default())?;
        if !(eig.lambda1 > 0.0) {
            return Err(Error::NotSubcritical { lambda1: eig.lambda1 });
        }
    }
    let mesh = spec.mesh.clone();
    let n = mesh.num_nodes();
    let load = load_vector(&mesh, g.values());

    let mut u = match &opts.init {
        Init::Zero => vec![0.0; n],
        Init::Given(f) => {
            spec.check_field(f)?;
            f.values().to_vec()
        }
        // continuation from p = 2 helps the degenerate case only; for p < 2 the
        // warm profile has near-flat regions where Newton steps stall
        Init::P2Warmstart if spec.p > 2.0 => {
            let mut lin = spec.clone();
            lin.p = 2.0;
            let warm = dirichlet_solve(&lin, g, boundary_values, &SolveOptions { init: Init::Zero, checked: false, ..opts.clone() })?;
            warm.u.into_values()
        }
        Init::P2Warmstart => vec![0.0; n],
    };
    for i in 0..n {
        if mesh.is_boundary(i) {
            u[i] = boundary_values.values()[i];
        }
    }

    let (mut r, mut rel) = residual(spec, &u, &load);
    let mut j = solver_energy(spec, &u, &load);
    let mut history = vec![IterationRecord { iter: 0, residual: rel, energy: j, step_size: 0.0 }];
    let mut best = rel;
    let mut since_best = 0;
    let mut iter = 0;
    while rel > opts.tol_residual && iter < opts.max_iters && since_best < STALL_ITERS {
        iter += 1;
        let mut accepted = None;
        for newton in [true, false] {
            let Some(d) = direction(spec, &u, &r, newton) else { continue };
            if let Some(step) = take_step(spec, &u, &d, &r, &load, j, rel, opts.damping) {
                accepted = Some(step);
                break;
            }
        }
        let Some((alpha, u_new, j_new)) = accepted else { break };
        let energy_progress = j - j_new > 1e-12 * j.abs().max(f64::MIN_POSITIVE);
        u = u_new;
        j = j_new;
        (r, rel) = residual(spec, &u, &load);
        history.push(IterationRecord { iter, residual: rel, energy: j, step_size: alpha });
        if rel < 0.5 * best || energy_progress {
            best = best.min(rel);
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    if !(rel <= opts.tol_residual) {
        return Err(Error::NotConverged { iterations: iter, residual: rel, history: history.iter().map(|h| h.residual).collect() });
    }
    Ok(SolveResult { u: ScalarField::new(mesh, u)?, residual_norm: rel, iterations: iter, converged: true, history })
}

/// Newton (or frozen-coefficient) correction with zero boundary update.
fn direction(spec: &ProblemSpec, u: &[f64], r: &[f64], newton: bool) -> Option<Vec<f64>> {
    let mesh = &spec.mesh;
    let mut h: BandMatrix = assemble_jacobian(spec, u, newton);
    let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
    for i in 0..mesh.num_nodes() {
        if mesh.is_boundary(i) {
            h.pin(i);
            rhs[i] = 0.0;
        }
    }
    let d = h.solve(&rhs).ok()?;
    // must be a descent direction for J
    let slope: f64 = mesh.interior_nodes().map(|i| r[i] * d[i]).sum();
    (slope < 0.0).then_some(d)
}

#[allow(clippy::too_many_arguments)]
fn take_step(
    spec: &ProblemSpec,
    u: &[f64],
    d: &[f64],
    r: &[f64],
    load: &[f64],
    j0: f64,
    r0: f64,
    damping: Damping,
) -> Option<(f64, Vec<f64>, f64)> {
    let mesh = &spec.mesh;
    let slope: f64 = mesh.interior_nodes().map(|i| r[i] * d[i]).sum();
    let trial = |alpha: f64| -> Vec<f64> { u.iter().zip(d).map(|(a, b)| a + alpha * b).collect() };
    if let Damping::Fixed(alpha) = damping {
        let un = trial(alpha);
        let jn = solver_energy(spec, &un, load);
        return Some((alpha, un, jn));
    }
    let roundoff = 1e-13 * (j0.abs() + load.iter().zip(u).map(|(b, x)| (b * x).abs()).sum::<f64>()) + f64::MIN_POSITIVE;
    let mut alpha = 1.0;
    // near u = 0 with p > 2 the Hessian degenerates and the first steps are
    // far too long, hence the generous halving budget
    for _ in 0..200 {
        let un = trial(alpha);
        let jn = solver_energy(spec, &un, load);
        if jn.is_finite() && jn <= j0 + roundoff {
            // a decrease lost in roundoff says nothing; fall back to the residual
            let armijo = jn < j0 - roundoff && jn <= j0 + 1e-4 * alpha * slope;
            if armijo {
                // full steps can flip the sign of a near-zero gradient when
                // p < 2; keep shortening while the energy still drops
                let (mut best_a, mut best_u, mut best_j) = (alpha, un, jn);
                loop {
                    let a = 0.5 * best_a;
                    let uh = trial(a);
                    let jh = solver_energy(spec, &uh, load);
                    if !(jh < best_j - roundoff) {
                        break;
                    }
                    (best_a, best_u, best_j) = (a, uh, jh);
                }
                return Some((best_a, best_u, best_j));
            }
            if residual(spec, &un, load).1 < r0 {
                return Some((alpha, un, jn));
            }
        }
        alpha *= 0.5;
    }
    None
}

fn lp_normalize(spec: &ProblemSpec, w: &mut [f64]) -> f64 {
    let mass = spec.mesh.lumped_mass();
    let norm_p: f64 = w.iter().zip(&mass).map(|(v, m)| m * v.abs().powf(spec.p)).sum();
    let norm = norm_p.powf(1.0 / spec.p);
    if norm > 0.0 {
        for v in w.iter_mut() {
            *v = v.abs() / norm;
        }
    }
    norm
}

/// Rayleigh quotient `(∫|∇u|_A^p + V|u|^p) / ‖u‖_p^p`.
pub fn rayleigh_quotient(spec: &ProblemSpec, u: &ScalarField) -> Result<f64> {
    spec.check_field(u)?;
    let denom = u.lp_norm_pow(spec.p);
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument("Rayleigh quotient of the zero field".into()));
    }
    Ok(energy_unchecked(spec, u.values()).total / denom)
}

/// `λ₁` and the nonnegative normalized minimizer. `opts.init` may supply
/// a starting field; otherwise the iteration starts from 1 in the interior.
pub fn principal_eigen(spec: &ProblemSpec, opts: &SolveOptions) -> Result<EigenResult> {
    opts.validate()?;
    let mesh = spec.mesh.clone();
    let n = mesh.num_nodes();
    if mesh.interior_nodes().next().is_none() {
        return Err(Error::InvalidMesh("no interior nodes".into()));
    }
    let sigma = (-spec.v.min()).max(0.0);
    let shifted = spec.with_shifted_potential(sigma);
    let mut u: Vec<f64> = match &opts.init {
        Init::Given(f) => {
            spec.check_field(f)?;
            f.values().to_vec()
        }
        _ => (0..n).map(|i| if mesh.is_boundary(i) { 0.0 } else { 1.0 }).collect(),
    };
    for i in 0..n {
        if mesh.is_boundary(i) {
            u[i] = 0.0;
        }
    }
    if lp_normalize(spec, &mut u) == 0.0 {
        return Err(Error::InvalidArgument("initial eigenfunction guess vanishes".into()));
    }
    let zero = ScalarField::zeros(mesh.clone());
    let inner = SolveOptions { max_iters: 200, tol_residual: 1e-10, damping: Damping::LineSearch, init: Init::Zero, checked: false };
    let mut lambda = energy_unchecked(spec, &u).total;
    let mut change = f64::INFINITY;
    let mut iter = 0;
    let eig_tol = 1e-10;
    while iter < opts.max_iters.max(1) {
        iter += 1;
        let rhs = ScalarField::new(mesh.clone(), u.iter().map(|&v| i_p(v, spec.p)).collect())?;
        let prev = ScalarField::new(mesh.clone(), u.clone())?;
        // p < 2: Newton from a nearly flat profile crawls, a zero start does not
        let init = if spec.p < 2.0 { Init::Zero } else { Init::Given(prev) };
        let w = match dirichlet_solve(&shifted, &rhs, &zero, &SolveOptions { init, ..inner.clone() }) {
            Ok(w) => w,
            Err(Error::NotConverged { .. }) => break,
            Err(e) => return Err(e),
        };
        let mut next = w.u.into_values();
        if lp_normalize(spec, &mut next) == 0.0 {
            break;
        }
        let new_lambda = energy_unchecked(spec, &next).total;
        change = (new_lambda - lambda).abs() / new_lambda.abs().max(f64::MIN_POSITIVE);
        u = next;
        lambda = new_lambda;
        if change < eig_tol {
            break;
        }
    }
    Ok(EigenResult { lambda1: lambda, u1: ScalarField::new(mesh, u)?, iterations: iter, converged: change < eig_tol, last_change: change })
}

/// Ordered data `(g₁, bc₁) ≤ (g₂, bc₂)` for the comparison principle.
#[derive(Debug, Clone)]
pub struct ComparisonPair {
    pub g1: ScalarField,
    pub bc1: ScalarField,
    pub g2: ScalarField,
    pub bc2: ScalarField,
}

/// Solve both problems of every pair and report `max (u₁ - u₂) / scale`.
pub fn comparison_check(spec: &ProblemSpec, pairs: &[ComparisonPair], tol: f64) -> Result<VerificationReport> {
    let mesh = &spec.mesh;
    let opts = SolveOptions::default();
    let mut worst = f64::NEG_INFINITY;
    let mut invalid = Vec::new();
    for (k, pair) in pairs.iter().enumerate() {
        let g_ok = pair.g1.values().iter().zip(pair.g2.values()).all(|(a, b)| a <= b);
        let bc_ok = (0..mesh.num_nodes()).filter(|&i| mesh.is_boundary(i)).all(|i| pair.bc1.values()[i] <= pair.bc2.values()[i]);
        if !g_ok || !bc_ok {
            invalid.push(k);
            continue;
        }
        let u1 = dirichlet_solve(spec, &pair.g1, &pair.bc1, &opts)?.u;
        let u2 = dirichlet_solve(spec, &pair.g2, &pair.bc2, &opts)?.u;
        let scale = u1.values().iter().chain(u2.values()).map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let diff = u1.values().iter().zip(u2.values()).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(diff / scale);
    }
    let params = json!({"p": spec.p, "pairs": pairs.len(), "mesh": spec.mesh.label(), "invalid_pairs": invalid});
    let mut report = VerificationReport::new("comparison_principle", params, worst, tol, Direction::AtMost);
    if !invalid.is_empty() {
        report.fail(format!("pairs {invalid:?} violate g1 <= g2 or bc1 <= bc2"));
    }
    Ok(report)
}
