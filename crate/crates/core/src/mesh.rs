//! Meshes for punctured radial domains, intervals and 2D tensor grids.
//!
//! Values live at nodes; every cell carries its measure (including the radial
//! weight `ω_{n-1} r^{n-1}` for radial meshes) and a quadrature rule for the
//! gradient terms of the energy.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshKind {
    /// A 1D interval with unit weight.
    Interval,
    /// Radial profiles on `[r_min, r_max]` in ambient dimension `n_dim`.
    Radial,
    Tensor2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeTag {
    Interior,
    OuterBoundary,
    InnerBoundary,
}

impl NodeTag {
    pub fn is_boundary(self) -> bool {
        !matches!(self, NodeTag::Interior)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeTag::Interior => "interior",
            NodeTag::OuterBoundary => "outer_boundary",
            NodeTag::InnerBoundary => "inner_boundary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grading {
    Uniform,
    /// Successive cell widths grow by the given ratio.
    Geometric(f64),
    /// Geometric grading with the ratio chosen so that `r_{i+1}/r_i` is constant.
    LogUniform,
}

impl Grading {
    /// Ratio giving roughly ten cells per decade of r.
    pub const DEFAULT_RATIO: f64 = 1.258_925_411_794_167_2;
}

/// Axis-aligned rectangular hole removed from a tensor mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Hole {
    fn contains_strictly(&self, x: f64, y: f64) -> bool {
        x > self.x[0] && x < self.x[1] && y > self.y[0] && y < self.y[1]
    }
}

#[derive(Debug, Clone)]
struct TensorGrid {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Node index at grid position `(i, j)`, row-major in `j`.
    node_at: Vec<Option<usize>>,
    /// Grid position of each node.
    position: Vec<(usize, usize)>,
    /// Grid position of the lower-left corner of each cell.
    cell_position: Vec<(usize, usize)>,
    hole: Option<Hole>,
}

impl TensorGrid {
    fn nx(&self) -> usize {
        self.xs.len() - 1
    }
}

/// One quadrature point of a cell: weight and the gradients of the local
/// shape functions at that point.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub weight: f64,
    pub grads: [[f64; 2]; 4],
}

#[derive(Debug, Clone, Copy)]
pub struct QuadRule {
    points: [QuadPoint; 4],
    len: usize,
}

impl QuadRule {
    pub fn points(&self) -> &[QuadPoint] {
        &self.points[..self.len]
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    kind: MeshKind,
    n_dim: usize,
    label: String,
    coords: Vec<[f64; 2]>,
    cells: Vec<[usize; 4]>,
    cell_sizes: Vec<[f64; 2]>,
    cell_measures: Vec<f64>,
    tags: Vec<NodeTag>,
    grid: Option<TensorGrid>,
}

/// Surface area of the unit sphere in `R^n`.
pub fn unit_sphere_area(n: usize) -> f64 {
    match n {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI / (n as f64 - 2.0) * unit_sphere_area(n - 2),
    }
}

fn check_strictly_increasing(xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidMesh("non-finite coordinate".into()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidMesh("coordinates must be strictly increasing".into()));
    }
    Ok(())
}

fn graded_nodes(a: f64, b: f64, num_cells: usize, grading: Grading) -> Result<Vec<f64>> {
    let n = num_cells;
    let mut nodes = Vec::with_capacity(n + 1);
    match grading {
        Grading::Uniform => {
            let h = (b - a) / n as f64;
            nodes.extend((0..=n).map(|i| a + h * i as f64));
        }
        Grading::Geometric(ratio) => {
            if !(ratio > 0.0) || !ratio.is_finite() {
                return Err(Error::InvalidArgument(format!("grading ratio {ratio} must be positive")));
            }
            if (ratio - 1.0).abs() < 1e-14 {
                return graded_nodes(a, b, num_cells, Grading::Uniform);
            }
            let h0 = (b - a) * (ratio - 1.0) / (ratio.powi(n as i32) - 1.0);
            let mut r = a;
            let mut h = h0;
            nodes.push(a);
            for _ in 0..n {
                r += h;
                h *= ratio;
                nodes.push(r);
            }
        }
        Grading::LogUniform => {
            if a <= 0.0 {
                return Err(Error::InvalidArgument("log-uniform grading needs a positive start".into()));
            }
            let q = (b / a).ln() / n as f64;
            nodes.extend((0..=n).map(|i| a * (q * i as f64).exp()));
        }
    }
    nodes[n] = b;
    check_strictly_increasing(&nodes)?;
    Ok(nodes)
}

/// Radial mesh on `[r_min, r_max]` for profiles in `R^{n_dim}`.
///
/// The singularity at the origin is never meshed: `r_min` must be positive.
pub fn build_radial_mesh(
    n_dim: usize,
    r_min: f64,
    r_max: f64,
    num_cells: usize,
    grading: Grading,
) -> Result<Mesh> {
    if n_dim < 2 {
        return Err(Error::InvalidMesh(format!("radial meshes need n_dim >= 2, got {n_dim}")));
    }
    if !(r_min > 0.0) {
        return Err(Error::InvalidMesh(format!(
            "r_min must be positive (punctured domain), got {r_min}"
        )));
    }
    if !(r_min < r_max) {
        return Err(Error::InvalidMesh(format!("r_min {r_min} must be below r_max {r_max}")));
    }
    if num_cells < 8 {
        return Err(Error::InvalidMesh(format!("need at least 8 cells, got {num_cells}")));
    }
    let nodes = graded_nodes(r_min, r_max, num_cells, grading)?;
    let label = format!("radial(n={n_dim},[{r_min},{r_max}],{num_cells},{grading:?})");
    Ok(Mesh::line(MeshKind::Radial, n_dim, nodes, label))
}

/// Cartesian 1D interval mesh `[a, b]`, both ends outer boundary.
pub fn build_interval_mesh(a: f64, b: f64, num_cells: usize, grading: Grading) -> Result<Mesh> {
    if !(a < b) {
        return Err(Error::InvalidMesh(format!("degenerate interval [{a}, {b}]")));
    }
    if num_cells < 8 {
        return Err(Error::InvalidMesh(format!("need at least 8 cells, got {num_cells}")));
    }
    let nodes = graded_nodes(a, b, num_cells, grading)?;
    let label = format!("interval([{a},{b}],{num_cells},{grading:?})");
    Ok(Mesh::line(MeshKind::Interval, 1, nodes, label))
}

/// Tensor-product grid on `x_bounds × y_bounds`, optionally with a hole.
pub fn build_tensor_mesh(
    x_bounds: [f64; 2],
    y_bounds: [f64; 2],
    nx: usize,
    ny: usize,
    hole: Option<Hole>,
) -> Result<Mesh> {
    if !(x_bounds[0] < x_bounds[1]) || !(y_bounds[0] < y_bounds[1]) {
        return Err(Error::InvalidMesh(format!("degenerate bounds {x_bounds:?} × {y_bounds:?}")));
    }
    if nx < 8 || ny < 8 {
        return Err(Error::InvalidMesh(format!("need nx, ny >= 8, got {nx} × {ny}")));
    }
    if let Some(h) = hole {
        let inside = h.x[0] > x_bounds[0] && h.x[1] < x_bounds[1] && h.y[0] > y_bounds[0] && h.y[1] < y_bounds[1];
        if !(h.x[0] < h.x[1] && h.y[0] < h.y[1]) || !inside {
            return Err(Error::InvalidMesh(format!("hole {h:?} must lie strictly inside the box")));
        }
    }
    let xs = graded_nodes(x_bounds[0], x_bounds[1], nx, Grading::Uniform)?;
    let ys = graded_nodes(y_bounds[0], y_bounds[1], ny, Grading::Uniform)?;
    let label = match hole {
        None => format!("tensor2d({x_bounds:?}x{y_bounds:?},{nx}x{ny})"),
        Some(h) => format!("tensor2d({x_bounds:?}x{y_bounds:?},{nx}x{ny},hole={:?}x{:?})", h.x, h.y),
    };
    Mesh::tensor_from_masks(xs, ys, hole, (0, nx, 0, ny), label)
}

impl Mesh {
    fn line(kind: MeshKind, n_dim: usize, nodes: Vec<f64>, label: String) -> Mesh {
        let omega = if kind == MeshKind::Radial { unit_sphere_area(n_dim) } else { 1.0 };
        let n = nodes.len();
        let mut cells = Vec::with_capacity(n - 1);
        let mut sizes = Vec::with_capacity(n - 1);
        let mut measures = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let h = nodes[i + 1] - nodes[i];
            let mid = 0.5 * (nodes[i] + nodes[i + 1]);
            let weight = if kind == MeshKind::Radial { omega * mid.powi(n_dim as i32 - 1) } else { 1.0 };
            cells.push([i, i + 1, usize::MAX, usize::MAX]);
            sizes.push([h, 0.0]);
            measures.push(weight * h);
        }
        let mut tags = vec![NodeTag::Interior; n];
        match kind {
            MeshKind::Radial => {
                tags[0] = NodeTag::InnerBoundary;
                tags[n - 1] = NodeTag::OuterBoundary;
            }
            _ => {
                tags[0] = NodeTag::OuterBoundary;
                tags[n - 1] = NodeTag::OuterBoundary;
            }
        }
        Mesh {
            kind,
            n_dim,
            label,
            coords: nodes.iter().map(|&x| [x, 0.0]).collect(),
            cells,
            cell_sizes: sizes,
            cell_measures: measures,
            tags,
            grid: None,
        }
    }

    /// Tensor mesh over the index box `(i0, i1, j0, j1)` of the grid `xs × ys`,
    /// with cells whose centre lies inside `hole` removed.
    fn tensor_from_masks(
        xs: Vec<f64>,
        ys: Vec<f64>,
        hole: Option<Hole>,
        bbox: (usize, usize, usize, usize),
        label: String,
    ) -> Result<Mesh> {
        let (i0, i1, j0, j1) = bbox;
        let gx = xs.len();
        let cell_kept = |i: usize, j: usize| -> bool {
            if i < i0 || i >= i1 || j < j0 || j >= j1 {
                return false;
            }
            let cx = 0.5 * (xs[i] + xs[i + 1]);
            let cy = 0.5 * (ys[j] + ys[j + 1]);
            !hole.is_some_and(|h| h.contains_strictly(cx, cy))
        };
        let mut kept_cells = Vec::new();
        for j in j0..j1 {
            for i in i0..i1 {
                if cell_kept(i, j) {
                    kept_cells.push((i, j));
                }
            }
        }
        if kept_cells.is_empty() {
            return Err(Error::InvalidMesh("tensor mesh has no cells".into()));
        }
        // cells touching each grid node
        let mut touching = vec![0u8; gx * ys.len()];
        for &(i, j) in &kept_cells {
            for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                touching[(j + dj) * gx + i + di] += 1;
            }
        }
        let mut node_at = vec![None; gx * ys.len()];
        let mut coords = Vec::new();
        let mut position = Vec::new();
        let mut tags = Vec::new();
        for j in 0..ys.len() {
            for i in 0..gx {
                let t = touching[j * gx + i];
                if t == 0 {
                    continue;
                }
                node_at[j * gx + i] = Some(coords.len());
                coords.push([xs[i], ys[j]]);
                position.push((i, j));
                let on_box = i == i0 || i == i1 || j == j0 || j == j1;
                tags.push(if t == 4 {
                    NodeTag::Interior
                } else if on_box {
                    NodeTag::OuterBoundary
                } else {
                    NodeTag::InnerBoundary
                });
            }
        }
        let mut cells = Vec::with_capacity(kept_cells.len());
        let mut sizes = Vec::with_capacity(kept_cells.len());
        let mut measures = Vec::with_capacity(kept_cells.len());
        for &(i, j) in &kept_cells {
            let at = |di: usize, dj: usize| node_at[(j + dj) * gx + i + di].expect("corner of kept cell");
            cells.push([at(0, 0), at(1, 0), at(0, 1), at(1, 1)]);
            let dx = xs[i + 1] - xs[i];
            let dy = ys[j + 1] - ys[j];
            sizes.push([dx, dy]);
            measures.push(dx * dy);
        }
        Ok(Mesh {
            kind: MeshKind::Tensor2d,
            n_dim: 2,
            label,
            coords,
            cells,
            cell_sizes: sizes,
            cell_measures: measures,
            tags,
            grid: Some(TensorGrid { xs, ys, node_at, position, cell_position: kept_cells, hole }),
        })
    }

    pub fn kind(&self) -> MeshKind {
        self.kind
    }

    pub fn n_dim(&self) -> usize {
        self.n_dim
    }

    /// Stable descriptor used as `mesh_id` in exported records.
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_one_dimensional(&self) -> bool {
        self.kind != MeshKind::Tensor2d
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn nodes_per_cell(&self) -> usize {
        if self.is_one_dimensional() {
            2
        } else {
            4
        }
    }

    pub fn cell_nodes(&self, cell: usize) -> &[usize] {
        &self.cells[cell][..self.nodes_per_cell()]
    }

    /// Node coordinate; the second component is zero on 1D meshes.
    pub fn node(&self, i: usize) -> [f64; 2] {
        self.coords[i]
    }

    /// First coordinate of every node (the radius on radial meshes).
    pub fn node_x(&self) -> Vec<f64> {
        self.coords.iter().map(|c| c[0]).collect()
    }

    pub fn tag(&self, i: usize) -> NodeTag {
        self.tags[i]
    }

    pub fn tags(&self) -> &[NodeTag] {
        &self.tags
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.tags[i].is_boundary()
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_nodes()).filter(|&i| !self.is_boundary(i))
    }

    pub fn cell_measure(&self, cell: usize) -> f64 {
        self.cell_measures[cell]
    }

    pub fn cell_measures(&self) -> &[f64] {
        &self.cell_measures
    }

    /// Cell widths `(dx, dy)`; `dy = 0` on 1D meshes.
    pub fn cell_size(&self, cell: usize) -> [f64; 2] {
        self.cell_sizes[cell]
    }

    pub fn cell_midpoint(&self, cell: usize) -> [f64; 2] {
        let nodes = self.cell_nodes(cell);
        let k = nodes.len() as f64;
        let mut m = [0.0; 2];
        for &n in nodes {
            m[0] += self.coords[n][0] / k;
            m[1] += self.coords[n][1] / k;
        }
        m
    }

    /// Lumped mass `∫χ_i` of every nodal hat function (trapezoidal rule).
    pub fn lumped_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.num_nodes()];
        let share = 1.0 / self.nodes_per_cell() as f64;
        for c in 0..self.num_cells() {
            for &n in self.cell_nodes(c) {
                mass[n] += share * self.cell_measures[c];
            }
        }
        mass
    }

    /// Shape-function gradients at the cell midpoint.
    pub fn midpoint_grads(&self, cell: usize) -> [[f64; 2]; 4] {
        let [dx, dy] = self.cell_sizes[cell];
        if self.is_one_dimensional() {
            [[-1.0 / dx, 0.0], [1.0 / dx, 0.0], [0.0; 2], [0.0; 2]]
        } else {
            bilinear_grads(0.5, 0.5, dx, dy)
        }
    }

    /// Shape-function gradients at a point of the cell (the midpoint
    /// gradients on 1D meshes, where they are constant).
    pub(crate) fn grads_at(&self, cell: usize, x: [f64; 2]) -> [[f64; 2]; 4] {
        if self.is_one_dimensional() {
            return self.midpoint_grads(cell);
        }
        let [dx, dy] = self.cell_sizes[cell];
        let [mx, my] = self.cell_midpoint(cell);
        let s = ((x[0] - mx) / dx + 0.5).clamp(0.0, 1.0);
        let t = ((x[1] - my) / dy + 0.5).clamp(0.0, 1.0);
        bilinear_grads(s, t, dx, dy)
    }

    /// Quadrature rule for gradient terms: the midpoint on 1D meshes, 2×2 Gauss
    /// on tensor cells (a single midpoint would admit hourglass modes).
    pub fn quad_rule(&self, cell: usize) -> QuadRule {
        let m = self.cell_measures[cell];
        let empty = QuadPoint { weight: 0.0, grads: [[0.0; 2]; 4] };
        if self.is_one_dimensional() {
            let p = QuadPoint { weight: m, grads: self.midpoint_grads(cell) };
            return QuadRule { points: [p, empty, empty, empty], len: 1 };
        }
        let [dx, dy] = self.cell_sizes[cell];
        let g = 0.5 / 3f64.sqrt();
        let mut pts = [empty; 4];
        for (k, (s, t)) in [(0.5 - g, 0.5 - g), (0.5 + g, 0.5 - g), (0.5 - g, 0.5 + g), (0.5 + g, 0.5 + g)]
            .into_iter()
            .enumerate()
        {
            pts[k] = QuadPoint { weight: 0.25 * m, grads: bilinear_grads(s, t, dx, dy) };
        }
        QuadRule { points: pts, len: 4 }
    }

    /// Largest index distance between two nodes sharing a cell.
    pub fn bandwidth(&self) -> usize {
        let mut b = 0;
        for c in 0..self.num_cells() {
            let nodes = self.cell_nodes(c);
            let lo = nodes.iter().min().copied().unwrap_or(0);
            let hi = nodes.iter().max().copied().unwrap_or(0);
            b = b.max(hi - lo);
        }
        b
    }

    /// Grid axes of a tensor mesh.
    pub fn tensor_axes(&self) -> Option<(&[f64], &[f64])> {
        self.grid.as_ref().map(|g| (g.xs.as_slice(), g.ys.as_slice()))
    }

    /// Node at grid position `(i, j)` of a tensor mesh.
    pub fn tensor_node(&self, i: usize, j: usize) -> Option<usize> {
        let g = self.grid.as_ref()?;
        if i >= g.xs.len() || j >= g.ys.len() {
            return None;
        }
        g.node_at[j * g.xs.len() + i]
    }

    /// Grid position of the lower-left corner of a tensor cell.
    pub fn tensor_cell_position(&self, cell: usize) -> Option<(usize, usize)> {
        self.grid.as_ref().map(|g| g.cell_position[cell])
    }

    pub fn hole(&self) -> Option<Hole> {
        self.grid.as_ref().and_then(|g| g.hole)
    }

    /// Bounding box `[x_min, x_max, y_min, y_max]` of the nodes.
    pub fn hull(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for c in &self.coords {
            b[0] = b[0].min(c[0]);
            b[1] = b[1].max(c[0]);
            b[2] = b[2].min(c[1]);
            b[3] = b[3].max(c[1]);
        }
        b
    }

    /// Cells adjacent to each node.
    pub fn node_cells(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_nodes()];
        for c in 0..self.num_cells() {
            for &n in self.cell_nodes(c) {
                out[n].push(c);
            }
        }
        out
    }

    /// Verify the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.cell_measures.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::InvalidMesh("non-positive cell measure".into()));
        }
        if self.tags.len() != self.coords.len() {
            return Err(Error::InvalidMesh("one tag per node required".into()));
        }
        match &self.grid {
            None => check_strictly_increasing(&self.node_x()),
            Some(g) => {
                check_strictly_increasing(&g.xs)?;
                check_strictly_increasing(&g.ys)
            }
        }
    }
}

fn bilinear_grads(s: f64, t: f64, dx: f64, dy: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - t) / dx, -(1.0 - s) / dy],
        [(1.0 - t) / dx, -s / dy],
        [-t / dx, (1.0 - s) / dy],
        [t / dx, s / dy],
    ]
}

/// A sub-mesh together with its embedding into the parent mesh.
#[derive(Debug, Clone)]
pub struct SubMesh {
    pub mesh: Arc<Mesh>,
    pub parent_nodes: Vec<usize>,
    pub parent_cells: Vec<usize>,
}

impl SubMesh {
    /// Extend nodal values on the sub-mesh to the parent by zero.
    pub fn extend_by_zero(&self, values: &[f64], parent_len: usize) -> Vec<f64> {
        let mut out = vec![0.0; parent_len];
        for (k, &p) in self.parent_nodes.iter().enumerate() {
            out[p] = values[k];
        }
        out
    }

    pub fn restrict_nodes(&self, parent_values: &[f64]) -> Vec<f64> {
        self.parent_nodes.iter().map(|&p| parent_values[p]).collect()
    }

    pub fn restrict_cells<T: Clone>(&self, parent_values: &[T]) -> Vec<T> {
        self.parent_cells.iter().map(|&p| parent_values[p].clone()).collect()
    }
}

/// Level `k` of a `K`-level exhaustion of `mesh`, growing from the mesh centre.
pub fn exhaustion(mesh: &Mesh, k: usize, levels: usize) -> Result<SubMesh> {
    exhaustion_around(mesh, k, levels, &[])
}

/// Level `k` of an exhaustion whose every level keeps the `core` nodes in its
/// interior. Level `K` is the full mesh and node sets are nested in `k`.
pub fn exhaustion_around(mesh: &Mesh, k: usize, levels: usize, core: &[usize]) -> Result<SubMesh> {
    if k < 1 || k > levels {
        return Err(Error::InvalidArgument(format!("exhaustion level {k} outside 1..={levels}")));
    }
    if core.iter().any(|&c| c >= mesh.num_nodes() || mesh.is_boundary(c)) {
        return Err(Error::InvalidArgument("exhaustion core must consist of interior nodes".into()));
    }
    if k == levels {
        return Ok(SubMesh {
            mesh: Arc::new(mesh.clone()),
            parent_nodes: (0..mesh.num_nodes()).collect(),
            parent_cells: (0..mesh.num_cells()).collect(),
        });
    }
    let frac = k as f64 / levels as f64;
    match mesh.kind {
        MeshKind::Interval | MeshKind::Radial => exhaust_line(mesh, frac, core, k, levels),
        MeshKind::Tensor2d => exhaust_tensor(mesh, frac, core, k, levels),
    }
}

fn exhaust_line(mesh: &Mesh, frac: f64, core: &[usize], k: usize, levels: usize) -> Result<SubMesh> {
    let n = mesh.num_nodes();
    let radial = mesh.kind == MeshKind::Radial;
    let to_s = |x: f64| if radial { x.ln() } else { x };
    let from_s = |s: f64| if radial { s.exp() } else { s };
    let xs = mesh.node_x();
    let (core_lo, core_hi) = if core.is_empty() {
        let mid = from_s(0.5 * (to_s(xs[0]) + to_s(xs[n - 1])));
        let i = xs.partition_point(|&x| x < mid).clamp(1, n - 2);
        (i, i)
    } else {
        (*core.iter().min().unwrap(), *core.iter().max().unwrap())
    };
    let lower = from_s(to_s(xs[core_lo]) + (to_s(xs[0]) - to_s(xs[core_lo])) * frac);
    let upper = from_s(to_s(xs[core_hi]) + (to_s(xs[n - 1]) - to_s(xs[core_hi])) * frac);
    let lo = xs.partition_point(|&x| x <= lower).saturating_sub(1).min(core_lo - 1);
    let hi = xs.partition_point(|&x| x < upper).min(n - 1).max(core_hi + 1);
    if hi - lo < 2 {
        return Err(Error::InvalidMesh("exhaustion level has fewer than two cells".into()));
    }
    let nodes: Vec<f64> = xs[lo..=hi].to_vec();
    let sub = Mesh::line(mesh.kind, mesh.n_dim, nodes, format!("{}|exhaustion({k}/{levels})", mesh.label));
    Ok(SubMesh {
        mesh: Arc::new(sub),
        parent_nodes: (lo..=hi).collect(),
        parent_cells: (lo..hi).collect(),
    })
}

fn exhaust_tensor(mesh: &Mesh, frac: f64, core: &[usize], k: usize, levels: usize) -> Result<SubMesh> {
    let g = mesh.grid.as_ref().expect("tensor mesh has a grid");
    let (nx, ny) = (g.xs.len() - 1, g.ys.len() - 1);
    let (ci0, ci1, cj0, cj1) = if core.is_empty() {
        (nx / 2, nx / 2, ny / 2, ny / 2)
    } else {
        let is = core.iter().map(|&c| g.position[c].0);
        let js = core.iter().map(|&c| g.position[c].1);
        (is.clone().min().unwrap(), is.max().unwrap(), js.clone().min().unwrap(), js.max().unwrap())
    };
    let lerp = |from: usize, to: usize| -> f64 { from as f64 + (to as f64 - from as f64) * frac };
    let i0 = (lerp(ci0, 0).floor() as usize).min(ci0.saturating_sub(1));
    let i1 = (lerp(ci1, nx).ceil() as usize).max(ci1 + 1).min(nx);
    let j0 = (lerp(cj0, 0).floor() as usize).min(cj0.saturating_sub(1));
    let j1 = (lerp(cj1, ny).ceil() as usize).max(cj1 + 1).min(ny);
    // the hole grows by up to `pad_max` cells as k decreases, never reaching the core
    let hole = g.hole.map(|h| {
        let dx = g.xs[1] - g.xs[0];
        let dy = g.ys[1] - g.ys[0];
        let grow = |pad: f64| Hole {
            x: [h.x[0] - pad * dx, h.x[1] + pad * dx],
            y: [h.y[0] - pad * dy, h.y[1] + pad * dy],
        };
        let core_pts: Vec<[f64; 2]> = if core.is_empty() {
            vec![[g.xs[ci0], g.ys[cj0]]]
        } else {
            core.iter().map(|&c| mesh.coords[c]).collect()
        };
        let clear = |hh: &Hole| {
            core_pts.iter().all(|p| {
                p[0] < hh.x[0] - dx || p[0] > hh.x[1] + dx || p[1] < hh.y[0] - dy || p[1] > hh.y[1] + dy
            })
        };
        let mut pad_max = 0usize;
        while pad_max < nx.max(ny) && clear(&grow(pad_max as f64 + 1.0)) {
            pad_max += 1;
        }
        grow(((1.0 - frac) * pad_max as f64).floor())
    });
    let label = format!("{}|exhaustion({k}/{levels})", mesh.label);
    let sub = Mesh::tensor_from_masks(g.xs.clone(), g.ys.clone(), hole, (i0, i1, j0, j1), label)?;
    let sg = sub.grid.as_ref().unwrap();
    let parent_nodes = sg
        .position
        .iter()
        .map(|&(i, j)| g.node_at[j * (nx + 1) + i].expect("sub-mesh node exists in parent"))
        .collect();
    let mut parent_cell_at = vec![usize::MAX; nx * ny];
    for (c, &(i, j)) in g.cell_position.iter().enumerate() {
        parent_cell_at[j * nx + i] = c;
    }
    let parent_cells: Vec<usize> = sg.cell_position.iter().map(|&(i, j)| parent_cell_at[j * g.nx() + i]).collect();
    if parent_cells.iter().any(|&c| c == usize::MAX) {
        return Err(Error::InvalidMesh("exhaustion level leaves the parent mesh".into()));
    }
    Ok(SubMesh { mesh: Arc::new(sub), parent_nodes, parent_cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn radial_uniform_counts_and_spacing() {
        let m = build_radial_mesh(3, 0.01, 1.0, 100, Grading::Uniform).unwrap();
        assert_eq!(m.num_nodes(), 101);
        for c in 0..m.num_cells() {
            assert_relative_eq!(m.cell_size(c)[0], 0.0099, epsilon = 1e-12);
        }
        assert_eq!(m.tag(0), NodeTag::InnerBoundary);
        assert_eq!(m.tag(100), NodeTag::OuterBoundary);
        assert!(m.validate().is_ok());
    }

    #[test]
    fn geometric_grading_ratio() {
        let m = build_radial_mesh(2, 0.1, 1.0, 10, Grading::Geometric(1.26)).unwrap();
        for c in 1..m.num_cells() {
            assert_relative_eq!(m.cell_size(c)[0] / m.cell_size(c - 1)[0], 1.26, epsilon = 1e-9);
        }
        assert_relative_eq!(m.node(10)[0], 1.0);
    }

    #[test]
    fn radial_cell_measure_by_hand() {
        let m = build_radial_mesh(3, 0.5, 0.58, 8, Grading::Uniform).unwrap();
        // first cell is [0.5, 0.51]
        assert_relative_eq!(m.cell_measure(0), 4.0 * PI * 0.505 * 0.505 * 0.01, max_relative = 1e-12);
        assert_relative_eq!(m.cell_measure(0), 0.03204, epsilon = 1e-5);
    }

    #[test]
    fn rejects_touching_the_singularity() {
        assert!(build_radial_mesh(3, 0.0, 1.0, 10, Grading::Uniform).is_err());
        assert!(build_radial_mesh(3, -0.1, 1.0, 10, Grading::Uniform).is_err());
        assert!(build_radial_mesh(3, 0.5, 0.4, 10, Grading::Uniform).is_err());
        assert!(build_radial_mesh(3, 0.1, 1.0, 7, Grading::Uniform).is_err());
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(unit_sphere_area(2), 2.0 * PI);
        assert_relative_eq!(unit_sphere_area(3), 4.0 * PI);
        assert_relative_eq!(unit_sphere_area(4), 2.0 * PI * PI);
        assert_relative_eq!(unit_sphere_area(5), 8.0 * PI * PI / 3.0);
    }

    #[test]
    fn tensor_counts() {
        let m = build_tensor_mesh([0.0, 1.0], [0.0, 1.0], 10, 10, None).unwrap();
        assert_eq!(m.num_nodes(), 121);
        assert_eq!(m.num_cells(), 100);
        assert!(m.cell_measures().iter().all(|&a| (a - 0.01).abs() < 1e-15));
        let boundary = (0..m.num_nodes()).filter(|&i| m.is_boundary(i)).count();
        assert_eq!(boundary, 40);
        assert!((0..m.num_nodes()).all(|i| m.tag(i) != NodeTag::InnerBoundary));
        let m = build_tensor_mesh([-1.0, 1.0], [-1.0, 1.0], 8, 8, None).unwrap();
        assert_relative_eq!(m.cell_measure(0), 0.0625);
    }

    #[test]
    fn tensor_hole_removes_nodes_and_tags_rim() {
        let hole = Hole { x: [-0.05, 0.05], y: [-0.05, 0.05] };
        let m = build_tensor_mesh([-1.0, 1.0], [-1.0, 1.0], 200, 200, Some(hole)).unwrap();
        assert_eq!(m.num_nodes(), 201 * 201 - 81);
        let inner: Vec<_> = (0..m.num_nodes()).filter(|&i| m.tag(i) == NodeTag::InnerBoundary).collect();
        assert_eq!(inner.len(), 40);
        for i in inner {
            let [x, y] = m.node(i);
            assert!((x.abs().max(y.abs()) - 0.05).abs() < 1e-12);
        }
        assert!(m.validate().is_ok());
    }

    #[test]
    fn tensor_rejects_degenerate() {
        assert!(build_tensor_mesh([1.0, 1.0], [0.0, 1.0], 10, 10, None).is_err());
        assert!(build_tensor_mesh([0.0, 1.0], [0.0, 1.0], 4, 10, None).is_err());
    }

    #[test]
    fn exhaustion_terminus_is_full_mesh() {
        let m = build_radial_mesh(3, 1e-3, 1.0, 60, Grading::LogUniform).unwrap();
        let full = exhaustion(&m, 4, 4).unwrap();
        assert_eq!(full.parent_nodes.len(), m.num_nodes());
        let first = exhaustion(&m, 1, 4).unwrap();
        let [lo, hi] = [first.mesh.node(0)[0], first.mesh.node(first.mesh.num_nodes() - 1)[0]];
        assert!(lo > 1e-3 && hi < 1.0);
        assert!(first.mesh.is_boundary(0) && first.mesh.is_boundary(first.mesh.num_nodes() - 1));
    }

    #[test]
    fn exhaustion_nested_radial_and_tensor() {
        let m = build_radial_mesh(3, 1e-3, 1.0, 60, Grading::LogUniform).unwrap();
        let hole = Hole { x: [-0.1, 0.1], y: [-0.1, 0.1] };
        let t = build_tensor_mesh([-1.0, 1.0], [-1.0, 1.0], 20, 20, Some(hole)).unwrap();
        let core_t = vec![t.tensor_node(14, 14).unwrap()];
        for (mesh, core) in [(&m, vec![]), (&t, core_t)] {
            let levels = 5;
            let subs: Vec<_> = (1..=levels).map(|k| exhaustion_around(mesh, k, levels, &core).unwrap()).collect();
            for w in subs.windows(2) {
                let next: std::collections::HashSet<_> = w[1].parent_nodes.iter().collect();
                assert!(w[0].parent_nodes.iter().all(|n| next.contains(n)));
                assert!(w[0].parent_nodes.len() < w[1].parent_nodes.len());
            }
            for s in &subs {
                for &c in &core {
                    let local = s.parent_nodes.iter().position(|&p| p == c).unwrap();
                    assert!(!s.mesh.is_boundary(local));
                }
            }
        }
    }

    #[test]
    fn quad_rule_weights_sum_to_measure() {
        let t = build_tensor_mesh([0.0, 2.0], [0.0, 1.0], 8, 8, None).unwrap();
        for c in 0..t.num_cells() {
            let s: f64 = t.quad_rule(c).points().iter().map(|q| q.weight).sum();
            assert_relative_eq!(s, t.cell_measure(c));
        }
        let mass: f64 = t.lumped_mass().iter().sum();
        assert_relative_eq!(mass, 2.0, max_relative = 1e-14);
    }
}
