use std::io::{self, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Nodal values of a function on a mesh.
#[derive(Debug, Clone)]
pub struct ScalarField {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_nodes() {
            return Err(Error::MeshMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                mesh.num_nodes()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at node {i}")));
        }
        Ok(ScalarField { mesh, values })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.num_nodes();
        ScalarField { mesh, values: vec![0.0; n] }
    }

    pub fn constant(mesh: Arc<Mesh>, c: f64) -> Self {
        let n = mesh.num_nodes();
        ScalarField { mesh, values: vec![c; n] }
    }

    /// Sample `f` at every node.
    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..mesh.num_nodes()).map(|i| f(mesh.node(i))).collect();
        ScalarField::new(mesh, values)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        ScalarField::new(self.mesh.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        ScalarField { mesh: self.mesh.clone(), values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn same_mesh(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || self.mesh.label() == other.mesh.label()
    }

    /// Cell average of the nodal values.
    pub fn cell_average(&self, cell: usize) -> f64 {
        let nodes = self.mesh.cell_nodes(cell);
        nodes.iter().map(|&n| self.values[n]).sum::<f64>() / nodes.len() as f64
    }

    /// `∫ f dx` with the trapezoidal (lumped) rule.
    pub fn integral(&self) -> f64 {
        self.weighted_power_integral(None, 1.0, false)
    }

    /// `∫ |f|^p dx` with the trapezoidal rule.
    pub fn lp_norm_pow(&self, p: f64) -> f64 {
        self.weighted_power_integral(None, p, true)
    }

    /// `Σ_c weight_c m_c mean_{a∈c} g(f_a)` where `g` is `|·|^p` (abs) or the
    /// identity (`p = 1`, signed).
    pub(crate) fn weighted_power_integral(&self, weight: Option<&[f64]>, p: f64, abs: bool) -> f64 {
        let mesh = &self.mesh;
        let mut total = 0.0;
        for c in 0..mesh.num_cells() {
            let nodes = mesh.cell_nodes(c);
            let mean = nodes
                .iter()
                .map(|&n| {
                    let v = self.values[n];
                    if abs {
                        v.abs().powf(p)
                    } else {
                        v
                    }
                })
                .sum::<f64>()
                / nodes.len() as f64;
            let w = weight.map_or(1.0, |w| w[c]);
            total += w * mesh.cell_measure(c) * mean;
        }
        total
    }

    /// Write the documented node layout: `node,x,y,value,tag`.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_node_csv(&self.mesh, &[("value", &self.values)], out)
    }
}

/// Node CSV with one column per named field: `node,x,y,<names...>,tag`.
pub fn write_node_csv<W: Write>(mesh: &Mesh, columns: &[(&str, &[f64])], mut out: W) -> io::Result<()> {
    write!(out, "node,x,y")?;
    for (name, _) in columns {
        write!(out, ",{name}")?;
    }
    writeln!(out, ",tag")?;
    for i in 0..mesh.num_nodes() {
        let [x, y] = mesh.node(i);
        write!(out, "{i},{x:e},{y:e}")?;
        for (_, values) in columns {
            write!(out, ",{:e}", values[i])?;
        }
        writeln!(out, ",{}", mesh.tag(i).as_str())?;
    }
    Ok(())
}

/// Cell CSV: `cell,x,y,measure,<names...>` with midpoint coordinates.
pub fn write_cell_csv<W: Write>(mesh: &Mesh, columns: &[(&str, &[f64])], mut out: W) -> io::Result<()> {
    write!(out, "cell,x,y,measure")?;
    for (name, _) in columns {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for c in 0..mesh.num_cells() {
        let [x, y] = mesh.cell_midpoint(c);
        write!(out, "{c},{x:e},{y:e},{:e}", mesh.cell_measure(c))?;
        for (_, values) in columns {
            write!(out, ",{:e}", values[c])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Piecewise-constant values, one per cell.
#[derive(Debug, Clone)]
pub struct CellField {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl CellField {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_cells() {
            return Err(Error::MeshMismatch(format!(
                "{} values for {} cells",
                values.len(),
                mesh.num_cells()
            )));
        }
        if let Some(c) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value on cell {c}")));
        }
        Ok(CellField { mesh, values })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.num_cells();
        CellField { mesh, values: vec![0.0; n] }
    }

    pub fn constant(mesh: Arc<Mesh>, c: f64) -> Self {
        let n = mesh.num_cells();
        CellField { mesh, values: vec![c; n] }
    }

    /// Sample `f` at every cell midpoint.
    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..mesh.num_cells()).map(|c| f(mesh.cell_midpoint(c))).collect();
        CellField::new(mesh, values)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, s: f64) -> Self {
        CellField { mesh: self.mesh.clone(), values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &CellField) -> Result<Self> {
        if other.values.len() != self.values.len() {
            return Err(Error::MeshMismatch("cell fields differ in length".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        CellField::new(self.mesh.clone(), values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().zip(self.mesh.cell_measures()).map(|(v, m)| v * m).sum()
    }
}

/// Midpoint gradient on every cell.
#[derive(Debug, Clone)]
pub struct VectorFieldOnCells {
    mesh: Arc<Mesh>,
    vectors: Vec<[f64; 2]>,
}

impl VectorFieldOnCells {
    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    /// Vector dimension: 1 on 1D meshes, 2 on tensor meshes.
    pub fn dim(&self) -> usize {
        if self.mesh.is_one_dimensional() {
            1
        } else {
            2
        }
    }

    pub fn vectors(&self) -> &[[f64; 2]] {
        &self.vectors
    }

    pub fn get(&self, cell: usize) -> [f64; 2] {
        self.vectors[cell]
    }
}

/// Gradient of the nodal interpolant at `grads` (shape-function gradients).
pub(crate) fn local_gradient(values: &[f64], nodes: &[usize], grads: &[[f64; 2]; 4]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for (a, &n) in nodes.iter().enumerate() {
        g[0] += values[n] * grads[a][0];
        g[1] += values[n] * grads[a][1];
    }
    g
}

/// Per-cell midpoint gradient of the nodal interpolant.
pub fn gradient(f: &ScalarField) -> VectorFieldOnCells {
    let mesh = f.mesh();
    let vectors = (0..mesh.num_cells())
        .map(|c| local_gradient(&f.values, mesh.cell_nodes(c), &mesh.midpoint_grads(c)))
        .collect();
    VectorFieldOnCells { mesh: mesh.clone(), vectors }
}

/// `Σ value_c · measure_c`.
pub fn integrate(cellwise: &[f64], mesh: &Mesh) -> Result<f64> {
    if cellwise.len() != mesh.num_cells() {
        return Err(Error::MeshMismatch(format!(
            "{} cell values for {} cells",
            cellwise.len(),
            mesh.num_cells()
        )));
    }
    Ok(cellwise.iter().zip(mesh.cell_measures()).map(|(v, m)| v * m).sum())
}
