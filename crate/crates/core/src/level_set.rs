//! Level sets `{f = t}` of nodal fields: crossing points of the piecewise
//! linear interpolant on 1D meshes, marching-squares segments on tensor meshes.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Grid edge on which a segment endpoint lies, used to chain segments.
type EdgeKey = (usize, usize, u8);

#[derive(Debug, Clone, PartialEq)]
pub enum Crossing {
    Point { x: f64, cell: usize },
    Segment { a: [f64; 2], b: [f64; 2], cell: usize, edges: [EdgeKey; 2] },
}

impl Crossing {
    pub fn cell(&self) -> usize {
        match self {
            Crossing::Point { cell, .. } | Crossing::Segment { cell, .. } => *cell,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LevelSet {
    pub t: f64,
    pub crossings: Vec<Crossing>,
}

impl LevelSet {
    /// Crossing radii/abscissae on 1D meshes.
    pub fn points(&self) -> Vec<f64> {
        self.crossings
            .iter()
            .filter_map(|c| match c {
                Crossing::Point { x, .. } => Some(*x),
                _ => None,
            })
            .collect()
    }

    /// Total polyline length on tensor meshes.
    pub fn length(&self) -> f64 {
        self.crossings
            .iter()
            .map(|c| match c {
                Crossing::Segment { a, b, .. } => ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt(),
                _ => 0.0,
            })
            .sum()
    }

    /// Chain segments into polylines; a closed polyline repeats its first point.
    pub fn polylines(&self) -> Vec<Vec<[f64; 2]>> {
        let segs: Vec<([f64; 2], [f64; 2], [EdgeKey; 2])> = self
            .crossings
            .iter()
            .filter_map(|c| match c {
                Crossing::Segment { a, b, edges, .. } => Some((*a, *b, *edges)),
                _ => None,
            })
            .collect();
        let mut by_edge: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
        for (k, s) in segs.iter().enumerate() {
            by_edge.entry(s.2[0]).or_default().push(k);
            by_edge.entry(s.2[1]).or_default().push(k);
        }
        let mut used = vec![false; segs.len()];
        let mut lines = Vec::new();
        for start in 0..segs.len() {
            if used[start] {
                continue;
            }
            used[start] = true;
            let mut line = vec![segs[start].0, segs[start].1];
            // walk forward from the second endpoint
            let mut edge = segs[start].2[1];
            while let Some(&next) = by_edge.get(&edge).and_then(|v| v.iter().find(|&&k| !used[k])) {
                used[next] = true;
                let (a, b, e) = segs[next];
                if e[0] == edge {
                    line.push(b);
                    edge = e[1];
                } else {
                    line.push(a);
                    edge = e[0];
                }
            }
            // and backward from the first
            let mut edge = segs[start].2[0];
            while let Some(&next) = by_edge.get(&edge).and_then(|v| v.iter().find(|&&k| !used[k])) {
                used[next] = true;
                let (a, b, e) = segs[next];
                if e[0] == edge {
                    line.insert(0, b);
                    edge = e[1];
                } else {
                    line.insert(0, a);
                    edge = e[0];
                }
            }
            lines.push(line);
        }
        lines
    }
}

/// `{f = t}` for `min f < t < max f`.
pub fn level_set(f: &ScalarField, t: f64) -> Result<LevelSet> {
    let (min, max) = (f.min(), f.max());
    if !(t > min && t < max) {
        return Err(Error::LevelOutOfRange { t, min, max });
    }
    let mesh = f.mesh();
    let v = f.values();
    let mut crossings = Vec::new();
    if mesh.is_one_dimensional() {
        for c in 0..mesh.num_cells() {
            let nodes = mesh.cell_nodes(c);
            let (fa, fb) = (v[nodes[0]], v[nodes[1]]);
            if (fa >= t) != (fb >= t) {
                let xa = mesh.node(nodes[0])[0];
                let xb = mesh.node(nodes[1])[0];
                let s = (t - fa) / (fb - fa);
                crossings.push(Crossing::Point { x: xa + s * (xb - xa), cell: c });
            }
        }
    } else {
        for c in 0..mesh.num_cells() {
            crossings.extend(march_cell(f, c, t));
        }
    }
    Ok(LevelSet { t, crossings })
}

fn march_cell(f: &ScalarField, cell: usize, t: f64) -> Vec<Crossing> {
    let mesh = f.mesh();
    let v = f.values();
    let nodes = mesh.cell_nodes(cell);
    let (i, j) = mesh.tensor_cell_position(cell).expect("tensor cell");
    // corners 00, 10, 01, 11
    let vals = [v[nodes[0]], v[nodes[1]], v[nodes[2]], v[nodes[3]]];
    let pts = [mesh.node(nodes[0]), mesh.node(nodes[1]), mesh.node(nodes[2]), mesh.node(nodes[3])];
    let above = vals.map(|x| x >= t);
    // edges: bottom (00-10), right (10-11), top (01-11), left (00-01)
    const EDGES: [(usize, usize); 4] = [(0, 1), (1, 3), (2, 3), (0, 2)];
    let edge_key = |e: usize| -> EdgeKey {
        match e {
            0 => (i, j, 0),
            1 => (i + 1, j, 1),
            2 => (i, j + 1, 0),
            _ => (i, j, 1),
        }
    };
    let point_on = |e: usize| -> [f64; 2] {
        let (a, b) = EDGES[e];
        let s = (t - vals[a]) / (vals[b] - vals[a]);
        [pts[a][0] + s * (pts[b][0] - pts[a][0]), pts[a][1] + s * (pts[b][1] - pts[a][1])]
    };
    let cut: Vec<usize> = (0..4).filter(|&e| above[EDGES[e].0] != above[EDGES[e].1]).collect();
    let seg = |e0: usize, e1: usize| Crossing::Segment {
        a: point_on(e0),
        b: point_on(e1),
        cell,
        edges: [edge_key(e0), edge_key(e1)],
    };
    match cut.len() {
        2 => vec![seg(cut[0], cut[1])],
        4 => {
            // saddle: separate the corners whose state differs from the centre
            let centre_above = vals.iter().sum::<f64>() / 4.0 >= t;
            const CORNER_EDGES: [(usize, usize); 4] = [(0, 3), (0, 1), (2, 3), (1, 2)];
            (0..4)
                .filter(|&k| above[k] != centre_above)
                .map(|k| seg(CORNER_EDGES[k].0, CORNER_EDGES[k].1))
                .collect()
        }
        _ => Vec::new(),
    }
}
