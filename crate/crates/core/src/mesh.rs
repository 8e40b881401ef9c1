//! Discrete closed manifolds: polyline loops and closed triangle meshes.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{MembraneError, Result};
use crate::field::Vec3;
use crate::geometry::{self, EPS_GEOM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeshKind {
    CurveLoop,
    TriangleMesh,
}

/// Connectivity shared by the mesh and every geometry built on it.
#[derive(Clone, Debug)]
pub struct Topology {
    pub kind: MeshKind,
    pub n_vertices: usize,
    /// Consistently oriented triangles (empty for curves).
    pub triangles: Vec<[usize; 3]>,
    /// Incident triangles per vertex, in ascending triangle order.
    pub vertex_faces: Vec<Vec<usize>>,
    /// Connected component id per vertex.
    pub component: Vec<usize>,
    pub n_components: usize,
}

impl Topology {
    /// Vertices `i - 1` and `i + 1` of a loop.
    #[inline]
    pub fn loop_neighbors(&self, i: usize) -> (usize, usize) {
        let n = self.n_vertices;
        ((i + n - 1) % n, (i + 1) % n)
    }
}

/// A closed embedded manifold together with its frozen reference measure.
#[derive(Clone, Debug)]
pub struct EmbeddedMesh {
    topology: Arc<Topology>,
    ambient_dim: usize,
    reference_positions: Vec<Vec3>,
    reference_measure: Vec<f64>,
}

impl EmbeddedMesh {
    /// Closed polyline through `positions` in cyclic order. `ambient_dim` is 2 or 3;
    /// planar curves must have zero third components.
    pub fn curve(positions: Vec<Vec3>, ambient_dim: usize) -> Result<Self> {
        check_ambient(&positions, ambient_dim)?;
        let n = positions.len();
        if n < 4 {
            return Err(MembraneError::InvalidInput(format!(
                "a curve loop needs at least 4 vertices, got {n}"
            )));
        }
        let topology = Topology {
            kind: MeshKind::CurveLoop,
            n_vertices: n,
            triangles: Vec::new(),
            vertex_faces: Vec::new(),
            component: vec![0; n],
            n_components: 1,
        };
        Self::with_topology(topology, positions, ambient_dim)
    }

    /// Closed, consistently oriented triangle mesh in R^3.
    pub fn surface(positions: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = positions.len();
        if triangles.is_empty() {
            return Err(MembraneError::InvalidInput("surface has no triangles".into()));
        }
        for (f, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(MembraneError::InvalidInput(format!(
                    "triangle {f} references a vertex outside 0..{n}"
                )));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(MembraneError::NonManifold(format!("triangle {f} repeats a vertex")));
            }
        }
        check_closed_oriented(&triangles)?;

        let mut vertex_faces = vec![Vec::new(); n];
        for (f, t) in triangles.iter().enumerate() {
            for &v in t {
                vertex_faces[v].push(f);
            }
        }
        if let Some(v) = vertex_faces.iter().position(|faces| faces.is_empty()) {
            return Err(MembraneError::NonManifold(format!("vertex {v} belongs to no triangle")));
        }
        let (component, n_components) = components(n, &triangles);
        let topology = Topology {
            kind: MeshKind::TriangleMesh,
            n_vertices: n,
            triangles,
            vertex_faces,
            component,
            n_components,
        };
        Self::with_topology(topology, positions, 3)
    }

    fn with_topology(topology: Topology, positions: Vec<Vec3>, ambient_dim: usize) -> Result<Self> {
        let topology = Arc::new(topology);
        let measure = geometry::vertex_mass(&topology, &positions)?;
        if let Some(i) = measure.iter().position(|&m| m <= EPS_GEOM) {
            return Err(MembraneError::DegenerateGeometry(format!(
                "vertex {i} has reference measure {}",
                measure[i]
            )));
        }
        Ok(EmbeddedMesh {
            topology,
            ambient_dim,
            reference_positions: positions,
            reference_measure: measure,
        })
    }

    pub fn kind(&self) -> MeshKind {
        self.topology.kind
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn n_vertices(&self) -> usize {
        self.topology.n_vertices
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// Intrinsic dimension: 1 for curves, 2 for surfaces.
    pub fn intrinsic_dim(&self) -> usize {
        match self.topology.kind {
            MeshKind::CurveLoop => 1,
            MeshKind::TriangleMesh => 2,
        }
    }

    pub fn reference_positions(&self) -> &[Vec3] {
        &self.reference_positions
    }

    pub fn reference_measure(&self) -> &[f64] {
        &self.reference_measure
    }

    pub fn total_measure(&self) -> f64 {
        self.reference_measure.iter().sum()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.topology.triangles
    }

    /// Validate a configuration against this mesh's vertex count and ambient dimension.
    pub fn check_positions(&self, positions: &[Vec3]) -> Result<()> {
        if positions.len() != self.n_vertices() {
            return Err(MembraneError::ShapeMismatch {
                expected: self.n_vertices(),
                got: positions.len(),
            });
        }
        check_ambient(positions, self.ambient_dim)
    }
}

fn check_ambient(positions: &[Vec3], ambient_dim: usize) -> Result<()> {
    match ambient_dim {
        2 => {
            if let Some(i) = positions.iter().position(|p| p.z != 0.0) {
                return Err(MembraneError::InvalidInput(format!(
                    "planar mesh has nonzero z at vertex {i}"
                )));
            }
        }
        3 => {}
        d => {
            return Err(MembraneError::InvalidInput(format!(
                "ambient dimension must be 2 or 3, got {d}"
            )))
        }
    }
    if let Some(i) = positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(MembraneError::InvalidInput(format!("vertex {i} is not finite")));
    }
    Ok(())
}

/// Every directed edge must appear exactly once and its reverse exactly once.
fn check_closed_oriented(triangles: &[[usize; 3]]) -> Result<()> {
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for (f, t) in triangles.iter().enumerate() {
        for k in 0..3 {
            let e = (t[k], t[(k + 1) % 3]);
            if let Some(g) = directed.insert(e, f) {
                return Err(MembraneError::NonManifold(format!(
                    "edge {}-{} traversed in the same direction by triangles {g} and {f} \
                     (non-manifold or inconsistent orientation)",
                    e.0, e.1
                )));
            }
        }
    }
    for &(a, b) in directed.keys() {
        if !directed.contains_key(&(b, a)) {
            return Err(MembraneError::NonManifold(format!(
                "edge {a}-{b} has only one incident triangle (mesh has a boundary)"
            )));
        }
    }
    Ok(())
}

fn components(n: usize, triangles: &[[usize; 3]]) -> (Vec<usize>, usize) {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for t in triangles {
        for k in 1..3 {
            let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[k]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut count = 0;
    let mut component = vec![0; n];
    for v in 0..n {
        let r = find(&mut parent, v);
        if label[r] == usize::MAX {
            label[r] = count;
            count += 1;
        }
        component[v] = label[r];
    }
    (component, count)
}
