//! Metric data of a discrete embedded manifold: vertex volume weights, tangent
//! and normal frames, the mean-curvature vector and the density map.
//!
//! The vertex weight of a curve is the dual arc length `(l_{i-1} + l_i) / 2`;
//! on a surface it is the barycentric share `sum A_T / 3` of the incident
//! triangle areas. The mean-curvature vector is minus the mass-normalised
//! gradient of the total volume, `H_i = -(1/m_i) d(sum_j m_j)/dx_i`, which is
//! the turning-angle curvature vector on curves and the cotangent Laplacian of
//! the position on surfaces. The full Jacobian of the weights is kept as well:
//! it is the exact linearization of the density map and the operators module
//! builds the constraint map from it.

use std::sync::Arc;

use crate::error::{MembraneError, Result};
use crate::exec;
use crate::field::{AmbientField, ScalarField, Vec3};
use crate::mesh::{EmbeddedMesh, MeshKind, Topology};

/// Degeneracy threshold for edge lengths and triangle areas.
pub const EPS_GEOM: f64 = 1e-12;
/// Orthogonality tolerance for frames and for the normality of `H`.
pub const TOL_GEOM: f64 = 1e-8;
/// Below this value of `|H_i| * sqrt(m_i)` the surface normal falls back to the
/// area-weighted face normal.
const FLAT_VERTEX: f64 = 1e-6;

/// Per-triangle quantities reused by the linearizations.
#[derive(Clone, Debug)]
struct FaceData {
    area: f64,
    normal: Vec3,
    /// Gradient of the triangle area with respect to each corner.
    area_gradient: [Vec3; 3],
}

/// Immutable metric data of one configuration of a mesh.
#[derive(Clone, Debug)]
pub struct GeometryCache {
    topology: Arc<Topology>,
    ambient_dim: usize,
    positions: Vec<Vec3>,
    mass: Vec<f64>,
    tangent_dim: usize,
    normal_dim: usize,
    tangents: Vec<[Vec3; 2]>,
    normals: Vec<[Vec3; 2]>,
    mean_curvature: Vec<Vec3>,
    mean_curvature_norm_sq: Vec<f64>,
    /// Row `a` lists `(j, dm_j/dx_a)` in ascending `j`.
    mass_gradient: Vec<Vec<(usize, Vec3)>>,
    edge_length: Vec<f64>,
    edge_dir: Vec<Vec3>,
    faces: Vec<FaceData>,
}

/// Build the metric cache for `positions` on the connectivity of `mesh`.
pub fn build_geometry(mesh: &EmbeddedMesh, positions: &[Vec3]) -> Result<GeometryCache> {
    GeometryCache::build(mesh, positions)
}

impl GeometryCache {
    pub fn build(mesh: &EmbeddedMesh, positions: &[Vec3]) -> Result<GeometryCache> {
        mesh.check_positions(positions)?;
        let topology = mesh.topology().clone();
        match topology.kind {
            MeshKind::CurveLoop => build_curve(topology, mesh.ambient_dim(), positions),
            MeshKind::TriangleMesh => build_surface(topology, positions),
        }
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn kind(&self) -> MeshKind {
        self.topology.kind
    }

    pub fn n_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn total_mass(&self) -> f64 {
        exec::sum_indexed(self.mass.len(), |i| self.mass[i])
    }

    pub fn tangent_dim(&self) -> usize {
        self.tangent_dim
    }

    pub fn normal_dim(&self) -> usize {
        self.normal_dim
    }

    /// Orthonormal tangent frame at vertex `i`.
    pub fn tangent_basis(&self, i: usize) -> &[Vec3] {
        &self.tangents[i][..self.tangent_dim]
    }

    /// Orthonormal basis of the normal space at vertex `i`.
    pub fn normal_basis(&self, i: usize) -> &[Vec3] {
        &self.normals[i][..self.normal_dim]
    }

    pub fn mean_curvature(&self) -> &[Vec3] {
        &self.mean_curvature
    }

    pub fn mean_curvature_norm_sq(&self) -> &[f64] {
        &self.mean_curvature_norm_sq
    }

    pub fn min_mean_curvature_norm(&self) -> f64 {
        self.mean_curvature_norm_sq.iter().copied().fold(f64::INFINITY, f64::min).sqrt()
    }

    /// `(j, dm_j/dx_a)` for every weight `m_j` that depends on vertex `a`.
    pub fn mass_gradient_row(&self, a: usize) -> &[(usize, Vec3)] {
        &self.mass_gradient[a]
    }

    /// Directional derivative of the vertex weights, `dm[X]`.
    pub fn mass_linearization(&self, x: &AmbientField) -> Result<Vec<f64>> {
        x.check_len(self.n_vertices())?;
        let x = x.values();
        let topo = &self.topology;
        Ok(match topo.kind {
            MeshKind::CurveLoop => {
                let n = self.n_vertices();
                let dl = exec::map_indexed(n, |k| {
                    let (_, next) = topo.loop_neighbors(k);
                    self.edge_dir[k].dot(&(x[next] - x[k]))
                });
                exec::map_indexed(n, |i| {
                    let (prev, _) = topo.loop_neighbors(i);
                    0.5 * (dl[prev] + dl[i])
                })
            }
            MeshKind::TriangleMesh => {
                let da = exec::map_indexed(self.faces.len(), |f| {
                    let t = topo.triangles[f];
                    let g = &self.faces[f].area_gradient;
                    (0..3).fold(0.0, |acc, k| acc + g[k].dot(&x[t[k]]))
                });
                exec::map_indexed(self.n_vertices(), |i| {
                    topo.vertex_faces[i].iter().fold(0.0, |acc, &f| acc + da[f]) / 3.0
                })
            }
        })
    }

    /// Second directional derivative of the vertex weights, `d^2 m[v, v]`.
    pub fn mass_second_variation(&self, v: &AmbientField) -> Result<Vec<f64>> {
        v.check_len(self.n_vertices())?;
        let v = v.values();
        let p = &self.positions;
        let topo = &self.topology;
        Ok(match topo.kind {
            MeshKind::CurveLoop => {
                let n = self.n_vertices();
                let d2l = exec::map_indexed(n, |k| {
                    let (_, next) = topo.loop_neighbors(k);
                    let dv = v[next] - v[k];
                    let along = self.edge_dir[k].dot(&dv);
                    (dv.norm_squared() - along * along) / self.edge_length[k]
                });
                exec::map_indexed(n, |i| {
                    let (prev, _) = topo.loop_neighbors(i);
                    0.5 * (d2l[prev] + d2l[i])
                })
            }
            MeshKind::TriangleMesh => {
                let d2a = exec::map_indexed(self.faces.len(), |f| {
                    let [a, b, c] = topo.triangles[f];
                    let face = &self.faces[f];
                    let (u, w) = (p[b] - p[a], p[c] - p[a]);
                    let (du, dw) = (v[b] - v[a], v[c] - v[a]);
                    let dn = du.cross(&w) + u.cross(&dw);
                    let along = face.normal.dot(&dn);
                    let twice_area = 2.0 * face.area;
                    0.5 * ((dn.norm_squared() - along * along) / twice_area
                        + 2.0 * face.normal.dot(&du.cross(&dw)))
                });
                exec::map_indexed(self.n_vertices(), |i| {
                    topo.vertex_faces[i].iter().fold(0.0, |acc, &f| acc + d2a[f]) / 3.0
                })
            }
        })
    }

    /// Tangential and normal parts of `x` at every vertex.
    pub fn split(&self, x: &AmbientField) -> Result<(AmbientField, AmbientField)> {
        x.check_len(self.n_vertices())?;
        let parts = exec::map_indexed(self.n_vertices(), |i| {
            let xi = x.0[i];
            let tangential = self
                .tangent_basis(i)
                .iter()
                .fold(Vec3::zeros(), |acc, t| acc + t * t.dot(&xi));
            (tangential, xi - tangential)
        });
        let (t, n): (Vec<Vec3>, Vec<Vec3>) = parts.into_iter().unzip();
        Ok((AmbientField(t), AmbientField(n)))
    }
}

/// `X = X^T + X^perp` with the tangential part expanded in the vertex frame.
pub fn split_tangent_normal(
    cache: &GeometryCache,
    x: &AmbientField,
) -> Result<(AmbientField, AmbientField)> {
    cache.split(x)
}

/// Vertex weights of a configuration without building the full cache.
pub fn vertex_mass(topology: &Topology, positions: &[Vec3]) -> Result<Vec<f64>> {
    match topology.kind {
        MeshKind::CurveLoop => {
            let (len, _) = curve_edges(topology, positions)?;
            Ok(exec::map_indexed(topology.n_vertices, |i| {
                let (prev, _) = topology.loop_neighbors(i);
                0.5 * (len[prev] + len[i])
            }))
        }
        MeshKind::TriangleMesh => {
            let faces = face_data(topology, positions)?;
            Ok(exec::map_indexed(topology.n_vertices, |i| {
                topology.vertex_faces[i].iter().fold(0.0, |acc, &f| acc + faces[f].area) / 3.0
            }))
        }
    }
}

/// Density `rho_i = m_i(positions) / mu_i` relative to the frozen reference measure.
pub fn density(mesh: &EmbeddedMesh, positions: &[Vec3]) -> Result<ScalarField> {
    mesh.check_positions(positions)?;
    let mass = vertex_mass(mesh.topology(), positions)?;
    let mu = mesh.reference_measure();
    Ok(ScalarField::from_fn(mass.len(), |i| mass[i] / mu[i]))
}

/// Derivative of the density map along `x`:
/// `rho_* X = [div(X^T) - <X^perp, H>] * rho`.
///
/// The bracket is evaluated as `dm[X] / m`, the exact linearization of the
/// vertex weights, which equals the discrete divergence expression of the
/// operators module (`-M^{-1} B^T M X`) by construction.
pub fn density_derivative(
    cache: &GeometryCache,
    rho: &ScalarField,
    x: &AmbientField,
) -> Result<ScalarField> {
    rho.check_len(cache.n_vertices())?;
    let dm = cache.mass_linearization(x)?;
    let m = cache.mass();
    Ok(ScalarField::from_fn(m.len(), |i| dm[i] / m[i] * rho.0[i]))
}

fn curve_edges(topology: &Topology, p: &[Vec3]) -> Result<(Vec<f64>, Vec<Vec3>)> {
    let n = topology.n_vertices;
    let edges = exec::map_indexed(n, |k| {
        let (_, next) = topology.loop_neighbors(k);
        let e = p[next] - p[k];
        let l = e.norm();
        (l, e / l)
    });
    if let Some(k) = edges.iter().position(|(l, _)| !(*l > EPS_GEOM)) {
        return Err(MembraneError::DegenerateGeometry(format!(
            "edge {k} has length {:e}",
            edges[k].0
        )));
    }
    Ok(edges.into_iter().unzip())
}

fn face_data(topology: &Topology, p: &[Vec3]) -> Result<Vec<FaceData>> {
    let faces = exec::map_slice(&topology.triangles, |&[a, b, c]| {
        let n = (p[b] - p[a]).cross(&(p[c] - p[a]));
        let twice = n.norm();
        let unit = n / twice;
        FaceData {
            area: 0.5 * twice,
            normal: unit,
            area_gradient: [
                0.5 * unit.cross(&(p[c] - p[b])),
                0.5 * unit.cross(&(p[a] - p[c])),
                0.5 * unit.cross(&(p[b] - p[a])),
            ],
        }
    });
    if let Some(f) = faces.iter().position(|fd| !(fd.area > EPS_GEOM)) {
        return Err(MembraneError::DegenerateGeometry(format!(
            "triangle {f} has area {:e}",
            faces[f].area
        )));
    }
    Ok(faces)
}

/// Unit vector orthogonal to `t`, built from the coordinate axis least aligned with it.
fn any_orthogonal(t: &Vec3) -> Vec3 {
    let axis = if t.x.abs() <= t.y.abs() && t.x.abs() <= t.z.abs() {
        Vec3::x()
    } else if t.y.abs() <= t.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    (axis - t * t.dot(&axis)).normalize()
}

fn build_curve(topology: Arc<Topology>, ambient_dim: usize, p: &[Vec3]) -> Result<GeometryCache> {
    let n = topology.n_vertices;
    let (len, dir) = curve_edges(&topology, p)?;
    let topo = &topology;

    let mass = exec::map_indexed(n, |i| {
        let (prev, _) = topo.loop_neighbors(i);
        0.5 * (len[prev] + len[i])
    });
    let mean_curvature = exec::map_indexed(n, |i| {
        let (prev, _) = topo.loop_neighbors(i);
        (dir[i] - dir[prev]) / mass[i]
    });
    let tangent = exec::map_indexed(n, |i| {
        let (prev, _) = topo.loop_neighbors(i);
        let s = dir[prev] + dir[i];
        let l = s.norm();
        (l > EPS_GEOM).then(|| s / l)
    });
    if let Some(i) = tangent.iter().position(|t| t.is_none()) {
        return Err(MembraneError::DegenerateGeometry(format!(
            "curve folds back on itself at vertex {i}"
        )));
    }
    let tangent: Vec<Vec3> = tangent.into_iter().flatten().collect();

    let (normal_dim, normals) = if ambient_dim == 2 {
        let normals = exec::map_indexed(n, |i| {
            let t = tangent[i];
            [Vec3::new(-t.y, t.x, 0.0), Vec3::zeros()]
        });
        (1, normals)
    } else {
        // Transport the first normal along the loop so the frame varies continuously.
        let mut normals = Vec::with_capacity(n);
        let mut prev = any_orthogonal(&tangent[0]);
        for t in &tangent {
            let candidate = prev - t * t.dot(&prev);
            let n1 = if candidate.norm() > 1e-3 { candidate.normalize() } else { any_orthogonal(t) };
            normals.push([n1, t.cross(&n1)]);
            prev = n1;
        }
        (2, normals)
    };

    // dm_j/dx_a is nonzero for j in {a-1, a, a+1}.
    let mass_gradient = exec::map_indexed(n, |a| {
        let (prev, next) = topo.loop_neighbors(a);
        let mut row = vec![
            (prev, 0.5 * dir[prev]),
            (a, 0.5 * (dir[prev] - dir[a])),
            (next, -0.5 * dir[a]),
        ];
        row.sort_by_key(|e| e.0);
        row
    });

    let mean_curvature_norm_sq = mean_curvature.iter().map(|h| h.norm_squared()).collect();
    Ok(GeometryCache {
        topology,
        ambient_dim,
        positions: p.to_vec(),
        mass,
        tangent_dim: 1,
        normal_dim,
        tangents: tangent.iter().map(|&t| [t, Vec3::zeros()]).collect(),
        normals,
        mean_curvature,
        mean_curvature_norm_sq,
        mass_gradient,
        edge_length: len,
        edge_dir: dir,
        faces: Vec::new(),
    })
}

fn build_surface(topology: Arc<Topology>, p: &[Vec3]) -> Result<GeometryCache> {
    let n = topology.n_vertices;
    let faces = face_data(&topology, p)?;
    let topo = &topology;

    let mass = exec::map_indexed(n, |i| {
        topo.vertex_faces[i].iter().fold(0.0, |acc, &f| acc + faces[f].area) / 3.0
    });
    let corner = |f: usize, v: usize| -> usize {
        let t = &topo.triangles[f];
        if t[0] == v {
            0
        } else if t[1] == v {
            1
        } else {
            2
        }
    };
    let mean_curvature = exec::map_indexed(n, |i| {
        let g = topo.vertex_faces[i]
            .iter()
            .fold(Vec3::zeros(), |acc, &f| acc + faces[f].area_gradient[corner(f, i)]);
        -g / mass[i]
    });

    let frames = exec::map_indexed(n, |i| {
        let area_normal = topo.vertex_faces[i]
            .iter()
            .fold(Vec3::zeros(), |acc, &f| acc + faces[f].normal * faces[f].area)
            .normalize();
        let h = mean_curvature[i];
        let hn = h.norm();
        let normal = if hn * mass[i].sqrt() > FLAT_VERTEX {
            let d = -h / hn;
            if d.dot(&area_normal) >= 0.0 {
                d
            } else {
                -d
            }
        } else {
            area_normal
        };
        let t1 = any_orthogonal(&normal);
        let t2 = normal.cross(&t1);
        ([t1, t2], [normal, Vec3::zeros()])
    });
    let (tangents, normals): (Vec<_>, Vec<_>) = frames.into_iter().unzip();

    let mass_gradient = exec::map_indexed(n, |a| {
        let mut row: Vec<(usize, Vec3)> = Vec::new();
        for &f in &topo.vertex_faces[a] {
            let g = faces[f].area_gradient[corner(f, a)] / 3.0;
            for &j in &topo.triangles[f] {
                match row.iter_mut().find(|e| e.0 == j) {
                    Some(e) => e.1 += g,
                    None => row.push((j, g)),
                }
            }
        }
        row.sort_by_key(|e| e.0);
        row
    });

    let mean_curvature_norm_sq = mean_curvature.iter().map(|h| h.norm_squared()).collect();
    Ok(GeometryCache {
        topology,
        ambient_dim: 3,
        positions: p.to_vec(),
        mass,
        tangent_dim: 2,
        normal_dim: 1,
        tangents,
        normals,
        mean_curvature,
        mean_curvature_norm_sq,
        mass_gradient,
        edge_length: Vec::new(),
        edge_dir: Vec::new(),
        faces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use std::f64::consts::PI;

    fn frames_orthonormal(c: &GeometryCache) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..c.n_vertices() {
            let all: Vec<Vec3> =
                c.tangent_basis(i).iter().chain(c.normal_basis(i)).copied().collect();
            for (a, u) in all.iter().enumerate() {
                worst = worst.max((u.norm() - 1.0).abs());
                for w in &all[a + 1..] {
                    worst = worst.max(u.dot(w).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn circle_curvature_is_unit_and_inward() {
        let mesh = shapes::circle(256, 1.0).unwrap();
        let c = build_geometry(&mesh, mesh.reference_positions()).unwrap();
        for (i, h) in c.mean_curvature().iter().enumerate() {
            assert!((h.norm() - 1.0).abs() < 2e-4);
            let x = c.positions()[i];
            assert!((h + x).norm() < 2e-4, "H should point to the centre");
        }
        assert!(frames_orthonormal(&c) < 1e-10);
    }

    #[test]
    fn curvature_converges_at_second_order_on_ellipse() {
        let err = |n: usize| {
            let (a, b) = (1.5, 0.8);
            let mesh = shapes::ellipse(n, a, b).unwrap();
            let c = build_geometry(&mesh, mesh.reference_positions()).unwrap();
            (0..n)
                .map(|i| {
                    let t = 2.0 * PI * i as f64 / n as f64;
                    let exact = a * b / (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).powf(1.5);
                    (c.mean_curvature()[i].norm() - exact).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(64), err(128));
        assert!(e1 > 1e-6);
        assert!((e1 / e2).log2() > 1.9, "order {}", (e1 / e2).log2());
    }

    #[test]
    fn sphere_mean_curvature_is_two() {
        let mesh = shapes::icosphere(3, 1.0).unwrap();
        let c = build_geometry(&mesh, mesh.reference_positions()).unwrap();
        let mean = c.mean_curvature().iter().map(|h| h.norm()).sum::<f64>() / c.n_vertices() as f64;
        assert!((mean - 2.0).abs() < 0.04, "mean |H| = {mean}");
        for (h, x) in c.mean_curvature().iter().zip(c.positions()) {
            assert!(h.dot(x) < 0.0);
        }
        assert!(frames_orthonormal(&c) < 1e-10);
        for i in 0..c.n_vertices() {
            let h = c.mean_curvature()[i];
            let tangential: f64 = c.tangent_basis(i).iter().map(|t| t.dot(&h).abs()).sum();
            assert!(tangential < TOL_GEOM * h.norm());
        }
    }

    #[test]
    fn collinear_vertex_has_zero_curvature() {
        let pos = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(2.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let mesh = EmbeddedMesh::curve(pos, 2).unwrap();
        let c = build_geometry(&mesh, mesh.reference_positions()).unwrap();
        assert_eq!(c.mean_curvature()[1], Vec3::zeros());
        assert!(c.mean_curvature()[2].norm() > 0.1);
    }

    #[test]
    fn space_curve_frames() {
        let mesh = shapes::trefoil_like(128).unwrap();
        let c = build_geometry(&mesh, mesh.reference_positions()).unwrap();
        assert_eq!(c.normal_dim(), 2);
        assert!(frames_orthonormal(&c) < 1e-10);
        for i in 0..c.n_vertices() {
            let h = c.mean_curvature()[i];
            assert!(c.tangent_basis(i)[0].dot(&h).abs() < TOL_GEOM * h.norm().max(1e-300));
        }
    }

    #[test]
    fn density_scaling() {
        let mesh = shapes::circle(64, 1.0).unwrap();
        let rho = density(&mesh, mesh.reference_positions()).unwrap();
        assert!(rho.0.iter().all(|&r| r == 1.0));
        let scaled: Vec<Vec3> = mesh.reference_positions().iter().map(|p| p * 2.0).collect();
        let rho = density(&mesh, &scaled).unwrap();
        assert!(rho.0.iter().all(|&r| (r - 2.0).abs() < 1e-14));

        let sphere = shapes::icosphere(2, 1.0).unwrap();
        let scaled: Vec<Vec3> = sphere.reference_positions().iter().map(|p| p * 2.0).collect();
        let rho = density(&sphere, &scaled).unwrap();
        assert!(rho.0.iter().all(|&r| (r - 4.0).abs() < 1e-13));
    }

    #[test]
    fn density_derivative_examples() {
        let mesh = shapes::circle(128, 1.0).unwrap();
        let c = build_geometry(&mesh, mesh.reference_positions()).unwrap();
        let rho = ScalarField::constant(128, 1.0);
        let radial = AmbientField(mesh.reference_positions().to_vec());
        let d = density_derivative(&c, &rho, &radial).unwrap();
        assert!(d.0.iter().all(|&v| (v - 1.0).abs() < 1e-12));

        let translation = AmbientField::constant(128, Vec3::new(0.3, -1.0, 0.0));
        let d = density_derivative(&c, &rho, &translation).unwrap();
        assert!(d.max_abs() < 1e-12);

        let rotation = AmbientField(
            mesh.reference_positions().iter().map(|p| Vec3::new(-p.y, p.x, 0.0) * 0.7).collect(),
        );
        let d = density_derivative(&c, &rho, &rotation).unwrap();
        assert!(d.max_abs() < 1e-12);
    }

    #[test]
    fn split_examples() {
        let mesh = shapes::circle(64, 1.0).unwrap();
        let c = build_geometry(&mesh, mesh.reference_positions()).unwrap();
        let h = AmbientField(c.mean_curvature().to_vec());
        let (t, nrm) = split_tangent_normal(&c, &h).unwrap();
        assert!(t.max_norm() < 1e-12);
        assert!(nrm.add_scaled(-1.0, &h).max_norm() < 1e-12);

        let tang = AmbientField((0..64).map(|i| c.tangent_basis(i)[0] * 2.0).collect());
        let (t, nrm) = split_tangent_normal(&c, &tang).unwrap();
        assert!(nrm.max_norm() < 1e-15);
        assert!(t.add_scaled(-1.0, &tang).max_norm() < 1e-15);
    }

    #[test]
    fn degenerate_triangle_is_rejected() {
        let mesh = shapes::icosphere(1, 1.0).unwrap();
        let mut p = mesh.reference_positions().to_vec();
        let [a, b, _] = mesh.triangles()[0];
        p[a] = p[b];
        assert!(matches!(
            build_geometry(&mesh, &p),
            Err(MembraneError::DegenerateGeometry(_))
        ));
    }
}
