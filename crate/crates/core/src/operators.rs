//! Discrete intrinsic operators built so that integration by parts is exact.
//!
//! The constraint map `B p = G p + p H` is the negative mass-weighted adjoint
//! of the vertex-weight linearization: `B = -M^{-1} J^T` with `J = dm/dx`.
//! Consequently `-M^{-1} B^T M X = dm[X] / m` is exactly the linearized
//! density change, `range(B)` is exactly the `M`-orthogonal complement of the
//! admissible velocities, and the elliptic operator `A = B^T M B` is the weak
//! form of `-(Delta - |H|^2)`. The gradient `G = B - diag(H)` annihilates
//! constants exactly; its output is tangential up to a second-order term.

use std::sync::{Arc, OnceLock};

use crate::error::{MembraneError, Result};
use crate::exec;
use crate::field::{AmbientField, ScalarField, Vec3};
use crate::geometry::GeometryCache;
use crate::mesh::{EmbeddedMesh, MeshKind, Topology};
use crate::sparse::{CsrMatrix, EnvelopeCholesky};

/// Threshold below which a vertex counts as flat.
pub const EPS_H: f64 = 1e-8;

/// Sparse operators of one configuration. Immutable after assembly except for
/// the lazily computed factorization of `A`, which is computed at most once.
#[derive(Debug)]
pub struct OperatorSet {
    topology: Arc<Topology>,
    mass: Vec<f64>,
    mean_curvature: Vec<Vec3>,
    /// Row `a` of `B`: `(j, B_aj)`, ascending `j`.
    b_rows: Vec<Vec<(usize, Vec3)>>,
    /// Column `j` of `B`: `(a, B_aj)`, ascending `a`.
    b_cols: Vec<Vec<(usize, Vec3)>>,
    a: CsrMatrix,
    /// `M`-orthonormal basis of `ker B` (pressure modes that produce no field).
    gauge: Vec<Vec<f64>>,
    /// Vertices whose pressure is pinned to zero in the direct factorization.
    pinned: Vec<usize>,
    factor: OnceLock<std::result::Result<Arc<EnvelopeCholesky>, String>>,
}

impl Clone for OperatorSet {
    fn clone(&self) -> Self {
        OperatorSet {
            topology: self.topology.clone(),
            mass: self.mass.clone(),
            mean_curvature: self.mean_curvature.clone(),
            b_rows: self.b_rows.clone(),
            b_cols: self.b_cols.clone(),
            a: self.a.clone(),
            gauge: self.gauge.clone(),
            pinned: self.pinned.clone(),
            factor: OnceLock::new(),
        }
    }
}

/// Assemble `G`, `B`, the mass weights and `A = B^T M B` for a configuration.
pub fn build_operators(cache: &GeometryCache, mesh: &EmbeddedMesh) -> Result<OperatorSet> {
    if !Arc::ptr_eq(cache.topology(), mesh.topology()) {
        return Err(MembraneError::InvalidInput(
            "geometry cache was built on a different mesh".into(),
        ));
    }
    OperatorSet::new(cache)
}

impl OperatorSet {
    pub fn new(cache: &GeometryCache) -> Result<OperatorSet> {
        let n = cache.n_vertices();
        let mass = cache.mass().to_vec();
        let b_rows = exec::map_indexed(n, |a| {
            let inv = -1.0 / mass[a];
            cache.mass_gradient_row(a).iter().map(|&(j, g)| (j, g * inv)).collect::<Vec<_>>()
        });
        let (gauge, pinned) = gauge_modes(cache.topology(), &mass);
        Ok(Self::assemble(
            cache.topology().clone(),
            mass,
            cache.mean_curvature().to_vec(),
            b_rows,
            gauge,
            pinned,
        ))
    }

    fn assemble(
        topology: Arc<Topology>,
        mass: Vec<f64>,
        mean_curvature: Vec<Vec3>,
        b_rows: Vec<Vec<(usize, Vec3)>>,
        gauge: Vec<Vec<f64>>,
        pinned: Vec<usize>,
    ) -> OperatorSet {
        let n = mass.len();
        let mut b_cols: Vec<Vec<(usize, Vec3)>> = vec![Vec::new(); n];
        for (a, row) in b_rows.iter().enumerate() {
            for &(j, v) in row {
                b_cols[j].push((a, v));
            }
        }
        // A_jk = sum_a m_a B_aj . B_ak, summed in ascending `a` for both (j,k)
        // and (k,j), which makes A symmetric to the bit.
        let rows = exec::map_indexed(n, |j| {
            let mut acc: Vec<(usize, f64)> = Vec::new();
            for &(a, bj) in &b_cols[j] {
                for &(k, bk) in &b_rows[a] {
                    let v = mass[a] * bj.dot(&bk);
                    match acc.iter_mut().find(|e| e.0 == k) {
                        Some(e) => e.1 += v,
                        None => acc.push((k, v)),
                    }
                }
            }
            acc.sort_by_key(|e| e.0);
            acc
        });
        OperatorSet {
            topology,
            mass,
            mean_curvature,
            b_rows,
            b_cols,
            a: CsrMatrix::from_rows(rows),
            gauge,
            pinned,
            factor: OnceLock::new(),
        }
    }

    /// Copy of these operators with the mean-curvature term replaced by `h`
    /// while the gradient `G` is kept. Used for synthetic fixtures and fault
    /// injection; the null space of the new `B` is not tracked.
    pub fn with_mean_curvature(&self, h: Vec<Vec3>) -> Result<OperatorSet> {
        if h.len() != self.n() {
            return Err(MembraneError::ShapeMismatch { expected: self.n(), got: h.len() });
        }
        let b_rows = exec::map_indexed(self.n(), |a| {
            self.b_rows[a]
                .iter()
                .map(|&(j, v)| if j == a { (j, v - self.mean_curvature[a] + h[a]) } else { (j, v) })
                .collect::<Vec<_>>()
        });
        Ok(Self::assemble(
            self.topology.clone(),
            self.mass.clone(),
            h,
            b_rows,
            Vec::new(),
            Vec::new(),
        ))
    }

    pub fn n(&self) -> usize {
        self.mass.len()
    }

    pub fn kind(&self) -> MeshKind {
        self.topology.kind
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn mean_curvature(&self) -> &[Vec3] {
        &self.mean_curvature
    }

    /// The elliptic operator `A = B^T M B`.
    pub fn elliptic(&self) -> &CsrMatrix {
        &self.a
    }

    /// `M`-orthonormal basis of the pressure modes annihilated by `B`.
    pub fn gauge_modes(&self) -> &[Vec<f64>] {
        &self.gauge
    }

    /// `G p`, the intrinsic gradient.
    pub fn gradient(&self, p: &ScalarField) -> Result<AmbientField> {
        p.check_len(self.n())?;
        Ok(AmbientField::from_fn(self.n(), |a| {
            self.row_apply(a, &p.0) - self.mean_curvature[a] * p.0[a]
        }))
    }

    /// `B p = G p + p H`.
    pub fn apply_b(&self, p: &ScalarField) -> Result<AmbientField> {
        p.check_len(self.n())?;
        Ok(AmbientField::from_fn(self.n(), |a| self.row_apply(a, &p.0)))
    }

    #[inline]
    fn row_apply(&self, a: usize, p: &[f64]) -> Vec3 {
        self.b_rows[a].iter().fold(Vec3::zeros(), |acc, &(j, v)| acc + v * p[j])
    }

    /// `B^T M X`.
    pub fn apply_bt_m(&self, x: &AmbientField) -> Result<Vec<f64>> {
        x.check_len(self.n())?;
        Ok(exec::map_indexed(self.n(), |j| {
            self.b_cols[j].iter().fold(0.0, |acc, &(a, v)| acc + self.mass[a] * v.dot(&x.0[a]))
        }))
    }

    /// Roundoff level of `B^T M X`: `16 eps max_j sum_a m_a |B_aj| |X_a|`.
    pub(crate) fn bt_m_roundoff(&self, x: &AmbientField) -> f64 {
        let bound = exec::max_indexed(self.n(), |j| {
            self.b_cols[j].iter().fold(0.0, |acc, &(a, v)| acc + self.mass[a] * v.norm() * x.0[a].norm())
        });
        16.0 * f64::EPSILON * bound
    }

    /// Discrete divergence `-M^{-1} G^T M X`, the negative `M`-adjoint of the gradient.
    pub fn divergence(&self, x: &AmbientField) -> Result<ScalarField> {
        let btm = self.apply_bt_m(x)?;
        Ok(ScalarField::from_fn(self.n(), |j| {
            -btm[j] / self.mass[j] + self.mean_curvature[j].dot(&x.0[j])
        }))
    }

    /// `c(X) = div(X) - <X, H>`, equal to `-M^{-1} B^T M X`. A field is admissible
    /// (tangent to the volume-preserving configurations) iff this vanishes.
    pub fn constraint_residual(&self, x: &AmbientField) -> Result<ScalarField> {
        let btm = self.apply_bt_m(x)?;
        Ok(ScalarField::from_fn(self.n(), |j| -btm[j] / self.mass[j]))
    }

    /// Check the solvability hypothesis: in every connected component some
    /// vertex has `|H| > EPS_H`; with `strict`, every vertex must.
    pub fn check_mean_curvature(&self, strict: bool) -> Result<()> {
        let norms: Vec<f64> = self.mean_curvature.iter().map(|h| h.norm()).collect();
        if strict {
            if let Some(i) = norms.iter().position(|&h| !(h > EPS_H)) {
                return Err(MembraneError::MeanCurvatureVanishing(format!(
                    "vertex {i} is flat (|H| = {:e})",
                    norms[i]
                )));
            }
            return Ok(());
        }
        let mut curved = vec![false; self.topology.n_components];
        for (i, &h) in norms.iter().enumerate() {
            if h > EPS_H {
                curved[self.topology.component[i]] = true;
            }
        }
        if let Some(c) = curved.iter().position(|&ok| !ok) {
            return Err(MembraneError::MeanCurvatureVanishing(format!(
                "mean curvature vanishes identically on component {c}"
            )));
        }
        Ok(())
    }

    /// Cached factorization of `A` with the gauge vertices pinned.
    pub(crate) fn factorization(&self) -> Result<Arc<EnvelopeCholesky>> {
        self.factor
            .get_or_init(|| {
                EnvelopeCholesky::factor(&self.a, &self.pinned).map(Arc::new).map_err(|e| e.to_string())
            })
            .clone()
            .map_err(MembraneError::SolverBreakdown)
    }

    /// Remove the gauge component of a pressure field (`M`-orthogonal projection).
    pub(crate) fn remove_gauge(&self, p: &mut [f64]) {
        for g in &self.gauge {
            let c = exec::sum_indexed(p.len(), |i| self.mass[i] * g[i] * p[i]);
            for (pi, gi) in p.iter_mut().zip(g) {
                *pi -= c * gi;
            }
        }
    }
}

/// Null space of `B`. On a loop with an even number of vertices the
/// alternating field `(-1)^i` sums to zero on every edge and is invisible to
/// the constraint. On a surface component whose vertices admit a proper
/// 3-colouring (every triangle sees each colour once) the colour differences
/// average to zero on every triangle. Returns an `M`-orthonormal basis and one
/// pinned vertex per mode.
fn gauge_modes(topology: &Topology, mass: &[f64]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = topology.n_vertices;
    let mut raw: Vec<Vec<f64>> = Vec::new();
    let mut pinned = Vec::new();
    match topology.kind {
        MeshKind::CurveLoop => {
            if n.is_multiple_of(2) {
                raw.push((0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect());
                pinned.push(0);
            }
        }
        MeshKind::TriangleMesh => {
            let colours = three_colouring(topology);
            for c in 0..topology.n_components {
                let Some(col) = &colours[c] else { continue };
                let members: Vec<usize> = (0..n).filter(|&v| topology.component[v] == c).collect();
                let first_of = |k: u8| members.iter().copied().find(|&v| col[v] == k);
                for (k0, k1) in [(0u8, 1u8), (1, 2)] {
                    raw.push(
                        (0..n)
                            .map(|v| {
                                if topology.component[v] != c {
                                    0.0
                                } else if col[v] == k0 {
                                    1.0
                                } else if col[v] == k1 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            })
                            .collect(),
                    );
                }
                pinned.extend(first_of(0));
                pinned.extend(first_of(1));
            }
        }
    }
    // Gram-Schmidt in the M inner product.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for mut g in raw {
        for q in &basis {
            let c: f64 = (0..n).map(|i| mass[i] * q[i] * g[i]).sum();
            for i in 0..n {
                g[i] -= c * q[i];
            }
        }
        let norm = (0..n).map(|i| mass[i] * g[i] * g[i]).sum::<f64>().sqrt();
        basis.push(g.into_iter().map(|x| x / norm).collect());
    }
    (basis, pinned)
}

/// Per-component 3-colouring propagated across triangle edges, if one exists.
fn three_colouring(topology: &Topology) -> Vec<Option<Vec<u8>>> {
    use std::collections::{HashMap, VecDeque};
    const NONE: u8 = u8::MAX;
    let n = topology.n_vertices;
    let tris = &topology.triangles;
    let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (f, t) in tris.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(f);
        }
    }
    let mut colour = vec![NONE; n];
    let mut ok = vec![true; topology.n_components];
    let mut seen = vec![false; tris.len()];
    for start in 0..tris.len() {
        if seen[start] {
            continue;
        }
        let comp = topology.component[tris[start][0]];
        for (k, &v) in tris[start].iter().enumerate() {
            colour[v] = k as u8;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(f) = queue.pop_front() {
            let t = tris[f];
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                for &g in &edge_faces[&(a.min(b), a.max(b))] {
                    if seen[g] {
                        continue;
                    }
                    seen[g] = true;
                    queue.push_back(g);
                    let (ca, cb) = (colour[a], colour[b]);
                    if ca >= 3 || cb >= 3 || ca == cb {
                        ok[comp] = false;
                        continue;
                    }
                    let want = 3 - ca - cb;
                    for &v in &tris[g] {
                        if v == a || v == b {
                            continue;
                        }
                        if colour[v] == NONE {
                            colour[v] = want;
                        } else if colour[v] != want {
                            ok[comp] = false;
                        }
                    }
                }
            }
        }
    }
    // A colouring is valid only if every triangle carries all three colours.
    for t in tris {
        let mut s = [false; 3];
        for &v in t {
            if colour[v] < 3 {
                s[colour[v] as usize] = true;
            }
        }
        if !s.iter().all(|&x| x) {
            ok[topology.component[t[0]]] = false;
        }
    }
    (0..topology.n_components).map(|c| ok[c].then(|| colour.clone())).collect()
}
