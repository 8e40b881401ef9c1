//! Independent reference computations used to validate the sparse pipeline.
//!
//! The dense projector recomputes the vertex weights in complex arithmetic
//! and differentiates them by the complex-step method, so it shares no
//! operator assembly with [`crate::operators`]. Reference solutions for the
//! circle are closed-form.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decomposition::{decompose, project};
use crate::dynamics::{run, SimOptions};
use crate::error::{MembraneError, Result};
use crate::field::{AmbientField, ScalarField, Vec3};
use crate::geometry::{build_geometry, density, density_derivative};
use crate::lagrangian::{pressure_from_state, LagrangianDensity};
use crate::mesh::{EmbeddedMesh, MeshKind};
use crate::operators::{build_operators, OperatorSet, EPS_H};
use crate::shapes;

/// Largest mesh the dense oracle accepts.
pub const DENSE_LIMIT: usize = 512;
const COMPLEX_STEP: f64 = 1e-30;

/// `P = I - B (B^T M B)^+ B^T M` materialized over the `V * d` coordinates
/// (vertex-major, `d` = ambient dimension).
#[derive(Debug, Clone)]
pub struct DenseProjector {
    pub dim: usize,
    pub matrix: DMatrix<f64>,
    /// `|P^2 - P|_F`.
    pub idempotence_error: f64,
    /// `|M P - (M P)^T|_F / |M P|_F`.
    pub symmetry_error: f64,
}

impl DenseProjector {
    pub fn apply(&self, x: &AmbientField) -> Result<AmbientField> {
        let d = self.dim;
        let n = self.matrix.nrows() / d;
        x.check_len(n)?;
        let v = DVector::from_fn(n * d, |k, _| x.0[k / d][k % d]);
        let y = &self.matrix * v;
        Ok(AmbientField::from_fn(n, |i| {
            let mut out = Vec3::zeros();
            for c in 0..d {
                out[c] = y[i * d + c];
            }
            out
        }))
    }
}

fn complex_masses(mesh: &EmbeddedMesh, x: &[[Complex64; 3]]) -> Vec<Complex64> {
    let topo = mesh.topology();
    let n = topo.n_vertices;
    let sub = |a: &[Complex64; 3], b: &[Complex64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    match topo.kind {
        MeshKind::CurveLoop => {
            let len: Vec<Complex64> = (0..n)
                .map(|k| {
                    let e = sub(&x[(k + 1) % n], &x[k]);
                    (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
                })
                .collect();
            (0..n).map(|i| (len[(i + n - 1) % n] + len[i]) * 0.5).collect()
        }
        MeshKind::TriangleMesh => {
            let mut m = vec![Complex64::new(0.0, 0.0); n];
            for t in &topo.triangles {
                let u = sub(&x[t[1]], &x[t[0]]);
                let w = sub(&x[t[2]], &x[t[0]]);
                let c = [
                    u[1] * w[2] - u[2] * w[1],
                    u[2] * w[0] - u[0] * w[2],
                    u[0] * w[1] - u[1] * w[0],
                ];
                let area = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt() * 0.5;
                for &v in t {
                    m[v] += area / 3.0;
                }
            }
            m
        }
    }
}

/// Vertex weights and their Jacobian `J[j][(a, c)] = dm_j / dx_a^c` by complex step.
fn mass_jacobian(mesh: &EmbeddedMesh, positions: &[Vec3]) -> (Vec<f64>, DMatrix<f64>) {
    let n = positions.len();
    let d = mesh.ambient_dim();
    let base: Vec<[Complex64; 3]> = positions
        .iter()
        .map(|p| [p.x.into(), p.y.into(), p.z.into()])
        .collect();
    let mass: Vec<f64> = complex_masses(mesh, &base).iter().map(|c| c.re).collect();
    let mut jac = DMatrix::zeros(n, n * d);
    for a in 0..n {
        for c in 0..d {
            let mut x = base.clone();
            x[a][c] += Complex64::new(0.0, COMPLEX_STEP);
            for (j, mj) in complex_masses(mesh, &x).iter().enumerate() {
                jac[(j, a * d + c)] = mj.im / COMPLEX_STEP;
            }
        }
    }
    (mass, jac)
}

/// Build the dense projector for the configuration `positions`.
pub fn dense_projector(mesh: &EmbeddedMesh, positions: &[Vec3]) -> Result<DenseProjector> {
    mesh.check_positions(positions)?;
    let n = mesh.n_vertices();
    if n > DENSE_LIMIT {
        return Err(MembraneError::InvalidInput(format!(
            "dense oracle limited to {DENSE_LIMIT} vertices, got {n}"
        )));
    }
    let d = mesh.ambient_dim();
    let (mass, jac) = mass_jacobian(mesh, positions);
    let mdiag = DVector::from_fn(n * d, |k, _| mass[k / d]);
    // B = -M^{-1} J^T
    let mut b = -jac.transpose();
    for k in 0..n * d {
        b.row_mut(k).scale_mut(1.0 / mdiag[k]);
    }
    // H = B 1; every component needs a curved vertex.
    let topo = mesh.topology();
    let mut curved = vec![false; topo.n_components];
    for i in 0..n {
        let h: f64 = (0..d).map(|c| b.row(i * d + c).sum().powi(2)).sum::<f64>().sqrt();
        if h > EPS_H {
            curved[topo.component[i]] = true;
        }
    }
    if curved.iter().any(|c| !c) {
        return Err(MembraneError::MeanCurvatureVanishing("dense oracle: flat component".into()));
    }
    let mut mb = b.clone();
    for k in 0..n * d {
        mb.row_mut(k).scale_mut(mdiag[k]);
    }
    let a = b.transpose() * &mb;
    let a_pinv = a
        .clone()
        .pseudo_inverse(1e-10 * a.amax())
        .map_err(|e| MembraneError::SolverBreakdown(e.to_string()))?;
    let p = DMatrix::identity(n * d, n * d) - &b * a_pinv * mb.transpose();
    let idempotence_error = (&p * &p - &p).norm();
    let mut mp = p.clone();
    for k in 0..n * d {
        mp.row_mut(k).scale_mut(mdiag[k]);
    }
    let symmetry_error = (&mp - mp.transpose()).norm() / mp.norm();
    Ok(DenseProjector { dim: d, matrix: p, idempotence_error, symmetry_error })
}

/// Relative L2 error between the central difference of the density along `x`
/// and the analytic density derivative.
pub fn fd_density_derivative_check(mesh: &EmbeddedMesh, x: &AmbientField, eps: f64) -> Result<f64> {
    if !(1e-8..=1e-3).contains(&eps) {
        return Err(MembraneError::InvalidInput(format!("eps must lie in [1e-8, 1e-3], got {eps}")));
    }
    let n = mesh.n_vertices();
    x.check_len(n)?;
    let f = mesh.reference_positions();
    let shifted = |s: f64| -> Vec<Vec3> { (0..n).map(|i| f[i] + x.0[i] * s).collect() };
    let plus = density(mesh, &shifted(eps))?;
    let minus = density(mesh, &shifted(-eps))?;
    let rho = density(mesh, f)?;
    let cache = build_geometry(mesh, f)?;
    let exact = density_derivative(&cache, &rho, x)?;
    let mu = mesh.reference_measure();
    let fd = ScalarField::from_fn(n, |i| (plus.0[i] - minus.0[i]) / (2.0 * eps));
    let diff = ScalarField::from_fn(n, |i| fd.0[i] - exact.0[i]);
    let scale = exact.norm(mu);
    let err = diff.norm(mu);
    Ok(if scale > 0.0 { err / scale } else { err })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub radius: f64,
    pub k: u32,
    pub resolutions: Vec<usize>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log h`; absent when the
    /// errors are at roundoff level.
    pub order: Option<f64>,
}

/// Recover `p = cos(k theta)` on a circle of radius `r` from the field
/// `grad p + p H` evaluated from the continuous formulas.
pub fn manufactured_elliptic_check(r: f64, k: u32, resolutions: &[usize]) -> Result<ConvergenceReport> {
    manufactured_with(r, k, resolutions, None)
}

fn manufactured_with(
    r: f64,
    k: u32,
    resolutions: &[usize],
    fault: Option<Fault>,
) -> Result<ConvergenceReport> {
    if !(r > 0.0) {
        return Err(MembraneError::InvalidInput(format!("radius must be positive, got {r}")));
    }
    let kf = k as f64;
    let mut errors = Vec::with_capacity(resolutions.len());
    for &n in resolutions {
        let mesh = shapes::circle(n, r)?;
        let ops = main_operators(&mesh, fault)?;
        let theta = |i: usize| 2.0 * PI * i as f64 / n as f64;
        let x = AmbientField::from_fn(n, |i| {
            let th = theta(i);
            let tangent = Vec3::new(-th.sin(), th.cos(), 0.0);
            let radial = Vec3::new(th.cos(), th.sin(), 0.0);
            tangent * (-kf * (kf * th).sin() / r) - radial * ((kf * th).cos() / r)
        });
        let res = decompose(&ops, &x)?;
        let diff = ScalarField::from_fn(n, |i| res.pressure.0[i] - (kf * theta(i)).cos());
        errors.push(diff.norm(mesh.reference_measure()));
    }
    let order = (errors.len() >= 2 && errors.iter().all(|&e| e > 1e-12)).then(|| {
        let xs: Vec<f64> = resolutions.iter().map(|&n| (2.0 * PI * r / n as f64).ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        let m = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        sxy / sxx
    });
    Ok(ConvergenceReport { radius: r, k, resolutions: resolutions.to_vec(), errors, order })
}

/// Rigidly rotating circle of radius `r` sampled at `n` vertices at time `t`:
/// positions, velocity `omega r T` and pressure `omega^2 r^2`.
pub fn rigid_rotation_reference(
    r: f64,
    omega: f64,
    t: f64,
    n: usize,
) -> (Vec<Vec3>, AmbientField, ScalarField) {
    let mut positions = Vec::with_capacity(n);
    let mut velocity = Vec::with_capacity(n);
    for i in 0..n {
        let th = 2.0 * PI * i as f64 / n as f64 + omega * t;
        positions.push(Vec3::new(r * th.cos(), r * th.sin(), 0.0));
        velocity.push(Vec3::new(-th.sin(), th.cos(), 0.0) * (omega * r));
    }
    (positions, AmbientField(velocity), ScalarField::constant(n, omega * omega * r * r))
}

/// Deliberate defects the check suite must detect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Operators assembled with `-H` in place of `H`.
    HSign,
}

fn main_operators(mesh: &EmbeddedMesh, fault: Option<Fault>) -> Result<OperatorSet> {
    let cache = build_geometry(mesh, mesh.reference_positions())?;
    let ops = build_operators(&cache, mesh)?;
    match fault {
        None => Ok(ops),
        Some(Fault::HSign) => ops.with_mean_curvature(ops.mean_curvature().iter().map(|h| -h).collect()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

fn random_field(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> AmbientField {
    AmbientField(
        (0..n)
            .map(|_| {
                let mut v = Vec3::zeros();
                for c in 0..dim {
                    v[c] = rng.gen_range(-1.0..1.0);
                }
                v
            })
            .collect(),
    )
}

fn max_rel_diff(a: &AmbientField, b: &AmbientField) -> f64 {
    a.add_scaled(-1.0, b).max_norm() / b.max_norm().max(1e-300)
}

/// Run every oracle comparison; `fault` injects a defect into the operators
/// under test.
pub fn run_check_suite(fault: Option<Fault>) -> CheckReport {
    let mut checks = Vec::new();
    let mut record = |name: &str, threshold: f64, value: Result<f64>| {
        let (value, error) = match value {
            Ok(v) => (v, None),
            Err(e) => (f64::INFINITY, Some(format!("{}: {e}", e.name()))),
        };
        checks.push(CheckResult {
            name: name.to_string(),
            value,
            threshold,
            passed: value <= threshold,
            error,
        });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);

    let dense = shapes::circle(64, 1.0).and_then(|m| dense_projector(&m, m.reference_positions()));
    let (idem, sym) = match &dense {
        Ok(p) => (Ok(p.idempotence_error), Ok(p.symmetry_error)),
        Err(e) => (
            Err(MembraneError::SolverBreakdown(e.to_string())),
            Err(MembraneError::SolverBreakdown(e.to_string())),
        ),
    };
    record("dense_projector_idempotence", 1e-9, idem);
    record("dense_projector_symmetry", 1e-8, sym);

    let sparse_vs_dense = (|| {
        let mesh = shapes::circle(64, 1.0)?;
        let p = dense.as_ref().map_err(|e| MembraneError::SolverBreakdown(e.to_string()))?;
        let ops = main_operators(&mesh, fault)?;
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let x = random_field(64, 2, &mut rng);
            worst = worst.max(max_rel_diff(&project(&ops, &x)?, &p.apply(&x)?));
        }
        Ok(worst)
    })();
    record("sparse_matches_dense_projector", 1e-8, sparse_vs_dense);

    let radial = (|| {
        let mesh = shapes::circle(64, 1.0)?;
        let ops = main_operators(&mesh, fault)?;
        let res = decompose(&ops, &AmbientField(mesh.reference_positions().to_vec()))?;
        Ok(res.x_mu.max_norm().max(res.pressure.0.iter().fold(0.0f64, |m, p| m.max((p + 1.0).abs()))))
    })();
    record("radial_field_pressure", 1e-10, radial);

    let fd_circle = (|| {
        let mesh = shapes::circle(128, 1.0)?;
        fd_density_derivative_check(&mesh, &AmbientField(mesh.reference_positions().to_vec()), 1e-5)
    })();
    record("fd_density_derivative_circle", 1e-6, fd_circle);

    let fd_sphere = (|| {
        let mesh = shapes::icosphere(2, 1.0)?;
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let x = random_field(mesh.n_vertices(), 3, &mut rng);
            worst = worst.max(fd_density_derivative_check(&mesh, &x, 1e-5)?);
        }
        Ok(worst)
    })();
    record("fd_density_derivative_icosphere", 1e-5, fd_sphere);

    let decomposition = (|| {
        let mesh = shapes::icosphere(2, 1.0)?;
        let ops = main_operators(&mesh, fault)?;
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let x = random_field(mesh.n_vertices(), 3, &mut rng);
            let res = decompose(&ops, &x)?;
            let scale = x.norm(ops.mass());
            worst = worst.max(res.constraint_residual_norm / scale).max(res.orthogonality_defect);
            let again = project(&ops, &res.x_mu)?;
            worst = worst.max(max_rel_diff(&again, &res.x_mu));
        }
        Ok(worst)
    })();
    record("decomposition_identities_icosphere", 1e-10, decomposition);

    let order = manufactured_with(1.0, 3, &[64, 128, 256, 512], fault)
        .and_then(|r| r.order.ok_or_else(|| MembraneError::SolverBreakdown("no order".into())))
        .map(|o| (o - 2.0).abs());
    record("manufactured_order_deviation_k3", 0.2, order);

    let exact_const = manufactured_with(1.0, 0, &[64, 128], fault)
        .map(|r| r.errors.iter().fold(0.0f64, |m, &e| m.max(e)));
    record("manufactured_constant_exact", 1e-10, exact_const);

    let rotation_pressure = (|| {
        let n = 256;
        let mesh = shapes::circle(n, 1.0)?;
        let ops = main_operators(&mesh, fault)?;
        let (x, v, p_ref) = rigid_rotation_reference(1.0, 1.0, 0.0, n);
        let a = AmbientField::from_fn(n, |i| -x[i]);
        let p = pressure_from_state(&LagrangianDensity::free(), &ops, &x, &v, &a)?;
        Ok((0..n).fold(0.0f64, |m, i| m.max((p.0[i] - p_ref.0[i]).abs() / p_ref.0[i])))
    })();
    record("rigid_rotation_pressure", 1e-2, rotation_pressure);

    let rotation_dynamics = (|| {
        let n = 64;
        let mesh = shapes::circle(n, 1.0)?;
        let (_, v, _) = rigid_rotation_reference(1.0, 1.0, 0.0, n);
        let opts = SimOptions { renormalize: false, ..Default::default() };
        let traj = run(&mesh, &v, &LagrangianDensity::free(), 0.05, 1e-3, 50, &opts)?;
        let last = traj.frames.last().expect("trajectory has frames");
        let (x_ref, _, _) = rigid_rotation_reference(1.0, 1.0, last.t, n);
        let pos_err = last.positions.iter().zip(&x_ref).fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        Ok(pos_err.max((last.diagnostics.pressure_mean - 1.0).abs() * 1e-2))
    })();
    record("rigid_rotation_trajectory", 1e-6, rotation_dynamics);

    let passed = checks.iter().all(|c| c.passed);
    CheckReport { passed, checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_step_jacobian_matches_geometry() {
        let mesh = shapes::icosphere(1, 1.0).unwrap();
        let (mass, jac) = mass_jacobian(&mesh, mesh.reference_positions());
        let cache = build_geometry(&mesh, mesh.reference_positions()).unwrap();
        for (a, b) in mass.iter().zip(cache.mass()) {
            assert!((a - b).abs() < 1e-14);
        }
        for a in 0..mesh.n_vertices() {
            for &(j, g) in cache.mass_gradient_row(a) {
                for c in 0..3 {
                    assert!((jac[(j, a * 3 + c)] - g[c]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn dense_projector_examples() {
        let mesh = shapes::circle(64, 1.0).unwrap();
        let p = dense_projector(&mesh, mesh.reference_positions()).unwrap();
        assert!(p.idempotence_error < 1e-9);
        assert!(p.symmetry_error < 1e-8);
        let radial = AmbientField(mesh.reference_positions().to_vec());
        assert!(p.apply(&radial).unwrap().max_norm() < 1e-10);
        let (_, rot, _) = rigid_rotation_reference(1.0, 1.0, 0.0, 64);
        assert!(p.apply(&rot).unwrap().add_scaled(-1.0, &rot).max_norm() < 1e-10);
    }

    #[test]
    fn fd_check_examples() {
        let mesh = shapes::circle(64, 1.0).unwrap();
        assert_eq!(fd_density_derivative_check(&mesh, &AmbientField::zeros(64), 1e-5).unwrap(), 0.0);
        assert!(fd_density_derivative_check(&mesh, &AmbientField::zeros(64), 1e-2).is_err());
    }

    #[test]
    fn rotation_reference_values() {
        let (_, v, p) = rigid_rotation_reference(1.0, 0.0, 3.0, 16);
        assert_eq!(v.max_norm(), 0.0);
        assert_eq!(p.max_abs(), 0.0);
        let (_, _, p) = rigid_rotation_reference(0.5, 2.0, 0.0, 16);
        assert!(p.0.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn suite_passes_and_detects_fault() {
        let clean = run_check_suite(None);
        for c in &clean.checks {
            assert!(c.passed, "{c:?}");
        }
        let faulty = run_check_suite(Some(Fault::HSign));
        assert!(!faulty.passed);
    }
}
