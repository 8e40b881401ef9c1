//! Decomposition of an ambient field into an admissible part and a pressure
//! gradient: `X = X_mu + B p` with `B^T M X_mu = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{MembraneError, Result};
use crate::exec;
use crate::field::{AmbientField, ScalarField};
use crate::operators::OperatorSet;
use crate::sparse::conjugate_gradient;

/// Above this many vertices `Auto` switches from the direct to the iterative solver.
pub const DIRECT_LIMIT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Auto,
    Direct,
    Cg,
}

/// When the solvability hypothesis is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurvaturePolicy {
    /// Every connected component must have a non-flat vertex.
    #[default]
    PerComponent,
    /// Every vertex must be non-flat.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposeOptions {
    pub solver: SolverKind,
    pub curvature: CurvaturePolicy,
    /// Relative residual target of the iterative solver.
    pub cg_tol: f64,
    /// Iteration cap of the iterative solver as a multiple of the vertex count.
    pub cg_max_iter_factor: usize,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions {
            solver: SolverKind::Auto,
            curvature: CurvaturePolicy::PerComponent,
            cg_tol: 1e-12,
            cg_max_iter_factor: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub x_mu: AmbientField,
    pub pressure: ScalarField,
    /// Mass-weighted norm of `c(X_mu)`.
    pub constraint_residual_norm: f64,
    /// `|<X_mu, B p>_M| / (|X|_M |B p|_M)`.
    pub orthogonality_defect: f64,
    /// Iterations of the linear solver (refinement rounds for the direct solver).
    pub solver_iterations: usize,
}

/// Decompose with default options.
pub fn decompose(ops: &OperatorSet, x: &AmbientField) -> Result<DecompositionResult> {
    decompose_with(ops, x, &DecomposeOptions::default())
}

pub fn decompose_with(
    ops: &OperatorSet,
    x: &AmbientField,
    opts: &DecomposeOptions,
) -> Result<DecompositionResult> {
    x.check_len(ops.n())?;
    if let Some(i) = x.0.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(MembraneError::InvalidInput(format!("field value at vertex {i} is not finite")));
    }
    ops.check_mean_curvature(opts.curvature == CurvaturePolicy::Strict)?;
    let rhs = ops.apply_bt_m(x)?;
    let (p, iterations) = solve_elliptic(ops, &rhs, ops.bt_m_roundoff(x), opts)?;
    let pressure = ScalarField(p);
    let bp = ops.apply_b(&pressure)?;
    let x_mu = x.add_scaled(-1.0, &bp);
    let mass = ops.mass();
    let constraint_residual_norm = ops.constraint_residual(&x_mu)?.norm(mass);
    let denom = x.norm(mass) * bp.norm(mass);
    let orthogonality_defect = if denom > 0.0 { x_mu.inner(&bp, mass).abs() / denom } else { 0.0 };
    Ok(DecompositionResult {
        x_mu,
        pressure,
        constraint_residual_norm,
        orthogonality_defect,
        solver_iterations: iterations,
    })
}

/// Solve `A p = rhs` for the minimum-norm pressure. `rhs` must be
/// orthogonal to the gauge modes, which holds for any `B^T M X`. `floor` is
/// the roundoff level of `rhs` (max norm); a right-hand side below it is
/// treated as zero and residuals below it count as converged.
pub(crate) fn solve_elliptic(
    ops: &OperatorSet,
    rhs: &[f64],
    floor: f64,
    opts: &DecomposeOptions,
) -> Result<(Vec<f64>, usize)> {
    let n = ops.n();
    let direct = match opts.solver {
        SolverKind::Auto => n <= DIRECT_LIMIT,
        SolverKind::Direct => true,
        SolverKind::Cg => false,
    };
    let a = ops.elliptic();
    let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale <= floor {
        return Ok((vec![0.0; n], 0));
    }
    let (mut p, iterations) = if direct {
        let factor = ops.factorization()?;
        let mut p = factor.solve(rhs);
        let mut rounds = 0;
        // Iterative refinement recovers the digits lost to pivot growth.
        for _ in 0..2 {
            let ap = a.mul_vec(&p);
            let r: Vec<f64> = rhs.iter().zip(&ap).map(|(b, x)| b - x).collect();
            let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if rmax <= (1e-15 * scale).max(floor) {
                break;
            }
            let d = factor.solve(&r);
            for (pi, di) in p.iter_mut().zip(&d) {
                *pi += di;
            }
            rounds += 1;
        }
        (p, rounds)
    } else {
        let abs_tol = floor * (n as f64).sqrt();
        let sol = conjugate_gradient(a, rhs, opts.cg_tol, abs_tol, opts.cg_max_iter_factor.max(1) * n)?;
        (sol.x, sol.iterations)
    };
    if p.iter().any(|v| !v.is_finite()) {
        return Err(MembraneError::SolverBreakdown("pressure solve produced non-finite values".into()));
    }
    ops.remove_gauge(&mut p);
    Ok((p, iterations))
}

/// The admissible part `X_mu` only.
pub fn project(ops: &OperatorSet, x: &AmbientField) -> Result<AmbientField> {
    decompose(ops, x).map(|r| r.x_mu)
}

/// Decompose many fields against the same operators, in parallel over fields
/// when the `parallel` feature is on. Results are in input order.
pub fn decompose_batch(
    ops: &OperatorSet,
    fields: &[AmbientField],
    opts: &DecomposeOptions,
) -> Result<Vec<DecompositionResult>> {
    // Factor once up front so the workers share it.
    if fields.is_empty() {
        return Ok(Vec::new());
    }
    ops.check_mean_curvature(opts.curvature == CurvaturePolicy::Strict)?;
    if opts.solver != SolverKind::Cg && ops.n() <= DIRECT_LIMIT {
        ops.factorization()?;
    }
    exec::map_slice(fields, |x| decompose_with(ops, x, opts)).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Vec3;
    use crate::geometry::build_geometry;
    use crate::operators::build_operators;
    use crate::shapes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ops_for(mesh: &crate::mesh::EmbeddedMesh) -> OperatorSet {
        let c = build_geometry(mesh, mesh.reference_positions()).unwrap();
        build_operators(&c, mesh).unwrap()
    }

    fn random_field(n: usize, planar: bool, seed: u64) -> AmbientField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AmbientField(
            (0..n)
                .map(|_| {
                    let z = if planar { 0.0 } else { rng.gen_range(-1.0..1.0) };
                    Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), z)
                })
                .collect(),
        )
    }

    #[test]
    fn radial_field_on_circle() {
        let n = 128;
        let mesh = shapes::circle(n, 1.0).unwrap();
        let ops = ops_for(&mesh);
        let x = AmbientField(mesh.reference_positions().to_vec());
        let r = decompose(&ops, &x).unwrap();
        assert!(r.x_mu.max_norm() < 1e-10);
        for &p in &r.pressure.0 {
            assert!((p + 1.0).abs() < 1e-10, "{p}");
        }
    }

    #[test]
    fn translation_is_admissible() {
        let mesh = shapes::ellipse(97, 1.2, 0.7).unwrap();
        let ops = ops_for(&mesh);
        let x = AmbientField::constant(97, Vec3::new(0.3, -0.4, 0.0));
        let r = decompose(&ops, &x).unwrap();
        assert!((r.x_mu.add_scaled(-1.0, &x)).max_norm() < 1e-10);
        assert!(r.pressure.max_abs() < 1e-10);
    }

    #[test]
    fn zero_field() {
        let mesh = shapes::icosphere(1, 1.0).unwrap();
        let ops = ops_for(&mesh);
        let r = decompose(&ops, &AmbientField::zeros(ops.n())).unwrap();
        assert_eq!(r.x_mu.max_norm(), 0.0);
        assert_eq!(r.pressure.max_abs(), 0.0);
    }

    #[test]
    fn direct_and_cg_agree() {
        for (mesh, planar) in [
            (shapes::circle(200, 1.0).unwrap(), true),
            (shapes::icosphere(2, 1.0).unwrap(), false),
        ] {
            let ops = ops_for(&mesh);
            let x = random_field(ops.n(), planar, 11);
            let mk = |s| DecomposeOptions { solver: s, ..Default::default() };
            let d = decompose_with(&ops, &x, &mk(SolverKind::Direct)).unwrap();
            let c = decompose_with(&ops, &x, &mk(SolverKind::Cg)).unwrap();
            let diff = ScalarField::from_fn(ops.n(), |i| d.pressure.0[i] - c.pressure.0[i]);
            assert!(diff.max_abs() < 1e-8 * (1.0 + d.pressure.max_abs()), "{}", diff.max_abs());
            assert!(d.constraint_residual_norm < 1e-10);
            assert!(c.constraint_residual_norm < 1e-9);
        }
    }

    #[test]
    fn gauge_mode_removed_from_pressure() {
        let mesh = shapes::circle(64, 1.0).unwrap();
        let ops = ops_for(&mesh);
        let x = random_field(64, true, 5);
        let r = decompose(&ops, &x).unwrap();
        let g = &ops.gauge_modes()[0];
        let c: f64 = (0..64).map(|i| ops.mass()[i] * g[i] * r.pressure.0[i]).sum();
        assert!(c.abs() < 1e-12);
        assert!(r.constraint_residual_norm < 1e-10);
    }

    #[test]
    fn flat_input_is_rejected() {
        let mesh = shapes::circle(32, 1.0).unwrap();
        let ops = ops_for(&mesh).with_mean_curvature(vec![Vec3::zeros(); 32]).unwrap();
        let e = decompose(&ops, &AmbientField::zeros(32)).unwrap_err();
        assert_eq!(e.name(), "MeanCurvatureVanishing");
    }

    #[test]
    fn shape_mismatch_and_nan_are_input_errors() {
        let mesh = shapes::circle(32, 1.0).unwrap();
        let ops = ops_for(&mesh);
        assert!(decompose(&ops, &AmbientField::zeros(31)).unwrap_err().is_input_error());
        let mut x = AmbientField::zeros(32);
        x.0[3].x = f64::NAN;
        assert!(decompose(&ops, &x).unwrap_err().is_input_error());
    }

    #[test]
    fn batch_matches_sequential() {
        let mesh = shapes::icosphere(2, 1.0).unwrap();
        let ops = ops_for(&mesh);
        let fields: Vec<_> = (0..6).map(|s| random_field(ops.n(), false, s)).collect();
        let opts = DecomposeOptions::default();
        let batch = decompose_batch(&ops, &fields, &opts).unwrap();
        for (x, b) in fields.iter().zip(&batch) {
            assert_eq!(&decompose_with(&ops, x, &opts).unwrap(), b);
        }
    }
}
