use approx::assert_abs_diff_eq;
use membrane::geometry::vertex_mass;
use membrane::{
    build_geometry, build_operators, decompose, decompose_batch, oracle, project, shapes, AmbientField, EmbeddedMesh,
    OperatorSet, ScalarField, Vec3,
};
use proptest::prelude::*;

/// A closed curve or a sphere with radially jittered vertices.
fn jittered_mesh(surface: bool, n: usize, jitter: &[f64]) -> EmbeddedMesh {
    if surface {
        let (pos, tris) = shapes::icosphere_data(1, 1.0);
        let pos = pos
            .iter()
            .enumerate()
            .map(|(i, p)| p * (1.0 + 0.1 * jitter[i % jitter.len()]))
            .collect();
        EmbeddedMesh::surface(pos, tris).unwrap()
    } else {
        let pos = shapes::circle_positions(n, 1.0)
            .iter()
            .enumerate()
            .map(|(i, p)| p * (1.0 + 0.1 * jitter[i % jitter.len()]))
            .collect();
        EmbeddedMesh::curve(pos, 2).unwrap()
    }
}

fn field(mesh: &EmbeddedMesh, coeffs: &[f64]) -> AmbientField {
    let planar = mesh.ambient_dim() == 2;
    AmbientField::from_fn(mesh.n_vertices(), |i| {
        let c = |k: usize| coeffs[(3 * i + k) % coeffs.len()];
        Vec3::new(c(0), c(1), if planar { 0.0 } else { c(2) })
    })
}

fn ops(mesh: &EmbeddedMesh) -> OperatorSet {
    build_operators(&build_geometry(mesh, mesh.reference_positions()).unwrap(), mesh).unwrap()
}

fn max_diff(a: &AmbientField, b: &AmbientField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn mesh_strategy() -> impl Strategy<Value = EmbeddedMesh> {
    (any::<bool>(), 12usize..80, prop::collection::vec(-1.0f64..1.0, 1..40))
        .prop_map(|(surface, n, jitter)| jittered_mesh(surface, n, &jitter))
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 7..64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_linear(mesh in mesh_strategy(), cx in coeffs(), cy in coeffs(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let ops = ops(&mesh);
        let (x, y) = (field(&mesh, &cx), field(&mesh, &cy));
        let combined = project(&ops, &x.scaled(a).add_scaled(b, &y)).unwrap();
        let separate = project(&ops, &x).unwrap().scaled(a).add_scaled(b, &project(&ops, &y).unwrap());
        prop_assert!(max_diff(&combined, &separate) < 1e-10 * (1.0 + x.max_norm() + y.max_norm()));
    }

    #[test]
    fn projection_is_idempotent(mesh in mesh_strategy(), c in coeffs()) {
        let ops = ops(&mesh);
        let once = project(&ops, &field(&mesh, &c)).unwrap();
        let twice = project(&ops, &once).unwrap();
        prop_assert!(max_diff(&once, &twice) < 1e-10 * (1.0 + once.max_norm()));
    }

    #[test]
    fn decomposition_is_orthogonal_and_reconstructs(mesh in mesh_strategy(), c in coeffs()) {
        let ops = ops(&mesh);
        let x = field(&mesh, &c);
        let res = decompose(&ops, &x).unwrap();
        let bp = ops.apply_b(&res.pressure).unwrap();
        let inner = res.x_mu.inner(&bp, ops.mass());
        let scale = res.x_mu.norm(ops.mass()) * bp.norm(ops.mass()) + 1e-300;
        prop_assert!(inner.abs() / scale < 1e-10 || bp.norm(ops.mass()) < 1e-12);
        let rebuilt = res.x_mu.add_scaled(1.0, &bp);
        let recon = max_diff(&rebuilt, &x);
        prop_assert!(recon < 1e-12 * (1.0 + x.max_norm()), "reconstruction {recon}, |Bp| {}", bp.max_norm());
        prop_assert!(ops.constraint_residual(&res.x_mu).unwrap().max_abs() < 1e-9 * (1.0 + x.max_norm()));
    }

    #[test]
    fn gradient_and_divergence_are_adjoint(mesh in mesh_strategy(), c in coeffs(), s in coeffs()) {
        let ops = ops(&mesh);
        let x = field(&mesh, &c);
        let p = ScalarField::from_fn(mesh.n_vertices(), |i| s[i % s.len()]);
        let lhs = ops.gradient(&p).unwrap().inner(&x, ops.mass());
        let rhs = -ops.divergence(&x).unwrap().inner(&p, ops.mass());
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-11 * (1.0 + lhs.abs()));
    }

    #[test]
    fn density_derivative_matches_finite_differences(mesh in mesh_strategy(), c in coeffs()) {
        let err = oracle::fd_density_derivative_check(&mesh, &field(&mesh, &c), 1e-6).unwrap();
        prop_assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn mass_second_variation_matches_finite_differences(mesh in mesh_strategy(), c in coeffs()) {
        let x0 = mesh.reference_positions();
        let v = field(&mesh, &c);
        let geo = build_geometry(&mesh, x0).unwrap();
        let exact = geo.mass_second_variation(&v).unwrap();
        let eps = 1e-4;
        let shifted = |s: f64| -> Vec<f64> {
            let pos: Vec<Vec3> = x0.iter().zip(v.values()).map(|(p, d)| p + s * d).collect();
            vertex_mass(mesh.topology(), &pos).unwrap()
        };
        let (plus, minus) = (shifted(eps), shifted(-eps));
        let scale = exact.iter().fold(1.0f64, |m, q| m.max(q.abs()));
        for (j, q) in exact.iter().enumerate() {
            let fd = (plus[j] - 2.0 * geo.mass()[j] + minus[j]) / (eps * eps);
            prop_assert!((fd - q).abs() < 1e-4 * scale, "vertex {j}: fd {fd}, exact {q}");
        }
    }

    #[test]
    fn batch_matches_individual_decompositions(mesh in mesh_strategy(), c in coeffs()) {
        let ops = ops(&mesh);
        let fields: Vec<AmbientField> = (1..4).map(|k| field(&mesh, &c).scaled(k as f64)).collect();
        let batch = decompose_batch(&ops, &fields, &Default::default()).unwrap();
        for (f, r) in fields.iter().zip(&batch) {
            let single = decompose(&ops, f).unwrap();
            prop_assert_eq!(&single.x_mu, &r.x_mu);
            prop_assert_eq!(&single.pressure, &r.pressure);
        }
    }
}

#[test]
fn icosphere_is_outward_oriented() {
    let mesh = shapes::icosphere(2, 1.0).unwrap();
    let geo = build_geometry(&mesh, mesh.reference_positions()).unwrap();
    // H points inward on a convex closed surface, and the signed volume is positive.
    let inward = geo
        .mean_curvature()
        .iter()
        .zip(mesh.reference_positions())
        .all(|(h, p)| h.dot(p) < 0.0);
    assert!(inward);
    let volume: f64 = mesh
        .triangles()
        .iter()
        .map(|t| {
            let p = mesh.reference_positions();
            p[t[0]].dot(&p[t[1]].cross(&p[t[2]])) / 6.0
        })
        .sum();
    assert!(volume > 0.0);
}
