//! Lagrangian densities on the tangent bundle of flat ambient space and the
//! Euler-Lagrange force they induce along a moving membrane.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::decomposition::{decompose_with, DecomposeOptions};
use crate::error::Result;
use crate::exec;
use crate::field::{AmbientField, ScalarField, Vec3};
use crate::operators::OperatorSet;

/// Central difference step for first derivatives of custom densities.
pub const FD_STEP: f64 = 1e-6;
/// Step for the mixed second derivatives; larger to keep roundoff below truncation.
pub const FD_STEP_SECOND: f64 = 1e-4;

/// Ambient potential energy per unit measure.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Potential {
    #[default]
    None,
    /// `V(x) = g * <axis, x>`.
    Gravity { g: f64, axis: Vec3 },
}

impl Potential {
    pub fn value(&self, x: &Vec3) -> f64 {
        match self {
            Potential::None => 0.0,
            Potential::Gravity { g, axis } => g * axis.dot(x),
        }
    }

    pub fn gradient(&self, _x: &Vec3) -> Vec3 {
        match self {
            Potential::None => Vec3::zeros(),
            Potential::Gravity { g, axis } => axis * *g,
        }
    }
}

pub type DensityFn = Arc<dyn Fn(&Vec3, &Vec3) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum LagrangianKind {
    /// `L(x, v) = |v|^2 / 2 - V(x)`.
    KineticPotential(Potential),
    /// Any density given pointwise; derivatives are taken by finite differences.
    Custom(DensityFn),
}

impl fmt::Debug for LagrangianKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LagrangianKind::KineticPotential(p) => f.debug_tuple("KineticPotential").field(p).finish(),
            LagrangianKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LagrangianDensity {
    pub kind: LagrangianKind,
}

impl LagrangianDensity {
    pub fn kinetic(potential: Potential) -> Self {
        LagrangianDensity { kind: LagrangianKind::KineticPotential(potential) }
    }

    pub fn free() -> Self {
        Self::kinetic(Potential::None)
    }

    pub fn custom(f: impl Fn(&Vec3, &Vec3) -> f64 + Send + Sync + 'static) -> Self {
        LagrangianDensity { kind: LagrangianKind::Custom(Arc::new(f)) }
    }

    pub fn eval(&self, x: &Vec3, v: &Vec3) -> f64 {
        match &self.kind {
            LagrangianKind::KineticPotential(p) => 0.5 * v.norm_squared() - p.value(x),
            LagrangianKind::Custom(f) => f(x, v),
        }
    }

    /// Potential part `-L(x, 0)`.
    pub fn potential(&self, x: &Vec3) -> f64 {
        match &self.kind {
            LagrangianKind::KineticPotential(p) => p.value(x),
            LagrangianKind::Custom(f) => -f(x, &Vec3::zeros()),
        }
    }

    /// Vertical gradient, the partial derivative in `v`.
    pub fn grad_v(&self, x: &Vec3, v: &Vec3) -> Vec3 {
        match &self.kind {
            LagrangianKind::KineticPotential(_) => *v,
            LagrangianKind::Custom(f) => central_gradient(|dv| f(x, &(v + dv)), FD_STEP),
        }
    }

    /// Horizontal gradient, the partial derivative in `x` at fixed `v`.
    pub fn grad_h(&self, x: &Vec3, v: &Vec3) -> Vec3 {
        match &self.kind {
            LagrangianKind::KineticPotential(p) => -p.gradient(x),
            LagrangianKind::Custom(f) => central_gradient(|dx| f(&(x + dx), v), FD_STEP),
        }
    }

    /// `d/dt grad_v(x(t), v(t)) - grad_h(x, v)` for `x' = v`, `v' = a`.
    pub fn force_at(&self, x: &Vec3, v: &Vec3, a: &Vec3) -> Vec3 {
        match &self.kind {
            LagrangianKind::KineticPotential(p) => a + p.gradient(x),
            LagrangianKind::Custom(f) => {
                let dvv = mixed_derivative(|s, t| f(x, &(v + s + t)), a);
                let dxv = mixed_derivative(|s, t| f(&(x + t), &(v + s)), v);
                dvv + dxv - self.grad_h(x, v)
            }
        }
    }
}

fn central_gradient(f: impl Fn(Vec3) -> f64, h: f64) -> Vec3 {
    Vec3::from_fn(|k, _| {
        let e = Vec3::ith(k, h);
        (f(e) - f(-e)) / (2.0 * h)
    })
}

/// `sum_j d^2 f / (ds_k dt_j) * dir_j` for each `k`, the derivative of the
/// `s`-gradient along `dir` in the `t` slot.
fn mixed_derivative(f: impl Fn(Vec3, Vec3) -> f64, dir: &Vec3) -> Vec3 {
    let len = dir.norm();
    if len == 0.0 {
        return Vec3::zeros();
    }
    let h = FD_STEP_SECOND;
    let d = dir / len * h;
    Vec3::from_fn(|k, _| {
        let e = Vec3::ith(k, h);
        let v = f(e, d) - f(e, -d) - f(-e, d) + f(-e, -d);
        v / (4.0 * h * h) * len
    })
}

/// Euler-Lagrange force `E = d/dt[grad_v L] - grad_h L` at every vertex.
pub fn el_force(
    l: &LagrangianDensity,
    positions: &[Vec3],
    v: &AmbientField,
    a: &AmbientField,
) -> Result<AmbientField> {
    let n = positions.len();
    v.check_len(n)?;
    a.check_len(n)?;
    Ok(AmbientField(exec::map_indexed(n, |i| l.force_at(&positions[i], &v.0[i], &a.0[i]))))
}

/// Admissible part of the Euler-Lagrange force; vanishes along solutions.
pub fn el_residual(
    l: &LagrangianDensity,
    ops: &OperatorSet,
    positions: &[Vec3],
    v: &AmbientField,
    a: &AmbientField,
) -> Result<AmbientField> {
    let e = el_force(l, positions, v, a)?;
    Ok(decompose_with(ops, &e, &DecomposeOptions::default())?.x_mu)
}

/// Pressure carried by the Euler-Lagrange force: `E = X_mu + B p`.
pub fn pressure_from_state(
    l: &LagrangianDensity,
    ops: &OperatorSet,
    positions: &[Vec3],
    v: &AmbientField,
    a: &AmbientField,
) -> Result<ScalarField> {
    let e = el_force(l, positions, v, a)?;
    Ok(decompose_with(ops, &e, &DecomposeOptions::default())?.pressure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_geometry;
    use crate::operators::build_operators;
    use crate::shapes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng) -> Vec3 {
        Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn kinetic_gradients_are_exact() {
        let g = Potential::Gravity { g: 9.81, axis: Vec3::z() };
        let l = LagrangianDensity::kinetic(g);
        let (x, v) = (Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, -2.0, 0.5));
        assert_eq!(l.grad_v(&x, &v), v);
        assert_eq!(l.grad_h(&x, &v), Vec3::new(0.0, 0.0, -9.81));
        assert_eq!(l.force_at(&x, &v, &Vec3::zeros()), Vec3::new(0.0, 0.0, 9.81));
        let free = LagrangianDensity::free();
        let a = Vec3::new(0.3, 0.1, -0.7);
        assert_eq!(free.force_at(&x, &v, &a), a);
    }

    #[test]
    fn custom_kinetic_matches_analytic() {
        let custom = LagrangianDensity::custom(|_, v| 0.5 * v.norm_squared());
        let exact = LagrangianDensity::free();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (x, v, a) = (rand_vec(&mut rng), rand_vec(&mut rng), rand_vec(&mut rng));
            assert!((custom.grad_v(&x, &v) - exact.grad_v(&x, &v)).norm() < 1e-6);
            assert!((custom.grad_h(&x, &v) - exact.grad_h(&x, &v)).norm() < 1e-6);
            assert!((custom.force_at(&x, &v, &a) - exact.force_at(&x, &v, &a)).norm() < 1e-6);
        }
    }

    #[test]
    fn custom_gravity_matches_analytic() {
        let custom = LagrangianDensity::custom(|x, v| 0.5 * v.norm_squared() - 2.0 * x.y);
        let exact = LagrangianDensity::kinetic(Potential::Gravity { g: 2.0, axis: Vec3::y() });
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (x, v, a) = (rand_vec(&mut rng), rand_vec(&mut rng), rand_vec(&mut rng));
            assert!((custom.force_at(&x, &v, &a) - exact.force_at(&x, &v, &a)).norm() < 1e-6);
        }
    }

    #[test]
    fn velocity_dependent_custom_density() {
        // L = <x, v>^2 / 2: d/dt(<x,v> x) = (<v,v> + <x,a>) x + <x,v> v, grad_h = <x,v> v.
        let l = LagrangianDensity::custom(|x, v| 0.5 * x.dot(v).powi(2));
        let (x, v, a) = (Vec3::new(0.3, -0.2, 0.5), Vec3::new(0.7, 0.1, -0.4), Vec3::new(-0.2, 0.9, 0.3));
        let expected = x * (v.dot(&v) + x.dot(&a));
        assert!((l.force_at(&x, &v, &a) - expected).norm() < 1e-6);
    }

    #[test]
    fn legendre_consistency() {
        let l = LagrangianDensity::kinetic(Potential::Gravity { g: 1.0, axis: Vec3::x() });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (x, v, u) = (rand_vec(&mut rng), rand_vec(&mut rng), rand_vec(&mut rng));
            let h = 1e-5;
            let fd = (l.eval(&x, &(v + u * h)) - l.eval(&x, &(v - u * h))) / (2.0 * h);
            assert!((l.grad_v(&x, &v).dot(&u) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn rotating_circle_residual_and_pressure() {
        let n = 256;
        let mesh = shapes::circle(n, 1.0).unwrap();
        let c = build_geometry(&mesh, mesh.reference_positions()).unwrap();
        let ops = build_operators(&c, &mesh).unwrap();
        let x = c.positions();
        let v = AmbientField::from_fn(n, |i| Vec3::new(-x[i].y, x[i].x, 0.0));
        let a = AmbientField::from_fn(n, |i| -x[i]);
        let l = LagrangianDensity::free();
        let r = el_residual(&l, &ops, x, &v, &a).unwrap();
        assert!(r.norm(ops.mass()) < 5e-3);
        let p = pressure_from_state(&l, &ops, x, &v, &a).unwrap();
        assert!(p.0.iter().all(|&p| (p - 1.0).abs() < 1e-2));

        let zero = AmbientField::zeros(n);
        assert_eq!(el_residual(&l, &ops, x, &zero, &zero).unwrap().max_norm(), 0.0);
        let rad = AmbientField(x.to_vec());
        let p = pressure_from_state(&l, &ops, x, &zero, &rad).unwrap();
        assert!(p.0.iter().all(|&p| (p + 1.0).abs() < 1e-10));
    }

    #[test]
    fn residual_is_affine_in_acceleration() {
        let mesh = shapes::ellipse(80, 1.0, 0.7).unwrap();
        let c = build_geometry(&mesh, mesh.reference_positions()).unwrap();
        let ops = build_operators(&c, &mesh).unwrap();
        let l = LagrangianDensity::kinetic(Potential::Gravity { g: 3.0, axis: Vec3::y() });
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut planar = |_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
        let a1 = AmbientField((0..80).map(&mut planar).collect());
        let a2 = AmbientField((0..80).map(&mut planar).collect());
        let v = AmbientField::zeros(80);
        let x = c.positions();
        let r = |a: &AmbientField| el_residual(&l, &ops, x, &v, a).unwrap();
        let r0 = r(&AmbientField::zeros(80));
        let lhs = r(&a1.add_scaled(2.0, &a2)).add_scaled(-1.0, &r0);
        let rhs = r(&a1).add_scaled(-1.0, &r0).add_scaled(2.0, &r(&a2).add_scaled(-1.0, &r0));
        assert!(lhs.add_scaled(-1.0, &rhs).max_norm() < 1e-10);
        assert!(r0.max_norm() > 1e-3, "gravity is not a pure pressure field");
    }
}
