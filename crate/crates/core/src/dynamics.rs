//! Constrained time integration of the membrane Euler-Lagrange equations.
//!
//! The scheme is a RATTLE-type splitting with the pressure as Lagrange
//! multiplier:
//!
//! 1. `lambda_n` solves `A lambda = d^2 m[v, v] - B^T M F` so that the
//!    acceleration `F + B lambda` keeps the vertex weights stationary to
//!    second order;
//! 2. positions advance by `dt v + dt^2/2 (F + B lambda)`, optionally followed
//!    by a Newton correction along `range(B)` back onto `rho = 1`;
//! 3. the velocity is kicked with the force at the new positions and projected
//!    onto the admissible fields there; the projection multiplier gives the
//!    pressure at the new time.
//!
//! The scheme is second order, time reversible, and conserves energy without
//! secular drift.

use serde::{Deserialize, Serialize};

use crate::decomposition::{decompose_with, solve_elliptic, DecomposeOptions};
use crate::error::{MembraneError, Result};
use crate::field::{AmbientField, ScalarField, Vec3};
use crate::geometry::{build_geometry, vertex_mass, GeometryCache};
use crate::lagrangian::{el_force, LagrangianDensity};
use crate::mesh::EmbeddedMesh;
use crate::operators::{build_operators, OperatorSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    pub renormalize: bool,
    /// Required bound on `max |rho - 1|` after renormalization.
    pub vol_tol: f64,
    /// Newton stops once `max |rho - 1|` falls below this.
    pub newton_tol: f64,
    pub max_newton_iterations: usize,
    /// Required bound on the constraint residual of the velocity.
    pub tol_dyn: f64,
    #[serde(skip)]
    pub decompose: DecomposeOptions,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            renormalize: true,
            vol_tol: 1e-8,
            newton_tol: 1e-12,
            max_newton_iterations: 10,
            tol_dyn: 1e-9,
            decompose: DecomposeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `1/2 <v, v>` in the reference measure.
    pub kinetic_energy: f64,
    /// `<V(x), 1>` in the reference measure.
    pub potential_energy: f64,
    pub max_density_deviation: f64,
    pub constraint_residual: f64,
    pub pressure_min: f64,
    pub pressure_mean: f64,
    pub pressure_max: f64,
    pub min_mean_curvature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t: f64,
    pub step: usize,
    pub positions: Vec<Vec3>,
    pub velocity: AmbientField,
    pub pressure: ScalarField,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenormReport {
    /// Newton iterations performed (until `newton_tol` or the roundoff floor).
    pub iterations: usize,
    /// Iterations needed to first reach `max |rho - 1| <= vol_tol`.
    pub iterations_to_tolerance: usize,
    pub initial_deviation: f64,
    pub final_deviation: f64,
}

/// Integrator state together with the geometry of the current configuration.
pub struct Simulator<'a> {
    mesh: &'a EmbeddedMesh,
    lagrangian: &'a LagrangianDensity,
    opts: SimOptions,
    state: SimState,
    cache: GeometryCache,
    ops: OperatorSet,
    last_renorm: Option<RenormReport>,
}

/// Project `v0` onto the admissible fields of the reference configuration.
pub fn initialize(
    mesh: &EmbeddedMesh,
    v0: &AmbientField,
    lagrangian: &LagrangianDensity,
    opts: &SimOptions,
) -> Result<SimState> {
    Simulator::new(mesh, v0, lagrangian, *opts).map(|s| s.state)
}

/// One step from an arbitrary state. Rebuilds the geometry of `state`; use
/// [`Simulator`] to step repeatedly without that cost.
pub fn step(
    mesh: &EmbeddedMesh,
    state: &SimState,
    lagrangian: &LagrangianDensity,
    dt: f64,
    opts: &SimOptions,
) -> Result<SimState> {
    let mut sim = Simulator::from_state(mesh, state.clone(), lagrangian, *opts)?;
    sim.step(dt)?;
    Ok(sim.state)
}

impl<'a> Simulator<'a> {
    pub fn new(
        mesh: &'a EmbeddedMesh,
        v0: &AmbientField,
        lagrangian: &'a LagrangianDensity,
        opts: SimOptions,
    ) -> Result<Self> {
        let positions = mesh.reference_positions().to_vec();
        v0.check_len(mesh.n_vertices())?;
        let cache = build_geometry(mesh, &positions)?;
        let ops = build_operators(&cache, mesh)?;
        let velocity = decompose_with(&ops, v0, &opts.decompose)?.x_mu;
        let state = SimState {
            t: 0.0,
            step: 0,
            positions,
            velocity,
            pressure: ScalarField::zeros(mesh.n_vertices()),
            diagnostics: empty_diagnostics(),
        };
        let mut sim = Simulator { mesh, lagrangian, opts, state, cache, ops, last_renorm: None };
        sim.state.pressure = ScalarField(sim.multiplier()?.1);
        sim.refresh_diagnostics()?;
        Ok(sim)
    }

    pub fn from_state(
        mesh: &'a EmbeddedMesh,
        state: SimState,
        lagrangian: &'a LagrangianDensity,
        opts: SimOptions,
    ) -> Result<Self> {
        mesh.check_positions(&state.positions)?;
        state.velocity.check_len(mesh.n_vertices())?;
        state.pressure.check_len(mesh.n_vertices())?;
        let cache = build_geometry(mesh, &state.positions)?;
        let ops = build_operators(&cache, mesh)?;
        Ok(Simulator { mesh, lagrangian, opts, state, cache, ops, last_renorm: None })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn into_state(self) -> SimState {
        self.state
    }

    pub fn geometry(&self) -> &GeometryCache {
        &self.cache
    }

    pub fn operators(&self) -> &OperatorSet {
        &self.ops
    }

    /// Newton report of the last step, if renormalization ran.
    pub fn last_renormalization(&self) -> Option<RenormReport> {
        self.last_renorm
    }

    /// Force without the inertial term, `F = -E(x, v, 0)`.
    fn force(&self, v: &AmbientField) -> Result<AmbientField> {
        let zero = AmbientField::zeros(self.mesh.n_vertices());
        Ok(el_force(self.lagrangian, &self.state.positions, v, &zero)?.scaled(-1.0))
    }

    /// Force and the multiplier keeping the weights stationary to second order.
    fn multiplier(&self) -> Result<(AmbientField, Vec<f64>)> {
        let f = self.force(&self.state.velocity)?;
        let q = self.cache.mass_second_variation(&self.state.velocity)?;
        let btmf = self.ops.apply_bt_m(&f)?;
        let rhs: Vec<f64> = q.iter().zip(&btmf).map(|(a, b)| a - b).collect();
        self.ops.check_mean_curvature(self.opts.decompose.curvature == crate::decomposition::CurvaturePolicy::Strict)?;
        let q_max = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = self.ops.bt_m_roundoff(&f).max(16.0 * f64::EPSILON * q_max);
        let (lambda, _) = solve_elliptic(&self.ops, &rhs, floor, &self.opts.decompose)?;
        Ok((f, lambda))
    }

    pub fn step(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(MembraneError::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        let n = self.mesh.n_vertices();
        let (f, lambda) = self.multiplier()?;
        let accel = f.add_scaled(1.0, &self.ops.apply_b(&ScalarField(lambda))?);
        let mut v_half = self.state.velocity.add_scaled(0.5 * dt, &accel);
        let mut positions: Vec<Vec3> =
            (0..n).map(|i| self.state.positions[i] + v_half.0[i] * dt).collect();
        self.last_renorm = None;
        if self.opts.renormalize {
            let before = positions.clone();
            let report = renormalize_positions(self.mesh, &mut positions, &self.opts)?;
            for i in 0..n {
                v_half.0[i] += (positions[i] - before[i]) / dt;
            }
            self.last_renorm = Some(report);
        }
        self.cache = build_geometry(self.mesh, &positions)?;
        self.ops = build_operators(&self.cache, self.mesh)?;
        self.state.positions = positions;
        let f_new = self.force(&v_half)?;
        let v_star = v_half.add_scaled(0.5 * dt, &f_new);
        let split = decompose_with(&self.ops, &v_star, &self.opts.decompose)?;
        self.state.velocity = split.x_mu;
        self.state.pressure = split.pressure.scaled(-2.0 / dt);
        self.state.step += 1;
        self.state.t = self.state.step as f64 * dt;
        self.refresh_diagnostics()?;
        let c = self.state.diagnostics.constraint_residual;
        let scale = self.state.velocity.norm(self.mesh.reference_measure()).max(1.0);
        if !(c <= self.opts.tol_dyn * scale) {
            return Err(MembraneError::SolverBreakdown(format!(
                "velocity constraint residual {c:e} exceeds {:e}",
                self.opts.tol_dyn
            )));
        }
        if self.opts.renormalize && !(self.state.diagnostics.max_density_deviation <= self.opts.vol_tol) {
            return Err(MembraneError::RenormalizationDiverged(format!(
                "max |rho - 1| = {:e} after renormalization",
                self.state.diagnostics.max_density_deviation
            )));
        }
        Ok(())
    }

    /// Pull the current configuration back onto `rho = 1` and re-project the velocity.
    pub fn renormalize(&mut self) -> Result<RenormReport> {
        let mut positions = self.state.positions.clone();
        let report = renormalize_positions(self.mesh, &mut positions, &self.opts)?;
        self.cache = build_geometry(self.mesh, &positions)?;
        self.ops = build_operators(&self.cache, self.mesh)?;
        self.state.positions = positions;
        self.state.velocity = decompose_with(&self.ops, &self.state.velocity, &self.opts.decompose)?.x_mu;
        self.refresh_diagnostics()?;
        Ok(report)
    }

    fn refresh_diagnostics(&mut self) -> Result<()> {
        self.state.diagnostics = diagnostics(self.mesh, &self.cache, &self.ops, &self.state, self.lagrangian)?;
        Ok(())
    }
}

fn empty_diagnostics() -> Diagnostics {
    Diagnostics {
        kinetic_energy: 0.0,
        potential_energy: 0.0,
        max_density_deviation: 0.0,
        constraint_residual: 0.0,
        pressure_min: 0.0,
        pressure_mean: 0.0,
        pressure_max: 0.0,
        min_mean_curvature: 0.0,
    }
}

fn diagnostics(
    mesh: &EmbeddedMesh,
    cache: &GeometryCache,
    ops: &OperatorSet,
    state: &SimState,
    lagrangian: &LagrangianDensity,
) -> Result<Diagnostics> {
    let mu = mesh.reference_measure();
    let v = &state.velocity;
    let kinetic_energy = 0.5 * v.inner(v, mu);
    let potential_energy =
        (0..mu.len()).map(|i| mu[i] * lagrangian.potential(&state.positions[i])).sum::<f64>();
    let max_density_deviation = cache
        .mass()
        .iter()
        .zip(mu)
        .fold(0.0f64, |m, (a, b)| m.max((a / b - 1.0).abs()));
    let constraint_residual = ops.constraint_residual(v)?.norm(cache.mass());
    let (pressure_min, pressure_mean, pressure_max) = state.pressure.stats();
    Ok(Diagnostics {
        kinetic_energy,
        potential_energy,
        max_density_deviation,
        constraint_residual,
        pressure_min,
        pressure_mean,
        pressure_max,
        min_mean_curvature: cache.min_mean_curvature_norm(),
    })
}

/// Newton iteration `x <- x + B(q)`, `A q = m - mu`, with operators rebuilt at
/// each iterate. Converges quadratically inside its basin.
pub fn renormalize_positions(
    mesh: &EmbeddedMesh,
    positions: &mut [Vec3],
    opts: &SimOptions,
) -> Result<RenormReport> {
    let mu = mesh.reference_measure();
    let deviation = |m: &[f64]| m.iter().zip(mu).fold(0.0f64, |d, (a, b)| d.max((a / b - 1.0).abs()));
    let mut dev = deviation(&vertex_mass(mesh.topology(), positions)?);
    let initial = dev;
    let mut iterations = 0;
    let mut to_tolerance = None;
    loop {
        if dev <= opts.vol_tol && to_tolerance.is_none() {
            to_tolerance = Some(iterations);
        }
        if dev <= opts.newton_tol {
            break;
        }
        if !(dev < 0.5) {
            return Err(MembraneError::RenormalizationDiverged(format!(
                "max |rho - 1| = {dev:e} is outside the Newton basin"
            )));
        }
        if iterations == opts.max_newton_iterations {
            if dev <= opts.vol_tol {
                break;
            }
            return Err(MembraneError::RenormalizationDiverged(format!(
                "max |rho - 1| = {dev:e} after {iterations} Newton iterations"
            )));
        }
        let cache = build_geometry(mesh, positions)?;
        let ops = build_operators(&cache, mesh)?;
        let rhs: Vec<f64> = cache.mass().iter().zip(mu).map(|(m, u)| m - u).collect();
        let floor = 16.0 * f64::EPSILON * mu.iter().fold(0.0f64, |m, v| m.max(*v));
        let (q, _) = solve_elliptic(&ops, &rhs, floor, &opts.decompose)?;
        let dx = ops.apply_b(&ScalarField(q))?;
        for (p, d) in positions.iter_mut().zip(&dx.0) {
            *p += d;
        }
        iterations += 1;
        let next = deviation(&vertex_mass(mesh.topology(), positions)?);
        // Roundoff floor: further iterations cannot help.
        if next >= dev && next <= opts.vol_tol {
            dev = next;
            break;
        }
        dev = next;
    }
    Ok(RenormReport {
        iterations,
        iterations_to_tolerance: to_tolerance.unwrap_or(iterations),
        initial_deviation: initial,
        final_deviation: dev,
    })
}

/// Renormalize a state: positions back onto `rho = 1`, velocity re-projected.
pub fn renormalize_volume(
    mesh: &EmbeddedMesh,
    state: &SimState,
    lagrangian: &LagrangianDensity,
    opts: &SimOptions,
) -> Result<(SimState, RenormReport)> {
    let mut sim = Simulator::from_state(mesh, state.clone(), lagrangian, *opts)?;
    let report = sim.renormalize()?;
    Ok((sim.state, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub frames: Vec<SimState>,
}

/// Number of steps needed to reach `t_end`.
pub fn step_count(t_end: f64, dt: f64) -> usize {
    (t_end / dt - 1e-9).ceil().max(0.0) as usize
}

/// Integrate to `t_end`, handing every `stride`-th state (and the last) to `observe`.
pub fn run_with(
    mesh: &EmbeddedMesh,
    v0: &AmbientField,
    lagrangian: &LagrangianDensity,
    t_end: f64,
    dt: f64,
    stride: usize,
    opts: &SimOptions,
    mut observe: impl FnMut(&SimState) -> Result<()>,
) -> Result<SimState> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(MembraneError::InvalidInput(format!("t_end must be non-negative, got {t_end}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(MembraneError::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let stride = stride.max(1);
    let mut sim = Simulator::new(mesh, v0, lagrangian, *opts)?;
    observe(sim.state())?;
    let steps = step_count(t_end, dt);
    for k in 1..=steps {
        sim.step(dt)?;
        if k % stride == 0 || k == steps {
            observe(sim.state())?;
        }
    }
    Ok(sim.into_state())
}

pub fn run(
    mesh: &EmbeddedMesh,
    v0: &AmbientField,
    lagrangian: &LagrangianDensity,
    t_end: f64,
    dt: f64,
    stride: usize,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let mut frames = Vec::new();
    run_with(mesh, v0, lagrangian, t_end, dt, stride, opts, |s| {
        frames.push(s.clone());
        Ok(())
    })?;
    Ok(Trajectory { dt, frames })
}
