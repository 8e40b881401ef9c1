//! Simulation scenario configuration (JSON).

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::decomposition::{CurvaturePolicy, DecomposeOptions, SolverKind};
use crate::dynamics::SimOptions;
use crate::error::{MembraneError, Result};
use crate::field::{AmbientField, Vec3};
use crate::io;
use crate::lagrangian::{LagrangianDensity, Potential};
use crate::mesh::EmbeddedMesh;
use crate::shapes;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MeshSpec {
    File { file: PathBuf },
    Generator(Generator),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    Circle { vertices: usize, #[serde(default = "one")] radius: f64 },
    Ellipse { vertices: usize, a: f64, b: f64 },
    Icosphere { subdivisions: usize, #[serde(default = "one")] radius: f64 },
    SpaceCurve { vertices: usize },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocitySpec {
    Zero,
    /// `v = omega * axis x position`.
    Rotation { omega: f64, #[serde(default)] axis: Option<Vec<f64>> },
    Translation { velocity: Vec<f64> },
    File { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    None,
    Gravity { g: f64, axis: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LagrangianSpec {
    Kinetic {
        #[serde(default)]
        potential: Option<PotentialSpec>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub vol_tol: f64,
    pub tol_dyn: f64,
    pub newton_tol: f64,
    pub cg_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let s = SimOptions::default();
        Tolerances {
            vol_tol: s.vol_tol,
            tol_dyn: s.tol_dyn,
            newton_tol: s.newton_tol,
            cg_tol: s.decompose.cg_tol,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mesh: MeshSpec,
    #[serde(default = "zero_velocity")]
    pub velocity: VelocitySpec,
    #[serde(default = "free_lagrangian")]
    pub lagrangian: LagrangianSpec,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "one_usize")]
    pub output_stride: usize,
    #[serde(default = "yes")]
    pub renormalize: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub solver: SolverKind,
}

fn zero_velocity() -> VelocitySpec {
    VelocitySpec::Zero
}

fn free_lagrangian() -> LagrangianSpec {
    LagrangianSpec::Kinetic { potential: None }
}

fn one_usize() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// A validated scenario with every input materialized.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub mesh: EmbeddedMesh,
    pub v0: AmbientField,
    pub lagrangian: LagrangianDensity,
    pub options: SimOptions,
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> MembraneError {
    MembraneError::InvalidInput(format!("config field `{field}` {msg}"))
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field_error(field, format!("must be positive and finite, got {v}")))
    }
}

fn vector(field: &str, v: &[f64]) -> Result<Vec3> {
    if !(v.len() == 2 || v.len() == 3) || v.iter().any(|c| !c.is_finite()) {
        return Err(field_error(field, "must be a finite vector with 2 or 3 components"));
    }
    Ok(Vec3::new(v[0], v[1], v.get(2).copied().unwrap_or(0.0)))
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| MembraneError::InvalidInput(format!("config: {e}")))
    }

    /// Check scalar settings; names the offending field on failure.
    pub fn validate(&self) -> Result<()> {
        positive("dt", self.dt)?;
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(field_error("t_end", format!("must be non-negative and finite, got {}", self.t_end)));
        }
        if self.output_stride == 0 {
            return Err(field_error("output_stride", "must be at least 1"));
        }
        positive("tolerances.vol_tol", self.tolerances.vol_tol)?;
        positive("tolerances.tol_dyn", self.tolerances.tol_dyn)?;
        positive("tolerances.newton_tol", self.tolerances.newton_tol)?;
        positive("tolerances.cg_tol", self.tolerances.cg_tol)?;
        if let MeshSpec::Generator(g) = &self.mesh {
            match *g {
                Generator::Circle { vertices, radius } => {
                    min_vertices(vertices)?;
                    positive("mesh.radius", radius)?;
                }
                Generator::Ellipse { vertices, a, b } => {
                    min_vertices(vertices)?;
                    positive("mesh.a", a)?;
                    positive("mesh.b", b)?;
                }
                Generator::Icosphere { subdivisions, radius } => {
                    if subdivisions > 7 {
                        return Err(field_error("mesh.subdivisions", "must be at most 7"));
                    }
                    positive("mesh.radius", radius)?;
                }
                Generator::SpaceCurve { vertices } => min_vertices(vertices)?,
            }
        }
        match &self.velocity {
            VelocitySpec::Rotation { omega, axis } => {
                if !omega.is_finite() {
                    return Err(field_error("velocity.omega", "must be finite"));
                }
                if let Some(a) = axis {
                    if vector("velocity.axis", a)?.norm() == 0.0 {
                        return Err(field_error("velocity.axis", "must be non-zero"));
                    }
                }
            }
            VelocitySpec::Translation { velocity } => {
                vector("velocity.velocity", velocity)?;
            }
            VelocitySpec::Zero | VelocitySpec::File { .. } => {}
        }
        let LagrangianSpec::Kinetic { potential } = &self.lagrangian;
        if let Some(PotentialSpec::Gravity { g, axis }) = potential {
            if !g.is_finite() {
                return Err(field_error("lagrangian.potential.g", "must be finite"));
            }
            if vector("lagrangian.potential.axis", axis)?.norm() == 0.0 {
                return Err(field_error("lagrangian.potential.axis", "must be non-zero"));
            }
        }
        Ok(())
    }

    pub fn options(&self) -> SimOptions {
        SimOptions {
            renormalize: self.renormalize,
            vol_tol: self.tolerances.vol_tol,
            newton_tol: self.tolerances.newton_tol,
            tol_dyn: self.tolerances.tol_dyn,
            max_newton_iterations: SimOptions::default().max_newton_iterations,
            decompose: DecomposeOptions {
                solver: self.solver,
                curvature: if self.strict { CurvaturePolicy::Strict } else { CurvaturePolicy::PerComponent },
                cg_tol: self.tolerances.cg_tol,
                ..DecomposeOptions::default()
            },
        }
    }

    pub fn lagrangian_density(&self) -> LagrangianDensity {
        let LagrangianSpec::Kinetic { potential } = &self.lagrangian;
        let potential = match potential {
            None | Some(PotentialSpec::None) => Potential::None,
            Some(PotentialSpec::Gravity { g, axis }) => {
                let a = Vec3::new(axis[0], axis[1], axis.get(2).copied().unwrap_or(0.0));
                Potential::Gravity { g: *g, axis: a.normalize() }
            }
        };
        LagrangianDensity::kinetic(potential)
    }

    /// Build the mesh and initial velocity; relative paths resolve against `base`.
    pub fn materialize(self, base: &Path) -> Result<Scenario> {
        self.validate()?;
        let mesh = match &self.mesh {
            MeshSpec::File { file } => io::load_mesh(&base.join(file))?,
            MeshSpec::Generator(g) => match *g {
                Generator::Circle { vertices, radius } => shapes::circle(vertices, radius)?,
                Generator::Ellipse { vertices, a, b } => shapes::ellipse(vertices, a, b)?,
                Generator::Icosphere { subdivisions, radius } => shapes::icosphere(subdivisions, radius)?,
                Generator::SpaceCurve { vertices } => shapes::trefoil_like(vertices)?,
            },
        };
        let n = mesh.n_vertices();
        let planar = mesh.ambient_dim() == 2;
        let x = mesh.reference_positions();
        let v0 = match &self.velocity {
            VelocitySpec::Zero => AmbientField::zeros(n),
            VelocitySpec::Rotation { omega, axis } => {
                let axis = match axis {
                    Some(a) => vector("velocity.axis", a)?.normalize(),
                    None => Vec3::z(),
                };
                if planar && (axis.x != 0.0 || axis.y != 0.0) {
                    return Err(field_error("velocity.axis", "must be the z axis for a planar curve"));
                }
                AmbientField::from_fn(n, |i| axis.cross(&x[i]) * *omega)
            }
            VelocitySpec::Translation { velocity } => {
                let v = vector("velocity.velocity", velocity)?;
                if planar && v.z != 0.0 {
                    return Err(field_error("velocity.velocity", "must lie in the plane of a planar curve"));
                }
                AmbientField::constant(n, v)
            }
            VelocitySpec::File { path } => io::load_field(&base.join(path), &mesh)?,
        };
        let lagrangian = self.lagrangian_density();
        if let crate::lagrangian::LagrangianKind::KineticPotential(Potential::Gravity { axis, .. }) = &lagrangian.kind {
            if planar && axis.z != 0.0 {
                return Err(field_error("lagrangian.potential.axis", "must lie in the plane of a planar curve"));
            }
        }
        let options = self.options();
        Ok(Scenario { config: self, mesh, v0, lagrangian, options })
    }
}

fn min_vertices(v: usize) -> Result<()> {
    if v < 4 {
        return Err(field_error("mesh.vertices", format!("must be at least 4, got {v}")));
    }
    Ok(())
}
