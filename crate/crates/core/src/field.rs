//! Per-vertex scalar and vector fields.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{MembraneError, Result};
use crate::exec;

/// Ambient vector. Planar problems keep the third component at zero.
pub type Vec3 = Vector3<f64>;

/// One ambient vector per vertex: a discrete section of the pulled-back tangent bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbientField(pub Vec<Vec3>);

/// One real value per vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField(pub Vec<f64>);

impl AmbientField {
    pub fn zeros(n: usize) -> Self {
        AmbientField(vec![Vec3::zeros(); n])
    }

    pub fn constant(n: usize, v: Vec3) -> Self {
        AmbientField(vec![v; n])
    }

    pub fn from_fn(n: usize, f: impl Fn(usize) -> Vec3 + Sync + Send) -> Self {
        AmbientField(exec::map_indexed(n, f))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[Vec3] {
        &self.0
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.0.len() != n {
            return Err(MembraneError::ShapeMismatch { expected: n, got: self.0.len() });
        }
        Ok(())
    }

    /// `self + alpha * other`
    pub fn add_scaled(&self, alpha: f64, other: &AmbientField) -> AmbientField {
        AmbientField::from_fn(self.len(), |i| self.0[i] + other.0[i] * alpha)
    }

    pub fn scaled(&self, alpha: f64) -> AmbientField {
        AmbientField::from_fn(self.len(), |i| self.0[i] * alpha)
    }

    /// Mass-weighted inner product `sum_i m_i <x_i, y_i>`.
    pub fn inner(&self, other: &AmbientField, mass: &[f64]) -> f64 {
        exec::sum_indexed(self.len(), |i| mass[i] * self.0[i].dot(&other.0[i]))
    }

    /// Mass-weighted L2 norm.
    pub fn norm(&self, mass: &[f64]) -> f64 {
        self.inner(self, mass).sqrt()
    }

    /// Largest per-vertex Euclidean length.
    pub fn max_norm(&self) -> f64 {
        exec::max_indexed(self.len(), |i| self.0[i].norm())
    }
}

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        ScalarField(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        ScalarField(vec![c; n])
    }

    pub fn from_fn(n: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> Self {
        ScalarField(exec::map_indexed(n, f))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.0.len() != n {
            return Err(MembraneError::ShapeMismatch { expected: n, got: self.0.len() });
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> ScalarField {
        ScalarField(self.0.iter().map(|v| alpha * v).collect())
    }

    pub fn inner(&self, other: &ScalarField, mass: &[f64]) -> f64 {
        exec::sum_indexed(self.len(), |i| mass[i] * self.0[i] * other.0[i])
    }

    pub fn norm(&self, mass: &[f64]) -> f64 {
        self.inner(self, mass).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        exec::max_indexed(self.len(), |i| self.0[i].abs())
    }

    /// (min, mean, max); the mean is unweighted.
    pub fn stats(&self) -> (f64, f64, f64) {
        if self.0.is_empty() {
            return (0.0, 0.0, 0.0);
        }
        let min = self.0.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = exec::sum_indexed(self.len(), |i| self.0[i]) / self.len() as f64;
        (min, mean, max)
    }
}
