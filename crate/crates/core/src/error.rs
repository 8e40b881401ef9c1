use thiserror::Error;

/// Errors raised by geometry construction, the solvers and the time integrator.
#[derive(Debug, Error)]
pub enum MembraneError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("non-manifold surface: {0}")]
    NonManifold(String),

    #[error("mean curvature vanishes: {0}")]
    MeanCurvatureVanishing(String),

    #[error("solver breakdown: {0}")]
    SolverBreakdown(String),

    #[error("volume renormalization diverged: {0}")]
    RenormalizationDiverged(String),

    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MembraneError {
    /// Stable variant name, used in CLI error messages.
    pub fn name(&self) -> &'static str {
        match self {
            MembraneError::DegenerateGeometry(_) => "DegenerateGeometry",
            MembraneError::NonManifold(_) => "NonManifold",
            MembraneError::MeanCurvatureVanishing(_) => "MeanCurvatureVanishing",
            MembraneError::SolverBreakdown(_) => "SolverBreakdown",
            MembraneError::RenormalizationDiverged(_) => "RenormalizationDiverged",
            MembraneError::ShapeMismatch { .. } => "ShapeMismatch",
            MembraneError::InvalidInput(_) => "InvalidInput",
            MembraneError::Io(_) => "Io",
            MembraneError::Json(_) => "Json",
        }
    }

    /// True for errors caused by malformed input rather than by the computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            MembraneError::InvalidInput(_)
                | MembraneError::Io(_)
                | MembraneError::Json(_)
                | MembraneError::NonManifold(_)
                | MembraneError::ShapeMismatch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, MembraneError>;
