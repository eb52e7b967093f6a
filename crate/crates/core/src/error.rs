use thiserror::Error;

pub type Result<T, E = LdtError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LdtError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation diverged{}: {detail}", experiment_suffix(*.experiment))]
    SimulationDiverged { experiment: Option<usize>, detail: String },

    #[error("singular coupling matrix at phi = {phi}")]
    SingularCoupling { phi: f64 },

    #[error("identification failed: {0}")]
    Identification(String),

    #[error("gaussian process fit failed: {0}")]
    GpFit(String),

    #[error("rollout diverged at step {step}")]
    RolloutDiverged { step: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("adaptation failed at experiment {experiment}: {source}")]
    Adaptation {
        experiment: usize,
        #[source]
        source: Box<LdtError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn experiment_suffix(experiment: Option<usize>) -> String {
    match experiment {
        Some(i) => format!(" in experiment {i}"),
        None => String::new(),
    }
}

impl LdtError {
    /// Attaches an experiment index to a divergence error raised below the
    /// experiment level.
    pub fn in_experiment(self, index: usize) -> Self {
        match self {
            LdtError::SimulationDiverged { detail, .. } => {
                LdtError::SimulationDiverged { experiment: Some(index), detail }
            }
            other => other,
        }
    }
}
