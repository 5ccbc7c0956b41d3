use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("particle {index} left the simulation domain at {position:?}")]
    OutOfDomain { index: usize, position: [f64; 3] },

    #[error("inverted deformation at particle {index}: det(F) = {det:e}")]
    Inversion { index: usize, det: f64 },

    #[error("unknown benchmark preset `{0}`")]
    Catalog(String),

    #[error("composition error: {0}")]
    Composition(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("differentiation failed at step {step}: {reason}")]
    Differentiation { step: usize, reason: String },

    #[error("simulation step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that stem from the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Inversion { .. }
            | Error::OutOfDomain { .. }
            | Error::Training(_)
            | Error::Differentiation { .. } => true,
            Error::Step { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step { step, source: Box::new(e) },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
