use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite value produced by `{primitive}` at sample {sample}")]
    NonFinite {
        primitive: &'static str,
        sample: usize,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("matrix is not positive definite to tolerance (smallest eigenvalue {smallest_eigenvalue:e})")]
    NotPositiveDefinite { smallest_eigenvalue: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("dataset error at line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error("checkpoint format version {found} is newer than supported version {supported}")]
    Version { found: u32, supported: u32 },

    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("trajectory diverged at step {step} (t = {time})")]
    Diverged { step: usize, time: f64 },

    #[error("training diverged in epoch {epoch}; the last finite parameters are attached")]
    TrainingDiverged {
        epoch: usize,
        last: Box<crate::training::Checkpoint>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
