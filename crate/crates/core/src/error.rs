//! Crate-wide error and result types.

use thiserror::Error;

/// Convenience alias used by every fallible operation in the crate.
pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A caller-supplied value is out of range or inconsistent.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A configuration document failed to parse or validate.
    #[error("configuration error: {0}")]
    Config(String),

    /// A persisted artifact was written by an incompatible schema.
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { expected: u32, found: u32 },

    /// Shapes disagree (feature dimension, parameter count, matrix sizes).
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    /// An IDX file did not start with the expected magic number.
    #[error("bad magic number {found:#010x} in {path} (expected {expected:#010x})")]
    IdxMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    /// Image and label files describe different item counts.
    #[error("item count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: u64, labels: u64 },

    /// A binary payload ended before its header said it would.
    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: String,
        expected: u64,
        found: u64,
    },

    /// A delimited text file violated the required schema.
    #[error("malformed csv at line {line}: {reason}")]
    Csv { line: usize, reason: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    /// The conjugate-gradient solve produced non-finite iterates.
    #[error("conjugate gradient breakdown while solving for validation id {val_id}")]
    CgBreakdown { val_id: u64 },

    /// A dense linear system could not be factored.
    #[error("singular linear system: {0}")]
    Singular(String),

    /// A black-box probability query failed mid-attack.
    #[error("black-box query failed for point id {point_id}: {reason}")]
    QueryFailure { point_id: u64, reason: String },

    /// The stationarity tolerance was not reached while fitting a model.
    #[error(
        "minimizer tolerance not reached for n = {n}: gradient norm {grad_norm:.3e} after {iters} iterations"
    )]
    MinimizerTolerance {
        n: usize,
        grad_norm: f64,
        iters: usize,
    },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    /// A pipeline stage failed; wraps the underlying cause.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<CoreError>,
    },

    /// Another writer holds the run directory.
    #[error("run directory is locked (lock file {0} exists); is another run in progress?")]
    Locked(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// JSON/TOML (de)serialization failure with context.
    #[error("serialization error: {0}")]
    Serde(String),
}

impl CoreError {
    /// Wrap an error with the name of the pipeline stage that raised it.
    pub fn in_stage(self, stage: &str) -> Self {
        CoreError::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    /// The CLI maps these to exit code 2 and everything else to 3.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            CoreError::Param(_) | CoreError::Config(_) | CoreError::SchemaVersion { .. }
        )
    }
}
