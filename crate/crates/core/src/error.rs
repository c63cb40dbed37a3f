use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed input at {location}: {detail}")]
    Parse { location: String, detail: String },
    #[error("duplicate email id `{0}`")]
    DuplicateEmailId(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("value {value} is outside the class set of `{label}`")]
    ValueOutOfClassSet { label: String, value: i32 },
    #[error("model `{model}` unavailable: {reason}")]
    BackendUnavailable { model: String, reason: String },
    #[error("model `{model}` produced malformed output: {detail}")]
    MalformedOutput { model: String, detail: String },
    #[error("model `{model}` cannot serve this request: {detail}")]
    WrongModelKind { model: String, detail: String },
    #[error("empty log-probability list")]
    EmptyLogprobs,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
    #[error("missing baseline label `{label}` for email `{email_id}`")]
    MissingBaselineLabel { email_id: String, label: String },
    #[error("missing cached output for model `{model}`, email `{email_id}`, label `{label}`")]
    MissingCacheEntry {
        model: String,
        email_id: String,
        label: String,
    },
    #[error("Pareto front is empty")]
    EmptyFront,
    #[error("validation set overlaps the calibration stream (email `{0}`)")]
    ValidationOverlap(String),
    #[error("reference sample has zero standard deviation")]
    DegenerateReference,
    #[error("sample too small: {0}")]
    SampleTooSmall(String),
    #[error("length mismatch: {left} predictions vs {right} references")]
    LengthMismatch { left: usize, right: usize },
    #[error("malformed load trace: {0}")]
    MalformedTrace(String),
    #[error("invalid model file: {0}")]
    ModelFile(String),
}

impl Error {
    /// Backend failures map to a distinct CLI exit code.
    pub fn is_backend_failure(&self) -> bool {
        matches!(self, Error::BackendUnavailable { .. })
    }
}
