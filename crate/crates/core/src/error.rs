use thiserror::Error;

pub type Result<T, E = FitbError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FitbError {
    #[error(transparent)]
    Tensor(#[from] fitb_tensor::TensorError),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{location}: {detail}")]
    Format { location: String, detail: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("{what}: length {len} exceeds maximum {max}")]
    Length { what: &'static str, len: usize, max: usize },

    #[error("{0} out of range")]
    Range(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid set {location}: {violations}")]
    Invalid { location: String, violations: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}; {diagnostics}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        diagnostics: String,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("usage: {0}")]
    Usage(String),
}

impl FitbError {
    /// Short stable name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Tensor(_) => "tensor",
            Self::Io { .. } => "io",
            Self::Json(_) => "json",
            Self::Format { .. } => "format",
            Self::Version { .. } => "version",
            Self::Length { .. } => "length",
            Self::Range(_) => "range",
            Self::Data(_) => "data",
            Self::Config(_) => "config",
            Self::Invalid { .. } => "invalid",
            Self::NonFinite { .. } => "non_finite",
            Self::Empty(_) => "empty",
            Self::Usage(_) => "usage",
        }
    }

    /// `error kind=<kind> message=<json string>` on a single line.
    pub fn one_line(&self) -> String {
        format!("error kind={} message={}", self.kind(), serde_json::Value::String(self.to_string().replace('\n', " ")))
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().display().to_string(), source }
    }
}
