use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("integration produced a non-finite state at t = {t} s")]
    NonfiniteState { t: f64 },
    #[error("series too short: need at least {needed} samples, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("incompatible rates: {source_hz} Hz is not an integer multiple of {target_hz} Hz")]
    IncompatibleRates { source_hz: f64, target_hz: f64 },
    #[error("degenerate channel {channel} ({name}): max equals min")]
    DegenerateChannel { channel: usize, name: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unscaled input: component {index} = {value} lies outside [-1, 1]")]
    UnscaledInput { index: usize, value: f64 },
    #[error("insufficient sequence length: need {needed}, got {got}")]
    InsufficientLength { needed: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("trial budget is zero")]
    BudgetZero,
    #[error("training diverged in epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("optimal control cost is not finite")]
    NonfiniteCost,
    #[error("log of {log_s} s is shorter than the {warmup_s} s warm-up")]
    LogShorterThanWarmup { log_s: f64, warmup_s: f64 },
    #[error("empty evaluation interval")]
    EmptyInterval,
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            got,
        }
    }
}
