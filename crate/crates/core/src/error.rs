use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("registry must contain at least one mode")]
    EmptyRegistry,

    #[error("mode `{0}` has cutoff 0; cutoffs must be at least 1")]
    InvalidCutoff(String),

    #[error("duplicate mode label `{0}`")]
    DuplicateMode(String),

    #[error("unknown mode label `{0}`")]
    UnknownMode(String),

    #[error("operation needs two distinct modes, got `{0}` twice")]
    IdenticalModes(String),

    #[error("Hilbert-space dimension exceeds the configured maximum of {max} (cutoffs too large)")]
    DimensionOverflow { max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("operands live on different mode registries")]
    RegistryMismatch,

    #[error("occupation tuple {0:?} is outside the truncated basis")]
    OccupationOutOfRange(Vec<usize>),

    #[error("partial trace needs a nonempty set of modes to keep")]
    EmptyKeepSet,

    #[error("`{name}` = {value} is outside its allowed range {allowed}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        allowed: &'static str,
    },

    #[error("state is not normalized: squared norm {norm_sqr}")]
    NotNormalized { norm_sqr: f64 },

    #[error("truncation error {error:e} exceeds bound {bound:e}; raise the cutoff")]
    TruncationExceeded { error: f64, bound: f64 },

    #[error("conditioning on an event of zero probability")]
    ImpossibleCondition,

    #[error("herald probability {probability:e} is below the floor {floor:e}")]
    HeraldBelowFloor { probability: f64, floor: f64 },

    #[error("all-zero intensity for {0}; nothing to correlate (is p or P zero?)")]
    ZeroIntensity(String),

    #[error("zero marginal counts for {0}")]
    ZeroCounts(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("invalid value for `{field}`: {message}")]
    ConfigDomain { field: String, message: String },

    #[error("malformed click record at line {line}: {message}")]
    RecordParse { line: usize, message: String },
}
