use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: cannot parse `{value}` in column `{column}` as a number")]
    UnparseableNumber {
        row: usize,
        column: String,
        value: String,
    },

    #[error("no usable rows after cleaning ({dropped} dropped)")]
    NoUsableRows { dropped: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample size {requested} exceeds available {available}")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("design needs at least {params} rows, got {rows}")]
    DesignTooSmall { rows: usize, params: usize },

    #[error("no non-singular starting design found after {attempts} attempts")]
    SingularDesign { attempts: usize },

    #[error("insufficient candidates: needed {needed}, achieved {achieved}")]
    InsufficientCandidates { needed: usize, achieved: usize },

    #[error("stratum `{polymer}`: {source}")]
    Stratum {
        polymer: String,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("recipe used before fitting")]
    RecipeNotFitted,

    #[error("column mismatch: model expects {expected} columns, got {got}")]
    ColumnMismatch { expected: usize, got: usize },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("unknown learner `{0}`")]
    UnknownLearner(String),

    #[error("unknown sampling method `{0}`")]
    UnknownSampling(String),

    #[error("row {row}: invalid solubility rating `{value}`")]
    InvalidRating { row: usize, value: String },

    #[error("polymer `{0}` has no solvent pool")]
    EmptySolventPool(String),

    #[error("bundle: {0}")]
    Bundle(String),

    #[error("bundle checksum mismatch")]
    ChecksumMismatch,

    #[error("unsupported bundle version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
