use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("satisfied demand {satisfied} exceeds demand {demand} in region {region}")]
    SatisfiedExceedsDemand {
        region: usize,
        satisfied: String,
        demand: String,
    },

    #[error("infeasible rebalance for operator {operator} at region {region}: moves {moves} exceed supply {supply}")]
    InfeasibleAction {
        operator: usize,
        region: usize,
        moves: u64,
        supply: u64,
    },

    #[error("invalid action for operator {operator}: {reason}")]
    InvalidAction { operator: usize, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("missing characteristic value for coalition {0:#b}")]
    MissingCoalition(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty sequence: {0}")]
    EmptySequence(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("snapshot belongs to config {expected}, environment runs {found}")]
    StaleSnapshot { expected: String, found: String },

    #[error("config hash mismatch: checkpoint {checkpoint}, config {config}")]
    HashMismatch { checkpoint: String, config: String },

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml parse: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml write: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_len(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { what, left, right });
    }
    Ok(())
}
