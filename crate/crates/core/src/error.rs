use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("index {index} out of range on axis {axis} (axis has {count} nodes)")]
    IndexOutOfRange { axis: usize, index: usize, count: usize },

    #[error("fields are defined on different grids")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{kind} {value:?} is not in the declared set")]
    ActionNotInSet { kind: &'static str, value: Vec<f64> },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown benchmark `{name}`; available: {available}")]
    UnknownBenchmark { name: String, available: String },

    #[error("non-finite value at node {node} in iteration {iteration}")]
    NonFiniteValue { node: usize, iteration: usize },

    #[error("oracle enumeration needs {required} leaves, budget is {budget}")]
    OracleBudget { required: f64, budget: f64 },

    #[error(
        "could not draw {wanted} states above margin: accepted {accepted} of {proposals} proposals \
         (acceptance rate {rate:.3e})"
    )]
    Sampling { wanted: usize, accepted: usize, proposals: usize, rate: f64 },

    #[error("non-finite parameter in layer {layer}")]
    NonFiniteParameter { layer: usize },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("malformed field file: {0}")]
    MalformedField(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
