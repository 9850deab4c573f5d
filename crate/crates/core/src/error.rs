use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("invalid search space: {0}")]
    InvalidSpec(String),
    #[error("search space size overflows u64")]
    Overflow,
    #[error("layer {layer} out of range for {num_layers} layers")]
    LayerOutOfRange { layer: usize, num_layers: usize },
    #[error("gene {pos}: candidate index {index} out of range (limit {limit})")]
    GeneOutOfRange { pos: usize, index: u32, limit: usize },
    #[error("gene {pos}: {value} is not a candidate sparsity")]
    NotACandidate { pos: usize, value: f64 },
    #[error("gene {pos}: token {token} is not valid here")]
    BadToken { pos: usize, token: usize },
    #[error("expected {expected} entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("{0}")]
    Parse(String),
}

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("split fraction must lie in (0, 1), got {0}")]
    BadSplit(f64),
    #[error("latency must be positive and finite, got {0}")]
    BadLatency(f64),
    #[error("invalid forest parameters: {0}")]
    BadParams(String),
    #[error("model has no trees")]
    Untrained,
    #[error("model was trained for a different search space")]
    SpaceMismatch,
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("unsupported model format `{format}` version {version}")]
    Format { format: String, version: u32 },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid surrogate parameters: {0}")]
    BadParams(String),
    #[error("failed to launch evaluator `{command}`: {source}")]
    Spawn { command: String, source: std::io::Error },
    #[error("evaluator exited before answering request {id}")]
    EvaluatorExited { id: u64 },
    #[error("evaluator did not answer request {id} within {secs} s")]
    Timeout { id: u64, secs: u64 },
    #[error("malformed evaluator response: {reason}; raw: {raw}")]
    Malformed { reason: String, raw: String },
    #[error("response id {got} does not match request id {expected}")]
    IdMismatch { expected: u64, got: u64 },
    #[error("evaluator i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("expected {expected} scores, got {got}")]
    ScoreLength { expected: usize, got: usize },
    #[error("head {head} out of range for {num_heads} heads")]
    HeadOutOfRange { head: usize, num_heads: usize },
    #[error("sparsity {0} would prune every head")]
    AllHeadsPruned(f64),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid controller dimensions: {0}")]
    BadDims(String),
    #[error("non-finite activation in {stage}; state: {dump}")]
    NonFinite { stage: &'static str, dump: String },
    #[error("action does not fit the parent: {0}")]
    BadAction(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid run configuration:\n  - {}", .0.join("\n  - "))]
    InvalidConfig(Vec<String>),
    #[error("no configuration met the relaxed latency bound {bound_us:.2} us after {attempts} attempts")]
    InfeasibleInit { bound_us: f64, attempts: u64 },
    #[error("no explored model meets the latency target {target_us:.2} us")]
    NoFeasibleModel { target_us: f64 },
    #[error("population size {found} violates capacity {capacity}")]
    PopulationSize { found: usize, capacity: usize },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("history log: {0}")]
    Io(#[from] std::io::Error),
}
