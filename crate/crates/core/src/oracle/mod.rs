//! Accuracy oracles: the synthetic surrogate, an external evaluator process,
//! and a memoizing wrapper.

mod cache;
mod external;
mod surrogate;

pub use cache::CachedOracle;
pub use external::{EvalRequest, EvalResponse, ExternalEvaluator, DEFAULT_TIMEOUT};
pub use surrogate::{SurrogateOracle, SurrogateParams};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::OracleError;
use crate::scalar::Scalar;
use crate::space::SparsityConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Surrogate,
    External,
    Cache,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult<T> {
    pub auc: T,
    pub source: Source,
}

/// Supplies the AUC of a pruned model.
pub trait AccuracyOracle<T: Scalar> {
    fn evaluate(&mut self, config: &SparsityConfig, rng: &mut dyn RngCore) -> Result<OracleResult<T>, OracleError>;
}

impl<T: Scalar, O: AccuracyOracle<T> + ?Sized> AccuracyOracle<T> for Box<O> {
    fn evaluate(&mut self, config: &SparsityConfig, rng: &mut dyn RngCore) -> Result<OracleResult<T>, OracleError> {
        (**self).evaluate(config, rng)
    }
}
