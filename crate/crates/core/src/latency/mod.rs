//! Latency ground truth and the learned latency predictor.

pub mod cost;
pub mod forest;
mod predictor;
mod samples;

pub use cost::CostModelParams;
pub use forest::{ForestParams, RandomForest, RegressionTree};
pub use predictor::{features, split_rows, train_predictor, LatencyModel, TrainingMetrics, MIN_TRAINING_SAMPLES};
pub use samples::{header as sample_header, read_samples, write_samples, write_samples_to, LatencySample};

use crate::error::LatencyError;
use crate::scalar::Scalar;
use crate::space::{SpaceSpec, SparsityConfig};

/// Anything that turns a configuration into a latency estimate in
/// microseconds.
pub trait LatencyEstimator<T: Scalar> {
    fn latency_us(&self, config: &SparsityConfig) -> Result<T, LatencyError>;
}

/// The noise-free cost model used directly as an estimator.
#[derive(Debug, Clone)]
pub struct AnalyticLatency<T: Scalar> {
    pub spec: SpaceSpec,
    pub params: CostModelParams<T>,
}

impl<T: Scalar> LatencyEstimator<T> for AnalyticLatency<T> {
    fn latency_us(&self, config: &SparsityConfig) -> Result<T, LatencyError> {
        Ok(self.params.expected_us(&self.spec, config))
    }
}

impl<T: Scalar> LatencyEstimator<T> for LatencyModel<T> {
    fn latency_us(&self, config: &SparsityConfig) -> Result<T, LatencyError> {
        self.predict(config)
    }
}

impl<T: Scalar, E: LatencyEstimator<T> + ?Sized> LatencyEstimator<T> for &E {
    fn latency_us(&self, config: &SparsityConfig) -> Result<T, LatencyError> {
        (**self).latency_us(config)
    }
}
