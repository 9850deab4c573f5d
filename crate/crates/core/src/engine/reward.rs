use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Latency target `T` and the out-of-budget exponent `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RewardParams<T: Scalar> {
    pub target_latency_us: T,
    pub alpha: T,
}

impl<T: Scalar> RewardParams<T> {
    pub fn new(target_latency_us: T, alpha: T) -> Self {
        Self { target_latency_us, alpha }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.target_latency_us > T::zero() && self.target_latency_us.is_finite()) {
            out.push(format!("target_latency_us must be positive, got {}", self.target_latency_us));
        }
        if !(self.alpha <= T::zero() && self.alpha.is_finite()) {
            out.push(format!("alpha must be nonpositive, got {}", self.alpha));
        }
        out
    }
}

/// `auc * (latency / T)^w` with `w = 0` inside the budget and `alpha` outside.
pub fn reward<T: Scalar>(auc: T, latency_us: T, params: &RewardParams<T>) -> T {
    if latency_us <= params.target_latency_us {
        auc
    } else {
        auc * (latency_us / params.target_latency_us).powf(params.alpha)
    }
}
