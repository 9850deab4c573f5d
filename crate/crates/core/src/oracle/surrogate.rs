//! Synthetic AUC surrogate.
//!
//! `auc = auc_max * prod_g (1 - w_g * (1 - r_g)^c) + noise`, where `r_g` is
//! the retained fraction of gene `g` and `w_g` its importance. Importance
//! decreases with depth, so pruning later layers costs less accuracy.

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AccuracyOracle, OracleResult, Source};
use crate::error::OracleError;
use crate::scalar::Scalar;
use crate::space::{SpaceSpec, SparsityConfig};

/// Clamp margin keeping the surrogate strictly inside (0, 1).
const EDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SurrogateParams<T: Scalar> {
    pub layer_importance_attn: Vec<T>,
    pub layer_importance_ffn: Vec<T>,
    pub auc_max: T,
    pub curvature: T,
    pub noise_sigma: T,
}

impl<T: Scalar> SurrogateParams<T> {
    /// Importance falls linearly with depth to half its first-layer value.
    /// The scale puts the fully pruned model about two AUC points below the
    /// dense one, the order of loss reported for real structured pruning of
    /// a small encoder.
    pub fn default_for(spec: &SpaceSpec) -> Self {
        let taper = |top: f64| -> Vec<T> {
            let l = spec.num_layers;
            (0..l)
                .map(|i| {
                    let depth = if l > 1 { i as f64 / (l - 1) as f64 } else { 0.0 };
                    T::of(top * (1.0 - 0.5 * depth))
                })
                .collect()
        };
        Self {
            layer_importance_attn: taper(0.004),
            layer_importance_ffn: taper(0.003),
            auc_max: T::of(0.8715),
            curvature: T::of(1.5),
            noise_sigma: T::zero(),
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = T::of(sigma);
        self
    }

    pub fn validate(&self, spec: &SpaceSpec) -> Result<(), OracleError> {
        let bad = |m: String| Err(OracleError::BadParams(m));
        if self.layer_importance_attn.len() != spec.num_layers || self.layer_importance_ffn.len() != spec.num_layers {
            return bad(format!("need {} importance weights per sublayer type", spec.num_layers));
        }
        for &w in self.layer_importance_attn.iter().chain(&self.layer_importance_ffn) {
            if !(w > T::zero() && w < T::one()) {
                return bad(format!("importance {w} must lie in (0, 1)"));
            }
        }
        if !(self.auc_max > T::zero() && self.auc_max < T::one()) {
            return bad(format!("auc_max {} must lie in (0, 1)", self.auc_max));
        }
        if !(self.curvature > T::zero() && self.curvature.is_finite()) {
            return bad(format!("curvature {} must be positive", self.curvature));
        }
        if !(self.noise_sigma >= T::zero() && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be nonnegative", self.noise_sigma));
        }
        Ok(())
    }

    /// Noise-free surrogate AUC.
    pub fn clean_auc(&self, spec: &SpaceSpec, config: &SparsityConfig) -> T {
        let factor = |w: T, retained: usize, full: usize| {
            let pruned = T::one() - T::of_usize(retained) / T::of_usize(full);
            T::one() - w * pruned.powf(self.curvature)
        };
        config
            .retained(spec)
            .into_iter()
            .enumerate()
            .fold(self.auc_max, |acc, (layer, (heads, ffn))| {
                acc * factor(self.layer_importance_attn[layer], heads, spec.num_heads)
                    * factor(self.layer_importance_ffn[layer], ffn, spec.ffn_dim)
            })
    }

    pub fn surrogate_auc<R: RngCore + ?Sized>(
        &self,
        spec: &SpaceSpec,
        config: &SparsityConfig,
        rng: &mut R,
    ) -> OracleResult<T> {
        let mut auc = self.clean_auc(spec, config);
        let sigma = self.noise_sigma.as_f64();
        if sigma > 0.0 {
            auc += T::of(Normal::new(0.0, sigma).expect("validated sigma").sample(rng));
        }
        let auc = auc.max(T::of(EDGE)).min(T::of(1.0 - EDGE));
        OracleResult { auc, source: Source::Surrogate }
    }
}

/// [`SurrogateParams`] bound to a search space.
#[derive(Debug, Clone)]
pub struct SurrogateOracle<T: Scalar> {
    spec: SpaceSpec,
    params: SurrogateParams<T>,
}

impl<T: Scalar> SurrogateOracle<T> {
    pub fn new(spec: SpaceSpec, params: SurrogateParams<T>) -> Result<Self, OracleError> {
        params.validate(&spec)?;
        Ok(Self { spec, params })
    }

    pub fn params(&self) -> &SurrogateParams<T> {
        &self.params
    }
}

impl<T: Scalar> AccuracyOracle<T> for SurrogateOracle<T> {
    fn evaluate(&mut self, config: &SparsityConfig, rng: &mut dyn RngCore) -> Result<OracleResult<T>, OracleError> {
        Ok(self.params.surrogate_auc(&self.spec, config, rng))
    }
}
