//! Synthetic latency generator standing in for on-device measurement.
//!
//! Latency is affine in the retained head and FFN counts of every layer,
//! plus Gaussian measurement noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::LatencyError;
use crate::space::{SpaceSpec, SparsityConfig};
use crate::scalar::Scalar;

/// Dense-model latency the default calibration reproduces, in microseconds.
pub const DENSE_TARGET_US: f64 = 3274.24;
/// Fixed overhead of the default calibration (embedding, pooling, runtime).
pub const DEFAULT_BASE_US: f64 = 1200.0;
/// Share of the non-fixed dense cost attributed to attention.
pub const DEFAULT_ATTENTION_SHARE: f64 = 0.4;
pub const DEFAULT_NOISE_SIGMA_US: f64 = 20.0;

/// Lower clamp on a noisy measurement.
const MIN_LATENCY_US: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CostModelParams<T: Scalar> {
    pub base_us: T,
    pub attn_us_per_head: Vec<T>,
    pub ffn_us_per_dim: Vec<T>,
    pub noise_sigma_us: T,
}

impl<T: Scalar> CostModelParams<T> {
    /// Default calibration: the dense config of `spec` costs
    /// [`DENSE_TARGET_US`] with per-layer coefficients equal across layers.
    pub fn calibrated(spec: &SpaceSpec) -> Self {
        Self::calibrated_to(spec, DENSE_TARGET_US, DEFAULT_BASE_US, DEFAULT_ATTENTION_SHARE)
            .with_noise(DEFAULT_NOISE_SIGMA_US)
    }

    /// Noiseless calibration to an arbitrary dense latency.
    pub fn calibrated_to(spec: &SpaceSpec, dense_us: f64, base_us: f64, attention_share: f64) -> Self {
        let variable = dense_us - base_us;
        let layers = spec.num_layers as f64;
        let per_head = variable * attention_share / (layers * spec.num_heads as f64);
        let per_dim = variable * (1.0 - attention_share) / (layers * spec.ffn_dim as f64);
        Self {
            base_us: T::of(base_us),
            attn_us_per_head: vec![T::of(per_head); spec.num_layers],
            ffn_us_per_dim: vec![T::of(per_dim); spec.num_layers],
            noise_sigma_us: T::zero(),
        }
    }

    pub fn with_noise(mut self, sigma_us: f64) -> Self {
        self.noise_sigma_us = T::of(sigma_us);
        self
    }

    pub fn validate(&self, spec: &SpaceSpec) -> Result<(), LatencyError> {
        let bad = |m: &str| Err(LatencyError::BadParams(m.to_string()));
        if self.attn_us_per_head.len() != spec.num_layers || self.ffn_us_per_dim.len() != spec.num_layers {
            return bad("per-layer coefficient count differs from num_layers");
        }
        let all = std::iter::once(self.base_us)
            .chain(self.attn_us_per_head.iter().copied())
            .chain(self.ffn_us_per_dim.iter().copied())
            .chain(std::iter::once(self.noise_sigma_us));
        for v in all {
            if !(v.is_finite() && v >= T::zero()) {
                return bad("cost coefficients must be finite and nonnegative");
            }
        }
        Ok(())
    }

    /// Noise-free latency.
    pub fn expected_us(&self, spec: &SpaceSpec, config: &SparsityConfig) -> T {
        config
            .retained(spec)
            .into_iter()
            .enumerate()
            .fold(self.base_us, |acc, (layer, (heads, ffn))| {
                acc + self.attn_us_per_head[layer] * T::of_usize(heads)
                    + self.ffn_us_per_dim[layer] * T::of_usize(ffn)
            })
    }

    /// One noisy measurement, clamped positive.
    pub fn measure<R: Rng + ?Sized>(&self, spec: &SpaceSpec, config: &SparsityConfig, rng: &mut R) -> T {
        let clean = self.expected_us(spec, config);
        let sigma = self.noise_sigma_us.as_f64();
        if sigma == 0.0 {
            return clean.max(T::of(MIN_LATENCY_US));
        }
        let noise = Normal::new(0.0, sigma).expect("sigma validated nonnegative").sample(rng);
        (clean + T::of(noise)).max(T::of(MIN_LATENCY_US))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_config_hits_calibration_target() {
        let spec = SpaceSpec::default();
        let params = CostModelParams::<f64>::calibrated(&spec).with_noise(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dense = params.measure(&spec, &spec.dense(), &mut rng);
        assert!((dense - 3274.24).abs() < 1e-9, "{dense}");
        let f32_params = CostModelParams::<f32>::calibrated(&spec);
        assert!((f32_params.expected_us(&spec, &spec.dense()) - 3274.24).abs() < 1e-2);
    }

    #[test]
    fn sparsest_config_is_cheaper_than_dense() {
        let spec = SpaceSpec::default();
        let params = CostModelParams::<f64>::calibrated(&spec);
        let lo = params.expected_us(&spec, &spec.sparsest());
        let hi = params.expected_us(&spec, &spec.dense());
        assert!(lo < hi);
        assert!(lo > params.base_us);
        // The default 1900 us target sits between the extremes.
        assert!(lo < 1900.0 && hi > 1900.0);
    }

    #[test]
    fn elementwise_sparser_is_no_slower() {
        let spec = SpaceSpec::default();
        let params = CostModelParams::<f64>::calibrated(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let b = spec.sample_uniform(&mut rng);
            let genes: Vec<u32> = b
                .genes()
                .iter()
                .enumerate()
                .map(|(pos, &g)| rng.random_range(g..spec.candidates(pos) as u32))
                .collect();
            let a = SparsityConfig::from_genes(&spec, &genes).unwrap();
            assert!(params.expected_us(&spec, &a) <= params.expected_us(&spec, &b));
        }
    }

    #[test]
    fn noise_is_seeded_and_positive() {
        let spec = SpaceSpec::default();
        let params = CostModelParams::<f64>::calibrated(&spec);
        let c = spec.sparsest();
        let a = params.measure(&spec, &c, &mut ChaCha8Rng::seed_from_u64(3));
        let b = params.measure(&spec, &c, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let huge = params.clone().with_noise(1e6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..100).all(|_| huge.measure(&spec, &c, &mut rng) >= 1.0));
    }

    #[test]
    fn negative_coefficients_rejected() {
        let spec = SpaceSpec::default();
        let mut params = CostModelParams::<f64>::calibrated(&spec);
        params.validate(&spec).unwrap();
        params.ffn_us_per_dim[2] = -1.0;
        assert!(params.validate(&spec).is_err());
    }
}
