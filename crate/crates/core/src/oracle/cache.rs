use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use rand::RngCore;

use super::{AccuracyOracle, OracleResult, Source};
use crate::error::OracleError;
use crate::scalar::Scalar;
use crate::space::SparsityConfig;

/// Memoizes an oracle by exact gene indices. The first result for a config
/// is kept forever; later lookups report [`Source::Cache`].
#[derive(Debug)]
pub struct CachedOracle<T, O> {
    inner: O,
    table: RwLock<HashMap<Vec<u32>, T>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<T: Scalar, O: AccuracyOracle<T>> CachedOracle<T, O> {
    pub fn new(inner: O) -> Self {
        Self { inner, table: RwLock::new(HashMap::new()), hits: AtomicU64::new(0), misses: AtomicU64::new(0) }
    }

    /// Read-only lookup, usable while another thread holds `&self`.
    pub fn lookup(&self, config: &SparsityConfig) -> Option<T> {
        self.table.read().expect("cache lock poisoned").get(&config.genes()).copied()
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Number of evaluations delegated to the wrapped oracle.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.table.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<T: Scalar, O: AccuracyOracle<T>> AccuracyOracle<T> for CachedOracle<T, O> {
    fn evaluate(&mut self, config: &SparsityConfig, rng: &mut dyn RngCore) -> Result<OracleResult<T>, OracleError> {
        if let Some(auc) = self.lookup(config) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(OracleResult { auc, source: Source::Cache });
        }
        let result = self.inner.evaluate(config, rng)?;
        self.misses.fetch_add(1, Ordering::Relaxed);
        self.table.write().expect("cache lock poisoned").entry(config.genes()).or_insert(result.auc);
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{SurrogateOracle, SurrogateParams};
    use crate::space::SpaceSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Counting {
        calls: usize,
    }

    impl AccuracyOracle<f64> for Counting {
        fn evaluate(&mut self, _: &SparsityConfig, _: &mut dyn RngCore) -> Result<OracleResult<f64>, OracleError> {
            self.calls += 1;
            Ok(OracleResult { auc: 0.5 + self.calls as f64 * 1e-3, source: Source::Surrogate })
        }
    }

    #[test]
    fn second_call_is_a_hit_with_equal_auc() {
        let spec = SpaceSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cache = CachedOracle::new(Counting { calls: 0 });
        let c = spec.sample_uniform(&mut rng);
        let first = cache.evaluate(&c, &mut rng).unwrap();
        let second = cache.evaluate(&c, &mut rng).unwrap();
        assert_eq!(first.source, Source::Surrogate);
        assert_eq!(second.source, Source::Cache);
        assert_eq!(first.auc, second.auc);
        assert_eq!(cache.inner().calls, 1);
    }

    #[test]
    fn hit_count_is_total_minus_distinct() {
        let spec = SpaceSpec::new(2, 2, 8, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cache = CachedOracle::new(Counting { calls: 0 });
        let mut distinct = std::collections::HashSet::new();
        let n = 500;
        for _ in 0..n {
            let c = spec.sample_uniform(&mut rng);
            distinct.insert(c.clone());
            cache.evaluate(&c, &mut rng).unwrap();
        }
        assert_eq!(cache.inner().calls, distinct.len());
        assert_eq!(cache.misses() as usize, distinct.len());
        assert_eq!(cache.hits() as usize, n - distinct.len());
    }

    #[test]
    fn noisy_oracle_values_are_frozen() {
        let spec = SpaceSpec::default();
        let params = SurrogateParams::default_for(&spec).with_noise(0.01);
        let mut cache = CachedOracle::new(SurrogateOracle::<f64>::new(spec, params).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = spec.sample_uniform(&mut rng);
        let first = cache.evaluate(&c, &mut rng).unwrap().auc;
        for _ in 0..20 {
            assert_eq!(cache.evaluate(&c, &mut rng).unwrap().auc, first);
        }
        assert_eq!(cache.lookup(&c), Some(first));
    }

    #[test]
    fn concurrent_readers_see_stored_values() {
        let spec = SpaceSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cache = CachedOracle::new(Counting { calls: 0 });
        let configs: Vec<_> = (0..50).map(|_| spec.sample_uniform(&mut rng)).collect();
        for c in &configs {
            cache.evaluate(c, &mut rng).unwrap();
        }
        let cache = &cache;
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| assert!(configs.iter().all(|c| cache.lookup(c).is_some())));
            }
        });
    }
}
