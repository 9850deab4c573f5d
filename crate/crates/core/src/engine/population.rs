use std::cmp::Ordering;
use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SearchError;
use crate::scalar::Scalar;
use crate::space::{SpaceSpec, SparsityConfig};

/// One evaluated model.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<T> {
    pub id: u64,
    pub config: SparsityConfig,
    pub auc: T,
    /// Predicted, not measured.
    pub latency_us: T,
    pub reward: T,
    pub parent_id: Option<u64>,
    /// Number of models explored before this one.
    pub iteration: usize,
}

/// Line-oriented form of a candidate used in history logs and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub id: u64,
    pub parent_id: Option<u64>,
    /// Comma-separated sparsities `a1,f1,a2,f2,...`.
    pub config: String,
    pub predicted_latency_us: f64,
    pub auc: f64,
    pub reward: f64,
}

impl<T: Scalar> Candidate<T> {
    pub fn record(&self, spec: &SpaceSpec) -> HistoryRecord {
        HistoryRecord {
            iteration: self.iteration,
            id: self.id,
            parent_id: self.parent_id,
            config: self.config.to_record(spec),
            predicted_latency_us: self.latency_us.as_f64(),
            auc: self.auc.as_f64(),
            reward: self.reward.as_f64(),
        }
    }
}

/// Higher reward wins, then lower latency, then lower id.
pub(crate) fn parent_order<T: Scalar>(a: &Candidate<T>, b: &Candidate<T>) -> Ordering {
    a.reward
        .partial_cmp(&b.reward)
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.latency_us.partial_cmp(&a.latency_us).unwrap_or(Ordering::Equal))
        .then_with(|| b.id.cmp(&a.id))
}

/// Higher AUC wins, then lower latency, then lower id.
pub(crate) fn final_order<T: Scalar>(a: &Candidate<T>, b: &Candidate<T>) -> Ordering {
    a.auc
        .partial_cmp(&b.auc)
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.latency_us.partial_cmp(&a.latency_us).unwrap_or(Ordering::Equal))
        .then_with(|| b.id.cmp(&a.id))
}

/// Reward summary of the population after one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    /// History size when the snapshot was taken.
    pub iteration: usize,
    pub mean_reward: f64,
    /// Population (not sample) variance.
    pub reward_variance: f64,
    pub max_reward: f64,
}

/// FIFO queue of at most `capacity` candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Population<T> {
    members: VecDeque<Candidate<T>>,
    capacity: usize,
}

impl<T: Scalar> Population<T> {
    pub fn new(capacity: usize) -> Self {
        Self { members: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.members.len() == self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate<T>> {
        self.members.iter()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.members.iter().map(|c| c.id).collect()
    }

    /// Adds a member during initialization.
    pub fn push(&mut self, candidate: Candidate<T>) -> Result<(), SearchError> {
        if self.is_full() {
            return Err(SearchError::PopulationSize { found: self.len() + 1, capacity: self.capacity });
        }
        self.members.push_back(candidate);
        Ok(())
    }

    /// Appends `child` and evicts the oldest member, which is returned.
    pub fn advance(&mut self, child: Candidate<T>) -> Result<Candidate<T>, SearchError> {
        if !self.is_full() {
            return Err(SearchError::PopulationSize { found: self.len(), capacity: self.capacity });
        }
        let oldest = self.members.pop_front().expect("full population is nonempty");
        self.members.push_back(child);
        Ok(oldest)
    }

    /// Best of `min(sample_size, len)` members drawn without replacement.
    pub fn select_parent<R: Rng + ?Sized>(&self, sample_size: usize, rng: &mut R) -> Option<&Candidate<T>> {
        let n = self.members.len();
        if n == 0 {
            return None;
        }
        rand::seq::index::sample(rng, n, sample_size.clamp(1, n))
            .into_iter()
            .map(|i| &self.members[i])
            .max_by(|a, b| parent_order(a, b))
    }

    pub fn stats(&self, iteration: usize) -> PopulationStats {
        let n = self.members.len().max(1) as f64;
        let rewards: Vec<f64> = self.members.iter().map(|c| c.reward.as_f64()).collect();
        let mean = rewards.iter().sum::<f64>() / n;
        let variance = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        PopulationStats { iteration, mean_reward: mean, reward_variance: variance, max_reward: max }
    }
}
