//! Aging evolution with random or learned mutation, plus random search.
//!
//! One child is produced per iteration. Its latency comes from the
//! predictor and its AUC from the oracle; the reward then feeds both the
//! population and, for the reinforced variant, one REINFORCE update of the
//! mutator. The population is a FIFO queue so every member is evicted after
//! exactly `P` further iterations.

pub mod config;
mod population;
mod reward;

pub use config::{Algorithm, OracleConfig, RunConfig, SearchSettings};
pub use population::{Candidate, HistoryRecord, Population, PopulationStats};
pub use reward::{reward, RewardParams};

use std::collections::HashSet;
use std::io::Write;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{apply_mutation, random_mutate, MutatorNet};
use crate::error::SearchError;
use crate::latency::LatencyEstimator;
use crate::oracle::AccuracyOracle;
use crate::scalar::Scalar;
use crate::space::{SpaceSpec, SparsityConfig};
use population::final_order;

/// Receives every evaluated candidate and every population snapshot as
/// soon as they exist.
pub trait SearchObserver<T: Scalar> {
    fn on_candidate(&mut self, _spec: &SpaceSpec, _candidate: &Candidate<T>) -> Result<(), SearchError> {
        Ok(())
    }

    fn on_stats(&mut self, _stats: &PopulationStats) -> Result<(), SearchError> {
        Ok(())
    }
}

impl<T: Scalar> SearchObserver<T> for () {}

/// Writes one JSON line per candidate and flushes it immediately, so an
/// aborted run leaves a readable partial history.
pub struct JsonlHistory<W: Write> {
    out: W,
}

impl<W: Write> JsonlHistory<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<T: Scalar, W: Write> SearchObserver<T> for JsonlHistory<W> {
    fn on_candidate(&mut self, spec: &SpaceSpec, candidate: &Candidate<T>) -> Result<(), SearchError> {
        let line = serde_json::to_string(&candidate.record(spec)).expect("record serializes");
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

/// In-memory outcome of a run.
#[derive(Debug, Clone)]
pub struct SearchReport<T> {
    pub spec: SpaceSpec,
    pub settings: SearchSettings,
    /// Highest-AUC history member with predicted latency within the target.
    pub final_model: Option<Candidate<T>>,
    pub history: Vec<Candidate<T>>,
    /// One snapshot after initialization and one after every step.
    pub stats: Vec<PopulationStats>,
}

/// Serialized report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub target_latency_us: f64,
    pub alpha: f64,
    pub space: SpaceSpec,
    pub final_model: Option<HistoryRecord>,
    pub population_stats: Vec<PopulationStats>,
    pub history: Vec<HistoryRecord>,
}

impl<T: Scalar> SearchReport<T> {
    pub fn final_or_err(&self) -> Result<&Candidate<T>, SearchError> {
        self.final_model
            .as_ref()
            .ok_or(SearchError::NoFeasibleModel { target_us: self.settings.reward.target_latency_us })
    }

    pub fn to_file(&self) -> ReportFile {
        ReportFile {
            algorithm: self.settings.algorithm,
            seed: self.settings.seed,
            target_latency_us: self.settings.reward.target_latency_us,
            alpha: self.settings.reward.alpha,
            space: self.spec,
            final_model: self.final_model.as_ref().map(|c| c.record(&self.spec)),
            population_stats: self.stats.clone(),
            history: self.history.iter().map(|c| c.record(&self.spec)).collect(),
        }
    }
}

/// Highest AUC among members whose latency is within `target_us`; ties go
/// to lower latency, then lower id.
pub fn select_final<T: Scalar>(history: &[Candidate<T>], target_us: T) -> Option<&Candidate<T>> {
    history.iter().filter(|c| c.latency_us <= target_us).max_by(|a, b| final_order(a, b))
}

// Independent random streams so that paired runs with the same seed share
// their initial population regardless of algorithm.
/// Largest space the exhaustive fallback will enumerate.
const MAX_ENUMERATED: u64 = 1 << 20;

const STREAM_INIT: u64 = 0;
const STREAM_SEARCH: u64 = 1;
const STREAM_ORACLE: u64 = 2;
const STREAM_CONTROLLER: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Search state between iterations.
pub struct Search<'a, T: Scalar> {
    spec: SpaceSpec,
    settings: SearchSettings,
    reward: RewardParams<T>,
    oracle: &'a mut dyn AccuracyOracle<T>,
    latency: &'a dyn LatencyEstimator<T>,
    observer: &'a mut dyn SearchObserver<T>,
    controller: Option<MutatorNet<T>>,
    population: Population<T>,
    history: Vec<Candidate<T>>,
    seen: HashSet<SparsityConfig>,
    stats: Vec<PopulationStats>,
    init_rng: ChaCha8Rng,
    rng: ChaCha8Rng,
    oracle_rng: ChaCha8Rng,
}

impl<'a, T: Scalar> Search<'a, T> {
    pub fn new(
        spec: SpaceSpec,
        settings: SearchSettings,
        oracle: &'a mut dyn AccuracyOracle<T>,
        latency: &'a dyn LatencyEstimator<T>,
        observer: &'a mut dyn SearchObserver<T>,
    ) -> Result<Self, SearchError> {
        let mut problems = settings.problems();
        if let Err(e) = spec.validate() {
            problems.push(format!("space: {e}"));
        }
        if !problems.is_empty() {
            return Err(SearchError::InvalidConfig(problems));
        }
        let controller = match settings.algorithm {
            Algorithm::ReinforcedEa => {
                let mut cfg = settings.controller;
                cfg.resample_until_different |= !settings.allow_noop_mutation;
                Some(MutatorNet::new(&spec, cfg, &mut stream(settings.seed, STREAM_CONTROLLER))?)
            }
            _ => None,
        };
        Ok(Self {
            spec,
            reward: RewardParams::new(T::of(settings.reward.target_latency_us), T::of(settings.reward.alpha)),
            oracle,
            latency,
            observer,
            controller,
            population: Population::new(settings.p),
            history: Vec::with_capacity(settings.n),
            seen: HashSet::new(),
            stats: Vec::with_capacity(settings.n - settings.p + 1),
            init_rng: stream(settings.seed, STREAM_INIT),
            rng: stream(settings.seed, STREAM_SEARCH),
            oracle_rng: stream(settings.seed, STREAM_ORACLE),
            settings,
        })
    }

    pub fn population(&self) -> &Population<T> {
        &self.population
    }

    pub fn history(&self) -> &[Candidate<T>] {
        &self.history
    }

    pub fn stats(&self) -> &[PopulationStats] {
        &self.stats
    }

    pub fn controller(&self) -> Option<&MutatorNet<T>> {
        self.controller.as_ref()
    }

    fn evaluate(&mut self, config: SparsityConfig, parent_id: Option<u64>) -> Result<Candidate<T>, SearchError> {
        let latency_us = self.latency.latency_us(&config)?;
        let auc = self.oracle.evaluate(&config, &mut self.oracle_rng)?.auc;
        let iteration = self.history.len();
        let candidate = Candidate {
            id: iteration as u64,
            reward: reward(auc, latency_us, &self.reward),
            config,
            auc,
            latency_us,
            parent_id,
            iteration,
        };
        self.history.push(candidate.clone());
        self.seen.insert(candidate.config.clone());
        self.observer.on_candidate(&self.spec, &candidate)?;
        Ok(candidate)
    }

    /// Uniform draws until one is predicted within `bound`.
    #[allow(clippy::too_many_arguments)]
    fn sample_within(
        spec: &SpaceSpec,
        latency: &dyn LatencyEstimator<T>,
        bound: T,
        avoid: Option<&HashSet<SparsityConfig>>,
        attempts: &mut u64,
        limit: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<SparsityConfig, SearchError> {
        while *attempts < limit {
            *attempts += 1;
            let config = spec.sample_uniform(rng);
            if avoid.is_some_and(|seen| seen.contains(&config)) {
                continue;
            }
            if latency.latency_us(&config)? <= bound {
                return Ok(config);
            }
        }
        Err(SearchError::InfeasibleInit { bound_us: bound.as_f64(), attempts: *attempts })
    }

    /// Fills the population with `P` uniform configurations predicted within
    /// `relax * T`.
    pub fn initialize_population(&mut self) -> Result<(), SearchError> {
        if !self.history.is_empty() {
            return Err(SearchError::InvalidConfig(vec!["population already initialized".into()]));
        }
        let bound = T::of(self.settings.relax) * self.reward.target_latency_us;
        let mut attempts = 0;
        for _ in 0..self.settings.p {
            let config = Self::sample_within(
                &self.spec,
                self.latency,
                bound,
                self.settings.skip_seen.then_some(&self.seen),
                &mut attempts,
                self.settings.max_init_attempts,
                &mut self.init_rng,
            )?;
            let candidate = self.evaluate(config, None)?;
            self.population.push(candidate)?;
        }
        debug!("initial population drawn with {attempts} attempts");
        self.snapshot()
    }

    fn snapshot(&mut self) -> Result<(), SearchError> {
        let stats = self.population.stats(self.history.len());
        self.observer.on_stats(&stats)?;
        self.stats.push(stats);
        Ok(())
    }

    /// Produces, evaluates and enqueues one child.
    pub fn evolve_step(&mut self) -> Result<Candidate<T>, SearchError> {
        if !self.population.is_full() {
            return Err(SearchError::PopulationSize { found: self.population.len(), capacity: self.population.capacity() });
        }
        let child = match self.settings.algorithm {
            Algorithm::RandomSearch => {
                let bound = T::of(self.settings.relax) * self.reward.target_latency_us;
                let mut attempts = 0;
                let config = Self::sample_within(
                    &self.spec,
                    self.latency,
                    bound,
                    self.settings.skip_seen.then_some(&self.seen),
                    &mut attempts,
                    self.settings.max_init_attempts,
                    &mut self.rng,
                )?;
                self.evaluate(config, None)?
            }
            Algorithm::RandomEa | Algorithm::ReinforcedEa => {
                let parent = self
                    .population
                    .select_parent(self.settings.s, &mut self.rng)
                    .expect("full population is nonempty")
                    .clone();
                let (config, action) = self.mutate(&parent.config)?;
                let child = self.evaluate(config, Some(parent.id))?;
                if let (Some(net), Some(action)) = (self.controller.as_mut(), action) {
                    net.reinforce_update(&parent.config, &action, child.reward)?;
                }
                child
            }
        };
        self.population.advance(child.clone())?;
        self.snapshot()?;
        Ok(child)
    }

    fn mutate(
        &mut self,
        parent: &SparsityConfig,
    ) -> Result<(SparsityConfig, Option<crate::controller::MutationAction<T>>), SearchError> {
        let tries = if self.settings.skip_seen { self.settings.max_skip_attempts } else { 1 };
        let mut policy = self.controller.as_ref().map(|net| net.policy(parent)).transpose()?;
        let mut last = None;
        for _ in 0..tries {
            let proposal = match policy.as_mut() {
                Some(policy) => {
                    let action = policy.sample(&mut self.rng)?;
                    (apply_mutation(&self.spec, parent, &action)?, Some(action))
                }
                None => (random_mutate(&self.spec, parent, !self.settings.allow_noop_mutation, &mut self.rng), None),
            };
            if !self.seen.contains(&proposal.0) {
                return Ok(proposal);
            }
            last = Some(proposal);
        }
        if self.settings.skip_seen {
            if let Some(config) = self.nearest_unseen(parent) {
                debug!("mutations of {} exhausted; taking nearest unseen config", parent.to_record(&self.spec));
                return Ok((config, None));
            }
        }
        Ok(last.expect("at least one proposal"))
    }

    /// Closest unexplored configuration by number of differing genes, first
    /// in enumeration order on ties. Only attempted on enumerable spaces.
    fn nearest_unseen(&self, parent: &SparsityConfig) -> Option<SparsityConfig> {
        match self.spec.space_size() {
            Ok(size) if size <= MAX_ENUMERATED => {}
            _ => return None,
        }
        let genes = parent.genes();
        self.spec
            .enumerate()
            .filter(|c| !self.seen.contains(c))
            .min_by_key(|c| c.genes().iter().zip(&genes).filter(|(a, b)| a != b).count())
    }

    /// Runs the remaining iterations and selects the final model.
    pub fn run(mut self) -> Result<SearchReport<T>, SearchError> {
        if self.history.is_empty() {
            self.initialize_population()?;
        }
        while self.history.len() < self.settings.n {
            let child = self.evolve_step()?;
            if self.history.len().is_multiple_of(50) {
                let s = self.stats.last().expect("snapshot taken");
                info!(
                    "{} iteration {}: population reward mean {:.5} var {:.3e}, child auc {:.4} at {:.1} us",
                    self.settings.algorithm.name(),
                    s.iteration,
                    s.mean_reward,
                    s.reward_variance,
                    child.auc,
                    child.latency_us
                );
            }
        }
        let final_model = select_final(&self.history, self.reward.target_latency_us).cloned();
        Ok(SearchReport { spec: self.spec, settings: self.settings, final_model, history: self.history, stats: self.stats })
    }
}

/// Initialization followed by `N - P` evolution steps.
pub fn run_search<T: Scalar>(
    spec: SpaceSpec,
    settings: SearchSettings,
    oracle: &mut dyn AccuracyOracle<T>,
    latency: &dyn LatencyEstimator<T>,
    observer: &mut dyn SearchObserver<T>,
) -> Result<SearchReport<T>, SearchError> {
    Search::new(spec, settings, oracle, latency, observer)?.run()
}
