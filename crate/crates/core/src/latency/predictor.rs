use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::forest::{ForestParams, RandomForest};
use super::samples::LatencySample;
use crate::error::LatencyError;
use crate::scalar::Scalar;
use crate::space::{SpaceSpec, SparsityConfig};

pub const MIN_TRAINING_SAMPLES: usize = 100;

const FORMAT_TAG: &str = "sparsity-latency-forest";
const FORMAT_VERSION: u32 = 1;

/// Feature vector: retained heads of every layer, then retained FFN dims.
pub fn features<T: Scalar>(spec: &SpaceSpec, config: &SparsityConfig) -> Vec<T> {
    let retained = config.retained(spec);
    retained
        .iter()
        .map(|&(h, _)| T::of_usize(h))
        .chain(retained.iter().map(|&(_, f)| T::of_usize(f)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetrics {
    pub train_rows: usize,
    pub validation_rows: usize,
    pub rmse_us: f64,
    /// Root-mean-square percentage error as a fraction.
    pub rmspe: f64,
    /// Every training target was identical.
    pub constant_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LatencyModel<T: Scalar> {
    format: String,
    version: u32,
    pub spec: SpaceSpec,
    pub feature_spec: String,
    pub metrics: TrainingMetrics,
    forest: RandomForest<T>,
}

/// Shuffled train/validation row split; the first draw `train_predictor`
/// makes from its random source.
pub fn split_rows<R: RngCore>(n: usize, split: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let n_train = ((split * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let val = order.split_off(n_train.min(n));
    (order, val)
}

/// Trains the forest on a random `split` fraction of `samples` and scores
/// it on the rest.
pub fn train_predictor<T: Scalar, R: RngCore>(
    spec: &SpaceSpec,
    samples: &[LatencySample<T>],
    split: f64,
    params: ForestParams,
    rng: &mut R,
) -> Result<LatencyModel<T>, LatencyError> {
    if samples.len() < MIN_TRAINING_SAMPLES {
        return Err(LatencyError::TooFewSamples { needed: MIN_TRAINING_SAMPLES, got: samples.len() });
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(LatencyError::BadSplit(split));
    }
    for s in samples {
        s.config.validate(spec)?;
        let v = s.latency_us.as_f64();
        if !(v.is_finite() && v > 0.0) {
            return Err(LatencyError::BadLatency(v));
        }
    }
    let (train_idx, val_idx) = split_rows(samples.len(), split, rng);
    let (train_idx, val_idx) = (&train_idx[..], &val_idx[..]);

    let x: Vec<Vec<T>> = train_idx.iter().map(|&i| features(spec, &samples[i].config)).collect();
    let y: Vec<T> = train_idx.iter().map(|&i| samples[i].latency_us).collect();
    let constant_target = y.iter().all(|&v| v == y[0]);
    if constant_target {
        warn!("latency training targets are constant ({}); predictor will be constant", y[0]);
    }
    let forest = RandomForest::fit(&x, &y, params, rng)?;

    let mut sq = 0.0;
    let mut sq_pct = 0.0;
    for &i in val_idx {
        let truth = samples[i].latency_us.as_f64();
        let pred = forest.predict(&features(spec, &samples[i].config))?.as_f64();
        sq += (pred - truth).powi(2);
        sq_pct += ((pred - truth) / truth).powi(2);
    }
    let m = val_idx.len() as f64;
    let metrics = TrainingMetrics {
        train_rows: train_idx.len(),
        validation_rows: val_idx.len(),
        rmse_us: (sq / m).sqrt(),
        rmspe: (sq_pct / m).sqrt(),
        constant_target,
    };
    Ok(LatencyModel {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        spec: *spec,
        feature_spec: format!(
            "retained_heads[1..={l}], retained_ffn[1..={l}]",
            l = spec.num_layers
        ),
        metrics,
        forest,
    })
}

impl<T: Scalar> LatencyModel<T> {
    /// Mean of the per-tree predictions.
    pub fn predict(&self, config: &SparsityConfig) -> Result<T, LatencyError> {
        config.validate(&self.spec)?;
        let v = self.forest.predict(&features(&self.spec, config))?;
        Ok(v.max(T::min_positive_value()))
    }

    pub fn forest(&self) -> &RandomForest<T> {
        &self.forest
    }

    pub fn save(&self, path: &Path) -> Result<(), LatencyError> {
        let io_err = |source| LatencyError::Io { path: path.to_path_buf(), source };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, LatencyError> {
        let io_err = |source| LatencyError::Io { path: path.to_path_buf(), source };
        let model: Self = serde_json::from_reader(BufReader::new(File::open(path).map_err(io_err)?))?;
        if model.format != FORMAT_TAG || model.version != FORMAT_VERSION {
            return Err(LatencyError::Format { format: model.format, version: model.version });
        }
        model.spec.validate()?;
        if model.forest.trees().is_empty() {
            return Err(LatencyError::Untrained);
        }
        Ok(model)
    }
}
