use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparsity_search::latency::{read_samples, train_predictor, write_samples_to, ForestParams, LatencySample};
use sparsity_search::{CostModelParams, LatencyModel, SpaceSpec};

pub fn generate(spec: &SpaceSpec, count: usize, seed: u64, noise_sigma: f64, out: &Path) -> Result<()> {
    let cost = CostModelParams::calibrated(spec).with_noise(noise_sigma);
    cost.validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<LatencySample<f64>> = (0..count)
        .map(|_| {
            let config = spec.sample_uniform(&mut rng);
            LatencySample { latency_us: cost.measure(spec, &config, &mut rng), config }
        })
        .collect();
    write_samples_to(spec, &samples, out)?;
    println!("wrote {count} samples to {}", out.display());
    Ok(())
}

pub fn train(spec: &SpaceSpec, samples: &Path, split: f64, seed: u64, out: &Path) -> Result<()> {
    if !(split > 0.0 && split < 1.0) {
        bail!("--split must lie strictly between 0 and 1, got {split}");
    }
    let rows: Vec<LatencySample<f64>> =
        read_samples(spec, samples).with_context(|| format!("reading samples from {}", samples.display()))?;
    let model: LatencyModel =
        train_predictor(spec, &rows, split, ForestParams::default(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let m = &model.metrics;
    println!("train rows: {}, validation rows: {}", m.train_rows, m.validation_rows);
    println!("validation RMSE: {:.2} us", m.rmse_us);
    println!("validation RMSPE: {:.2}%", 100.0 * m.rmspe);
    model.save(out)?;
    println!("model written to {}", out.display());
    Ok(())
}
