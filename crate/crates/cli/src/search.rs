use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};
use sparsity_search::engine::{Algorithm, JsonlHistory, OracleConfig, RunConfig, Search};
use sparsity_search::oracle::{AccuracyOracle, CachedOracle, ExternalEvaluator, SurrogateOracle, SurrogateParams};
use sparsity_search::{LatencyModel, SearchError};

use crate::EXIT_INFEASIBLE;

#[derive(Serialize)]
struct InputDigest {
    path: PathBuf,
    sha256: String,
}

/// Everything needed to repeat a run.
#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    config: &'a RunConfig,
    inputs: Vec<InputDigest>,
    started_unix_s: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    finished_unix_s: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    outcome: Option<String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputDigest { path: path.to_path_buf(), sha256: hex::encode(Sha256::digest(&bytes)) })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Parses and validates a run configuration, resolving relative paths
/// against the configuration file's directory. Every problem is reported.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading run config {}", path.display()))?;
    let mut config: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut config.latency_model, &mut config.output_dir] {
        if p.is_relative() && !p.as_os_str().is_empty() {
            *p = base.join(&*p);
        }
    }
    let mut problems = match config.validate() {
        Ok(()) => Vec::new(),
        Err(SearchError::InvalidConfig(list)) => list,
        Err(e) => vec![e.to_string()],
    };
    if !config.latency_model.as_os_str().is_empty() && !config.latency_model.is_file() {
        problems.push(format!("latency_model {} does not exist", config.latency_model.display()));
    }
    if !problems.is_empty() {
        return Err(SearchError::InvalidConfig(problems).into());
    }
    Ok(config)
}

fn build_oracle(config: &RunConfig) -> Result<Box<dyn AccuracyOracle<f64>>> {
    Ok(match &config.oracle {
        OracleConfig::Surrogate { params, noise_sigma } => {
            let params = match params {
                Some(p) => p.clone(),
                None => SurrogateParams::default_for(&config.space).with_noise(*noise_sigma),
            };
            Box::new(SurrogateOracle::new(config.space, params)?)
        }
        OracleConfig::External { command, budget, timeout_secs } => Box::new(ExternalEvaluator::spawn(
            config.space,
            command,
            *budget,
            Duration::from_secs(*timeout_secs),
        )?),
    })
}

fn is_infeasible(e: &anyhow::Error) -> bool {
    matches!(
        e.downcast_ref::<SearchError>(),
        Some(SearchError::InfeasibleInit { .. } | SearchError::NoFeasibleModel { .. })
    )
}

pub fn run(config_path: &Path) -> Result<ExitCode> {
    let config = load_config(config_path)?;
    let model = LatencyModel::load(&config.latency_model)
        .with_context(|| format!("loading latency model {}", config.latency_model.display()))?;
    if model.spec != config.space {
        return Err(SearchError::InvalidConfig(vec![format!(
            "latency model was trained for {:?} but the run uses {:?}",
            model.spec, config.space
        )])
        .into());
    }
    let inputs = vec![digest(config_path)?, digest(&config.latency_model)?];
    let out = &config.output_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut manifest = RunManifest {
        tool: env!("CARGO_BIN_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: "search",
        seed: config.seed,
        config: &config,
        inputs,
        started_unix_s: now(),
        finished_unix_s: None,
        outcome: None,
    };
    write_json(&out.join("manifest.json"), &manifest)?;

    let result = execute(&config, &model);
    manifest.finished_unix_s = Some(now());
    manifest.outcome = Some(match &result {
        Ok(Some(_)) => "feasible".into(),
        Ok(None) => "no feasible model".into(),
        Err(e) if is_infeasible(e) => "infeasible".into(),
        Err(e) => format!("error: {e:#}"),
    });
    write_json(&out.join("manifest.json"), &manifest)?;

    match result {
        Ok(Some(line)) => {
            println!("{line}");
            Ok(ExitCode::SUCCESS)
        }
        Ok(None) => {
            eprintln!(
                "infeasible: no explored model meets the latency target {} us; see {}",
                config.target_latency_us,
                out.join("report.json").display()
            );
            Ok(ExitCode::from(EXIT_INFEASIBLE))
        }
        Err(e) if is_infeasible(&e) => {
            eprintln!("infeasible: {e:#}");
            Ok(ExitCode::from(EXIT_INFEASIBLE))
        }
        Err(e) => Err(e),
    }
}

/// Runs the search and writes its outputs. Returns a summary line when a
/// feasible model was found.
fn execute(config: &RunConfig, model: &LatencyModel) -> Result<Option<String>> {
    let out = &config.output_dir;
    let settings = config.settings();
    let inner = build_oracle(config)?;
    let mut cached;
    let mut plain;
    let oracle: &mut dyn AccuracyOracle<f64> = if config.cache {
        cached = CachedOracle::new(inner);
        &mut cached
    } else {
        plain = inner;
        &mut plain
    };
    let history_path = out.join("history.jsonl");
    let file = File::create(&history_path).with_context(|| format!("creating {}", history_path.display()))?;
    let mut history = JsonlHistory::new(BufWriter::new(file));

    info!(
        "{} with N={}, P={}, S={}, T={} us, alpha={}, seed={}",
        settings.algorithm.name(),
        settings.n,
        settings.p,
        settings.s,
        settings.reward.target_latency_us,
        settings.reward.alpha,
        settings.seed
    );
    let mut search = Search::new(config.space, settings, oracle, model, &mut history)?;
    search.initialize_population()?;
    while search.history().len() < config.n {
        search.evolve_step()?;
    }
    let checkpoint = search.controller().map(|net| net.to_json()).transpose()?;
    let report = search.run()?;

    write_json(&out.join("report.json"), &report.to_file())?;
    let stats_path = out.join("population_stats.csv");
    let mut w = BufWriter::new(File::create(&stats_path).with_context(|| format!("creating {}", stats_path.display()))?);
    writeln!(w, "iteration,mean_reward,reward_variance,max_reward")?;
    for s in &report.stats {
        writeln!(w, "{},{},{},{}", s.iteration, s.mean_reward, s.reward_variance, s.max_reward)?;
    }
    w.flush()?;
    if let Some(json) = checkpoint {
        fs::write(out.join("mutator.json"), json)?;
    }
    if config.algorithm == Algorithm::ReinforcedEa && report.final_model.is_none() {
        warn!("reinforced search ended without a feasible model");
    }
    Ok(report.final_model.map(|m| {
        format!(
            "final model {} : auc {:.6}, predicted latency {:.2} us (id {}, iteration {})",
            m.config.to_record(&config.space),
            m.auc,
            m.latency_us,
            m.id,
            m.iteration
        )
    }))
}
