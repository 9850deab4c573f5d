use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::warn;
use sparsity_search::engine::ReportFile;

struct Column {
    label: String,
    report: ReportFile,
}

pub fn run(paths: &[std::path::PathBuf], csv_out: Option<&Path>, every: usize) -> Result<()> {
    if paths.len() < 2 {
        bail!("compare needs at least two reports");
    }
    if every == 0 {
        bail!("--every must be positive");
    }
    let mut columns = Vec::new();
    for (i, path) in paths.iter().enumerate() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let report: ReportFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if report.population_stats.is_empty() {
            bail!("{} has no population statistics", path.display());
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let parent = path.parent().and_then(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned());
        let base = match (stem.as_str(), parent) {
            ("report", Some(dir)) => dir,
            _ => stem,
        };
        let label = format!("{}:{}", i + 1, base);
        columns.push(Column { label, report });
    }
    let last: Vec<usize> =
        columns.iter().map(|c| c.report.population_stats.last().expect("nonempty").iteration).collect();
    let shortest = *last.iter().min().expect("at least two reports");
    if last.iter().any(|&l| l != shortest) {
        warn!("reports end at different iterations {last:?}; truncating to {shortest}");
    }
    let checkpoints: Vec<usize> = (every..=shortest).step_by(every).collect();
    if checkpoints.is_empty() {
        bail!("no checkpoint at a multiple of {every} within {shortest} iterations");
    }

    let mut csv = String::from("iteration");
    for c in &columns {
        write!(csv, ",{0}_mean_reward,{0}_reward_variance", c.label)?;
    }
    csv.push('\n');
    let mut table = format!("{:>9}", "iteration");
    for c in &columns {
        write!(table, "  {:>24}", format!("{} ({})", c.label, c.report.algorithm.name()))?;
    }
    table.push('\n');
    for &it in &checkpoints {
        write!(csv, "{it}")?;
        write!(table, "{it:>9}")?;
        for c in &columns {
            match c.report.population_stats.iter().find(|s| s.iteration == it) {
                Some(s) => {
                    write!(csv, ",{},{}", s.mean_reward, s.reward_variance)?;
                    write!(table, "  {:>24}", format!("{:.5} var {:.2e}", s.mean_reward, s.reward_variance))?;
                }
                None => {
                    write!(csv, ",,")?;
                    write!(table, "  {:>24}", "-")?;
                }
            }
        }
        csv.push('\n');
        table.push('\n');
    }
    print!("{table}");
    if let Some(out) = csv_out {
        fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}
