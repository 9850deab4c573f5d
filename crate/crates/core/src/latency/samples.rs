//! Latency sample files: `a1,f1,...,aL,fL,latency_us` CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::LatencyError;
use crate::scalar::Scalar;
use crate::space::{parse_gene_fields, SpaceSpec, SparsityConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LatencySample<T> {
    pub config: SparsityConfig,
    pub latency_us: T,
}

pub fn header(spec: &SpaceSpec) -> String {
    let mut cols: Vec<String> = (1..=spec.num_layers).flat_map(|l| [format!("a{l}"), format!("f{l}")]).collect();
    cols.push("latency_us".into());
    cols.join(",")
}

pub fn write_samples<T: Scalar, W: Write>(
    spec: &SpaceSpec,
    samples: &[LatencySample<T>],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{}", header(spec))?;
    for s in samples {
        writeln!(out, "{},{}", s.config.to_record(spec), s.latency_us)?;
    }
    out.flush()
}

/// Reads a sample file; malformed rows are reported with 1-based line numbers.
pub fn read_samples<T: Scalar>(spec: &SpaceSpec, path: &Path) -> Result<Vec<LatencySample<T>>, LatencyError> {
    let io_err = |source| LatencyError::Io { path: path.to_path_buf(), source };
    let malformed = |line: usize, message: String| LatencyError::Malformed { path: path.to_path_buf(), line, message };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut lines = reader.lines().enumerate();
    let expected = header(spec);
    match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(io_err)?;
            if line.trim() != expected {
                return Err(malformed(1, format!("expected header `{expected}`, found `{}`", line.trim())));
            }
        }
        None => return Err(malformed(1, "empty file".into())),
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(io_err)?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if fields.len() != spec.num_genes() + 1 {
            return Err(malformed(lineno, format!("expected {} fields, found {}", spec.num_genes() + 1, fields.len())));
        }
        let config = parse_gene_fields(spec, &fields[..spec.num_genes()]).map_err(|e| malformed(lineno, e.to_string()))?;
        let latency: f64 = fields[spec.num_genes()]
            .parse()
            .map_err(|_| malformed(lineno, format!("latency `{}` is not a number", fields[spec.num_genes()])))?;
        if !(latency.is_finite() && latency > 0.0) {
            return Err(malformed(lineno, format!("latency {latency} must be positive")));
        }
        samples.push(LatencySample { config, latency_us: T::of(latency) });
    }
    Ok(samples)
}

/// Writes samples to `path`.
pub fn write_samples_to<T: Scalar>(spec: &SpaceSpec, samples: &[LatencySample<T>], path: &Path) -> Result<(), LatencyError> {
    let io_err = |source| LatencyError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    write_samples(spec, samples, BufWriter::new(file)).map_err(io_err)
}
