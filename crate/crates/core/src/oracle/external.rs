//! Line-delimited JSON protocol to an external pruning/evaluation process.
//!
//! Each request is one line on the evaluator's stdin:
//! `{"id": 7, "attention_sparsity": [..], "ffn_sparsity": [..], "budget": 500}`
//! and the evaluator answers with one line on stdout: `{"id": 7, "auc": 0.8612}`.
//! Exactly one request is in flight at a time.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use log::{debug, error};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{AccuracyOracle, OracleResult, Source};
use crate::error::OracleError;
use crate::scalar::Scalar;
use crate::space::{SpaceSpec, SparsityConfig};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub id: u64,
    pub attention_sparsity: Vec<f64>,
    pub ffn_sparsity: Vec<f64>,
    pub budget: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub id: u64,
    pub auc: f64,
}

impl EvalResponse {
    /// Parses and validates one response line.
    pub fn parse(line: &str) -> Result<Self, OracleError> {
        let malformed = |reason: String| OracleError::Malformed { reason, raw: line.to_string() };
        let value: serde_json::Value =
            serde_json::from_str(line.trim()).map_err(|e| malformed(format!("not JSON: {e}")))?;
        let id = value
            .get("id")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| malformed("missing or non-integer `id`".into()))?;
        let auc = value
            .get("auc")
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| malformed("missing or non-numeric `auc`".into()))?;
        if !(auc > 0.0 && auc < 1.0) {
            return Err(malformed(format!("auc {auc} outside (0, 1)")));
        }
        Ok(Self { id, auc })
    }
}

/// A running evaluator process.
pub struct ExternalEvaluator {
    spec: SpaceSpec,
    command: String,
    child: Child,
    stdin: BufWriter<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    budget: u64,
    timeout: Duration,
}

impl ExternalEvaluator {
    /// Launches `command` through `sh -c` with piped stdin/stdout. The
    /// evaluator is ready once the pipes are attached; no greeting is
    /// exchanged.
    pub fn spawn(spec: SpaceSpec, command: &str, budget: u64, timeout: Duration) -> Result<Self, OracleError> {
        let spawn_err = |source| OracleError::Spawn { command: command.to_string(), source };
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(spawn_err)?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self { spec, command: command.to_string(), child, stdin, lines, next_id: 0, budget, timeout })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    /// Sends one request and blocks for its answer.
    pub fn external_auc(&mut self, config: &SparsityConfig, budget: u64) -> Result<f64, OracleError> {
        config.validate(&self.spec).map_err(|e| OracleError::Malformed { reason: e.to_string(), raw: String::new() })?;
        let id = self.next_id;
        self.next_id += 1;
        let request = EvalRequest {
            id,
            attention_sparsity: config.attention_sparsity(&self.spec),
            ffn_sparsity: config.ffn_sparsity(&self.spec),
            budget,
        };
        let line = serde_json::to_string(&request).expect("request serializes");
        debug!("evaluator <- {line}");
        let sent = writeln!(self.stdin, "{line}").and_then(|_| self.stdin.flush());
        if let Err(e) = sent {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                return Err(OracleError::EvaluatorExited { id });
            }
            return Err(e.into());
        }
        let raw = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(raw)) => raw,
            Ok(Err(e)) => return Err(e.into()),
            Err(RecvTimeoutError::Disconnected) => return Err(OracleError::EvaluatorExited { id }),
            Err(RecvTimeoutError::Timeout) => {
                return Err(OracleError::Timeout { id, secs: self.timeout.as_secs() })
            }
        };
        debug!("evaluator -> {raw}");
        let response = EvalResponse::parse(&raw).inspect_err(|e| error!("{e}"))?;
        if response.id != id {
            return Err(OracleError::IdMismatch { expected: id, got: response.id });
        }
        Ok(response.auc)
    }
}

impl<T: Scalar> AccuracyOracle<T> for ExternalEvaluator {
    fn evaluate(&mut self, config: &SparsityConfig, _rng: &mut dyn RngCore) -> Result<OracleResult<T>, OracleError> {
        let auc = self.external_auc(config, self.budget)?;
        Ok(OracleResult { auc: T::of(auc), source: Source::External })
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
