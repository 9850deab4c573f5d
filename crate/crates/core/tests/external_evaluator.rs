use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparsity_search::engine::{run_search, Algorithm, JsonlHistory, SearchSettings};
use sparsity_search::latency::{AnalyticLatency, CostModelParams};
use sparsity_search::oracle::{AccuracyOracle, ExternalEvaluator, Source};
use sparsity_search::{OracleError, SearchError, SpaceSpec, SparsityConfig};

const EXTRACT_ID: &str = r#"id=$(printf '%s' "$line" | sed 's/.*"id":\([0-9]*\).*/\1/')"#;

fn evaluator(body: &str, timeout: Duration) -> ExternalEvaluator {
    let script = format!("while IFS= read -r line; do {EXTRACT_ID}; {body}; done");
    ExternalEvaluator::spawn(SpaceSpec::default(), &script, 500, timeout).unwrap()
}

fn config() -> SparsityConfig {
    let spec = SpaceSpec::default();
    SparsityConfig::from_sparsities(&spec, &[0.25, 0.0, 0.5, 0.75], &[0.37, 0.0, 0.99, 0.1]).unwrap()
}

#[test]
fn echoes_matching_ids() {
    let mut ev = evaluator(r#"printf '{"id": %s, "auc": 0.8612}\n' "$id""#, Duration::from_secs(10));
    for _ in 0..3 {
        assert_eq!(ev.external_auc(&config(), 500).unwrap(), 0.8612);
    }
    let r: sparsity_search::oracle::OracleResult<f64> =
        ev.evaluate(&config(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(r.source, Source::External);
}

#[test]
fn forwards_budget_and_sparsities_verbatim() {
    // Replies with the budget as thousandths of AUC and fails unless the
    // attention list arrives as written.
    let body = r#"b=$(printf '%s' "$line" | sed 's/.*"budget":\([0-9]*\).*/\1/');
        case "$line" in *'"attention_sparsity":[0.25,0.0,0.5,0.75]'*) ;; *) exit 3;; esac;
        printf '{"id": %s, "auc": 0.%s}\n' "$id" "$b""#;
    let mut ev = evaluator(body, Duration::from_secs(10));
    assert_eq!(ev.external_auc(&config(), 500).unwrap(), 0.5);
    assert_eq!(ev.external_auc(&config(), 731).unwrap(), 0.731);
}

#[test]
fn id_mismatch_is_a_protocol_error() {
    let mut ev = evaluator(r#"printf '{"id": %s, "auc": 0.8}\n' "$((id + 1))""#, Duration::from_secs(10));
    match ev.external_auc(&config(), 500) {
        Err(OracleError::IdMismatch { expected: 0, got: 1 }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn non_numeric_auc_is_malformed() {
    let mut ev = evaluator(r#"printf '{"id": %s, "auc": "high"}\n' "$id""#, Duration::from_secs(10));
    match ev.external_auc(&config(), 500) {
        Err(OracleError::Malformed { raw, .. }) => assert!(raw.contains("high")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn exited_evaluator_is_reported() {
    let mut ev = ExternalEvaluator::spawn(SpaceSpec::default(), "read -r line; exit 0", 500, Duration::from_secs(10)).unwrap();
    assert!(matches!(ev.external_auc(&config(), 500), Err(OracleError::EvaluatorExited { id: 0 })));
}

#[test]
fn slow_evaluator_times_out() {
    let mut ev = evaluator("sleep 5", Duration::from_millis(200));
    assert!(matches!(ev.external_auc(&config(), 500), Err(OracleError::Timeout { id: 0, .. })));
}

#[test]
fn crash_mid_search_leaves_partial_history() {
    let spec = SpaceSpec::default();
    let script = format!(
        r#"n=0; while IFS= read -r line; do n=$((n + 1)); [ "$n" -gt 12 ] && exit 1; {EXTRACT_ID}; printf '{{"id": %s, "auc": 0.8%s}}\n' "$id" "$n"; done"#
    );
    let ev = ExternalEvaluator::spawn(spec, &script, 500, Duration::from_secs(10)).unwrap();
    let mut oracle = ev;
    let latency = AnalyticLatency::<f64> { spec, params: CostModelParams::calibrated_to(&spec, 3274.24, 1200.0, 0.4) };
    let mut settings = SearchSettings::new(Algorithm::RandomEa, 1900.0, 3);
    settings.n = 40;
    settings.p = 10;
    settings.s = 10;
    settings.allow_noop_mutation = false;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.jsonl");
    let mut sink = JsonlHistory::new(std::fs::File::create(&path).unwrap());
    let err = run_search(spec, settings, &mut oracle, &latency, &mut sink).unwrap_err();
    assert!(matches!(err, SearchError::Oracle(OracleError::EvaluatorExited { .. })), "{err:?}");
    let lines = std::fs::read_to_string(&path).unwrap();
    assert_eq!(lines.lines().count(), 12);
}
