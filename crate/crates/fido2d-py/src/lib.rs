//! Python bindings: drive scenarios, explore threat configurations and
//! check the trace lemmas from Python.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use fido2d::crypto;
use fido2d::devices::UserMode;
use fido2d::harness::{
    check_lemma1, check_lemma2, explore as explore_rs, run, scenarios, Bounds, Label, Schedule,
    ThreatConfig, TraceEvent,
};

fn value_err(text: impl ToString) -> PyErr {
    PyValueError::new_err(text.to_string())
}

/// Outcome of executing one scenario.
#[pyclass]
struct ScenarioResult {
    /// Trace events, one JSON line each.
    #[pyo3(get)]
    trace: Vec<String>,
    #[pyo3(get)]
    lemma1_holds: bool,
    #[pyo3(get)]
    lemma2_holds: bool,
    /// Counterexample of the first failing lemma, one JSON line per event.
    #[pyo3(get)]
    counterexample: Vec<String>,
    /// Full structured run log; byte-identical for identical inputs.
    #[pyo3(get)]
    log: String,
    /// Completed transactions as (initiator, server, transaction).
    #[pyo3(get)]
    completions: Vec<(String, String, String)>,
}

#[pymethods]
impl ScenarioResult {
    fn __repr__(&self) -> String {
        format!(
            "ScenarioResult(events={}, lemma1={}, lemma2={}, completions={})",
            self.trace.len(),
            self.lemma1_holds,
            self.lemma2_holds,
            self.completions.len()
        )
    }
}

/// Outcome of one exploration campaign.
#[pyclass]
struct ExploreResult {
    #[pyo3(get)]
    runs: u64,
    #[pyo3(get)]
    violations: u64,
    /// Whether the protocol claims to keep the lemmas under this threat
    /// configuration.
    #[pyo3(get)]
    expected_secure: bool,
    #[pyo3(get)]
    summary: String,
    /// Full report: summary plus each minimized violating schedule and its
    /// trace.
    #[pyo3(get)]
    detail: String,
}

#[pymethods]
impl ExploreResult {
    /// True when the observation matches the security claim.
    fn as_expected(&self) -> bool {
        (self.violations == 0) == self.expected_secure
    }

    fn __repr__(&self) -> String {
        format!(
            "ExploreResult(runs={}, violations={}, expected_secure={})",
            self.runs, self.violations, self.expected_secure
        )
    }
}

fn result_from_run(out: fido2d::harness::RunOutput) -> ScenarioResult {
    let v1 = check_lemma1(&out.trace);
    let v2 = check_lemma2(&out.trace);
    let counterexample = v1
        .counterexample
        .as_ref()
        .or(v2.counterexample.as_ref())
        .map(|cex| cex.iter().map(TraceEvent::to_json_line).collect())
        .unwrap_or_default();
    ScenarioResult {
        trace: out.trace.iter().map(TraceEvent::to_json_line).collect(),
        lemma1_holds: v1.holds,
        lemma2_holds: v2.holds,
        counterexample,
        log: out.log,
        completions: out
            .trace
            .iter()
            .filter(|e| e.label == Label::TransactionComplete)
            .map(|e| (e.initiator.clone(), e.server.clone(), e.transaction.clone()))
            .collect(),
    }
}

/// Execute scenario text (the `docs/scenarios.md` grammar) and check both
/// lemmas on the resulting trace.
#[pyfunction]
#[pyo3(signature = (text, seed = 0, max_steps = 200))]
fn run_scenario(text: &str, seed: u64, max_steps: u64) -> PyResult<ScenarioResult> {
    let actions = Schedule::parse(text).map_err(value_err)?;
    let schedule = Schedule {
        seed,
        bounds: Bounds {
            max_steps,
            ..Bounds::default()
        },
        actions,
    };
    let out = run(&schedule).map_err(value_err)?;
    Ok(result_from_run(out))
}

/// The built-in scenarios as scenario text. Names: honest, manipulation,
/// manipulation-compare, initiation, dual-compromise, replay.
#[pyfunction]
fn builtin_scenario(name: &str) -> PyResult<String> {
    let schedule = match name {
        "honest" => scenarios::honest(0),
        "manipulation" => scenarios::manipulation(UserMode::NoCompare),
        "manipulation-compare" => scenarios::manipulation(UserMode::Compare),
        "initiation" => scenarios::initiation(),
        "dual-compromise" => scenarios::dual_compromise(),
        "replay" => scenarios::replay_defense(),
        other => return Err(value_err(format!("unknown scenario {other:?}"))),
    };
    Ok(schedule.to_text())
}

/// Randomized bounded exploration under a threat configuration, e.g.
/// `"compromise-b,phishing,compare"`.
#[pyfunction]
#[pyo3(signature = (threats, runs = 1000, seed = 0, threads = 0, max_steps = 200))]
fn explore(
    py: Python<'_>,
    threats: &str,
    runs: u64,
    seed: u64,
    threads: usize,
    max_steps: u64,
) -> PyResult<ExploreResult> {
    let config = ThreatConfig::parse(threats).map_err(value_err)?;
    let bounds = Bounds {
        max_steps,
        ..Bounds::default()
    };
    let threads = if threads == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        threads
    };
    let report = py.detach(move || explore_rs(&config, seed, runs, &bounds, threads));
    Ok(ExploreResult {
        runs: report.runs,
        violations: report.violations.len() as u64,
        expected_secure: config.expected_secure(),
        summary: report.summary_line(),
        detail: report.detail_text(),
    })
}

/// Check both lemmas over an explicit event list of
/// `(step, label, initiator, server, transaction)` tuples.
#[pyfunction]
fn check_lemmas(events: Vec<(u64, String, String, String, String)>) -> PyResult<(bool, bool)> {
    let trace: Vec<TraceEvent> = events
        .into_iter()
        .map(|(step, label, initiator, server, transaction)| {
            let label = Label::ALL
                .iter()
                .find(|l| l.name() == label)
                .copied()
                .ok_or_else(|| value_err(format!("unknown label {label:?}")))?;
            Ok(TraceEvent::new(
                step,
                label,
                &initiator,
                &server,
                &transaction,
            ))
        })
        .collect::<PyResult<_>>()?;
    Ok((check_lemma1(&trace).holds, check_lemma2(&trace).holds))
}

/// Derive a verification key from a 32-byte seed.
#[pyfunction]
fn keygen(seed: &[u8]) -> PyResult<Vec<u8>> {
    let kp = crypto::keygen(seed).map_err(value_err)?;
    Ok(kp.public.0)
}

/// Sign a message with the key derived from a 32-byte seed.
#[pyfunction]
fn sign(seed: &[u8], message: &[u8]) -> PyResult<Vec<u8>> {
    let kp = crypto::keygen(seed).map_err(value_err)?;
    Ok(crypto::sign(&kp.secret, message).0)
}

/// Verify a signature; total over arbitrary bytes, never raises.
#[pyfunction]
fn verify(public: &[u8], message: &[u8], signature: &[u8]) -> bool {
    crypto::verify(
        &crypto::PublicKey(public.to_vec()),
        message,
        &crypto::Signature(signature.to_vec()),
    )
}

#[pymodule]
fn fido2d_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SIGNATURE_ALGORITHM", crypto::SIGNATURE_ALGORITHM)?;
    m.add_class::<ScenarioResult>()?;
    m.add_class::<ExploreResult>()?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(explore, m)?)?;
    m.add_function(wrap_pyfunction!(check_lemmas, m)?)?;
    m.add_function(wrap_pyfunction!(keygen, m)?)?;
    m.add_function(wrap_pyfunction!(sign, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
