//! Library surface of the command-line driver, kept separate from the
//! binary so integration tests can execute runs in-process.

pub mod config;
pub mod data;

use std::io::Write;

use coldstream_core::error::{Error, Result};
use coldstream_core::metrics::{self, Prediction};
use coldstream_core::ntrf::{NtrfProbe, ProbeRow, ProbeSummary};
use coldstream_core::replay::ReplayBuffer;
use coldstream_core::stream::{self, RunSummary, StreamState};
use sha2::{Digest, Sha256};

use config::RunFile;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 of the (canonically re-dumped) config, recorded in every
/// output header so a run is reconstructible from its artifacts.
pub fn config_hash(run: &RunFile) -> Result<String> {
    let dumped = config::dump_config(run)?;
    let digest = Sha256::digest(dumped.as_bytes());
    Ok(format!("{digest:x}"))
}

/// Execute a full run: header line, metrics records, optional omega
/// line. Returns the summary and the final state for checkpointing.
pub fn execute_run<W: Write>(run: &RunFile, log: &mut W) -> Result<(RunSummary, StreamState)> {
    let header = serde_json::json!({
        "artifact_version": ARTIFACT_VERSION,
        "config_sha256": config_hash(run)?,
    });
    writeln!(log, "{header}")?;
    let tasks: Vec<_> = run
        .dataset
        .iter()
        .map(data::build_task)
        .collect::<Result<_>>()?;
    stream::run_with_state(&run.stream, &tasks, run.offline_refs.as_deref(), log)
}

/// Recompute metrics from a saved predictions CSV (`pred,conf,label`).
pub fn eval_predictions(text: &str, bins: usize) -> Result<serde_json::Value> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut preds = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            offset: e.position().map(|p| p.byte() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        if record.len() != 3 {
            return Err(Error::Parse {
                offset: record.position().map(|p| p.byte() as usize).unwrap_or(0),
                message: format!("expected 3 fields (pred,conf,label), got {}", record.len()),
            });
        }
        let parse = |i: usize| -> Result<f64> {
            record[i].trim().parse().map_err(|_| Error::Parse {
                offset: record.position().map(|p| p.byte() as usize).unwrap_or(0),
                message: format!("non-numeric field `{}`", &record[i]),
            })
        };
        preds.push(Prediction {
            predicted: parse(0)? as u32,
            confidence: parse(1)?,
            label: parse(2)? as u32,
        });
    }
    if preds.is_empty() {
        return Err(Error::Input("predictions file has no rows".into()));
    }
    let correct = preds.iter().filter(|p| p.predicted == p.label).count();
    Ok(serde_json::json!({
        "artifact_version": ARTIFACT_VERSION,
        "n": preds.len(),
        "accuracy": correct as f64 / preds.len() as f64,
        "ece": metrics::ece(&preds, bins)?,
        "bins": bins,
    }))
}

/// Run the probe grid and render the CSV report (header comment with
/// version and config hash, then one row per grid point).
pub fn sweep_csv(probe: &NtrfProbe, rows: &[ProbeRow]) -> Result<String> {
    let probe_toml = toml::to_string(probe).map_err(|e| Error::Config(e.to_string()))?;
    let digest = Sha256::digest(probe_toml.as_bytes());
    let mut out = format!("# artifact_version={ARTIFACT_VERSION} config_sha256={digest:x}\n");
    out.push_str("m,depth,omega,seed,residual,delta_f,convexity_gap,hidden_pass_rate,grad_ratio\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.m,
            r.depth,
            r.omega,
            r.seed,
            r.residual,
            r.delta_f,
            r.convexity_gap,
            r.hidden_pass_rate,
            r.grad_ratio
        ));
    }
    Ok(out)
}

pub fn sweep_summary_json(probe: &NtrfProbe, summary: &ProbeSummary) -> Result<String> {
    let probe_toml = toml::to_string(probe).map_err(|e| Error::Config(e.to_string()))?;
    let digest = Sha256::digest(probe_toml.as_bytes());
    let value = serde_json::json!({
        "artifact_version": ARTIFACT_VERSION,
        "config_sha256": format!("{digest:x}"),
        "summary": summary,
    });
    Ok(serde_json::to_string_pretty(&value)?)
}

/// Human-readable summary of a saved buffer snapshot.
pub fn inspect_buffer(buffer: &ReplayBuffer) -> serde_json::Value {
    let histogram: serde_json::Map<String, serde_json::Value> = buffer
        .class_counts()
        .iter()
        .map(|(k, v)| (k.to_string(), serde_json::json!(v)))
        .collect();
    serde_json::json!({
        "artifact_version": ARTIFACT_VERSION,
        "entries": buffer.len(),
        "capacity": buffer.capacity(),
        "seen_count": buffer.seen_count(),
        "payload_bytes": buffer.payload_bytes(),
        "memory_footprint": buffer.memory_footprint(),
        "class_histogram": histogram,
    })
}

/// Process exit code for an error category: configuration problems 2,
/// data problems 3, numeric failures 4.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Numeric(_) | Error::State(_) => 4,
        _ => 3,
    }
}
