//! Artifact persistence: versioned JSON envelopes, CSV tables, and the
//! iteration JSONL stream. Every writer here is deterministic — identical
//! inputs produce byte-identical files; wall-clock metadata lives in a
//! separate sidecar so the main artifacts stay comparable.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use prunesense_core::error::Error;
use prunesense_core::planner::{GroupAssignment, IterationLog};
use prunesense_core::sensitivity::RoundRecord;
use prunesense_core::Result;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Wrapper storing the payload kind and schema version alongside the data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub kind: String,
    pub payload: T,
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, bytes)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
        payload,
    };
    let mut text = serde_json::to_string_pretty(&env)
        .map_err(|e| Error::Config(format!("cannot serialize {kind}: {e}")))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Format { offset: 0, message: format!("cannot read {}: {e}", path.display()) })?;
    let env: Envelope<T> = serde_json::from_str(&text).map_err(|e| Error::Format {
        offset: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "{}: schema version {} (expected {SCHEMA_VERSION})",
                path.display(),
                env.schema_version
            ),
        });
    }
    if env.kind != kind {
        return Err(Error::InvalidRequest(format!(
            "{}: holds a {:?} artifact, expected {kind:?}",
            path.display(),
            env.kind
        )));
    }
    Ok(env.payload)
}

/// Accuracy grid as CSV: one row per (layer, round, step).
pub fn write_curves_csv(path: &Path, record: &RoundRecord) -> Result<()> {
    let mut out = String::from("layer,round,step,ratio,accuracy\n");
    for (p, &layer) in record.layers.iter().enumerate() {
        for m in 0..record.rounds() {
            for (i, &acc) in record.curves[p][m].iter().enumerate() {
                let ratio = record.ratios[i];
                out.push_str(&format!("{layer},{m},{i},{ratio},{acc}\n"));
            }
        }
    }
    write_bytes(path, out.as_bytes())
}

/// One JSON object per iteration, preceded by none — the baseline lives in
/// the summary artifacts.
pub fn write_iterations_jsonl(path: &Path, log: &IterationLog) -> Result<()> {
    let mut out = String::new();
    for entry in &log.entries {
        let line = serde_json::to_string(entry)
            .map_err(|e| Error::Config(format!("cannot serialize iteration: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

/// Model-level facts for the summary table.
pub struct SummaryTotals {
    pub base_params: u64,
    pub base_macs: u64,
    pub base_accuracy: f64,
    pub pruned_params: u64,
    pub pruned_macs: u64,
    pub pruned_accuracy: f64,
    pub overall_ratio: f64,
    pub filters_removed: usize,
}

/// Per-group and whole-model summary mirroring the layout of published
/// pruning tables: a base row, one row per group, and a pruned-total row.
pub fn write_summary_csv(
    path: &Path,
    groups: &GroupAssignment,
    final_ratios: &[f64],
    removed_per_group: &[usize],
    totals: &SummaryTotals,
) -> Result<()> {
    let mut out = String::from("group,layers,final_ratio,filters_removed,params,macs,accuracy\n");
    out.push_str(&format!(
        "base,,0,0,{},{},{}\n",
        totals.base_params, totals.base_macs, totals.base_accuracy
    ));
    for (k, layers) in groups.groups.iter().enumerate() {
        let names: Vec<String> = layers.iter().map(|l| l.to_string()).collect();
        out.push_str(&format!(
            "{k},{},{},{},,,\n",
            names.join(";"),
            final_ratios[k],
            removed_per_group[k]
        ));
    }
    out.push_str(&format!(
        "pruned,,{},{},{},{},{}\n",
        totals.overall_ratio,
        totals.filters_removed,
        totals.pruned_params,
        totals.pruned_macs,
        totals.pruned_accuracy
    ));
    write_bytes(path, out.as_bytes())
}

/// Wall-clock sidecar: the only artifact allowed to differ between two
/// identical runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    /// Name of the last stage that completed.
    pub stage_reached: String,
    /// Present when the run aborted; holds the failing stage and message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write_meta(path: &Path, meta: &RunMeta) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Config(format!("cannot serialize run metadata: {e}")))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_meta(path: &Path) -> Result<RunMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format {
        offset: 0,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        offset: 0,
        message: format!("{}: {e}", path.display()),
    })
}

pub fn write_checkpoint(path: &Path, net: &prunesense_core::model::Network) -> Result<()> {
    write_bytes(path, &prunesense_core::checkpoint::encode(net))
}

pub fn read_checkpoint(path: &Path, net: &mut prunesense_core::model::Network) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::Format {
        offset: 0,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    prunesense_core::checkpoint::decode(net, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use prunesense_core::planner::{Decision, IterationEntry};

    #[test]
    fn json_envelope_roundtrips_and_checks_kind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        write_json(&path, "demo", &vec![1u32, 2, 3]).unwrap();
        let back: Vec<u32> = read_json(&path, "demo").unwrap();
        assert_eq!(back, vec![1, 2, 3]);
        let err = read_json::<Vec<u32>>(&path, "other").unwrap_err();
        assert!(matches!(err, Error::InvalidRequest(_)));
    }

    #[test]
    fn curves_csv_lists_full_grid() {
        let record = RoundRecord {
            baseline: 0.9,
            ratios: vec![0.0, 0.48, 0.96],
            layers: vec![0, 3],
            curves: vec![
                vec![vec![0.9, 0.8, 0.7]],
                vec![vec![0.85, 0.75, 0.65]],
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        write_curves_csv(&path, &record).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert_eq!(lines[0], "layer,round,step,ratio,accuracy");
        assert_eq!(lines[1], "0,0,0,0,0.9");
        assert_eq!(lines[4], "3,0,0,0,0.85");
    }

    #[test]
    fn iteration_jsonl_is_one_object_per_line() {
        let log = IterationLog {
            baseline: 0.9,
            entries: vec![
                IterationEntry {
                    group: 0,
                    ratio: 0.1,
                    removed_this_step: 3,
                    overall: 0.05,
                    accuracy: 0.88,
                    best_before: 0.0,
                    decision: Decision::Accepted,
                },
                IterationEntry {
                    group: 0,
                    ratio: 0.15,
                    removed_this_step: 2,
                    overall: 0.08,
                    accuracy: 0.80,
                    best_before: 0.88,
                    decision: Decision::Rejected,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("it.jsonl");
        write_iterations_jsonl(&path, &log).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let first: IterationEntry = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first.decision, Decision::Accepted);
        assert!(lines[1].contains("\"rejected\""));
    }
}
