//! Run traces: per-step records, the event stream, and their file formats.
//!
//! The trace file is delimiter-separated values with a describing header:
//! two comment lines carry the format version, config hash and shape, the
//! third line names every column, then one row per step. Events go to a
//! separate line-delimited JSON file, one object per line. Both formats
//! are versioned and byte-deterministic for a given config and seed.

use crate::dynamics::{Controls, ErrorSet, JointState, LocalError};
use crate::targeting::TargetingEvent;
use crate::topology::BiLayerTopology;
use crate::PlayerId;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

pub const TRACE_VERSION: &str = "mpe-trace v1";
pub const EVENTS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace malformed: {0}")]
    Malformed(String),
    #[error("event serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Everything recorded at one step boundary.
#[derive(Clone, Debug)]
pub struct TraceRecord {
    pub time: f64,
    pub state: JointState,
    pub controls: Controls,
    pub errors_pursuers: Vec<DVector<f64>>,
    pub errors_evaders: Vec<DVector<f64>>,
    pub value_pursuers: Vec<f64>,
    pub value_evaders: Vec<f64>,
    /// Capture-condition margin per pursuer under this step's controls.
    pub margins: Vec<f64>,
    pub running_cost_pursuers: Vec<f64>,
    pub running_cost_evaders: Vec<f64>,
    /// Critic then actor weight norms, pursuers before evaders.
    pub critic_norms: Vec<f64>,
    pub actor_norms: Vec<f64>,
    /// Game-weight layer at this step (row i, column j).
    pub game_weights: DMatrix<f64>,
}

/// A whole run's records plus identifying metadata.
#[derive(Clone, Debug)]
pub struct SimulationTrace {
    pub config_hash: String,
    pub step: f64,
    pub state_dim: usize,
    pub input_dim: usize,
    pub n_pursuers: usize,
    pub n_evaders: usize,
    pub position_dim: usize,
    pub records: Vec<TraceRecord>,
}

/// Events emitted during a run, one JSON object per line on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunEvent {
    Targeting(TargetingEvent),
    Capture { time: f64, pursuer: usize, evader: usize },
    AllCaptured { time: f64 },
    EarlyStop { time: f64 },
    DivergenceAbort { time: f64, reason: String },
}

impl SimulationTrace {
    pub fn column_names(&self) -> Vec<String> {
        let mut cols = vec!["time".to_string()];
        let n = self.state_dim;
        let m = self.input_dim;
        for i in 0..self.n_pursuers {
            let id = PlayerId::pursuer(i);
            for d in 0..n {
                cols.push(format!("x_{id}_{d}"));
            }
            for d in 0..m {
                cols.push(format!("u_{id}_{d}"));
            }
            for d in 0..2 * n {
                cols.push(format!("delta_{id}_{d}"));
            }
            cols.push(format!("vhat_{id}"));
            cols.push(format!("cost_{id}"));
            cols.push(format!("margin_{id}"));
            cols.push(format!("wc_{id}"));
            cols.push(format!("wa_{id}"));
        }
        for j in 0..self.n_evaders {
            let id = PlayerId::evader(j);
            for d in 0..n {
                cols.push(format!("x_{id}_{d}"));
            }
            for d in 0..m {
                cols.push(format!("u_{id}_{d}"));
            }
            for d in 0..2 * n {
                cols.push(format!("delta_{id}_{d}"));
            }
            cols.push(format!("vhat_{id}"));
            cols.push(format!("cost_{id}"));
            cols.push(format!("wc_{id}"));
            cols.push(format!("wa_{id}"));
        }
        for i in 0..self.n_pursuers {
            for j in 0..self.n_evaders {
                cols.push(format!("g_p{i}_e{j}"));
            }
        }
        cols
    }

    fn record_row(&self, rec: &TraceRecord) -> Vec<f64> {
        let mut row = vec![rec.time];
        for i in 0..self.n_pursuers {
            row.extend(rec.state.pursuer_states[i].iter());
            row.extend(rec.controls.pursuer_inputs[i].iter());
            row.extend(rec.errors_pursuers[i].iter());
            row.push(rec.value_pursuers[i]);
            row.push(rec.running_cost_pursuers[i]);
            row.push(rec.margins[i]);
            row.push(rec.critic_norms[i]);
            row.push(rec.actor_norms[i]);
        }
        for j in 0..self.n_evaders {
            row.extend(rec.state.evader_states[j].iter());
            row.extend(rec.controls.evader_inputs[j].iter());
            row.extend(rec.errors_evaders[j].iter());
            row.push(rec.value_evaders[j]);
            row.push(rec.running_cost_evaders[j]);
            row.push(rec.critic_norms[self.n_pursuers + j]);
            row.push(rec.actor_norms[self.n_pursuers + j]);
        }
        for i in 0..self.n_pursuers {
            for j in 0..self.n_evaders {
                row.push(rec.game_weights[(i, j)]);
            }
        }
        row
    }

    /// Writes the header-described table.
    pub fn write_csv(&self, path: &Path) -> Result<(), TraceError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# {TRACE_VERSION}")?;
        writeln!(
            out,
            "# config_hash={} step={} state_dim={} input_dim={} pursuers={} evaders={} position_dim={}",
            self.config_hash,
            self.step,
            self.state_dim,
            self.input_dim,
            self.n_pursuers,
            self.n_evaders,
            self.position_dim
        )?;
        writeln!(out, "{}", self.column_names().join(","))?;
        for rec in &self.records {
            let row: Vec<String> = self.record_row(rec).iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads a table written by [`SimulationTrace::write_csv`].
    pub fn read_csv(path: &Path) -> Result<TraceTable, TraceError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = file.lines();
        let version = lines
            .next()
            .transpose()?
            .ok_or_else(|| TraceError::Malformed("empty file".into()))?;
        if version.trim() != format!("# {TRACE_VERSION}") {
            return Err(TraceError::Malformed(format!("unexpected version line {version:?}")));
        }
        let meta_line = lines
            .next()
            .transpose()?
            .ok_or_else(|| TraceError::Malformed("missing metadata line".into()))?;
        let mut meta = std::collections::BTreeMap::new();
        for token in meta_line.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = token.split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            }
        }
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| TraceError::Malformed("missing column header".into()))?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            let row = row.map_err(|e| {
                TraceError::Malformed(format!("row {}: {e}", lineno + 4))
            })?;
            if row.len() != columns.len() {
                return Err(TraceError::Malformed(format!(
                    "row {}: {} fields, expected {}",
                    lineno + 4,
                    row.len(),
                    columns.len()
                )));
            }
            rows.push(row);
        }
        Ok(TraceTable { meta, columns, rows })
    }

    /// Local errors of one record as an [`ErrorSet`].
    pub fn errors_of(&self, index: usize) -> ErrorSet {
        let rec = &self.records[index];
        ErrorSet {
            pursuers: rec
                .errors_pursuers
                .iter()
                .enumerate()
                .map(|(i, d)| LocalError::from_stacked(PlayerId::pursuer(i), d))
                .collect(),
            evaders: rec
                .errors_evaders
                .iter()
                .enumerate()
                .map(|(j, d)| LocalError::from_stacked(PlayerId::evader(j), d))
                .collect(),
        }
    }

    /// Topology of one record: the base topology with that step's game
    /// weights.
    pub fn topology_of(&self, index: usize, base: &BiLayerTopology) -> BiLayerTopology {
        let mut top = base.clone();
        let g = &self.records[index].game_weights;
        for i in 0..self.n_pursuers {
            for j in 0..self.n_evaders {
                let _ = top.set_game_weight(i, j, g[(i, j)]);
            }
        }
        top
    }
}

/// A generic parsed trace table (column-name access).
#[derive(Clone, Debug)]
pub struct TraceTable {
    pub meta: std::collections::BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TraceTable {
    pub fn column(&self, name: &str) -> Result<usize, TraceError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| TraceError::Malformed(format!("missing column {name:?}")))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize, TraceError> {
        self.meta
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| TraceError::Malformed(format!("missing metadata {key:?}")))
    }
}

/// Writes the event stream as line-delimited JSON, preceded by a version
/// object.
pub fn write_events(path: &Path, events: &[RunEvent]) -> Result<(), TraceError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", serde_json::json!({"format": "mpe-events", "version": EVENTS_VERSION}))?;
    for event in events {
        writeln!(out, "{}", serde_json::to_string(event)?)?;
    }
    Ok(())
}

/// Reads an event stream written by [`write_events`].
pub fn read_events(path: &Path) -> Result<Vec<RunEvent>, TraceError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut events = Vec::new();
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            let head: serde_json::Value = serde_json::from_str(&line)?;
            if head["format"] != "mpe-events" {
                return Err(TraceError::Malformed("not an event file".into()));
            }
            continue;
        }
        events.push(serde_json::from_str(&line)?);
    }
    Ok(events)
}

/// End-of-run summary, written as pretty JSON next to the trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub mode: String,
    pub steps: usize,
    pub end_time: f64,
    pub early_stopped: bool,
    pub capture_times: Vec<Option<f64>>,
    pub all_captured_time: Option<f64>,
    pub final_margins: Vec<f64>,
    pub final_critic_norms: Vec<f64>,
    pub final_actor_norms: Vec<f64>,
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<(), TraceError> {
    std::fs::write(path, serde_json::to_string_pretty(summary)?)?;
    Ok(())
}
