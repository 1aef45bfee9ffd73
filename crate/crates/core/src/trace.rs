//! Per-run event log and its CSV / JSON persistence.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] =
    ["trial", "u", "event", "grads_cum", "f_value", "grad_norm", "rayleigh", "wall_ms"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Epoch,
    GradCheck,
    NcProbe,
    NcStep,
    Terminate,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Epoch => "epoch",
            EventKind::GradCheck => "grad-check",
            EventKind::NcProbe => "nc-probe",
            EventKind::NcStep => "nc-step",
            EventKind::Terminate => "terminate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEvent {
    pub kind: EventKind,
    pub u: u64,
    pub grads_cum: u64,
    pub f_value: f64,
    pub grad_norm: Option<f64>,
    pub rayleigh: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub events: Vec<TraceEvent>,
    started: Instant,
}

impl Default for RunTrace {
    fn default() -> Self {
        Self::new()
    }
}

impl RunTrace {
    pub fn new() -> Self {
        Self { events: Vec::new(), started: Instant::now() }
    }

    pub fn push(
        &mut self,
        kind: EventKind,
        u: u64,
        grads_cum: u64,
        f_value: f64,
        grad_norm: Option<f64>,
        rayleigh: Option<f64>,
    ) {
        let wall_ms = self.started.elapsed().as_secs_f64() * 1e3;
        self.events.push(TraceEvent { kind, u, grads_cum, f_value, grad_norm, rayleigh, wall_ms });
    }

    pub fn last(&self) -> Option<&TraceEvent> {
        self.events.last()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}

/// Writes the events of several trials to one CSV. The `wall_ms` column is
/// left empty unless `wall_time` is set, which keeps files reproducible.
pub fn write_events_csv<'a>(
    path: &Path,
    trials: impl IntoIterator<Item = (usize, &'a RunTrace)>,
    wall_time: bool,
) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    let opt = |x: Option<f64>| x.map(format_float).unwrap_or_default();
    for (trial, trace) in trials {
        for e in &trace.events {
            w.write_record([
                trial.to_string(),
                e.u.to_string(),
                e.kind.as_str().to_string(),
                e.grads_cum.to_string(),
                format_float(e.f_value),
                opt(e.grad_norm),
                opt(e.rayleigh),
                if wall_time { format_float(e.wall_ms) } else { String::new() },
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub status: String,
    pub grads_total: u64,
    pub final_grad_norm: f64,
    pub final_lambda_min: f64,
}

pub fn write_summary(path: &Path, summary: &TrialSummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)
        .map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    fs::write(path, text + "\n").map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
