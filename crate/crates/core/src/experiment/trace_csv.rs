//! Plot-ready CSV export of a trace, one row per master state.
//!
//! Columns (fixed order): `k, objective, delta, consensus_err, arrivals,
//! time, master_compute, master_wait, time_unit`. Row `k` describes the state
//! after `k` master iterations; `arrivals` is `|A_{k-1}|` (0 on the initial
//! row); the timing columns are cumulative and measured in `time_unit`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::trace::Trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub k: usize,
    pub objective: f64,
    /// `L_ρ - F*`; empty when no reference value was available.
    pub delta: Option<f64>,
    pub consensus_err: f64,
    pub arrivals: usize,
    pub time: f64,
    pub master_compute: f64,
    pub master_wait: f64,
    pub time_unit: String,
}

pub fn trace_rows(trace: &Trace) -> Vec<CsvRow> {
    let unit = trace.time_unit.label().to_string();
    let delta = |l: f64| trace.f_star.map(|f| l - f);
    let mut rows = Vec::with_capacity(trace.records.len() + 1);
    rows.push(CsvRow {
        k: 0,
        objective: trace.objective0,
        delta: delta(trace.lagrangian0),
        consensus_err: 0.0,
        arrivals: 0,
        time: 0.0,
        master_compute: 0.0,
        master_wait: 0.0,
        time_unit: unit.clone(),
    });
    rows.extend(trace.records.iter().map(|r| CsvRow {
        k: r.k + 1,
        objective: r.objective,
        delta: delta(r.lagrangian),
        consensus_err: r.consensus_err,
        arrivals: r.arrived.len(),
        time: r.time,
        master_compute: r.master_compute,
        master_wait: r.master_wait,
        time_unit: unit.clone(),
    }));
    rows
}

pub fn write_trace_csv(path: &Path, trace: &Trace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in trace_rows(trace) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<CsvRow>, _>>()?;
    Ok(rows)
}
