//! Number formatting and run records.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Round-trippable float text: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub run_id: String,
    pub config_hash: String,
    pub controller: String,
    pub budget: Option<f64>,
    pub final_err_inf: f64,
    pub cumulative_cost: f64,
    pub steps: usize,
    pub status: String,
    pub trajectory_file: Option<String>,
    pub cycles_file: Option<String>,
    pub estimator_file: Option<String>,
    pub error: Option<String>,
}

impl ExperimentRecord {
    pub fn failed(run_id: String, config_hash: String, cfg: &ExperimentConfig, err: &Error) -> Self {
        ExperimentRecord {
            run_id,
            config_hash,
            controller: cfg.controller.name().to_string(),
            budget: cfg.budget,
            final_err_inf: f64::NAN,
            cumulative_cost: f64::NAN,
            steps: 0,
            status: "failed".into(),
            trajectory_file: None,
            cycles_file: None,
            estimator_file: None,
            error: Some(err.to_string()),
        }
    }
}

pub const RECORD_COLUMNS: [&str; 12] = [
    "run_id",
    "config_hash",
    "controller",
    "budget",
    "final_err_inf",
    "cumulative_cost",
    "steps",
    "status",
    "trajectory_file",
    "cycles_file",
    "estimator_file",
    "error",
];

pub fn write_records_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.write_record([
            r.run_id.clone(),
            r.config_hash.clone(),
            r.controller.clone(),
            r.budget.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.final_err_inf),
            fmt_f64(r.cumulative_cost),
            r.steps.to_string(),
            r.status.clone(),
            r.trajectory_file.clone().unwrap_or_default(),
            r.cycles_file.clone().unwrap_or_default(),
            r.estimator_file.clone().unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<records csv>", e))?;
    Ok(())
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(value: &T, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(|e| Error::io("<json>", e))?;
    Ok(())
}
