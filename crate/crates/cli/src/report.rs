//! Versioned JSON report envelope and CSV tables.

use crate::commands::Outcome;
use crate::config::RunConfig;
use crate::CliError;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL: &str = "conelab";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub tolerances: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

pub enum Destination {
    Stdout,
    File(PathBuf),
}

impl Report {
    fn envelope(command: &str, cfg: RunConfig, wall_clock_s: Option<f64>, status: Status) -> Report {
        Report {
            schema: SCHEMA_VERSION,
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config: cfg.echo().clone(),
            tolerances: BTreeMap::new(),
            wall_clock_s,
            status,
            result: None,
            error: None,
        }
    }

    pub fn success(command: &str, cfg: RunConfig, outcome: Outcome, wall_clock_s: Option<f64>) -> Report {
        let mut report = Report::envelope(command, cfg, wall_clock_s, outcome.status);
        report.tolerances = outcome.tolerances;
        report.result = Some(outcome.result);
        report
    }

    pub fn error(command: &str, cfg: RunConfig, err: &CliError, wall_clock_s: Option<f64>) -> Report {
        let mut report = Report::envelope(command, cfg, wall_clock_s, Status::Error);
        report.error = Some(ErrorBody { kind: err.kind(), message: err.to_string(), exit_code: err.exit_code() });
        report
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report values serialize");
        text.push('\n');
        text
    }

    pub fn write(&self, dest: &Destination) -> Result<(), CliError> {
        let text = self.to_json();
        match dest {
            Destination::Stdout => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes())?;
                out.flush()?;
            }
            Destination::File(path) => {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent)?;
                }
                std::fs::write(path, text)?;
            }
        }
        Ok(())
    }
}

/// Header plus rows, written as UTF-8 with LF line endings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<&'static str>) -> Table {
        Table { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Io(e.to_string());
        writer.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            writer.write_record(row).map_err(io)?;
        }
        writer.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}
