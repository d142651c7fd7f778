//! Run reports and data-file writers.

use crate::scenario::{Analysis, Scenario};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `value <= tolerance`
    AtMost,
    /// `value >= tolerance`
    AtLeast,
    /// `value > tolerance`
    Above,
}

/// One numeric acceptance property with its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, relation: Relation, tolerance: f64) -> Self {
        let pass = match relation {
            Relation::AtMost => value <= tolerance,
            Relation::AtLeast => value >= tolerance,
            Relation::Above => value > tolerance,
        };
        Self { name: name.into(), value, tolerance, relation, pass }
    }

    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self::new(name, value, Relation::AtMost, tolerance)
    }

    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self::new(name, value, Relation::AtLeast, tolerance)
    }

    /// A yes/no property recorded as `1` against a required `1`.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, Relation::AtLeast, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Error,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisResult {
    pub analysis: Analysis,
    pub module: &'static str,
    pub operation: &'static str,
    pub status: Status,
    pub checks: Vec<Check>,
    pub details: serde_json::Value,
    pub files: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub threads: Option<usize>,
    pub versions: BTreeMap<&'static str, &'static str>,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    pub results: Vec<AnalysisResult>,
    pub data_files: Vec<String>,
    pub exit_code: i32,
}

/// Exit-code contract of the `run` command.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const PROPERTY_FAILURE: i32 = 1;
    pub const CONFIG_ERROR: i32 = 2;
    pub const RUNTIME_ERROR: i32 = 3;
}

impl RunReport {
    pub fn exit_code_for(results: &[AnalysisResult]) -> i32 {
        if results.iter().any(|r| r.status == Status::Error) {
            exit::RUNTIME_ERROR
        } else if results.iter().any(|r| r.status != Status::Pass) {
            exit::PROPERTY_FAILURE
        } else {
            exit::PASS
        }
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()
    }
}

/// Numeric CSV table with a fixed header.
pub struct Table {
    writer: csv::Writer<BufWriter<File>>,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> io::Result<Self> {
        let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        writer.write_record(header)?;
        Ok(Self { writer })
    }

    pub fn row<I, T>(&mut self, fields: I) -> io::Result<()>
    where
        I: IntoIterator<Item = T>,
        T: ToString,
    {
        let record: Vec<String> = fields.into_iter().map(|f| f.to_string()).collect();
        self.writer.write_record(&record)?;
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.writer.flush()
    }
}

/// Writes JSON values one per line.
pub fn write_jsonl(path: &Path, lines: &[serde_json::Value]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for line in lines {
        serde_json::to_writer(&mut w, line)?;
        writeln!(w)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_relations() {
        assert!(Check::at_most("a", 1.0, 1.0).pass);
        assert!(!Check::at_most("a", f64::NAN, 1.0).pass);
        assert!(Check::at_least("b", 0.96, 0.95).pass);
        assert!(!Check::new("c", 0.0, Relation::Above, 0.0).pass);
        assert!(!Check::holds("d", false).pass);
    }
}
