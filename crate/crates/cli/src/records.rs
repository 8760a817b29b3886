//! On-disk CSV formats. Every file starts with a `# schema_version=N` row,
//! then a header row with fixed columns.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use matl_core::trainer::{IterationMetrics, UpdateRecord, METRIC_COLUMNS};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Streams rows to a CSV file, flushing after each so partial runs survive.
pub struct CsvSink {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvSink {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut file = BufWriter::new(File::create(path).map_err(CliError::io(path))?);
        writeln!(file, "# schema_version={SCHEMA_VERSION}").map_err(CliError::io(path))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer.write_record(header).map_err(CliError::csv(path))?;
        Ok(CsvSink { path: path.to_path_buf(), writer })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.writer.serialize(row).map_err(CliError::csv(&self.path))?;
        self.writer.flush().map_err(CliError::io(&self.path))
    }
}

/// Read all rows, checking the schema row and the header.
pub fn read_rows<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let expected = format!("# schema_version={SCHEMA_VERSION}");
    if text.lines().next() != Some(expected.as_str()) {
        return Err(CliError::Usage(format!("{}: missing or unsupported schema row, expected `{expected}`", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let found: Vec<String> = reader.headers().map_err(CliError::csv(path))?.iter().map(str::to_string).collect();
    if found != header {
        return Err(CliError::Usage(format!("{}: unexpected columns {found:?}", path.display())));
    }
    reader.deserialize().collect::<std::result::Result<_, _>>().map_err(CliError::csv(path))
}

pub fn metrics_sink(path: &Path) -> Result<CsvSink> {
    CsvSink::create(path, &METRIC_COLUMNS)
}

pub fn read_metrics(path: &Path) -> Result<Vec<IterationMetrics>> {
    read_rows(path, &METRIC_COLUMNS)
}

/// One trust-region update as logged next to a run's learning curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRow {
    pub iteration: usize,
    pub kind: String,
    pub accepted: bool,
    pub kl: f64,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub step_norm: f64,
    pub backtracks: usize,
}

pub const UPDATE_COLUMNS: [&str; 8] = ["iteration", "kind", "accepted", "kl", "surrogate_before", "surrogate_after", "step_norm", "backtracks"];

impl From<&UpdateRecord> for UpdateRow {
    fn from(u: &UpdateRecord) -> Self {
        let kind = serde_json::to_value(u.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        UpdateRow {
            iteration: u.iteration,
            kind,
            accepted: u.stats.accepted,
            kl: u.stats.kl,
            surrogate_before: u.stats.surrogate_before,
            surrogate_after: u.stats.surrogate_after,
            step_norm: u.stats.step_norm,
            backtracks: u.stats.backtracks,
        }
    }
}

pub fn read_updates(path: &Path) -> Result<Vec<UpdateRow>> {
    read_rows(path, &UPDATE_COLUMNS)
}

/// `<dir>/<seed>.csv` and friends for one grid cell.
#[derive(Clone, Debug)]
pub struct CellPaths {
    pub metrics: PathBuf,
    pub updates: PathBuf,
    pub policy: PathBuf,
}

impl CellPaths {
    pub fn new(method_dir: &Path, seed: u64) -> Self {
        CellPaths {
            metrics: method_dir.join(format!("{seed}.csv")),
            updates: method_dir.join(format!("{seed}.updates.csv")),
            policy: method_dir.join(format!("{seed}.policy.bin")),
        }
    }
}
