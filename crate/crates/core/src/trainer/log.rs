use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::objectives::LossReport;

pub fn csv_header() -> String {
    let mut cols = vec!["iteration", "lr"];
    cols.extend(LossReport::FIELDS);
    cols.join(",")
}

/// One CSV row; floats use the shortest round-trip representation.
pub fn csv_row(iteration: u64, lr: f64, report: &LossReport) -> String {
    let mut row = format!("{iteration},{lr}");
    for v in report.values() {
        row.push(',');
        row.push_str(&v.to_string());
    }
    row
}

/// Append-only training log with one row per iteration.
#[derive(Debug)]
pub struct TrainingLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TrainingLog {
    /// Creates the log, or when `resume_at` is given keeps existing rows up
    /// to and including that iteration and appends after them.
    pub fn open(path: &Path, resume_at: Option<u64>) -> Result<Self> {
        let mut kept = vec![csv_header()];
        if let Some(at) = resume_at.filter(|_| path.exists()) {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for line in BufReader::new(file).lines().skip(1) {
                let line = line.map_err(|e| Error::io(path, e))?;
                let iter = line.split(',').next().and_then(|v| v.parse::<u64>().ok());
                if iter.is_some_and(|i| i <= at) {
                    kept.push(line);
                }
            }
        }
        let mut text = kept.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
        let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn append(&mut self, iteration: u64, lr: f64, report: &LossReport) -> Result<()> {
        writeln!(self.out, "{}", csv_row(iteration, lr, report)).map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
