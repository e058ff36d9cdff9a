//! CSV outputs. Every file starts with `#` metadata lines carrying the code
//! version, the config hash and the seeds needed to reproduce its rows.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Metadata shared by all files of one invocation.
#[derive(Clone, Debug)]
pub struct Provenance {
    pub command: &'static str,
    pub config_hash: String,
    pub extra: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(command: &'static str, config_hash: String) -> Self {
        Provenance { command, config_hash, extra: Vec::new() }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }
}

/// A CSV table collected in memory and written in one go.
pub struct Table {
    pub name: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<(String, String)>,
}

impl Table {
    pub fn new(name: &'static str, header: &[&str]) -> Self {
        Table { name, header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), notes: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn write(&self, dir: &Path, prov: &Provenance) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(self.name);
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "# sqs {VERSION}")?;
        writeln!(out, "# command {}", prov.command)?;
        writeln!(out, "# config_hash {}", prov.config_hash)?;
        for (k, v) in prov.extra.iter().chain(&self.notes) {
            writeln!(out, "# {k} {v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Full-precision float, empty for NaN.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

/// Read a CSV written by [`Table::write`], skipping metadata lines.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((header, rows))
}
