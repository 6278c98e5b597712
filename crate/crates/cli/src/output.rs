//! CSV tables with a leading `# config_sha256=…` comment line, plus an
//! optional JSON mirror written when the table is finished.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{Map, Number, Value};

use crate::CliError;

pub struct TableWriter {
    path: PathBuf,
    header: Vec<String>,
    csv: csv::Writer<BufWriter<File>>,
    mirror: Option<Vec<Vec<String>>>,
}

impl TableWriter {
    pub fn create(dir: &Path, name: &str, header: &[&str], config_hash: &str, json: bool) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{name}.csv"));
        let mut file = BufWriter::new(File::create(&path)?);
        writeln!(file, "# config_sha256={config_hash}")?;
        let mut csv = csv::Writer::from_writer(file);
        csv.write_record(header).map_err(csv_error)?;
        Ok(TableWriter {
            path,
            header: header.iter().map(|s| s.to_string()).collect(),
            csv,
            mirror: json.then(Vec::new),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write_row(&mut self, row: &[String]) -> Result<(), CliError> {
        if row.len() != self.header.len() {
            return Err(CliError::Io(std::io::Error::other(format!(
                "row has {} fields, header has {}",
                row.len(),
                self.header.len()
            ))));
        }
        self.csv.write_record(row).map_err(csv_error)?;
        if let Some(m) = self.mirror.as_mut() {
            m.push(row.to_vec());
        }
        Ok(())
    }

    /// Push buffered rows to disk so partial results survive an interrupt.
    pub fn flush(&mut self) -> Result<(), CliError> {
        self.csv.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.flush()?;
        if let Some(rows) = self.mirror.take() {
            let records: Vec<Value> = rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .header
                        .iter()
                        .zip(row)
                        .map(|(k, v)| (k.clone(), json_value(v)))
                        .collect();
                    Value::Object(obj)
                })
                .collect();
            let json_path = self.path.with_extension("json");
            let mut out = BufWriter::new(File::create(json_path)?);
            serde_json::to_writer_pretty(&mut out, &records).map_err(|e| CliError::Io(e.into()))?;
            out.flush()?;
        }
        Ok(self.path)
    }
}

fn json_value(s: &str) -> Value {
    if let Ok(i) = s.parse::<i64>() {
        return Value::Number(i.into());
    }
    match s.parse::<f64>().ok().and_then(Number::from_f64) {
        Some(n) => Value::Number(n),
        None => Value::String(s.to_string()),
    }
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

/// Shortest round-trip formatting for floats.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Read back a table written by [`TableWriter`]: the comment line and the
/// records including the header.
pub fn read_table(path: &Path) -> Result<(String, Vec<Vec<String>>), CliError> {
    let text = std::fs::read_to_string(path)?;
    let (comment, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(body.as_bytes());
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(csv_error)?;
    Ok((comment.to_string(), rows))
}
