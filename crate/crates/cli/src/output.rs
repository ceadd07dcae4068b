//! Artifact writing. Every CSV starts with one `#` line carrying the tool
//! version, command, config hash and seed; every JSON file has a `meta` object
//! with the same fields. Floats are written with 17 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use stein_bridge::numkit::Matrix;

use crate::CliError;

pub const TOOL: &str = "stein-bridge";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Meta {
    pub fn new(command: &str, config_sha256: String, seed: u64) -> Self {
        Meta {
            tool: TOOL.into(),
            version: ARTIFACT_VERSION.into(),
            command: command.into(),
            config_sha256,
            seed,
        }
    }

    pub fn comment_line(&self) -> String {
        format!(
            "# {} {} command={} config_sha256={} seed={}",
            self.tool, self.version, self.command, self.config_sha256, self.seed
        )
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub struct CsvOut {
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, meta: &Meta, header: &[&str]) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "{}", meta.comment_line()).map_err(|e| CliError::io(path, e))?;
        let mut inner = csv::Writer::from_writer(buf);
        inner.write_record(header).map_err(CliError::csv)?;
        Ok(CsvOut { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(CliError::csv)
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.inner.flush().map_err(|e| CliError::Io(e.to_string()))
    }
}

#[derive(Serialize)]
struct WithMeta<'a, T: Serialize> {
    meta: &'a Meta,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON with the `meta` object first, then the fields of `body`.
pub fn write_json<T: Serialize>(path: &Path, meta: &Meta, body: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&WithMeta { meta, body }).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn write_points(path: &Path, meta: &Meta, x: &Matrix) -> Result<(), CliError> {
    let mut out = CsvOut::create(path, meta, &["x", "y"])?;
    for r in x.row_iter() {
        out.row(r.iter().map(|v| fmt_f64(*v)))?;
    }
    out.finish()
}

/// Reads an `x,y` point file, skipping `#` lines.
pub fn read_points(path: &Path) -> Result<Matrix, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(CliError::csv)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(CliError::csv)?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    Matrix::from_rows(&rows).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
