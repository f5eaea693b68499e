//! Summary records and artifact writers.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    /// Identities and theorem-guaranteed inequalities; decide the exit status.
    Hard,
    /// Discretization-limited trends.
    Soft,
    Info,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub kind: Kind,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    pub values: Map<String, Value>,
    pub files: Vec<String>,
}

impl Report {
    /// Records `value ≤ threshold`.
    pub fn at_most(&mut self, name: &str, kind: Kind, value: f64, threshold: f64, detail: impl Into<String>) {
        self.push(name, kind, value <= threshold, value, threshold, detail.into());
    }

    /// Records `value ≥ threshold`.
    pub fn at_least(&mut self, name: &str, kind: Kind, value: f64, threshold: f64, detail: impl Into<String>) {
        self.push(name, kind, value >= threshold, value, threshold, detail.into());
    }

    pub fn push_bool(&mut self, name: &str, kind: Kind, passed: bool, value: f64, detail: impl Into<String>) {
        self.push(name, kind, passed, value, f64::NAN, detail.into());
    }

    fn push(&mut self, name: &str, kind: Kind, passed: bool, value: f64, threshold: f64, detail: String) {
        self.checks.push(Check {
            name: name.into(),
            kind,
            passed,
            value,
            threshold,
            detail,
        });
    }

    pub fn value(&mut self, key: &str, v: impl Serialize) {
        self.values
            .insert(key.into(), serde_json::to_value(v).expect("serializable summary value"));
    }

    pub fn hard_failures(&self) -> usize {
        self.checks.iter().filter(|c| c.kind == Kind::Hard && !c.passed).count()
    }
}

/// CSV writer rooted at the output directory; records file names for the
/// manifest.
pub struct Csv {
    inner: csv::Writer<BufWriter<File>>,
}

impl Csv {
    pub fn create(dir: &Path, name: &str, header: &[&str], report: &mut Report) -> Result<Csv> {
        let path = dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut inner = csv::Writer::from_writer(BufWriter::new(file));
        inner.write_record(header)?;
        report.files.push(name.into());
        Ok(Csv { inner })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Shortest round-trip formatting, so reruns compare bit-for-bit.
pub fn f(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_json(path: PathBuf, v: &impl Serialize) -> Result<()> {
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), v)?;
    Ok(())
}
