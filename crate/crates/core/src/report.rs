//! Rendering of report arrays as JSON, CSV and a markdown summary.
//!
//! All renderings sort rows by check name and then by dimension, keeping the
//! original order among equal keys, so the output depends only on the set of
//! reports. Floats are written in shortest round-trip form and read back
//! bit-exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inequalities::{InequalityReport, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Markdown,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "markdown" | "markdown-summary" | "md" => Ok(Format::Markdown),
            other => Err(Error::param("format", format!("unknown format {other:?}; expected csv, json or markdown-summary"))),
        }
    }
}

/// Reports sorted by `(name, n)`, stable among equal keys.
pub fn sorted(reports: &[InequalityReport]) -> Vec<InequalityReport> {
    let mut v = reports.to_vec();
    v.sort_by(|a, b| a.name.cmp(&b.name).then(a.n.cmp(&b.n)));
    v
}

/// Verdict counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub pass: usize,
    pub inconclusive: usize,
    pub fail: usize,
}

impl Tally {
    pub fn of(reports: &[InequalityReport]) -> Self {
        let mut t = Tally::default();
        for r in reports {
            match r.verdict {
                Verdict::Pass => t.pass += 1,
                Verdict::Inconclusive => t.inconclusive += 1,
                Verdict::Fail => t.fail += 1,
            }
        }
        t
    }
}

impl fmt::Display for Tally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} pass / {} inconclusive / {} fail", self.pass, self.inconclusive, self.fail)
    }
}

/// Pretty-printed JSON array with a trailing newline.
pub fn to_json(reports: &[InequalityReport]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&sorted(reports))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(text: &str) -> Result<Vec<InequalityReport>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Report(format!("malformed report at {}: {}", e.path(), e.inner())))
}

pub fn read_json(path: &Path) -> Result<Vec<InequalityReport>> {
    let text = std::fs::read_to_string(path)?;
    from_json(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))
}

/// One CSV row: the numeric fields of a report, constants as `k=v` pairs
/// joined by `;` and flags joined by `;`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub name: String,
    pub subject: String,
    pub measure: String,
    pub n: usize,
    pub lhs: f64,
    pub lhs_se: f64,
    pub lhs_ci_low: f64,
    pub lhs_ci_high: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub rhs_ci_low: f64,
    pub rhs_ci_high: f64,
    pub margin: f64,
    pub slack: f64,
    pub verdict: Verdict,
    pub seed: u64,
    pub samples: usize,
    pub constants: String,
    pub flags: String,
}

impl CsvRow {
    pub fn of(r: &InequalityReport) -> Self {
        CsvRow {
            name: r.name.clone(),
            subject: r.subject.clone(),
            measure: r.measure.clone(),
            n: r.n,
            lhs: r.lhs.value,
            lhs_se: r.lhs.std_error,
            lhs_ci_low: r.lhs.ci_low,
            lhs_ci_high: r.lhs.ci_high,
            rhs: r.rhs.value,
            rhs_se: r.rhs.std_error,
            rhs_ci_low: r.rhs.ci_low,
            rhs_ci_high: r.rhs.ci_high,
            margin: r.margin,
            slack: r.slack,
            verdict: r.verdict,
            seed: r.seed,
            samples: r.samples,
            constants: r.constants.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";"),
            flags: r.flags.join(";"),
        }
    }

    /// Parses the `constants` column back into a map.
    pub fn constants_map(&self) -> Result<BTreeMap<String, f64>> {
        if self.constants.is_empty() {
            return Ok(BTreeMap::new());
        }
        self.constants
            .split(';')
            .map(|kv| {
                let (k, v) = kv.split_once('=').ok_or_else(|| Error::Report(format!("bad constant entry {kv:?}")))?;
                let v: f64 = v.parse().map_err(|_| Error::Report(format!("bad constant value {v:?}")))?;
                Ok((k.to_string(), v))
            })
            .collect()
    }
}

pub fn write_csv<W: io::Write>(reports: &[InequalityReport], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in sorted(reports) {
        wr.serialize(CsvRow::of(&r))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn to_csv(reports: &[InequalityReport]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Report(e.to_string()))
}

pub fn from_csv<R: io::Read>(r: R) -> Result<Vec<CsvRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn cell(s: &str) -> String {
    s.replace('|', "\\|")
}

fn num(v: f64) -> String {
    if v == 0.0 || (1e-4..1e6).contains(&v.abs()) {
        format!("{v:.6}")
    } else {
        format!("{v:.4e}")
    }
}

/// Markdown table of all rows followed by the verdict tally.
pub fn to_markdown(reports: &[InequalityReport]) -> String {
    let rows = sorted(reports);
    let mut s = String::from("| check | subject | measure | n | lhs | rhs | margin | verdict |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in &rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} ± {} | {} ± {} | {} | {} |\n",
            cell(&r.name),
            cell(&r.subject),
            cell(&r.measure),
            r.n,
            num(r.lhs.value),
            num(r.lhs.std_error),
            num(r.rhs.value),
            num(r.rhs.std_error),
            num(r.margin),
            r.verdict
        ));
    }
    s.push('\n');
    s.push_str(&Tally::of(&rows).to_string());
    s.push('\n');
    s
}

pub fn render(reports: &[InequalityReport], format: Format) -> Result<String> {
    match format {
        Format::Json => to_json(reports),
        Format::Csv => to_csv(reports),
        Format::Markdown => Ok(to_markdown(reports)),
    }
}
