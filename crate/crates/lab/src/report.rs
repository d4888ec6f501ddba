//! Run reports and their on-disk form.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::{emit_config, ExperimentConfig};

/// A CSV table; every cell is pre-formatted so files are byte-stable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip float text; empty for missing values.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// A labelled series for the optional SVG output.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub file: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub report: Table,
    pub means: Option<Table>,
    pub loss_curve: Option<Table>,
    pub params: Option<serde_json::Value>,
    pub checks: Vec<Check>,
    pub charts: Vec<Chart>,
    pub elapsed_seconds: f64,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    version: &'a str,
    command: Option<&'a str>,
    seed: u64,
    elapsed_seconds: f64,
    checks: &'a [Check],
}

/// Writes every artifact of `report` into `dir`. Only `summary.json` carries timing.
pub fn emit_report(report: &RunReport, config: &ExperimentConfig, dir: &Path, svg: bool) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    emit_config(config, dir)?;
    report.report.write(&dir.join("report.csv"))?;
    if let Some(m) = &report.means {
        m.write(&dir.join("report_mean.csv"))?;
    }
    if let Some(c) = &report.loss_curve {
        c.write(&dir.join("loss_curve.csv"))?;
    }
    if let Some(p) = &report.params {
        std::fs::write(dir.join("params.json"), serde_json::to_string_pretty(p)? + "\n")?;
    }
    let summary = Summary {
        version: env!("CARGO_PKG_VERSION"),
        command: config.command.map(|c| c.as_str()),
        seed: config.seed,
        elapsed_seconds: report.elapsed_seconds,
        checks: &report.checks,
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    if svg {
        for chart in &report.charts {
            std::fs::write(dir.join(&chart.file), crate::svg::render(chart))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![num(0.1), "x, with comma".into()]);
        t.push(vec![opt(None), num(1e-300)]);
        let path = dir.path().join("t.csv");
        t.write(&path).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(&rows[0][1], "x, with comma");
        assert_eq!(rows[1][1].parse::<f64>().unwrap(), 1e-300);
        assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn check_lines() {
        assert_eq!(Check::new("x", true, "ok").line(), "PASS x: ok");
        assert_eq!(Check::new("y", false, "no").line(), "FAIL y: no");
    }
}
