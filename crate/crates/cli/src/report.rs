//! Structured run records and their atomic serialization.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use conelab::geometry::{GridSpec, ManifoldModel};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::{Config, ModelSpec};
use crate::CliError;

/// A CSV table: header plus rows of already formatted cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| CliError::Config(format!("csv: {e}")))
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Config(format!("csv: {e}"))
}

/// Shortest round-trip decimal form, so equal values give equal bytes.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRef {
    pub name: String,
    pub path: String,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    /// The materialized config; feeding it back reproduces the run.
    pub config: Value,
    pub model: Value,
    pub grid: Value,
    pub results: Map<String, Value>,
    pub tables: Vec<TableRef>,
    pub violations: Vec<String>,
    pub passed: bool,
    pub wall_time_s: f64,
}

/// A finished run: the report and the tables it refers to.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: ExperimentReport,
    pub tables: Vec<Table>,
}

impl Outcome {
    pub fn result(&self, key: &str) -> Option<&Value> {
        self.report.results.get(key)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes each table as `<name>.csv` and then `report.json`, each through
    /// a temporary file renamed into place.
    pub fn write(&mut self, dir: &Path) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(dir)?;
        self.report.tables.clear();
        for t in &self.tables {
            let file = format!("{}.csv", t.name);
            write_atomic(&dir.join(&file), &t.to_csv()?)?;
            self.report.tables.push(TableRef { name: t.name.clone(), path: file, rows: t.rows.len() });
        }
        let path = dir.join("report.json");
        let mut text = serde_json::to_vec_pretty(&self.report).expect("report serializes");
        text.push(b'\n');
        write_atomic(&path, &text)?;
        Ok(path)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::from(e.error))?;
    Ok(())
}

pub fn model_summary(spec: &ModelSpec, model: &ManifoldModel<f64>) -> Value {
    let crit = model.critical_values(720, 64).ok();
    serde_json::json!({
        "preset": spec.name(),
        "dim": model.dim,
        "v_tilde_constant": model.v_tilde.is_constant(),
        "critical_points": crit.as_ref().map(|c| c.points.clone()),
        "critical_values": crit.as_ref().map(|c| c.values.clone()),
        "min_decay": model.min_decay(),
    })
}

pub fn grid_summary(grid: &GridSpec<f64>) -> Value {
    let (cone, tube) = (grid.cone(), grid.tube());
    serde_json::json!({
        "r_min": grid.r_min,
        "r_max": grid.r_max,
        "n_r": grid.n_r,
        "n_theta": grid.n_theta,
        "dr": grid.dr(),
        "dtheta": grid.dtheta(),
        "tube_r_min": grid.tube_r_min,
        "cone_dof": cone.len(),
        "tube_dof": tube.len(),
        "e_max": grid.e_max,
    })
}

/// Collects results while a command runs.
pub struct Recorder {
    command: String,
    config: Config,
    start: Instant,
    model: Value,
    grid: Value,
    results: Map<String, Value>,
    tables: Vec<Table>,
    violations: Vec<String>,
}

impl Recorder {
    pub fn new(command: &str, config: &Config) -> Self {
        Recorder {
            command: command.into(),
            config: config.clone(),
            start: Instant::now(),
            model: Value::Null,
            grid: Value::Null,
            results: Map::new(),
            tables: Vec::new(),
            violations: Vec::new(),
        }
    }

    pub fn describe(&mut self, spec: &ModelSpec, model: &ManifoldModel<f64>, grid: &GridSpec<f64>) {
        self.model = model_summary(spec, model);
        self.grid = grid_summary(grid);
    }

    pub fn set(&mut self, key: &str, v: impl Serialize) {
        self.results.insert(key.into(), serde_json::to_value(v).expect("result serializes"));
    }

    pub fn table(&mut self, t: Table) {
        self.tables.push(t);
    }

    /// Records `name` as violated unless `ok`.
    pub fn require(&mut self, ok: bool, name: &str, detail: impl Into<String>) {
        if !ok {
            self.violations.push(format!("{name}: {}", detail.into()));
        }
    }

    pub fn finish(self) -> Outcome {
        let passed = self.violations.is_empty();
        Outcome {
            report: ExperimentReport {
                tool_version: env!("CARGO_PKG_VERSION").into(),
                command: self.command,
                config_hash: self.config.hash(),
                config: serde_json::to_value(&self.config).expect("config serializes"),
                model: self.model,
                grid: self.grid,
                results: self.results,
                tables: Vec::new(),
                violations: self.violations,
                passed,
                wall_time_s: self.start.elapsed().as_secs_f64(),
            },
            tables: self.tables,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-17, 0.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn outputs_are_written_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = Recorder::new("spectrum", &Config::default());
        let mut t = Table::new("values", &["k", "value"]);
        t.push(vec!["0".into(), num(0.5)]);
        rec.table(t);
        rec.set("count", 1);
        let mut out = rec.finish();
        let path = out.write(dir.path()).unwrap();
        let back: ExperimentReport = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(back.tables[0].path, "values.csv");
        assert_eq!(std::fs::read_to_string(dir.path().join("values.csv")).unwrap(), "k,value\n0,5e-1\n");
        let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(leftovers, 2);
    }
}
