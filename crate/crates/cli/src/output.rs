//! Artifact writers and the `run.json` provenance record.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{CliError, CliResult};

pub const RUN_FILE: &str = "run.json";

/// Fixed-precision rendering shared by every table.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        let s = format!("{v:.6}");
        if s == "-0.000000" { "0.000000".into() } else { s }
    }
}

pub fn num_list(values: &[f64]) -> String {
    values.iter().map(|&v| num(v)).collect::<Vec<_>>().join(";")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

/// Collects the files a command writes into one directory.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::invalid(format!("cannot write {}: {e}", path.display()))
}

impl Outputs {
    pub fn create(dir: impl Into<PathBuf>) -> CliResult<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Outputs { dir, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Registers a file written by other code under this directory.
    pub fn record(&mut self, name: impl Into<String>) {
        let name = name.into();
        if !self.files.contains(&name) {
            self.files.push(name);
        }
    }

    pub fn text(&mut self, name: &str, content: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, content).map_err(|e| io_err(&path, e))?;
        self.record(name);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Compute(format!("cannot serialize {name}: {e}")))?;
        s.push('\n');
        self.text(name, &s)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| CliError::Compute(format!("cannot format {name}: {e}"));
        w.write_record(header).map_err(fail)?;
        for r in rows {
            debug_assert_eq!(r.len(), header.len(), "{name}");
            w.write_record(r).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Compute(format!("cannot format {name}: {e}")))?;
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.record(name);
        Ok(())
    }
}

/// What a finished command reports about itself.
pub struct RunInfo<'a> {
    pub command: &'a str,
    pub argv: Vec<String>,
    pub config_file: Option<&'a Path>,
    pub resolved: &'a Map<String, Value>,
    pub jobs: usize,
    pub wall_time_seconds: f64,
    pub outputs: &'a [String],
}

/// Adds this command's entry to `run.json` in `dir`, keeping the entries of
/// other commands that wrote to the same directory.
pub fn write_run(dir: &Path, info: &RunInfo) -> CliResult<()> {
    let path = dir.join(RUN_FILE);
    let mut runs = Map::new();
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(Value::Object(mut old)) = serde_json::from_str::<Value>(&text) {
            if let Some(Value::Object(r)) = old.remove("runs") {
                runs = r;
            }
        }
    }
    runs.insert(
        info.command.to_string(),
        json!({
            "argv": info.argv,
            "config_file": info.config_file.map(|p| p.display().to_string()),
            "config": info.resolved,
            "jobs": info.jobs,
            "wall_time_seconds": info.wall_time_seconds,
            "outputs": info.outputs,
        }),
    );
    let doc = json!({
        "tool": "probegeom",
        "versions": {
            "cli": env!("CARGO_PKG_VERSION"),
            "core": probegeom::VERSION,
            "parallel": probegeom::PARALLEL,
        },
        "runs": runs,
    });
    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Compute(e.to_string()))?;
    s.push('\n');
    fs::write(&path, s).map_err(|e| io_err(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(num(0.5), "0.500000");
        assert_eq!(num(-1e-9), "0.000000");
        assert_eq!(num(f64::NAN), "nan");
        assert_eq!(num(f64::INFINITY), "inf");
        assert_eq!(num_list(&[1.0, 0.25]), "1.000000;0.250000");
    }

    #[test]
    fn run_json_keeps_other_commands() {
        let dir = tempfile::tempdir().unwrap();
        let resolved = Map::new();
        for cmd in ["sweep", "fewshot"] {
            write_run(
                dir.path(),
                &RunInfo {
                    command: cmd,
                    argv: vec![cmd.into()],
                    config_file: None,
                    resolved: &resolved,
                    jobs: 1,
                    wall_time_seconds: 0.0,
                    outputs: &[],
                },
            )
            .unwrap();
        }
        let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join(RUN_FILE)).unwrap()).unwrap();
        assert!(v["runs"]["sweep"].is_object());
        assert!(v["runs"]["fewshot"].is_object());
        assert_eq!(v["versions"]["core"], probegeom::VERSION);
    }
}
