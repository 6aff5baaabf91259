//! Flag, config-file and default resolution.
//!
//! A config file is a JSON object keyed by long flag names (`"seed-list"`,
//! `"dims"`, ...). Values may be strings, numbers, booleans or arrays,
//! which are joined with commas before parsing. A flag given on the
//! command line always wins over the file, and the file over the default.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Compute(_) => 2,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl From<probegeom::Error> for CliError {
    fn from(e: probegeom::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Compute(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, Value>,
    source: Option<PathBuf>,
    used: BTreeSet<String>,
    resolved: Map<String, Value>,
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn value_text(v: &Value) -> Option<String> {
    match v {
        Value::Array(items) => {
            let parts: Option<Vec<String>> = items.iter().map(scalar_text).collect();
            parts.map(|p| p.join(","))
        }
        other => scalar_text(other),
    }
}

/// JSON form of a resolved value: numbers and booleans stay typed.
fn echo(text: &str) -> Value {
    if let Ok(i) = text.parse::<i64>() {
        return Value::from(i);
    }
    if let Ok(f) = text.parse::<f64>() {
        if f.is_finite() && !text.contains(',') {
            return Value::from(f);
        }
    }
    match text {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        _ => Value::String(text.to_string()),
    }
}

impl Resolver {
    pub fn from_file(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Resolver::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::invalid(format!("cannot read config {}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::invalid(format!("config {} is not valid JSON: {e}", path.display())))?;
        let Value::Object(obj) = v else {
            return Err(CliError::invalid(format!("config {} must be a JSON object", path.display())));
        };
        Ok(Resolver {
            file: obj.into_iter().collect(),
            source: Some(path.to_path_buf()),
            ..Default::default()
        })
    }

    pub fn config_path(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    fn from_config<T>(&mut self, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        let Some(v) = self.file.get(key) else {
            return Ok(None);
        };
        if v.is_null() {
            return Ok(None);
        }
        let text = value_text(v)
            .ok_or_else(|| CliError::invalid(format!("config key '{key}' has an unsupported value {v}")))?;
        text.parse::<T>()
            .map(Some)
            .map_err(|e| CliError::invalid(format!("config key '{key}': {e}")))
    }

    /// Flag, else config value, else nothing.
    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_file = self.from_config::<T>(key)?;
        let v = flag.or(from_file);
        self.resolved
            .insert(key.to_string(), v.as_ref().map_or(Value::Null, |t| echo(&t.to_string())));
        Ok(v)
    }

    /// Flag, else config value, else `default`.
    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.optional(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), echo(&v.to_string()));
        Ok(v)
    }

    /// A flag that is absent or set.
    pub fn switch(&mut self, key: &str, flag: bool) -> CliResult<bool> {
        let v = if flag { true } else { self.from_config::<bool>(key)?.unwrap_or(false) };
        self.resolved.insert(key.to_string(), Value::Bool(v));
        Ok(v)
    }

    /// A repeatable flag; the config may hold a string or an array.
    pub fn repeated(&mut self, key: &str, flag: Vec<String>) -> CliResult<Vec<String>> {
        self.used.insert(key.to_string());
        let v = if !flag.is_empty() {
            flag
        } else {
            match self.file.get(key) {
                None | Some(Value::Null) => Vec::new(),
                Some(Value::String(s)) => vec![s.clone()],
                Some(Value::Array(items)) => items
                    .iter()
                    .map(|i| {
                        i.as_str()
                            .map(str::to_string)
                            .ok_or_else(|| CliError::invalid(format!("config key '{key}' must hold strings")))
                    })
                    .collect::<CliResult<_>>()?,
                Some(other) => {
                    return Err(CliError::invalid(format!("config key '{key}' has an unsupported value {other}")));
                }
            }
        };
        self.resolved
            .insert(key.to_string(), Value::Array(v.iter().cloned().map(Value::String).collect()));
        Ok(v)
    }

    /// Records a value that was not read through the resolver.
    pub fn note(&mut self, key: &str, v: Value) {
        self.resolved.insert(key.to_string(), v);
    }

    /// Fails on config keys that no option of this command consumed.
    pub fn finish(&self) -> CliResult<()> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::invalid(format!("unknown config key(s) for this command: {unknown:?}")))
        }
    }

    pub fn resolved(&self) -> &Map<String, Value> {
        &self.resolved
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::CsvList;

    fn with(json: &str) -> Resolver {
        let Value::Object(obj) = serde_json::from_str(json).unwrap() else {
            panic!()
        };
        Resolver {
            file: obj.into_iter().collect(),
            ..Default::default()
        }
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let mut r = with(r#"{"dims": [1, 2], "c": 0.5}"#);
        let dims: CsvList<usize> = r.value("dims", Some(CsvList(vec![7])), CsvList(vec![3])).unwrap();
        assert_eq!(dims.0, vec![7]);
        let c: f64 = r.value("c", None, 0.1).unwrap();
        assert_eq!(c, 0.5);
        let k: usize = r.value("pls-dim", None, 5).unwrap();
        assert_eq!(k, 5);
        // a one-element list echoes as a scalar
        assert_eq!(r.resolved()["dims"], Value::from(7));
        let seeds: CsvList<u64> = r.value("seed-list", Some(CsvList(vec![4, 5])), CsvList(vec![1])).unwrap();
        assert_eq!(seeds.0, vec![4, 5]);
        assert_eq!(r.resolved()["seed-list"], Value::from("4,5"));
        assert_eq!(r.resolved()["c"], Value::from(0.5));
        assert_eq!(r.resolved()["pls-dim"], Value::from(5));
        r.finish().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut r = with(r#"{"dims": "1,2", "dimz": 3}"#);
        let _: CsvList<usize> = r.value("dims", None, CsvList(vec![1])).unwrap();
        let err = r.finish().unwrap_err();
        assert!(err.to_string().contains("dimz"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn bad_config_value_names_key() {
        let mut r = with(r#"{"resamples": "many"}"#);
        let err = r.value::<usize>("resamples", None, 10).unwrap_err();
        assert!(err.to_string().contains("resamples"));
    }

    #[test]
    fn csv_echo_stays_a_string() {
        assert_eq!(echo("1,2"), Value::from("1,2"));
        assert_eq!(echo("0.25"), Value::from(0.25));
        assert_eq!(echo("all"), Value::from("all"));
    }
}
