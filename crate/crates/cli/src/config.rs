use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// A bad flag, config file, or flag combination (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn toml_to_json(v: toml::Value) -> Value {
    match v {
        toml::Value::String(s) => Value::String(s),
        toml::Value::Integer(i) => Value::from(i),
        toml::Value::Float(f) => Value::from(f),
        toml::Value::Boolean(b) => Value::Bool(b),
        toml::Value::Datetime(d) => Value::String(d.to_string()),
        toml::Value::Array(a) => Value::Array(a.into_iter().map(toml_to_json).collect()),
        toml::Value::Table(t) => Value::Object(
            t.into_iter()
                .map(|(k, v)| (k.replace('-', "_"), toml_to_json(v)))
                .collect(),
        ),
    }
}

/// Overlays the flags that were given on top of a `key = value` config file.
/// Keys may use dashes or underscores; unknown keys are rejected.
pub fn resolve<T: Serialize + DeserializeOwned>(
    flags: &T,
    config: Option<&Path>,
) -> anyhow::Result<T> {
    let mut merged = Map::new();
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        if let Value::Object(m) = toml_to_json(toml::Value::Table(table)) {
            merged = m;
        }
    }
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("config: {e}")))
}

/// Accepts `hops = 3` as well as `hops = "1..9"` in config files.
pub fn string_or_number<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> Result<Option<String>, D::Error> {
    use serde::Deserialize;
    Ok(match Option::<Value>::deserialize(d)? {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(Value::Number(n)) => Some(n.to_string()),
        Some(other) => {
            return Err(serde::de::Error::custom(format!(
                "invalid hops value {other}"
            )))
        }
    })
}

/// Parses `a..b` (inclusive), `a,b,c`, or a single number.
pub fn parse_hop_range(s: &str) -> anyhow::Result<Vec<usize>> {
    let num = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("invalid hop range {s:?}")))
    };
    let hops: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(usage(format!("empty hop range {s:?}")));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<anyhow::Result<_>>()?
    };
    if hops.iter().any(|&h| h == 0) {
        return Err(usage("hops must be ≥ 1"));
    }
    Ok(hops)
}
