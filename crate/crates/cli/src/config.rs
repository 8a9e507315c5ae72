//! Run configuration: a JSON document from `--config`, overridden by flags.
//!
//! Each subcommand splits the merged document into its own run keys (paths,
//! split names) and the module config that owns every other key. Both parts
//! reject unknown keys. The fully resolved document is written next to the
//! outputs as `<subcommand>.config.json` and can be passed back via `--config`.

use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Bad configuration or arguments detected after flag parsing. Exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub type Document = Map<String, Value>;

pub fn load_document(path: Option<&Path>) -> Result<Document> {
    let Some(path) = path else {
        return Ok(Document::new());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(config_error(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(config_error(format!("{}: {e}", path.display()))),
    }
}

/// Sets `key` when the flag was given; flags win over the file.
pub fn overlay<T: Serialize>(doc: &mut Document, key: &str, value: Option<T>) -> Result<()> {
    if let Some(v) = value {
        doc.insert(key.to_string(), serde_json::to_value(v)?);
    }
    Ok(())
}

/// Moves `keys` out of `doc` into a separate document.
pub fn take_keys(doc: &mut Document, keys: &[&str]) -> Document {
    keys.iter()
        .filter_map(|k| doc.remove(*k).map(|v| (k.to_string(), v)))
        .collect()
}

pub fn parse<T: DeserializeOwned>(doc: Document, what: &str) -> Result<T> {
    serde_json::from_value(Value::Object(doc)).map_err(|e| config_error(format!("{what}: {e}")))
}

/// Merges the resolved parts into one document, in order.
pub fn resolved(parts: &[&dyn erased::ToValue]) -> Result<Value> {
    let mut out = Document::new();
    for p in parts {
        match p.to_value()? {
            Value::Object(m) => out.extend(m),
            other => anyhow::bail!("config part is not an object: {other}"),
        }
    }
    Ok(Value::Object(out))
}

pub fn write_echo(dir: &Path, subcommand: &str, doc: &Value) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{subcommand}.config.json"));
    let text = serde_json::to_string_pretty(doc)?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub mod erased {
    use serde::Serialize;
    use serde_json::Value;

    pub trait ToValue {
        fn to_value(&self) -> serde_json::Result<Value>;
    }

    impl<T: Serialize> ToValue for T {
        fn to_value(&self) -> serde_json::Result<Value> {
            serde_json::to_value(self)
        }
    }
}
