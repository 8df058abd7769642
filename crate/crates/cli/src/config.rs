//! JSON run configs with dot-path overrides.
//!
//! A config is read from an optional JSON file, then each `key=value`
//! override is written into the JSON tree before the result is deserialized
//! into the typed config. Keys are checked against the serialized defaults,
//! so a misspelled key is rejected with its full path.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Every leaf key of `T::default()` as `(dot.path, default JSON)`.
pub fn config_keys<T: Serialize + Default>() -> Vec<(String, String)> {
    let mut out = Vec::new();
    let value = serde_json::to_value(T::default()).expect("defaults serialize");
    flatten("", &value, &mut out);
    out
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => out.push((prefix.to_string(), v.to_string())),
    }
}

/// Help text listing every key with its default.
pub fn keys_help<T: Serialize + Default>() -> String {
    let keys = config_keys::<T>();
    let width = keys.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (JSON file via --config, or --set KEY=VALUE), with defaults:\n");
    for (k, d) in keys {
        s.push_str(&format!("  {k:width$}  {d}\n"));
    }
    s
}

fn known_key(defaults: &Value, path: &[&str]) -> bool {
    let mut v = defaults;
    for (i, part) in path.iter().enumerate() {
        match v.get(part) {
            Some(child) => v = child,
            None => return false,
        }
        // nested keys under a null-defaulted or scalar value cannot be checked
        if !v.is_object() && i + 1 < path.len() {
            return false;
        }
    }
    true
}

/// Parses `KEY=VALUE`; the value is read as JSON when it parses and as a
/// plain string otherwise.
pub fn parse_override(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {s:?} is not KEY=VALUE")))?;
    let k = k.trim();
    if k.is_empty() || k.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("override {s:?} has an empty key")));
    }
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(CliError::Config(format!("{key}: parent is not an object")));
        }
        let map = node.as_object_mut().expect("checked object");
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
    }
    match node {
        Value::Object(m) => {
            m.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        _ => Err(CliError::Config(format!("{key}: parent is not an object"))),
    }
}

/// Reads `file` (if any), applies `overrides` in order and deserializes.
pub fn load_config<T: Serialize + DeserializeOwned + Default>(
    file: Option<&Path>,
    overrides: &[(String, Value)],
) -> Result<T, CliError> {
    let mut root = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !root.is_object() {
        return Err(CliError::Config("config file must hold a JSON object".into()));
    }
    let defaults = serde_json::to_value(T::default()).expect("defaults serialize");
    for (k, v) in overrides {
        let parts: Vec<&str> = k.split('.').collect();
        if !known_key(&defaults, &parts) {
            return Err(CliError::Config(format!("unknown key {k}")));
        }
        set_path(&mut root, k, v.clone())?;
    }
    serde_path_to_error::deserialize(root).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("key {path}: {}", e.into_inner()))
    })
}
