//! Config documents: JSON objects or `key = value` lines with dotted keys,
//! both layered over `MiracleConfig::default()`. Unknown keys are errors.

use std::path::Path;

use miracle_core::model::MiracleConfig;
use serde_json::{Map, Value};

use crate::CliError;

fn unknown(key: &str) -> CliError {
    CliError::usage(format!("unknown config key `{key}`"))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').map(str::trim).collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| unknown(key))?;
        let slot = obj.get_mut(*part).ok_or_else(|| unknown(key))?;
        if i + 1 == parts.len() {
            // a single width for a list-valued key
            *slot = match value {
                Value::Array(_) => value,
                v if slot.is_array() => Value::Array(vec![v]),
                v => v,
            };
            return Ok(());
        }
        node = slot;
    }
    Err(unknown(key))
}

fn merge(base: &mut Value, patch: Map<String, Value>, prefix: &str) -> Result<(), CliError> {
    for (k, v) in patch {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let slot = base
            .as_object_mut()
            .and_then(|o| o.get_mut(&k))
            .ok_or_else(|| unknown(&key))?;
        match v {
            Value::Object(m) if slot.is_object() => merge(slot, m, &key)?,
            other => *slot = other,
        }
    }
    Ok(())
}

/// Parses the right-hand side of `key = value`: JSON when it parses,
/// comma lists as arrays, otherwise a bare string.
pub fn parse_scalar(raw: &str) -> Value {
    let raw = raw.trim();
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if raw.contains(',') {
        return Value::Array(raw.split(',').map(parse_scalar).collect());
    }
    Value::String(raw.to_string())
}

fn split_assignment(line: &str) -> Result<(&str, &str), CliError> {
    line.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| CliError::usage(format!("expected `key = value`, got `{line}`")))
}

fn finish(v: Value) -> Result<MiracleConfig, CliError> {
    let config: MiracleConfig =
        serde_json::from_value(v).map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
    config
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;
    Ok(config)
}

/// Applies a config document (if any) and then `overrides` (`key=value`).
pub fn resolve(text: Option<&str>, overrides: &[String]) -> Result<MiracleConfig, CliError> {
    let mut v = serde_json::to_value(MiracleConfig::default()).expect("config serializes");
    if let Some(text) = text {
        if text.trim_start().starts_with('{') {
            match serde_json::from_str::<Value>(text) {
                Ok(Value::Object(m)) => merge(&mut v, m, "")?,
                Ok(_) => return Err(CliError::usage("config JSON must be an object")),
                Err(e) => return Err(CliError::usage(format!("config JSON: {e}"))),
            }
        } else {
            for line in text.lines() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, val) = split_assignment(line)?;
                set_path(&mut v, k, parse_scalar(val))?;
            }
        }
    }
    for o in overrides {
        let (k, val) = split_assignment(o)?;
        set_path(&mut v, k, parse_scalar(val))?;
    }
    finish(v)
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<MiracleConfig, CliError> {
    let text = path
        .map(|p| {
            std::fs::read_to_string(p)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))
        })
        .transpose()?;
    resolve(text.as_deref(), overrides)
}
