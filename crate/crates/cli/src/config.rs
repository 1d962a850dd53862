//! `--config FILE`: a JSON object whose keys are long flag names. Its
//! entries are spliced in right after the subcommand, so flags given on the
//! command line win.

use std::ffi::OsString;

use serde_json::Value;

use crate::{CliError, CliResult};

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

pub fn config_to_flags(value: &Value) -> CliResult<Vec<OsString>> {
    let obj = value
        .as_object()
        .ok_or_else(|| CliError::validation("config must be a JSON object"))?;
    let mut flags = Vec::new();
    for (key, v) in obj {
        if key == "config" {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Bool(true) => flags.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Number(n) => {
                flags.push(flag.into());
                flags.push(n.to_string().into());
            }
            Value::String(s) => {
                flags.push(flag.into());
                flags.push(s.into());
            }
            Value::Array(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|i| match i {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect();
                flags.push(flag.into());
                flags.push(parts.join(",").into());
            }
            Value::Object(_) => {
                return Err(CliError::validation(format!("config key {key:?} must not be an object")))
            }
        }
    }
    Ok(flags)
}

pub fn expand_config(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.to_string_lossy())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("config is not valid JSON: {e}")))?;
    let flags = config_to_flags(&value)?;
    let mut out = Vec::with_capacity(argv.len() + flags.len());
    let mut rest = argv.into_iter();
    out.extend(rest.by_ref().take(2));
    out.extend(flags);
    out.extend(rest);
    Ok(out)
}
