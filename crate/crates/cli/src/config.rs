// SPDX-License-Identifier: Apache-2.0

//! Config files: one table per subcommand, merged over the parsed flags.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Reads a TOML or JSON file into a JSON value. JSON is detected by a
/// `.json` extension or a leading `{`.
pub fn read_value(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let is_json =
        path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) || text.trim_start().starts_with('{');
    if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    } else {
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        serde_json::to_value(table).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }
}

pub fn read_as<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let value = read_value(path)?;
    serde_json::from_value(value).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Overlays the `section` table of `config` on `args`. Keys that the
/// subcommand does not know are an error.
pub fn merge<T>(args: T, config: Option<&Value>, section: &str) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned,
{
    let Some(table) = config.and_then(|c| c.get(section)) else {
        return Ok(args);
    };
    let Value::Object(overrides) = table else {
        return Err(CliError::input(format!("config: `{section}` must be a table")));
    };
    let mut base = match serde_json::to_value(&args) {
        Ok(Value::Object(m)) => m,
        _ => return Err(CliError::internal("arguments did not serialize to a map")),
    };
    for (key, value) in overrides {
        if !base.contains_key(key) {
            return Err(CliError::input(format!("config: unknown key `{section}.{key}`")));
        }
        base.insert(key.clone(), value.clone());
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| CliError::input(format!("config: `{section}`: {e}")))
}

/// Top-level keys a config file may contain.
pub const SECTIONS: [&str; 13] = [
    "evaluate",
    "adjust_precision",
    "size_study",
    "pair_prevalence",
    "scle_sample",
    "scle_ingest",
    "scle_aggregate",
    "scle_apply_verdicts",
    "subsets",
    "stability",
    "resample",
    "synth",
    "checklist",
];

pub fn check_sections(config: &Value) -> Result<(), CliError> {
    let Value::Object(map) = config else {
        return Err(CliError::input("config: top level must be a table"));
    };
    check_keys(map)
}

fn check_keys(map: &Map<String, Value>) -> Result<(), CliError> {
    for key in map.keys() {
        if !SECTIONS.contains(&key.as_str()) {
            return Err(CliError::input(format!("config: unknown section `{key}`")));
        }
    }
    Ok(())
}
