use crate::Format;
use race_core::config::Calibration;
use race_core::error::RaceError;
use serde_json::{json, Value};

/// Bumped whenever a report field is renamed or removed.
pub const SCHEMA_VERSION: u32 = 1;

pub fn envelope(command: &str, calibration: &Calibration, params: Value, result: Value) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "calibration": calibration,
        "params": params,
        "result": result,
    })
}

pub fn render(format: Format, report: &Value, csv: Option<String>) -> Result<String, RaceError> {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| RaceError::Format(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => csv.ok_or_else(|| {
            RaceError::Config(format!("{} has no CSV output; use json or table", report["command"]))
        }),
        Format::Table => {
            let mut lines = Vec::new();
            flatten("", report, &mut lines);
            let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            Ok(lines.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect())
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => map.iter().for_each(|(k, x)| flatten(&join(k), x, out)),
        Value::Array(items) if items.iter().all(|x| !x.is_object() && !x.is_array()) => {
            let cells: Vec<String> = items.iter().map(scalar).collect();
            out.push((prefix.to_string(), format!("[{}]", cells.join(", "))));
        }
        Value::Array(items) => items.iter().enumerate().for_each(|(i, x)| flatten(&join(&i.to_string()), x, out)),
        _ => out.push((prefix.to_string(), scalar(v))),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
