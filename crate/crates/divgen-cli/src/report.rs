use std::fs;
use std::io::Write;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::{Format, GlobalArgs};

/// Renders `report` to `--report` or stdout. With `--timing`, adds
/// `runtime_ms` measured from `started`.
pub fn emit(g: &GlobalArgs, report: &impl Serialize, started: Instant) -> Result<()> {
    let mut value = serde_json::to_value(report)?;
    if g.timing {
        if let Value::Object(map) = &mut value {
            map.insert("runtime_ms".into(), (started.elapsed().as_millis() as u64).into());
        }
    }
    let text = match g.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&value)?;
            s.push('\n');
            s
        }
        Format::Table => table(&value),
    };
    match &g.report {
        Some(path) => fs::write(path, text).with_context(|| format!("writing report {}", path.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn table(value: &Value) -> String {
    let Value::Object(map) = value else {
        return format!("{value}\n");
    };
    let width = map.keys().map(String::len).max().unwrap_or(0);
    let mut s = String::new();
    for (k, v) in map {
        let cell = match v {
            Value::String(t) => t.clone(),
            Value::Null => "-".into(),
            Value::Number(n) => match n.as_f64() {
                Some(f) if n.is_f64() => format!("{f:.4}"),
                _ => n.to_string(),
            },
            other => other.to_string(),
        };
        s.push_str(&format!("{k:<width$}  {cell}\n"));
    }
    s
}
