//! Config-file layering. Values from the `[<command>]` table of the TOML
//! file are spliced into the argument list right after the subcommand, so
//! explicit flags (which come later and override earlier occurrences) win.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use serde_json::{Map, Value};

use crate::CliError;

/// Turns a flat key/value map into flags. `snake_case` keys become
/// `--kebab-case`; arrays are comma-joined; `true` is a bare switch;
/// `false` and null are dropped.
pub fn flags_from_map(map: &Map<String, Value>) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    for (k, v) in map {
        let flag = format!("--{}", k.replace('_', "-"));
        let scalar = |v: &Value| match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(CliError::Usage(format!("config key {k:?}: unsupported value {v}"))),
        };
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag),
            Value::Array(items) if items.is_empty() => {}
            Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
                out.push(flag);
                out.push(parts.join(","));
            }
            other => {
                let s = scalar(other)?;
                out.push(flag);
                out.push(s);
            }
        }
    }
    Ok(out)
}

/// Finds `--config` and the subcommand position without a full parse.
fn scan(argv: &[OsString]) -> (Option<PathBuf>, Option<usize>) {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            config = argv.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else if a == "--" {
            break;
        } else if sub.is_none() && !a.starts_with('-') {
            sub = Some(i);
        }
        i += 1;
    }
    (config, sub)
}

/// Argument list with the config file's flags inserted.
pub fn expand_argv(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let (Some(path), Some(sub)) = scan(&argv) else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let doc: toml::Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let name = argv[sub].to_string_lossy().into_owned();
    let Some(table) = doc.get(&name) else {
        return Ok(argv);
    };
    let Value::Object(map) = serde_json::to_value(table).map_err(|e| CliError::Usage(e.to_string()))? else {
        return Err(CliError::Usage(format!("{}: [{name}] must be a table", path.display())));
    };
    let flags = flags_from_map(&map)?;
    let mut out = argv[..=sub].to_vec();
    out.extend(flags.into_iter().map(OsString::from));
    out.extend_from_slice(&argv[sub + 1..]);
    Ok(out)
}
