//! `--config` handling: TOML keys become flags that were not given.
//!
//! ```toml
//! threads = 4
//!
//! [train]
//! loss = "topk"
//! epochs = 30
//!
//! [split.cg]
//! target-dc = 0.6
//! ```
//!
//! Keys may use `_` or `-`. Top-level scalars are global flags; a table named
//! after the subcommand (and `split.<kind>` for splits) supplies its flags.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use toml::{Table, Value};

use crate::CliError;

const VALUE_FLAGS: [&str; 2] = ["--threads", "--config"];

fn config_path(argv: &[String]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Positional words naming the subcommand, e.g. `["split", "cg"]`.
fn command_path(argv: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if VALUE_FLAGS.contains(&a.as_str()) {
            it.next();
            continue;
        }
        if a.starts_with('-') {
            continue;
        }
        out.push(a.clone());
        if out.len() == 2 || out[0] != "split" {
            break;
        }
    }
    out
}

fn has_flag(argv: &[String], flag: &str) -> bool {
    let eq = format!("{flag}=");
    argv.iter().any(|a| a == flag || a.starts_with(&eq))
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Integer(i) => Some(i.to_string()),
        Value::Float(f) => Some(f.to_string()),
        _ => None,
    }
}

fn push_table(table: &Table, argv: &[String], extra: &mut Vec<String>) -> Result<(), CliError> {
    for (key, value) in table {
        if value.is_table() {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        if has_flag(argv, &flag) {
            continue;
        }
        match value {
            Value::Boolean(true) => extra.push(flag),
            Value::Boolean(false) => {}
            Value::Array(items) => {
                for item in items {
                    let s = scalar(item).ok_or_else(|| {
                        CliError::Usage(format!("config key `{key}`: unsupported array item"))
                    })?;
                    extra.push(flag.clone());
                    extra.push(s);
                }
            }
            other => {
                let s = scalar(other).ok_or_else(|| {
                    CliError::Usage(format!("config key `{key}`: unsupported value"))
                })?;
                extra.push(flag);
                extra.push(s);
            }
        }
    }
    Ok(())
}

/// `argv` with config-file flags appended for every flag not already present.
pub fn merge(argv: Vec<String>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv.into_iter().map(OsString::from).collect());
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let root: Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut extra = Vec::new();
    push_table(&root, &argv, &mut extra)?;
    let mut table = Some(&root);
    for word in command_path(&argv) {
        table = table.and_then(|t| t.get(&word)).and_then(Value::as_table);
        if let Some(t) = table {
            push_table(t, &argv, &mut extra)?;
        }
    }
    Ok(argv.into_iter().chain(extra).map(OsString::from).collect())
}
