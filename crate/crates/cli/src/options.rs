//! `--config FILE` support: TOML values become command-line flags unless the
//! flag was given explicitly.
//!
//! ```toml
//! seed = 7                 # every command
//! [build-index]
//! shards = 4
//! no_raw = true            # bool true -> bare flag, false -> omitted
//! [train.pq]
//! centroids = 64
//! ```

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use toml::{Table, Value};

/// Global flags that take a value; needed to find the subcommand words.
const VALUE_GLOBALS: [&str; 2] = ["--seed", "--config"];

/// Returns `argv` with config-file defaults appended.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let table: Table =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let words = command_words(&argv);

    let mut layers = vec![&table];
    let mut scope = &table;
    for w in &words {
        match scope.get(w.as_str()) {
            Some(Value::Table(t)) => {
                layers.push(t);
                scope = t;
            }
            _ => break,
        }
    }

    let mut merged: Vec<(String, &Value)> = Vec::new();
    for layer in layers {
        for (k, v) in layer {
            if v.is_table() {
                continue;
            }
            merged.retain(|(m, _)| m != k);
            merged.push((k.clone(), v));
        }
    }

    let mut out = argv.clone();
    for (key, value) in merged {
        let flag = format!("--{}", key.replace('_', "-"));
        if argv
            .iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
        {
            continue;
        }
        push_flag(&mut out, &flag, value)?;
    }
    Ok(out)
}

fn push_flag(out: &mut Vec<String>, flag: &str, value: &Value) -> Result<()> {
    match value {
        Value::Boolean(true) => out.push(flag.to_string()),
        Value::Boolean(false) => {}
        Value::Array(items) => {
            for item in items {
                push_flag(out, flag, item)?;
            }
        }
        Value::String(s) => out.extend([flag.to_string(), s.clone()]),
        Value::Integer(i) => out.extend([flag.to_string(), i.to_string()]),
        Value::Float(f) => out.extend([flag.to_string(), f.to_string()]),
        other => bail!(
            "config value for {flag} has unsupported type {}",
            other.type_str()
        ),
    }
    Ok(())
}

fn config_path(argv: &[String]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--" {
            return None;
        }
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Leading positional words: the subcommand and, for `train`, its model.
fn command_words(argv: &[String]) -> Vec<String> {
    let mut words = Vec::new();
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if VALUE_GLOBALS.contains(&a.as_str()) {
            it.next();
        } else if a.starts_with('-') {
            if !words.is_empty() {
                break;
            }
        } else {
            words.push(a.clone());
            if words.len() == 2 || words[0] != "train" {
                break;
            }
        }
    }
    words
}
