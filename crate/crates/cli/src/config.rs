//! Flat `key = value` run configs: merged into the argument list before
//! parsing, and echoed back after it.

use std::fs;

use anyhow::{Context, Result};
use ragtts::Error;
use serde::Serialize;
use serde_json::Value;

/// Key naming the subcommand in an echoed config.
pub const COMMAND_KEY: &str = "command";

const VALUE_FLAGS: [&str; 3] = ["--seed", "--config", "--out"];

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("config line {}: expected key = value", n + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Argument(format!("config line {}: empty key", n + 1)).into());
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Position of the subcommand token: the first bare word that is not the
/// value of a global flag.
fn subcommand_position(args: &[String], names: &[&str]) -> Option<usize> {
    (0..args.len())
        .find(|&i| names.contains(&args[i].as_str()) && (i == 0 || !VALUE_FLAGS.contains(&args[i - 1].as_str())))
}

/// Rewrites `args` (without the program name) so that values from the
/// `--config` file come first and explicit flags override them.
pub fn merge(args: Vec<String>, subcommands: &[&str]) -> Result<Vec<String>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let pairs = parse(&text)?;

    let mut rest = args;
    let command = match subcommand_position(&rest, subcommands) {
        Some(i) => rest.remove(i),
        None => pairs
            .iter()
            .find(|(k, _)| k == COMMAND_KEY)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::Argument(format!("no subcommand given and none in {path}")))?,
    };
    let mut merged = vec![command];
    for (key, value) in pairs {
        if key == COMMAND_KEY || key == "config" {
            continue;
        }
        match value.as_str() {
            "true" => merged.push(format!("--{key}")),
            "false" => {}
            _ => {
                merged.push(format!("--{key}"));
                merged.push(value);
            }
        }
    }
    merged.extend(rest);
    Ok(merged)
}

fn render(value: &Value) -> Option<String> {
    match value {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => Some(items.iter().filter_map(render).collect::<Vec<_>>().join(",")),
        other => Some(other.to_string()),
    }
}

/// The effective configuration in the same flat format `merge` reads.
pub fn echo<T: Serialize>(command: &str, global: &[(&str, String)], args: &T) -> Result<String> {
    let mut out = format!("{COMMAND_KEY} = {command}\n");
    for (k, v) in global {
        out.push_str(&format!("{k} = {v}\n"));
    }
    if let Value::Object(map) = serde_json::to_value(args)? {
        for (k, v) in &map {
            if let Some(v) = render(v) {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
    }
    Ok(out)
}
