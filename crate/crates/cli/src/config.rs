//! Flat `key = value` training configuration files.

use std::fmt;
use std::fs;
use std::path::Path;

use mpc_core::training::TrainConfig;

/// Bad flags, config files or values; maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Splits a config file into `(key, value)` pairs. Blank lines and lines
/// starting with `#` are skipped. Problems are collected, not returned on
/// the first hit.
pub fn parse_pairs(text: &str, problems: &mut Vec<String>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => {
                let k = k.trim().to_string();
                if out.iter().any(|(seen, _)| *seen == k) {
                    problems.push(format!("line {}: duplicate key {k:?}", n + 1));
                } else {
                    out.push((k, v.trim().to_string()));
                }
            }
            _ => problems.push(format!("line {}: expected `key = value`, got {line:?}", n + 1)),
        }
    }
    out
}

/// Defaults, then the file, then flag overrides. Every problem (syntax,
/// unknown keys, unparsable values, out-of-range settings) is reported in
/// one error.
pub fn resolve(file: Option<&Path>, overrides: &[(&str, String)]) -> Result<TrainConfig, UsageError> {
    let mut problems = Vec::new();
    let mut pairs = match file {
        Some(path) => match fs::read_to_string(path) {
            Ok(text) => parse_pairs(&text, &mut problems),
            Err(e) => return Err(UsageError(format!("cannot read config {}: {e}", path.display()))),
        },
        None => Vec::new(),
    };
    pairs.extend(overrides.iter().map(|(k, v)| (k.to_string(), v.clone())));
    let mut config = TrainConfig::default();
    for (k, v) in &pairs {
        if let Err(e) = config.set(k, v) {
            problems.push(e);
        }
    }
    problems.extend(config.problems());
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(UsageError(format!("invalid configuration:\n  {}", problems.join("\n  "))))
    }
}

/// The resolved configuration in the same file format.
pub fn render(config: &TrainConfig) -> String {
    config.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
