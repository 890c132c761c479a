//! `--config` file support: a flat key/value text format, one `key = value`
//! per line, `#` comments. Keys mirror the long CLI flags; explicit CLI
//! flags take precedence over file values.

use std::collections::BTreeMap;
use std::path::Path;

use cagru_core::error::{Error, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "data",
    "preset",
    "days",
    "customers",
    "shops",
    "n_clusters",
    "variant",
    "window",
    "embed_dim",
    "hidden_dim",
    "positional_base",
    "decay",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "patience",
    "top_n_fraction",
    "seed",
    "out",
    "code_order",
    "compression",
    "value_projection",
];

pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "config file line {}: expected `key = value`, found `{line}`",
                no + 1
            )));
        };
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "config file line {}: unknown key `{key}`",
                no + 1
            )));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

pub fn get_parsed<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|_| Error::Config(format!("config key `{key}`: cannot parse `{raw}`"))),
    }
}
