//! `key = value` configuration text.
//!
//! One setting per line; `#` starts a comment; keys accept either `_` or
//! `-` as separator and are normalized to `_`.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Key/value pairs in file order.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::format("config", format!("line {}: expected key = value", n + 1))
        })?;
        out.push((normalize_key(k.trim()), v.trim().to_string()));
    }
    Ok(out)
}

pub fn normalize_key(k: &str) -> String {
    k.replace('-', "_")
}

pub fn value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("bad value `{v}` for `{key}`: {e}")))
}

pub fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| value(key, s.trim())).collect()
}

pub fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn unknown(key: &str) -> Error {
    Error::Config(format!("unknown setting `{key}`"))
}
