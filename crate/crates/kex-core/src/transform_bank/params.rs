//! Severity-indexed parameter table, parsed from the committed config file.

use std::collections::BTreeMap;

use once_cell::sync::Lazy;
use serde::Deserialize;

use crate::error::{Error, Result};

pub const PARAMS_TOML: &str = include_str!("../../data/transform_params.toml");

pub const MIN_SEVERITY: u8 = 1;
pub const MAX_SEVERITY: u8 = 6;

#[derive(Debug, Clone, Deserialize)]
struct RawEntry {
    name: String,
    kind: String,
    #[serde(flatten)]
    params: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TableEntry {
    pub name: String,
    pub kind: String,
    /// parameter name -> one value per severity 1..=6
    pub params: BTreeMap<String, [f64; 6]>,
}

static TABLE: Lazy<BTreeMap<String, TableEntry>> = Lazy::new(|| {
    parse_table(PARAMS_TOML).expect("committed transform parameter table must parse")
});

fn parse_table(src: &str) -> Result<BTreeMap<String, TableEntry>> {
    let raw: BTreeMap<String, RawEntry> = toml::from_str(src)
        .map_err(|e| Error::config(format!("transform parameter table: {e}")))?;
    let mut out = BTreeMap::new();
    for (id, entry) in raw {
        let mut params = BTreeMap::new();
        for (key, values) in entry.params {
            if values.len() != 6 {
                return Err(Error::config(format!(
                    "transform {id}: parameter {key} must list 6 severity values, got {}",
                    values.len()
                )));
            }
            let mut arr = [0.0; 6];
            arr.copy_from_slice(&values);
            params.insert(key, arr);
        }
        out.insert(
            id,
            TableEntry {
                name: entry.name,
                kind: entry.kind,
                params,
            },
        );
    }
    Ok(out)
}

pub fn table() -> &'static BTreeMap<String, TableEntry> {
    &TABLE
}

/// Resolves the parameter map for `(id, severity)`; a pure function of both.
pub fn resolve(id: &str, severity: u8) -> Result<BTreeMap<String, f64>> {
    if !(MIN_SEVERITY..=MAX_SEVERITY).contains(&severity) {
        return Err(Error::validation(format!(
            "severity {severity} out of range [{MIN_SEVERITY}, {MAX_SEVERITY}]"
        )));
    }
    let entry = TABLE
        .get(id)
        .ok_or_else(|| Error::config(format!("unknown transform id: {id}")))?;
    Ok(entry
        .params
        .iter()
        .map(|(k, v)| (k.clone(), v[(severity - 1) as usize]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_has_exactly_the_ten_transforms() {
        let ids: Vec<&str> = table().keys().map(|s| s.as_str()).collect();
        assert_eq!(
            ids,
            vec![
                "color-jitter",
                "flip",
                "gaussian-blur",
                "gaussian-noise",
                "glass-blur",
                "jpeg-compression",
                "random-crop",
                "rot270",
                "rot90",
                "snow",
            ]
        );
    }

    #[test]
    fn severity_rows_differ_for_gaussian_noise() {
        let s1 = resolve("gaussian-noise", 1).unwrap();
        let s6 = resolve("gaussian-noise", 6).unwrap();
        assert!(s6["sigma"] > s1["sigma"]);
    }

    #[test]
    fn severity_out_of_range_rejected() {
        assert!(resolve("flip", 0).is_err());
        assert!(resolve("flip", 7).is_err());
        assert!(resolve("nope", 1).is_err());
    }

    #[test]
    fn corruption_params_monotone_in_severity() {
        for (id, entry) in table() {
            if entry.kind != "corruption" {
                continue;
            }
            for (key, values) in &entry.params {
                let increasing = values.windows(2).all(|w| w[1] >= w[0]);
                let decreasing = values.windows(2).all(|w| w[1] <= w[0]);
                assert!(
                    increasing || decreasing,
                    "{id}.{key} must be monotone across severities"
                );
            }
        }
    }
}
