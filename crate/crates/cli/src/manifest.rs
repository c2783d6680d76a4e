//! Flat `key = value` run manifests. `#` starts a comment; `cell` may repeat.

use std::collections::BTreeMap;
use std::path::Path;

use crate::Failure;

pub const KEYS: &[&str] = &[
    "model",
    "models",
    "data",
    "out",
    "optimizer",
    "lr",
    "decay",
    "batch",
    "epochs",
    "seed",
    "strict_epoch_eval",
    "early_stopping",
    "monitor",
    "min_samples_split",
    "max_depth",
    "feature_subsample",
    "cell",
];

#[derive(Debug, Default, Clone)]
pub struct Manifest {
    values: BTreeMap<String, String>,
    pub cells: Vec<String>,
}

impl Manifest {
    pub fn parse(text: &str, origin: &str) -> Result<Self, Failure> {
        let mut m = Manifest::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Failure::usage(format!("{origin}:{}: expected key = value", i + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Failure::usage(format!("{origin}:{}: unknown key {key:?}", i + 1)));
            }
            if key == "cell" {
                m.cells.push(value.to_string());
            } else if m.values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Failure::usage(format!("{origin}:{}: duplicate key {key:?}", i + 1)));
            }
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| Failure::usage(format!("manifest key {key}: {e}"))))
            .transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>, Failure> {
        self.raw(key)
            .map(|v| match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(Failure::usage(format!("manifest key {key}: expected a boolean, got {other:?}"))),
            })
            .transpose()
    }
}
