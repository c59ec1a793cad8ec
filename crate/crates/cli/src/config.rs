//! Configuration resolution: explicit flag, then config file, then (for the
//! seed) the `DRIFTFOREST_SEED` environment variable, then the built-in
//! default.

use crate::{CmdError, CmdResult};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

pub const SEED_ENV: &str = "DRIFTFOREST_SEED";

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
}

impl Settings {
    /// Parse a `key=value` file; `#` starts a comment.
    pub fn load(path: Option<&Path>) -> CmdResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CmdError::io(&format!("config {}", path.display()), e))?;
        let mut file = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(CmdError::new(
                    "config",
                    format!("line {}: expected key=value", idx + 1),
                ));
            };
            file.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { file })
    }

    fn get<T: FromStr>(&self, key: &str) -> CmdResult<Option<T>> {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CmdError::new("config", format!("key {key}: cannot parse {raw:?}"))),
        }
    }

    /// flag > config file > default.
    pub fn resolve<T: FromStr + Copy>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> CmdResult<T> {
        if let Some(value) = flag {
            return Ok(value);
        }
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// flag > config file > DRIFTFOREST_SEED > 0.
    pub fn resolve_seed(&self, flag: Option<u64>) -> CmdResult<u64> {
        if let Some(seed) = flag {
            return Ok(seed);
        }
        if let Some(seed) = self.get("seed")? {
            return Ok(seed);
        }
        match std::env::var(SEED_ENV) {
            Ok(raw) => raw
                .parse()
                .map_err(|_| CmdError::new("config", format!("{SEED_ENV}: cannot parse {raw:?}"))),
            Err(_) => Ok(0),
        }
    }
}

/// Parse a comma-separated list, e.g. `--fractions 0,0.25,1`.
pub fn parse_list<T: FromStr>(raw: &str, what: &str) -> CmdResult<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CmdError::usage(format!("bad {what} entry {s:?}")))
        })
        .collect()
}
