//! Plain-text `key = value` experiment configs with per-command schemas.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// One accepted key: name, default value (empty means "unset"), help text.
pub type KeySpec = (&'static str, &'static str, &'static str);

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    command: String,
    values: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value, got {raw:?}", i + 1))?;
        let k = k.trim();
        if k.is_empty() {
            bail!("line {}: empty key", i + 1);
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Defaults from `schema`, then the config file, then `--set` overrides.
    pub fn resolve(
        command: &str,
        schema: &[KeySpec],
        file: Option<&Path>,
        overrides: &[String],
    ) -> Result<Self> {
        let mut values: BTreeMap<String, String> = schema
            .iter()
            .map(|(k, d, _)| (k.to_string(), d.to_string()))
            .collect();
        let mut pairs = Vec::new();
        if let Some(path) = file {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            pairs.extend(parse_pairs(&text).with_context(|| format!("in config {}", path.display()))?);
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got {o:?}"))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in pairs {
            match values.get_mut(&k) {
                Some(slot) => *slot = v,
                None => {
                    let known: Vec<&str> = schema.iter().map(|s| s.0).collect();
                    bail!("unknown key {k:?} for {command}; accepted keys: {}", known.join(", "));
                }
            }
        }
        Ok(Self {
            command: command.to_string(),
            values,
        })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("key {key:?} missing from the {} schema", self.command))
    }

    pub fn get<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let v = self.raw(key);
        if v.is_empty() {
            bail!("{} requires {key:?} to be set", self.command);
        }
        v.parse().map_err(|e| anyhow!("bad value {v:?} for {key:?}: {e}"))
    }

    /// `None` for an empty value or the literal `auto`.
    pub fn get_opt<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            "" | "auto" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => bail!("bad value {v:?} for {key:?}: expected true or false"),
        }
    }

    /// Comma-separated list; empty value gives an empty list.
    pub fn get_list<T>(&self, key: &str) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| anyhow!("bad list item {s:?} for {key:?}: {e}")))
            .collect()
    }

    /// The resolved config in the same `key = value` format, keys sorted.
    pub fn to_text(&self) -> String {
        let mut out = format!("# {}\n", self.command);
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &[KeySpec] = &[("seed", "0", ""), ("eps", "0.03", ""), ("data", "", "")];

    #[test]
    fn layering_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.cfg");
        fs::write(&path, "# header\neps = 0.1  # trailing\n\nseed=4\n").unwrap();
        let cfg = ExperimentConfig::resolve("attack", SCHEMA, Some(&path), &["seed=9".into()]).unwrap();
        assert_eq!(cfg.get::<f64>("eps").unwrap(), 0.1);
        assert_eq!(cfg.get::<u64>("seed").unwrap(), 9);
        assert!(cfg.get::<String>("data").is_err());
        assert_eq!(cfg.get_opt::<String>("data").unwrap(), None);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::resolve("attack", SCHEMA, None, &["epz=1".into()]).unwrap_err();
        assert!(err.to_string().contains("epz"));
        assert!(ExperimentConfig::resolve("attack", SCHEMA, None, &["novalue".into()]).is_err());
    }

    #[test]
    fn resolved_text_round_trips() {
        let cfg = ExperimentConfig::resolve("attack", SCHEMA, None, &["eps=0.5".into()]).unwrap();
        let pairs = parse_pairs(&cfg.to_text()).unwrap();
        let again = ExperimentConfig::resolve(
            "attack",
            SCHEMA,
            None,
            &pairs.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn lists_and_bools() {
        let schema: &[KeySpec] = &[("xs", "1, 2,3", ""), ("flag", "yes", "")];
        let cfg = ExperimentConfig::resolve("x", schema, None, &[]).unwrap();
        assert_eq!(cfg.get_list::<u32>("xs").unwrap(), vec![1, 2, 3]);
        assert!(cfg.get_bool("flag").unwrap());
    }
}
