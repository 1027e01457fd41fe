//! Flat `key=value` configuration text.
//!
//! Each module config renders to one `key=value` line per field and parses
//! back from the same form; [`RunConfig`] prefixes the keys of every module
//! (`sampler.size=64`). Blank lines and `#` comments are ignored, unknown keys
//! are rejected.

use std::str::FromStr;

use crate::dataset::SamplerConfig;
use crate::hash::Fingerprint;
use crate::regressor::{BackboneConfig, TrainConfig};
use crate::{Error, Result};

pub trait KeyValueConfig: Sized + Default {
    /// Fields in canonical order, values already formatted.
    fn entries(&self) -> Vec<(String, String)>;
    fn set(&mut self, key: &str, value: &str) -> Result<()>;
    fn validate(&self) -> Result<()>;

    fn render(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_lines(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn config_hash(&self) -> Fingerprint {
        Fingerprint::of(self.render().as_bytes())
    }
}

/// Splits text into `(key, value)` pairs.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// Builds one entry for [`KeyValueConfig::entries`].
pub fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

pub fn unknown_key(key: &str) -> Error {
    Error::Config(format!("unknown configuration key {key:?}"))
}

/// Parameters of the synthetic basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisConfig {
    pub seed: u64,
    pub vertices: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            seed: 42,
            vertices: 500,
        }
    }
}

impl KeyValueConfig for BasisConfig {
    fn entries(&self) -> Vec<(String, String)> {
        vec![kv("seed", self.seed), kv("vertices", self.vertices)]
    }
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "vertices" => self.vertices = parse_value(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
    fn validate(&self) -> Result<()> {
        if self.vertices < crate::NUM_LANDMARKS {
            return Err(Error::Config(format!(
                "basis needs at least {} vertices, got {}",
                crate::NUM_LANDMARKS,
                self.vertices
            )));
        }
        Ok(())
    }
}

/// Every module configuration plus run-level settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub basis: BasisConfig,
    pub sampler: SamplerConfig,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    /// Worker threads for data-parallel stages; 1 is bit-reproducible by construction.
    pub workers: usize,
    pub verbosity: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            basis: BasisConfig::default(),
            sampler: SamplerConfig::default(),
            backbone: BackboneConfig::default(),
            train: TrainConfig::default(),
            workers: 1,
            verbosity: 0,
        }
    }
}

impl KeyValueConfig for RunConfig {
    fn entries(&self) -> Vec<(String, String)> {
        fn prefixed(p: &str, e: Vec<(String, String)>) -> Vec<(String, String)> {
            e.into_iter().map(|(k, v)| (format!("{p}.{k}"), v)).collect()
        }
        let mut out = prefixed("basis", self.basis.entries());
        out.extend(prefixed("sampler", self.sampler.entries()));
        out.extend(prefixed("backbone", self.backbone.entries()));
        out.extend(prefixed("train", self.train.entries()));
        out.push(kv("run.workers", self.workers));
        out.push(kv("run.verbosity", self.verbosity));
        out
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, rest) = key.split_once('.').ok_or_else(|| unknown_key(key))?;
        let scoped = |r: Result<()>| {
            r.map_err(|e| match e {
                Error::Config(m) if m.starts_with("unknown configuration key") => unknown_key(key),
                other => other,
            })
        };
        match section {
            "basis" => scoped(self.basis.set(rest, value)),
            "sampler" => scoped(self.sampler.set(rest, value)),
            "backbone" => scoped(self.backbone.set(rest, value)),
            "train" => scoped(self.train.set(rest, value)),
            "run" => match rest {
                "workers" => {
                    self.workers = parse_value(key, value)?;
                    Ok(())
                }
                "verbosity" => {
                    self.verbosity = parse_value(key, value)?;
                    Ok(())
                }
                _ => Err(unknown_key(key)),
            },
            _ => Err(unknown_key(key)),
        }
    }

    fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        self.sampler.validate()?;
        self.backbone.validate()?;
        self.train.validate()?;
        if self.backbone.input_size != self.sampler.size {
            return Err(Error::Config(format!(
                "backbone.input_size {} differs from sampler.size {}",
                self.backbone.input_size, self.sampler.size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("sampler.count", "123").unwrap();
        cfg.set("train.loss", "wpdc").unwrap();
        cfg.set("backbone.layers", "8:1:1,16:2:2").unwrap();
        let text = cfg.render();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.render(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        for key in ["sampler.colour", "nope", "run.speed", "train"] {
            match cfg.set(key, "1") {
                Err(Error::Config(m)) => assert!(m.contains("unknown"), "{m}"),
                other => panic!("{key}: {other:?}"),
            }
        }
        assert!(RunConfig::parse("basis.seed=1\nbogus=2\n").is_err());
    }

    #[test]
    fn comments_and_bad_values() {
        let cfg = RunConfig::parse("# comment\n\nbasis.seed = 9\n").unwrap();
        assert_eq!(cfg.basis.seed, 9);
        assert!(RunConfig::parse("basis.seed=nine").is_err());
        assert!(RunConfig::parse("basis.seed").is_err());
        assert!(RunConfig::parse("basis.vertices=10").is_err());
    }

    #[test]
    fn sizes_must_agree() {
        assert!(RunConfig::parse("sampler.size=32").is_err());
        assert!(RunConfig::parse("sampler.size=32\nbackbone.input_size=32").is_ok());
    }
}
