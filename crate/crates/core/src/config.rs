//! Configuration file loading.
//!
//! The file is TOML, normally written as flat dotted keys
//! (`brush.base_radius = 6.0`), though `[section]` tables work too. Missing
//! keys take their defaults; a key that does not exist in the schema is an
//! error so typos never pass silently.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::brush::BrushConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::Reducer;
use crate::pbtseg::PbtSegConfig;
use crate::synth::SynthesisConfig;
use crate::transforms::TransformConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeConfig {
    pub enabled: bool,
    pub lo_percentile: f64,
    pub hi_percentile: f64,
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            lo_percentile: 0.005,
            hi_percentile: 0.995,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReducerKind {
    Max,
    Mean,
    TopKMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub reducer: ReducerKind,
    pub top_k_fraction: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            reducer: ReducerKind::TopKMean,
            top_k_fraction: 0.01,
        }
    }
}

impl MetricsConfig {
    pub fn reducer(&self) -> Reducer {
        match self.reducer {
            ReducerKind::Max => Reducer::Max,
            ReducerKind::Mean => Reducer::Mean,
            ReducerKind::TopKMean => Reducer::TopKMean {
                fraction: self.top_k_fraction,
            },
        }
    }
}

/// Every tunable of the toolkit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub mask_threshold: f64,
    pub normalize: NormalizeConfig,
    pub pbtseg: PbtSegConfig,
    pub brush: BrushConfig,
    pub transform: TransformConfig,
    pub loss: LossConfig,
    pub metrics: MetricsConfig,
}

impl Default for Config {
    fn default() -> Self {
        let synth = SynthesisConfig::default();
        Self {
            seed: synth.master_seed,
            mask_threshold: synth.mask_threshold,
            normalize: NormalizeConfig::default(),
            pbtseg: synth.pbtseg,
            brush: synth.brush,
            transform: synth.transform,
            loss: LossConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl Config {
    pub fn synthesis(&self) -> SynthesisConfig {
        SynthesisConfig {
            brush: self.brush.clone(),
            transform: self.transform.clone(),
            mask_threshold: self.mask_threshold,
            pbtseg: self.pbtseg.clone(),
            master_seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.normalize;
        if !(0.0 <= n.lo_percentile && n.lo_percentile < n.hi_percentile && n.hi_percentile <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "normalize percentiles must satisfy 0 <= lo < hi <= 1, got ({}, {})",
                n.lo_percentile, n.hi_percentile
            )));
        }
        if !(self.metrics.top_k_fraction > 0.0 && self.metrics.top_k_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "metrics.top_k_fraction {} outside (0, 1]",
                self.metrics.top_k_fraction
            )));
        }
        self.loss.validate()?;
        self.synthesis().validate()
    }

    /// Every valid dotted key, e.g. `brush.base_radius`.
    pub fn known_keys() -> BTreeSet<String> {
        let value = toml::Value::try_from(Config::default()).expect("default config serializes");
        let mut keys = BTreeSet::new();
        flatten_keys("", &value, &mut |k| {
            keys.insert(k);
        });
        keys
    }
}

fn flatten_keys(prefix: &str, value: &toml::Value, out: &mut dyn FnMut(String)) {
    match value {
        toml::Value::Table(table) => {
            for (k, v) in table {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_keys(&key, v, out);
            }
        }
        _ => out(prefix.to_string()),
    }
}

/// Maps each dotted key to the 1-based line that assigns it.
fn key_lines(text: &str) -> BTreeMap<String, usize> {
    let mut lines = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('[') {
            section = header
                .trim_end_matches(']')
                .split('.')
                .map(|p| p.trim().trim_matches('"'))
                .collect::<Vec<_>>()
                .join(".");
            continue;
        }
        if let Some((key, _)) = line.split_once('=') {
            let key = key
                .split('.')
                .map(|p| p.trim().trim_matches('"'))
                .collect::<Vec<_>>()
                .join(".");
            let full = if section.is_empty() {
                key
            } else {
                format!("{section}.{key}")
            };
            lines.entry(full).or_insert(i + 1);
        }
    }
    lines
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_config(text: &str) -> Result<Config> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map_or(0, |s| line_of_offset(text, s.start)),
        message: e.message().to_string(),
    })?;
    let known = Config::known_keys();
    let lines = key_lines(text);
    let mut unknown = None;
    flatten_keys("", &toml::Value::Table(table), &mut |k| {
        if unknown.is_none() && !known.contains(&k) {
            unknown = Some(k);
        }
    });
    if let Some(key) = unknown {
        let line = lines.get(&key).copied().unwrap_or(0);
        return Err(Error::UnknownKey { key, line });
    }
    let config: Config = toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map_or(0, |s| line_of_offset(text, s.start)),
        message: e.message().to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Config> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
