//! `key = value` configuration text shared by checkpoints and the CLI.
//!
//! Keys are namespaced (`model.d_model`, `feature.hop_ms`, `train.epochs`);
//! a bare `seed` sets both the model and training seeds.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::dsp::FeatureConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Parse `key = value` lines. Blank lines and `#` comments are skipped;
/// repeated keys are rejected.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {raw:?}", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.iter().any(|(e, _)| e == k) {
            return Err(Error::Config(format!("line {}: duplicate key {k}", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

pub(crate) fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|s| parse_value(key, s.trim())).collect()
}

pub(crate) fn join_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Sorted `key=value` text.
pub fn render_kv<K: Display, V: Display>(entries: impl IntoIterator<Item = (K, V)>) -> String {
    let map: BTreeMap<String, String> = entries
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Everything a run needs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub feature: FeatureConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "seed" {
            let s: u64 = parse_value(key, value)?;
            self.model.seed = s;
            self.train.seed = s;
            return Ok(());
        }
        match key.split_once('.') {
            Some(("model", k)) => self.model.set(k, value),
            Some(("feature", k)) => set_feature(&mut self.feature, k, value),
            Some(("train", k)) => self.train.set(k, value),
            _ => Err(Error::Config(format!("unknown config key {key}"))),
        }
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.feature.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.n_coeffs != self.feature.n_coeffs {
            return Err(Error::Config(format!(
                "model.n_coeffs {} differs from feature.n_coeffs {}",
                self.model.n_coeffs, self.feature.n_coeffs
            )));
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = Vec::new();
        e.extend(self.model.entries().into_iter().map(|(k, v)| (format!("model.{k}"), v)));
        e.extend(
            feature_entries(&self.feature)
                .into_iter()
                .map(|(k, v)| (format!("feature.{k}"), v)),
        );
        e.extend(self.train.entries().into_iter().map(|(k, v)| (format!("train.{k}"), v)));
        e
    }

    pub fn to_kv(&self) -> String {
        render_kv(self.entries())
    }
}

pub(crate) fn set_feature(f: &mut FeatureConfig, key: &str, value: &str) -> Result<()> {
    let full = format!("feature.{key}");
    match key {
        "sample_rate" => f.sample_rate = parse_value(&full, value)?,
        "frame_ms" => f.frame_ms = parse_value(&full, value)?,
        "hop_ms" => f.hop_ms = parse_value(&full, value)?,
        "pre_emphasis" => f.pre_emphasis = parse_value(&full, value)?,
        "n_fft" => f.n_fft = parse_value(&full, value)?,
        "n_filters" => f.n_filters = parse_value(&full, value)?,
        "n_coeffs" => f.n_coeffs = parse_value(&full, value)?,
        "low_hz" => f.low_hz = parse_value(&full, value)?,
        "high_hz" => f.high_hz = parse_value(&full, value)?,
        "log_floor" => f.log_floor = parse_value(&full, value)?,
        _ => return Err(Error::Config(format!("unknown config key {full}"))),
    }
    Ok(())
}

pub(crate) fn feature_entries(f: &FeatureConfig) -> Vec<(String, String)> {
    vec![
        ("sample_rate".into(), f.sample_rate.to_string()),
        ("frame_ms".into(), f.frame_ms.to_string()),
        ("hop_ms".into(), f.hop_ms.to_string()),
        ("pre_emphasis".into(), f.pre_emphasis.to_string()),
        ("n_fft".into(), f.n_fft.to_string()),
        ("n_filters".into(), f.n_filters.to_string()),
        ("n_coeffs".into(), f.n_coeffs.to_string()),
        ("low_hz".into(), f.low_hz.to_string()),
        ("high_hz".into(), f.high_hz.to_string()),
        ("log_floor".into(), f.log_floor.to_string()),
    ]
}
