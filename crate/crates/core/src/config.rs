//! Engine configuration: built-in defaults, an optional file layered on top,
//! then `key=value` overrides. Every leaf remembers where its value came from.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::face_metrics::FaceMetricOptions;
use crate::geometry::OpennessPresets;
use crate::pose_eval::{thresholds_from_hundredths, EvalProtocol, Similarity, KEYPOINT_COUNT};

pub const DEFAULT_CONFIG_TOML: &str = include_str!("../config/default.toml");

/// Environment variable naming a config file used when no path is given.
pub const CONFIG_ENV: &str = "DEID_EVAL_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config {origin}: {msg}")]
    Parse { origin: String, msg: String },
    #[error("override {0:?} is not of the form key=value")]
    BadOverride(String),
    #[error("override {key:?}: {msg}")]
    BadKey { key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueSource {
    Default,
    File,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingConfig {
    pub iou_thr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnglesConfig {
    pub signed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub center: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseConfig {
    pub conf_thr: f64,
    pub pose_nms_thr: f64,
    pub threshold_start: u32,
    pub threshold_step: u32,
    pub threshold_count: u32,
    pub oks_kappa: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub pairing: PairingConfig,
    pub angles: AnglesConfig,
    pub trajectories: TrajectoryConfig,
    pub openness: OpennessPresets,
    pub pose: PoseConfig,
}

/// Effective configuration plus per-key provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadedConfig {
    pub config: EngineConfig,
    pub sources: BTreeMap<String, ValueSource>,
    pub file: Option<String>,
    /// SHA-256 of the effective configuration in canonical TOML.
    pub sha256: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        toml::from_str(DEFAULT_CONFIG_TOML).expect("built-in config is valid")
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.pairing.iou_thr > 0.0 && self.pairing.iou_thr < 1.0) {
            return bad(format!("pairing.iou_thr {} outside (0, 1)", self.pairing.iou_thr));
        }
        if !(0.0..1.0).contains(&self.pose.conf_thr) {
            return bad(format!("pose.conf_thr {} outside [0, 1)", self.pose.conf_thr));
        }
        if !(self.pose.pose_nms_thr > 0.0 && self.pose.pose_nms_thr < 1.0) {
            return bad(format!("pose.pose_nms_thr {} outside (0, 1)", self.pose.pose_nms_thr));
        }
        if self.pose.oks_kappa.len() != KEYPOINT_COUNT {
            return bad(format!(
                "pose.oks_kappa has {} entries, expected {KEYPOINT_COUNT}",
                self.pose.oks_kappa.len()
            ));
        }
        self.openness.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.protocol(Similarity::Oks)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn protocol(&self, similarity: Similarity) -> EvalProtocol {
        let mut p = EvalProtocol::coco(similarity);
        p.thresholds =
            thresholds_from_hundredths(self.pose.threshold_start, self.pose.threshold_step, self.pose.threshold_count);
        for (k, v) in p.oks_kappa.iter_mut().zip(&self.pose.oks_kappa) {
            *k = *v;
        }
        p
    }

    pub fn face_options(&self) -> FaceMetricOptions {
        FaceMetricOptions {
            openness: self.openness.clone(),
            signed_angles: self.angles.signed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table, ConfigError> {
    text.parse::<toml::Table>().map_err(|e| ConfigError::Parse {
        origin: origin.to_owned(),
        msg: e.to_string(),
    })
}

fn leaf_keys(table: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => leaf_keys(t, &key, out),
            _ => out.push(key),
        }
    }
}

/// Deep-merges `top` into `base`, recording every replaced leaf as `source`.
fn merge(base: &mut toml::Table, top: toml::Table, prefix: &str, source: ValueSource, sources: &mut BTreeMap<String, ValueSource>) {
    for (k, v) in top {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t, &key, source, sources),
            (_, v) => {
                if let toml::Value::Table(t) = &v {
                    let mut leaves = Vec::new();
                    leaf_keys(t, &key, &mut leaves);
                    sources.extend(leaves.into_iter().map(|l| (l, source)));
                } else {
                    sources.insert(key, source);
                }
                base.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back to
/// a bare string.
fn override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<String, ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(spec.to_owned()))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::BadOverride(spec.to_owned()));
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        node = match node.get_mut(*p) {
            Some(toml::Value::Table(t)) => t,
            _ => {
                return Err(ConfigError::BadKey {
                    key: key.to_owned(),
                    msg: format!("no section {p:?}"),
                })
            }
        };
    }
    let last = parts[parts.len() - 1];
    match node.get(last) {
        None => Err(ConfigError::BadKey {
            key: key.to_owned(),
            msg: "unknown key".into(),
        }),
        Some(toml::Value::Table(_)) => Err(ConfigError::BadKey {
            key: key.to_owned(),
            msg: "names a section, not a value".into(),
        }),
        Some(old) => {
            let mut v = override_value(raw.trim());
            // `--set x=1` on a float key means 1.0.
            if let (toml::Value::Float(_), toml::Value::Integer(i)) = (old, &v) {
                v = toml::Value::Float(*i as f64);
            }
            node.insert(last.to_owned(), v);
            Ok(key.to_owned())
        }
    }
}

/// Builds the effective configuration: defaults, then `file` (or the file named
/// by [`CONFIG_ENV`] when `file` is `None`), then `overrides` in order.
pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    let env_path = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty());
    let path = file.map(Path::to_path_buf).or_else(|| env_path.map(Into::into));
    let text = match &path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
            path: p.display().to_string(),
            source,
        })?),
        None => None,
    };
    load_from_str(text.as_deref(), path.as_deref(), overrides)
}

/// [`load`] with the file contents supplied directly.
pub fn load_from_str(file_text: Option<&str>, path: Option<&Path>, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    let mut table = parse_table(DEFAULT_CONFIG_TOML, "built-in")?;
    let mut keys = Vec::new();
    leaf_keys(&table, "", &mut keys);
    let mut sources: BTreeMap<String, ValueSource> = keys.into_iter().map(|k| (k, ValueSource::Default)).collect();

    let origin = path.map_or_else(|| "file".to_owned(), |p| p.display().to_string());
    if let Some(text) = file_text {
        let top = parse_table(text, &origin)?;
        merge(&mut table, top, "", ValueSource::File, &mut sources);
    }
    for spec in overrides {
        let key = apply_override(&mut table, spec)?;
        sources.insert(key, ValueSource::Override);
    }

    let config: EngineConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse {
            origin: if overrides.is_empty() { origin } else { format!("{origin} + overrides") },
            msg: e.to_string(),
        })?;
    config.validate()?;
    let sha256 = Sha256::digest(config.to_toml().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok(LoadedConfig {
        config,
        sources,
        file: path.map(|p| p.display().to_string()),
        sha256,
    })
}
