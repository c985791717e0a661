//! Scenario configuration: JSON with defaults, dotted-path overrides and a
//! content hash for the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregate::WeightRule;
use crate::dts::DtsParams;
use crate::model::{LrSchedule, TaskKind, TaskSpec};
use crate::runtime::{AdversaryParams, InitSpec, RuntimeMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TopologyConfig {
    Binomial {
        n_workers: usize,
        #[serde(default = "d_n_size")]
        n_size: u64,
        #[serde(default = "d_half")]
        p_size: f64,
        #[serde(default = "d_n_degree")]
        n_degree: u64,
        #[serde(default = "d_half")]
        p_degree: f64,
        #[serde(default = "d_true")]
        require_ergodic: bool,
    },
    FixedDegree {
        n_workers: usize,
        degree: usize,
        #[serde(default = "d_n_size")]
        n_size: u64,
        #[serde(default = "d_half")]
        p_size: f64,
        #[serde(default = "d_true")]
        require_ergodic: bool,
    },
    /// A topology JSON document as written by `Topology::to_json`.
    File { path: PathBuf },
}

fn d_n_size() -> u64 {
    1000
}
fn d_n_degree() -> u64 {
    8
}
fn d_half() -> f64 {
    0.5
}
fn d_true() -> bool {
    true
}

impl TopologyConfig {
    pub fn n_workers(&self) -> Option<usize> {
        match self {
            TopologyConfig::Binomial { n_workers, .. } | TopologyConfig::FixedDegree { n_workers, .. } => Some(*n_workers),
            TopologyConfig::File { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtsConfig {
    pub enabled: bool,
    pub penalty_cap: f64,
    pub damage_threshold: f64,
}

impl Default for DtsConfig {
    fn default() -> Self {
        let p = DtsParams::default();
        Self {
            enabled: true,
            penalty_cap: p.penalty_cap,
            damage_threshold: p.damage_threshold,
        }
    }
}

impl DtsConfig {
    pub fn params(&self) -> Option<DtsParams> {
        self.enabled.then_some(DtsParams {
            penalty_cap: self.penalty_cap,
            damage_threshold: self.damage_threshold,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryKind {
    None,
    /// Extra data-less workers appended to the topology, each sending noisy
    /// copies of the honest global model to `fanout` honest workers.
    Noise,
    /// Existing workers, chosen at random, turned into dirty-model senders.
    DirtyModel,
}

/// How noise attackers pick their receivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Independent uniform draws per attacker.
    Random,
    /// Each attacker targets the honest workers with the fewest attacker
    /// in-edges so far (seeded tie-breaks), so the load is even.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryConfig {
    pub kind: AdversaryKind,
    pub count: usize,
    /// Honest receivers per noise attacker.
    pub fanout: usize,
    pub placement: Placement,
    /// Dataset size a noise attacker advertises; `None` uses the honest mean.
    pub advertised_size: Option<u64>,
    #[serde(flatten)]
    pub params: AdversaryParams,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            kind: AdversaryKind::None,
            count: 0,
            fanout: 4,
            placement: Placement::Random,
            advertised_size: None,
            params: AdversaryParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub mode: RuntimeMode,
    pub base_step_time: f64,
    pub latency: f64,
    pub jitter: f64,
    /// Step-duration multipliers by worker id; unlisted workers use 1.
    pub speed_multipliers: BTreeMap<usize, f64>,
    /// Epoch budgets by worker id; unlisted workers use `global_epochs`.
    pub epoch_budgets: BTreeMap<usize, usize>,
    pub send_to_sampled_only: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            mode: RuntimeMode::Sync,
            base_step_time: 1.0,
            latency: 0.0,
            jitter: 0.0,
            speed_multipliers: BTreeMap::new(),
            epoch_budgets: BTreeMap::new(),
            send_to_sampled_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Label used to group runs in report tables.
    pub name: String,
    pub seed: u64,
    pub topology: TopologyConfig,
    /// `n_samples = 0` sizes the training split to 1.5× the topology's
    /// total dataset size.
    pub task: TaskSpec,
    pub weight_rule: WeightRule,
    pub sample_count: usize,
    pub global_epochs: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub lr_overrides: BTreeMap<usize, f64>,
    pub init: InitSpec,
    pub dts: DtsConfig,
    pub adversary: AdversaryConfig,
    pub runtime: RuntimeConfig,
    pub report_interval: usize,
    pub record_history: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "defta".into(),
            seed: 0,
            topology: TopologyConfig::Binomial {
                n_workers: 20,
                n_size: 200,
                p_size: 0.5,
                n_degree: 8,
                p_degree: 0.5,
                require_ergodic: true,
            },
            task: TaskSpec::softmax(0, 10, 10, 1.0),
            weight_rule: WeightRule::OutdegreeNormalized,
            sample_count: 2,
            global_epochs: 100,
            local_epochs: 10,
            batch_size: 64,
            learning_rate: 0.01,
            lr_schedule: LrSchedule::Constant,
            lr_overrides: BTreeMap::new(),
            init: InitSpec::Zeros,
            dts: DtsConfig::default(),
            adversary: AdversaryConfig::default(),
            runtime: RuntimeConfig::default(),
            report_interval: 10,
            record_history: true,
            output_dir: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        Self::from_value(serde_json::from_str(s)?)
    }

    pub fn from_value(v: Value) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies `key=value` overrides, where `key` is
    /// a dotted path and `value` is JSON (bare words are taken as strings).
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut v: Value = serde_json::from_str(&text)?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        let mut cfg = Self::from_value(v)?;
        // Relative topology files resolve against the config's directory.
        if let TopologyConfig::File { path: p } = &mut cfg.topology {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.sample_count == 0 {
            return bad("sample_count must be >= 1".into());
        }
        if self.global_epochs == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return bad("global_epochs, local_epochs and batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        if self.report_interval == 0 {
            return bad("report_interval must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.task.test_fraction) {
            return bad(format!("task.test_fraction {} outside [0, 1)", self.task.test_fraction));
        }
        if self.task.kind == TaskKind::SoftmaxRegression && self.task.n_classes < 2 {
            return bad("softmax tasks need n_classes >= 2".into());
        }
        let a = &self.adversary;
        match a.kind {
            AdversaryKind::None if a.count > 0 => {
                return bad("adversary.count > 0 needs adversary.kind noise or dirty_model".into())
            }
            AdversaryKind::Noise if a.fanout == 0 => return bad("adversary.fanout must be >= 1".into()),
            AdversaryKind::Noise if !(a.params.noise_scale >= 0.0 && a.params.noise_scale.is_finite()) => {
                return bad("adversary.noise_scale must be finite and >= 0".into())
            }
            _ => {}
        }
        if let Some(n) = self.topology.n_workers() {
            if a.kind == AdversaryKind::Noise && a.fanout > n {
                return bad(format!("adversary.fanout {} exceeds the {n} honest workers", a.fanout));
            }
            if a.kind == AdversaryKind::DirtyModel && a.count >= n {
                return bad(format!("{} dirty-model attackers leave no honest worker among {n}", a.count));
            }
        }
        let r = &self.runtime;
        if !(r.base_step_time > 0.0) || !(r.latency >= 0.0) || !(r.jitter >= 0.0) {
            return bad("runtime.base_step_time must be > 0, latency and jitter >= 0".into());
        }
        if let Some((w, s)) = r.speed_multipliers.iter().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
            return bad(format!("runtime.speed_multipliers[{w}] = {s} must be > 0"));
        }
        Ok(())
    }

    /// Canonical JSON: struct fields in declaration order, maps sorted.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    /// Hex sha256 of `"blob <len>\0" + canonical_json()`.
    pub fn content_hash(&self) -> String {
        let body = self.canonical_json();
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(body.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Sets the dotted path `key` in `root` to `value`, creating objects as
/// needed.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(ConfigError::Override(spec.to_string()));
        }
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        let map = node.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let c = ScenarioConfig::from_json_str(r#"{"seed": 4}"#).unwrap();
        assert_eq!(c.sample_count, 2);
        assert_eq!(c.global_epochs, 100);
        assert_eq!(c.local_epochs, 10);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.learning_rate, 0.01);
        assert!(c.dts.enabled);
        assert_eq!(c.dts.penalty_cap, 50.0);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(matches!(
            ScenarioConfig::from_json_str(r#"{"sample_cnt": 2}"#),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn invalid_values() {
        for bad in [
            r#"{"sample_count": 0}"#,
            r#"{"learning_rate": -1}"#,
            r#"{"adversary": {"count": 2}}"#,
            r#"{"runtime": {"speed_multipliers": {"3": 0}}}"#,
        ] {
            assert!(matches!(ScenarioConfig::from_json_str(bad), Err(ConfigError::Invalid(_))), "{bad}");
        }
    }

    #[test]
    fn overrides_patch_nested_paths() {
        let mut v: Value = serde_json::from_str(r#"{"dts": {"enabled": true}}"#).unwrap();
        apply_override(&mut v, "dts.enabled=false").unwrap();
        apply_override(&mut v, "runtime.mode=async").unwrap();
        apply_override(&mut v, "learning_rate=0.5").unwrap();
        let c = ScenarioConfig::from_value(v).unwrap();
        assert!(!c.dts.enabled);
        assert_eq!(c.runtime.mode, RuntimeMode::Async);
        assert_eq!(c.learning_rate, 0.5);
        assert!(apply_override(&mut Value::Null, "novalue").is_err());
        assert!(apply_override(&mut Value::Null, "a..b=1").is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 64);
        b.seed = 1;
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn round_trips_through_json() {
        let a = ScenarioConfig::default();
        let b = ScenarioConfig::from_json_str(&a.canonical_json()).unwrap();
        assert_eq!(a, b);
    }
}
