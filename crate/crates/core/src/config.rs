//! Experiment configuration: parsing (TOML or JSON), defaulting with a log
//! of every applied default, validation with field-named errors, and a
//! canonical digest over the resolved configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandit::{PseudoRewardConfig, QMode, MAX_TRACKED_ARMS};
use crate::data::{split_sizes, ClusterLayout, ShiftKind};
use crate::error::Error;
use crate::field::{FieldParams, DEFAULT_CLIP, DEFAULT_FRAC_BITS, DEFAULT_PRIME};
use crate::groups::count_groups;
use crate::learner::ModelKind;
use crate::Result;

/// Peer-selection strategy run by every node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Bandit-driven group selection with secure aggregation.
    Ppdl,
    /// Same, with the correlation strength decaying over the run.
    PpdlVar,
    /// Loss-weighted softmax peer sampling with plaintext exchange.
    Dac,
    /// Uniform random groups with secure aggregation.
    Random,
    /// Uniform groups inside the ground-truth cluster.
    Oracle,
    /// No communication at all.
    Local,
}

impl Method {
    pub fn uses_bandit(self) -> bool {
        matches!(self, Method::Ppdl | Method::PpdlVar)
    }

    pub fn communicates(self) -> bool {
        self != Method::Local
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ppdl => "ppdl",
            Method::PpdlVar => "ppdl-var",
            Method::Dac => "dac",
            Method::Random => "random",
            Method::Oracle => "oracle",
            Method::Local => "local",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppdl" => Ok(Method::Ppdl),
            "ppdl-var" => Ok(Method::PpdlVar),
            "dac" => Ok(Method::Dac),
            "random" => Ok(Method::Random),
            "oracle" => Ok(Method::Oracle),
            "local" => Ok(Method::Local),
            other => Err(Error::Config(format!(
                "method {other:?} is not one of ppdl, ppdl-var, dac, random, oracle, local"
            ))),
        }
    }
}

/// Cluster structure: sizes plus exactly one shift description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub cluster_sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_degrees: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_subsets: Option<Vec<Vec<u32>>>,
}

impl LayoutConfig {
    pub fn to_cluster_layout(&self) -> Result<ClusterLayout> {
        let shift = match (&self.rotation_degrees, &self.label_subsets) {
            (Some(angles), None) => ShiftKind::Rotation(angles.clone()),
            (None, Some(subsets)) => ShiftKind::Labels(subsets.clone()),
            _ => {
                return Err(Error::Config(
                    "layout: exactly one of rotation_degrees and label_subsets must be set".into(),
                ))
            }
        };
        Ok(ClusterLayout { sizes: self.cluster_sizes.clone(), shift })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub classes: u32,
    pub dim: usize,
    pub samples_per_node: usize,
    pub per_class: usize,
    pub radius: f64,
    pub sigma: f64,
    pub split_fracs: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    pub q_mode: QMode,
    pub q0: f64,
    pub q_min: f64,
    pub q_horizon: u64,
    pub divisor: u64,
    pub importance_weighted: bool,
    pub competitive_masking: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecaggConfig {
    pub prime: u64,
    pub frac_bits: u32,
    pub clip: f64,
    pub threshold: usize,
    pub dropout_prob: f64,
}

/// A fully resolved, validated experiment description. Serializing it and
/// parsing the result reproduces the same configuration with no defaults
/// left to apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub method: Method,
    pub nodes: usize,
    pub group_size: usize,
    pub rounds: u64,
    pub seed: u64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dac_tau: f64,
    pub merge_weight: f64,
    pub reward_before_training: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<Vec<usize>>>,
    pub layout: LayoutConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub bandit: BanditConfig,
    pub secagg: SecaggConfig,
}

/// The on-disk shape: every field optional, unknown keys rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawConfig {
    pub method: Option<Method>,
    pub nodes: Option<usize>,
    pub group_size: Option<usize>,
    pub rounds: Option<u64>,
    pub seed: Option<u64>,
    pub local_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub dac_tau: Option<f64>,
    pub merge_weight: Option<f64>,
    pub reward_before_training: Option<bool>,
    pub adjacency: Option<Vec<Vec<usize>>>,
    pub layout: Option<LayoutConfig>,
    pub data: Option<RawData>,
    pub model: Option<RawModel>,
    pub bandit: Option<RawBandit>,
    pub secagg: Option<RawSecagg>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawData {
    pub classes: Option<u32>,
    pub dim: Option<usize>,
    pub samples_per_node: Option<usize>,
    pub per_class: Option<usize>,
    pub radius: Option<f64>,
    pub sigma: Option<f64>,
    pub split_fracs: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawModel {
    pub kind: Option<ModelKind>,
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawBandit {
    pub q_mode: Option<QMode>,
    pub q0: Option<f64>,
    pub q_min: Option<f64>,
    pub q_horizon: Option<u64>,
    pub divisor: Option<u64>,
    pub importance_weighted: Option<bool>,
    pub competitive_masking: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawSecagg {
    pub prime: Option<u64>,
    pub frac_bits: Option<u32>,
    pub clip: Option<f64>,
    pub threshold: Option<usize>,
    pub dropout_prob: Option<f64>,
}

/// Input format of a configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

/// Reads and resolves a configuration file, picking the format from the
/// extension (falling back to content sniffing). Returns the resolved
/// config and one line per default that was applied.
pub fn parse_config(path: &Path) -> Result<(SimConfig, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => ConfigFormat::Json,
        Some("toml") => ConfigFormat::Toml,
        _ => {
            if text.trim_start().starts_with('{') {
                ConfigFormat::Json
            } else {
                ConfigFormat::Toml
            }
        }
    };
    parse_config_str(&text, format)
}

/// Parses and resolves configuration text.
pub fn parse_config_str(text: &str, format: ConfigFormat) -> Result<(SimConfig, Vec<String>)> {
    let raw: RawConfig = match format {
        ConfigFormat::Toml => {
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?
        }
        ConfigFormat::Json => {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?
        }
    };
    resolve(raw)
}

/// Hex SHA-256 of the canonical (resolved, field-order-stable) serialized
/// configuration. Two configs digest equal iff every resolved field is
/// equal, regardless of key order in the source file.
pub fn config_digest(config: &SimConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serialization cannot fail");
    let bytes = Sha256::digest(&canonical);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Defaults(Vec<String>);

impl Defaults {
    fn take<T: Copy + fmt::Display>(&mut self, field: &str, value: Option<T>, default: T) -> T {
        match value {
            Some(v) => v,
            None => {
                self.0.push(format!("{field} = {default} (default)"));
                default
            }
        }
    }
}

fn require<T>(field: &str, value: Option<T>) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("{field} is required")))
}

/// Applies defaults (returning one log line per default) and validates
/// every cross-field constraint.
pub fn resolve(raw: RawConfig) -> Result<(SimConfig, Vec<String>)> {
    let mut log = Defaults(Vec::new());

    let method = require("method", raw.method)?;
    let nodes = require("nodes", raw.nodes)?;
    let group_size = require("group_size", raw.group_size)?;
    let rounds = require("rounds", raw.rounds)?;
    let layout = require("layout", raw.layout)?;
    if nodes < 2 {
        return Err(Error::Config(format!("nodes = {nodes} must be at least 2")));
    }
    if group_size < 2 {
        return Err(Error::Config(format!("group_size = {group_size} must be at least 2")));
    }
    if rounds == 0 {
        return Err(Error::Config("rounds must be at least 1".into()));
    }

    let seed = log.take("seed", raw.seed, 0);
    let local_epochs = log.take("local_epochs", raw.local_epochs, 3);
    let batch_size = log.take("batch_size", raw.batch_size, 8);
    let lr = log.take("lr", raw.lr, 0.01);
    let dac_tau = log.take("dac_tau", raw.dac_tau, 30.0);
    let reward_before_training =
        log.take("reward_before_training", raw.reward_before_training, false);
    let default_merge = group_size as f64 / (group_size as f64 + 1.0);
    let merge_weight = log.take("merge_weight", raw.merge_weight, default_merge);

    if local_epochs == 0 {
        return Err(Error::Config("local_epochs must be at least 1".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("lr = {lr} must be positive and finite")));
    }
    if !(dac_tau >= 0.0 && dac_tau.is_finite()) {
        return Err(Error::Config(format!("dac_tau = {dac_tau} must be non-negative")));
    }
    if !(0.0..=1.0).contains(&merge_weight) {
        return Err(Error::Config(format!("merge_weight = {merge_weight} outside [0, 1]")));
    }

    // Layout and node count must agree before anything else uses them.
    let total: usize = layout.cluster_sizes.iter().sum();
    if total != nodes {
        return Err(Error::Config(format!(
            "layout.cluster_sizes sum to {total}, nodes = {nodes}"
        )));
    }

    // Topology: explicit adjacency, or fully connected.
    let adjacency = match &raw.adjacency {
        Some(adj) => {
            if adj.len() != nodes {
                return Err(Error::Config(format!(
                    "adjacency has {} rows, nodes = {nodes}",
                    adj.len()
                )));
            }
            let mut normalized = Vec::with_capacity(nodes);
            for (i, neighbors) in adj.iter().enumerate() {
                let mut n = neighbors.clone();
                n.sort_unstable();
                n.dedup();
                if n.iter().any(|&j| j >= nodes) {
                    return Err(Error::Config(format!(
                        "adjacency[{i}] references a node >= nodes"
                    )));
                }
                if n.contains(&i) {
                    return Err(Error::Config(format!("adjacency[{i}] contains the node itself")));
                }
                if n.len() < group_size {
                    return Err(Error::Config(format!(
                        "adjacency[{i}] has {} neighbors, group_size = {group_size} requires at least that many",
                        n.len()
                    )));
                }
                normalized.push(n);
            }
            Some(normalized)
        }
        None => {
            if nodes < group_size + 1 {
                return Err(Error::Config(format!(
                    "nodes = {nodes} gives each node {} neighbors under full connectivity, fewer than group_size = {group_size}",
                    nodes - 1
                )));
            }
            None
        }
    };

    // Arm catalogs must stay enumerable for the bandit methods.
    if method.uses_bandit() {
        let mut sizes: Vec<usize> = match &adjacency {
            Some(adj) => adj.iter().map(|n| n.len()).collect(),
            None => vec![nodes - 1],
        };
        sizes.sort_unstable();
        sizes.dedup();
        for n in sizes {
            let arms = count_groups(n, group_size).map_err(|e| {
                Error::Config(format!("group_size: C({n}, {group_size}) not countable: {e}"))
            })?;
            if arms > MAX_TRACKED_ARMS {
                return Err(Error::Config(format!(
                    "group_size: C({n}, {group_size}) = {arms} arms exceed the {MAX_TRACKED_ARMS} the bandit can track"
                )));
            }
        }
    }

    // Data section, with classes inferred from the layout when absent.
    let raw_data = raw.data.unwrap_or_default();
    let inferred_classes = match &layout.label_subsets {
        Some(subsets) => subsets.iter().flatten().copied().max().map_or(2, |m| m + 1).max(2),
        None => 4,
    };
    let classes = log.take("data.classes", raw_data.classes, inferred_classes);
    if classes < 2 {
        return Err(Error::Config(format!("data.classes = {classes} must be at least 2")));
    }
    let dim = log.take("data.dim", raw_data.dim, 16);
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::Config(format!("data.dim = {dim} must be even and at least 2")));
    }
    let samples_per_node = log.take("data.samples_per_node", raw_data.samples_per_node, 200);
    let radius = log.take("data.radius", raw_data.radius, 3.0);
    let sigma = log.take("data.sigma", raw_data.sigma, 1.0);
    let split_fracs = match raw_data.split_fracs {
        Some(f) => f,
        None => {
            log.0.push("data.split_fracs = [0.7, 0.15, 0.15] (default)".into());
            [0.7, 0.15, 0.15]
        }
    };
    split_sizes(samples_per_node, (split_fracs[0], split_fracs[1], split_fracs[2]))
        .map_err(|e| Error::Config(format!("data.samples_per_node/split_fracs: {e}")))?;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::Config(format!("data.radius = {radius} must be positive")));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!("data.sigma = {sigma} must be non-negative")));
    }

    let cluster_layout = layout.to_cluster_layout()?;
    cluster_layout.validate(classes)?;

    // Pool size per class: enough for every node's draw even in the worst
    // case where one label absorbs a cluster's whole demand.
    let computed_per_class = match &layout.label_subsets {
        None => (nodes * samples_per_node).div_ceil(classes as usize),
        Some(subsets) => {
            let mut worst = 1usize;
            for label in 0..classes {
                let demand: usize = subsets
                    .iter()
                    .zip(&layout.cluster_sizes)
                    .filter(|(subset, _)| subset.contains(&label))
                    .map(|(_, &size)| size * samples_per_node)
                    .sum();
                worst = worst.max(demand);
            }
            worst
        }
    };
    let per_class = log.take("data.per_class", raw_data.per_class, computed_per_class);
    if per_class == 0 {
        return Err(Error::Config("data.per_class must be positive".into()));
    }

    let raw_model = raw.model.unwrap_or_default();
    let kind = match raw_model.kind {
        Some(k) => k,
        None => {
            log.0.push("model.kind = logistic (default)".into());
            ModelKind::Logistic
        }
    };
    let hidden = log.take("model.hidden", raw_model.hidden, 32);
    if kind == ModelKind::Mlp1 && hidden == 0 {
        return Err(Error::Config("model.hidden must be positive for mlp1".into()));
    }

    // Bandit defaults depend on the method: the decaying-q variant starts
    // high and floors out over the horizon, plain ppdl keeps q constant.
    let raw_bandit = raw.bandit.unwrap_or_default();
    let (default_q_mode, default_q0) = if method == Method::PpdlVar {
        (QMode::Exponential, 0.5)
    } else {
        (QMode::Constant, 0.2)
    };
    let q_mode = match raw_bandit.q_mode {
        Some(m) => m,
        None => {
            log.0.push(format!(
                "bandit.q_mode = {} (default)",
                match default_q_mode {
                    QMode::Constant => "constant",
                    QMode::Exponential => "exponential",
                }
            ));
            default_q_mode
        }
    };
    let q0 = log.take("bandit.q0", raw_bandit.q0, default_q0);
    let q_min = log.take("bandit.q_min", raw_bandit.q_min, if q_mode == QMode::Constant { q0 } else { 0.07 });
    let q_horizon = log.take("bandit.q_horizon", raw_bandit.q_horizon, rounds);
    let divisor = log.take("bandit.divisor", raw_bandit.divisor, nodes as u64);
    let importance_weighted =
        log.take("bandit.importance_weighted", raw_bandit.importance_weighted, false);
    let competitive_masking =
        log.take("bandit.competitive_masking", raw_bandit.competitive_masking, true);
    let bandit = BanditConfig {
        q_mode,
        q0,
        q_min,
        q_horizon,
        divisor,
        importance_weighted,
        competitive_masking,
    };
    pseudo_config_of(&bandit).map_err(|e| Error::Config(format!("bandit: {e}")))?;
    if divisor == 0 {
        return Err(Error::Config("bandit.divisor must be positive".into()));
    }

    let raw_secagg = raw.secagg.unwrap_or_default();
    let prime = log.take("secagg.prime", raw_secagg.prime, DEFAULT_PRIME);
    let frac_bits = log.take("secagg.frac_bits", raw_secagg.frac_bits, DEFAULT_FRAC_BITS);
    let clip = log.take("secagg.clip", raw_secagg.clip, DEFAULT_CLIP);
    let threshold = log.take("secagg.threshold", raw_secagg.threshold, group_size);
    let dropout_prob = log.take("secagg.dropout_prob", raw_secagg.dropout_prob, 0.0);
    if !(2..=group_size).contains(&threshold) {
        return Err(Error::Config(format!(
            "secagg.threshold = {threshold} outside 2..={group_size}"
        )));
    }
    if !(0.0..1.0).contains(&dropout_prob) {
        return Err(Error::Config(format!(
            "secagg.dropout_prob = {dropout_prob} outside [0, 1)"
        )));
    }
    let field = FieldParams::new(prime, frac_bits, clip)
        .map_err(|e| Error::Config(format!("secagg: {e}")))?;
    field
        .check_headroom(group_size)
        .map_err(|e| Error::Config(format!("secagg/group_size: {e}")))?;

    let config = SimConfig {
        method,
        nodes,
        group_size,
        rounds,
        seed,
        local_epochs,
        batch_size,
        lr,
        dac_tau,
        merge_weight,
        reward_before_training,
        adjacency,
        layout,
        data: DataConfig {
            classes,
            dim,
            samples_per_node,
            per_class,
            radius,
            sigma,
            split_fracs,
        },
        model: ModelConfig { kind, hidden },
        bandit,
        secagg: SecaggConfig { prime, frac_bits, clip, threshold, dropout_prob },
    };
    Ok((config, log.0))
}

fn pseudo_config_of(bandit: &BanditConfig) -> Result<PseudoRewardConfig> {
    match bandit.q_mode {
        QMode::Constant => PseudoRewardConfig::constant(bandit.q0),
        QMode::Exponential => {
            PseudoRewardConfig::exponential(bandit.q0, bandit.q_min, bandit.q_horizon)
        }
    }
}

impl SimConfig {
    /// The pseudo-reward schedule this config describes.
    pub fn pseudo_config(&self) -> Result<PseudoRewardConfig> {
        pseudo_config_of(&self.bandit)
    }

    /// The fixed-point field for secure aggregation.
    pub fn field_params(&self) -> Result<FieldParams> {
        FieldParams::new(self.secagg.prime, self.secagg.frac_bits, self.secagg.clip)
    }

    /// Sorted neighbor list of every node.
    pub fn neighborhoods(&self) -> Vec<Vec<usize>> {
        match &self.adjacency {
            Some(adj) => adj.clone(),
            None => (0..self.nodes)
                .map(|i| (0..self.nodes).filter(|&j| j != i).collect())
                .collect(),
        }
    }

    pub fn cluster_layout(&self) -> Result<ClusterLayout> {
        self.layout.to_cluster_layout()
    }
}
