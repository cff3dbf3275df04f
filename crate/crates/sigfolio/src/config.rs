//! Run configuration file (TOML).
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/demo"
//!
//! [data]
//! prices = "prices.csv"
//! signals = "signals.csv"      # optional
//! overlap_scope = "same_expert" # or "across_experts"
//! test_days = 120
//!
//! [env]
//! purchase_fee = 0.0005
//! sell_fee = 0.0005
//! MIN_PROFIT = -0.1
//! MAX_DRAWDOWN = -0.2
//!
//! [ppo]
//! LEARNING_RATE = 0.0005
//! SGD_MINIBATCH_SIZE = 300
//! LAMBDA = 0.9
//! CLIP_PARAM = 0.2
//! ROLLOUT_FRAGMENT_LENGTH = 60
//! ```
//!
//! Every field has a default; unknown keys are errors. Relative paths are
//! resolved against the directory holding the config file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sigfolio_core::env::EnvConfig;
use sigfolio_core::evaluate::EvalWindows;
use sigfolio_core::math::CommissionSchedule;
use sigfolio_core::net::NetConfig;
use sigfolio_core::observation::{SignalMode, WindowConfig};
use sigfolio_core::ppo::{OptimizerKind, PpoConfig};
use sigfolio_core::signals::OverlapScope;

use crate::transport::{Quorum, TransportConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSection,
    pub env: EnvSection,
    pub window: WindowSection,
    pub net: NetSection,
    pub ppo: PpoSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("run"),
            data: DataSection::default(),
            env: EnvSection::default(),
            window: WindowSection::default(),
            net: NetSection::default(),
            ppo: PpoSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    SameExpert,
    AcrossExperts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub prices: PathBuf,
    pub signals: Option<PathBuf>,
    pub overlap_scope: Scope,
    /// Trailing trading days held out for evaluation.
    pub test_days: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { prices: PathBuf::from("prices.csv"), signals: None, overlap_scope: Scope::SameExpert, test_days: 120 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub purchase_fee: f64,
    pub sell_fee: f64,
    #[serde(rename = "MIN_PROFIT")]
    pub min_profit: f64,
    #[serde(rename = "MAX_DRAWDOWN")]
    pub max_drawdown: f64,
    pub initial_value: f64,
    pub termination_rules: bool,
}

impl Default for EnvSection {
    fn default() -> Self {
        let env = EnvConfig::default();
        Self {
            purchase_fee: env.fees.purchase(),
            sell_fee: env.fees.sell(),
            min_profit: env.min_profit,
            max_drawdown: env.max_drawdown,
            initial_value: env.initial_value,
            termination_rules: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignalLayout {
    #[default]
    PerExpert,
    Aggregated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSection {
    pub window: usize,
    pub signal_mode: SignalLayout,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self { window: 60, signal_mode: SignalLayout::PerExpert }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv2_channels: usize,
    pub conv2_kernel: usize,
    pub hidden: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        let n = NetConfig::new(1, 1, 60);
        Self {
            conv1_channels: n.conv1_channels,
            conv1_kernel: n.conv1_kernel,
            conv2_channels: n.conv2_channels,
            conv2_kernel: n.conv2_kernel,
            hidden: n.hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoSection {
    #[serde(rename = "LEARNING_RATE")]
    pub learning_rate: f64,
    #[serde(rename = "SGD_MINIBATCH_SIZE")]
    pub sgd_minibatch_size: usize,
    #[serde(rename = "LAMBDA")]
    pub lambda: f64,
    #[serde(rename = "CLIP_PARAM")]
    pub clip_param: f64,
    #[serde(rename = "ROLLOUT_FRAGMENT_LENGTH")]
    pub rollout_fragment_length: usize,
    pub gamma: f64,
    pub epochs_per_batch: usize,
    pub train_batch_size: usize,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    pub action_std: f64,
    pub optimizer: OptimizerName,
    pub max_iterations: u64,
}

impl Default for PpoSection {
    fn default() -> Self {
        let p = PpoConfig::default();
        Self {
            learning_rate: p.learning_rate,
            sgd_minibatch_size: p.sgd_minibatch_size,
            lambda: p.lambda,
            clip_param: p.clip_param,
            rollout_fragment_length: p.rollout_fragment_length,
            gamma: p.gamma,
            epochs_per_batch: p.epochs_per_batch,
            train_batch_size: p.train_batch_size,
            entropy_coeff: p.entropy_coeff,
            value_coeff: p.value_coeff,
            action_std: p.action_std,
            optimizer: OptimizerName::Adam,
            max_iterations: p.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// 0 collects in-process; k >= 1 runs k worker threads.
    pub workers: usize,
    /// Live workers needed for a round; 0 means all.
    pub quorum: usize,
    pub worker_timeout_secs: u64,
    /// Write a checkpoint every this many iterations; 0 only writes the
    /// final one.
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { workers: 0, quorum: 0, worker_timeout_secs: 600, checkpoint_every: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalTermination {
    /// Episodes run to the end of each period.
    #[default]
    Disabled,
    /// The training thresholds.
    Rules,
    /// Any loss against the period start ends the episode.
    ZeroThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub window_days: usize,
    pub stride: usize,
    pub termination: EvalTermination,
}

impl Default for EvalSection {
    fn default() -> Self {
        let w = EvalWindows::default();
        Self { window_days: w.length, stride: w.stride, termination: EvalTermination::Disabled }
    }
}

impl RunConfig {
    /// Parses and validates a config file, resolving relative paths.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.into(), message },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse { path: PathBuf::new(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        join(&mut self.data.prices);
        if let Some(s) = self.data.signals.as_mut() {
            join(s);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            fees: CommissionSchedule::new(self.env.purchase_fee, self.env.sell_fee).unwrap_or_default(),
            window: self.window_config(),
            min_profit: self.env.min_profit,
            max_drawdown: self.env.max_drawdown,
            initial_value: self.env.initial_value,
            termination_rules_enabled: self.env.termination_rules,
        }
    }

    /// Environment settings used by `evaluate`.
    pub fn eval_env_config(&self) -> EnvConfig {
        let env = self.env_config();
        match self.eval.termination {
            EvalTermination::Disabled => env.for_evaluation(),
            EvalTermination::Rules => EnvConfig { termination_rules_enabled: true, ..env },
            EvalTermination::ZeroThreshold => env.zero_threshold(),
        }
    }

    pub fn window_config(&self) -> WindowConfig {
        WindowConfig {
            window: self.window.window,
            signal_mode: match self.window.signal_mode {
                SignalLayout::PerExpert => SignalMode::PerExpert,
                SignalLayout::Aggregated => SignalMode::Aggregated,
            },
        }
    }

    pub fn overlap_scope(&self) -> OverlapScope {
        match self.data.overlap_scope {
            Scope::SameExpert => OverlapScope::SameExpert,
            Scope::AcrossExperts => OverlapScope::AcrossExperts,
        }
    }

    /// Network shape for `assets` stocks and `experts` experts.
    pub fn net_config(&self, assets: usize, experts: usize) -> NetConfig {
        NetConfig {
            assets,
            channels: self.window_config().channels(experts),
            window: self.window.window,
            conv1_channels: self.net.conv1_channels,
            conv1_kernel: self.net.conv1_kernel,
            conv2_channels: self.net.conv2_channels,
            conv2_kernel: self.net.conv2_kernel,
            hidden: self.net.hidden,
        }
    }

    pub fn ppo_config(&self) -> PpoConfig {
        let p = &self.ppo;
        PpoConfig {
            learning_rate: p.learning_rate,
            sgd_minibatch_size: p.sgd_minibatch_size,
            lambda: p.lambda,
            clip_param: p.clip_param,
            rollout_fragment_length: p.rollout_fragment_length,
            gamma: p.gamma,
            epochs_per_batch: p.epochs_per_batch,
            train_batch_size: p.train_batch_size,
            entropy_coeff: p.entropy_coeff,
            value_coeff: p.value_coeff,
            action_std: p.action_std,
            optimizer: match p.optimizer {
                OptimizerName::Adam => OptimizerKind::Adam,
                OptimizerName::Sgd => OptimizerKind::Sgd,
            },
            max_iterations: p.max_iterations,
            seed: self.seed,
        }
    }

    pub fn eval_windows(&self) -> EvalWindows {
        EvalWindows { length: self.eval.window_days, stride: self.eval.stride }
    }

    pub fn transport(&self) -> TransportConfig {
        TransportConfig {
            timeout: Duration::from_secs(self.train.worker_timeout_secs),
            quorum: if self.train.quorum == 0 { Quorum::All } else { Quorum::AtLeast(self.train.quorum) },
        }
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        if let Err(e) = CommissionSchedule::new(self.env.purchase_fee, self.env.sell_fee) {
            errors.push(format!("env: {e}"));
        }
        if let Err(e) = self.env_config().validate() {
            errors.push(format!("env: {e}"));
        }
        if let Err(e) = self.ppo_config().validate() {
            errors.push(format!("ppo: {e}"));
        }
        if let Err(e) = self.net_config(1, 0).validate() {
            errors.push(format!("net: {e}"));
        }
        if self.data.test_days < 2 {
            errors.push(String::from("data: test_days must be at least 2"));
        }
        if self.eval.window_days == 0 || self.eval.stride == 0 {
            errors.push(String::from("eval: window_days and stride must be at least 1"));
        }
        if self.train.quorum > self.train.workers.max(1) {
            errors.push(String::from("train: quorum exceeds the worker count"));
        }
        if self.train.worker_timeout_secs == 0 {
            errors.push(String::from("train: worker_timeout_secs must be at least 1"));
        }
        if self.train.workers > 0 && self.ppo_config().fragments_per_batch() < self.train.workers {
            errors.push(String::from("train: fewer fragments per batch than workers"));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }
}
