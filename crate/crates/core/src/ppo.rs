//! Clipped-surrogate PPO with generalized advantage estimation.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::env::{DoneReason, EnvError};
use crate::math::PortfolioVector;
use crate::net::{self, Gradients, NetError, PolicySnapshot};
use crate::observation::{build_observation, Observation, ObservationError, WindowConfig};
use crate::MarketData;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PpoError {
    #[error("invalid PPO config: {0}")]
    InvalidConfig(&'static str),
    #[error("length mismatch: {0}")]
    LengthMismatch(&'static str),
    #[error("non-finite loss in minibatch {minibatch}")]
    NonFiniteLoss { minibatch: usize },
    #[error("non-finite parameters after iteration {iteration}")]
    NonFiniteParameters { iteration: u64 },
    #[error("batch was collected under snapshot {found}, expected {expected}")]
    OffPolicyBatch { expected: u64, found: u64 },
    #[error("empty rollout batch")]
    EmptyBatch,
    #[error("rollout collection failed: {0}")]
    Collection(alloc::string::String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub sgd_minibatch_size: usize,
    pub lambda: f64,
    pub clip_param: f64,
    pub rollout_fragment_length: usize,
    pub gamma: f64,
    pub epochs_per_batch: usize,
    pub train_batch_size: usize,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    /// Standard deviation of the Gaussian over action scores.
    pub action_std: f64,
    pub optimizer: OptimizerKind,
    pub max_iterations: u64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            sgd_minibatch_size: 300,
            lambda: 0.9,
            clip_param: 0.2,
            rollout_fragment_length: 60,
            gamma: 0.99,
            epochs_per_batch: 10,
            train_batch_size: 3600,
            entropy_coeff: 0.0,
            value_coeff: 0.5,
            action_std: 0.15,
            optimizer: OptimizerKind::Adam,
            max_iterations: 200,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let err = |m| Err(PpoError::InvalidConfig(m));
        if !(self.clip_param > 0.0 && self.clip_param < 1.0) {
            return err("clip_param must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return err("lambda must lie in [0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return err("gamma must lie in (0, 1]");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return err("learning_rate must be non-negative");
        }
        if self.rollout_fragment_length == 0 || self.train_batch_size == 0 || self.sgd_minibatch_size == 0 {
            return err("batch, minibatch and fragment sizes must be at least 1");
        }
        if self.sgd_minibatch_size > self.train_batch_size {
            return err("sgd_minibatch_size must not exceed train_batch_size");
        }
        if self.epochs_per_batch == 0 {
            return err("epochs_per_batch must be at least 1");
        }
        if !(self.action_std.is_finite() && self.action_std > 0.0) {
            return err("action_std must be positive");
        }
        if !(self.entropy_coeff.is_finite() && self.value_coeff.is_finite() && self.value_coeff >= 0.0) {
            return err("loss coefficients must be finite and value_coeff non-negative");
        }
        Ok(())
    }

    /// Fragments collected per iteration, rounding the batch up to whole
    /// fragments.
    pub fn fragments_per_batch(&self) -> usize {
        self.train_batch_size.div_ceil(self.rollout_fragment_length)
    }
}

/// Diagonal Gaussian over action scores with a shared standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl ActionDistribution {
    pub fn new(mean: Vec<f64>, std: f64) -> Self {
        debug_assert!(std > 0.0);
        Self { mean, std }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.std * z
            })
            .collect()
    }

    pub fn log_prob(&self, action: &[f64]) -> f64 {
        let n = self.mean.len() as f64;
        let sq: f64 = action.iter().zip(&self.mean).map(|(a, m)| (a - m) * (a - m)).sum();
        -0.5 * sq / (self.std * self.std) - n * (libm::log(self.std) + 0.5 * libm::log(2.0 * PI))
    }

    /// Derivative of the log density with respect to the mean.
    pub fn log_prob_grad_mean(&self, action: &[f64]) -> Vec<f64> {
        let var = self.std * self.std;
        action.iter().zip(&self.mean).map(|(a, m)| (a - m) / var).collect()
    }

    pub fn entropy(&self) -> f64 {
        self.mean.len() as f64 * (0.5 * libm::log(2.0 * PI * core::f64::consts::E) + libm::log(self.std))
    }

    /// Greedy action.
    pub fn mode(&self) -> &[f64] {
        &self.mean
    }
}

/// One environment step of experience. The observation is stored by
/// reference (day and previous weights) and rebuilt from the market data
/// when training.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub day_index: usize,
    pub prev_weights: PortfolioVector,
    /// Sampled action scores.
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

impl RolloutStep {
    /// Portfolio the sampled scores map to.
    pub fn weights(&self) -> PortfolioVector {
        crate::env::action_to_weights(&self.action).expect("sampled actions are finite")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStat {
    pub total_reward: f64,
    pub length: usize,
    pub reason: DoneReason,
}

/// Contiguous slice of one worker's experience.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub worker_id: u32,
    /// Position of the fragment within its worker's round.
    pub index: u32,
    /// Snapshot version the actions were sampled from.
    pub version: u64,
    pub steps: Vec<RolloutStep>,
    /// Value of the state after the last step; zero when that step ended
    /// an episode.
    pub bootstrap_value: f64,
    /// Episodes that ended inside this fragment.
    pub completed: Vec<EpisodeStat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub version: u64,
    pub fragments: Vec<Fragment>,
}

impl RolloutBatch {
    pub fn steps(&self) -> usize {
        self.fragments.iter().map(|f| f.steps.len()).sum()
    }

    pub fn completed_episodes(&self) -> impl Iterator<Item = &EpisodeStat> {
        self.fragments.iter().flat_map(|f| f.completed.iter())
    }

    /// Every fragment was produced by the batch's snapshot.
    pub fn is_on_policy(&self) -> bool {
        self.fragments.iter().all(|f| f.version == self.version)
    }
}

/// GAE over one fragment.
///
/// `bootstrap` is the value after the final step and is ignored when that
/// step is terminal. Returns `(advantages, value targets)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(PpoError::LengthMismatch("rewards, values and dones must have equal length"));
    }
    let mut adv = alloc::vec![0.0; n];
    let mut next_value = bootstrap;
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
        next_value = values[t];
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// Shifts and scales to mean 0 and standard deviation 1 (population
/// estimate, floored at 1e-8).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var).max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Per-sample clipped objective `min(r A, clip(r, 1-eps, 1+eps) A)` and
/// whether the unclipped branch carries the gradient.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if clipped < unclipped {
        (clipped, false)
    } else {
        (unclipped, true)
    }
}

/// Training input for one step.
#[derive(Debug, Clone)]
pub struct TrainSample<'a> {
    pub observation: &'a Observation,
    pub action: &'a [f64],
    pub old_log_prob: f64,
    pub advantage: f64,
    pub target: f64,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples whose gradient was cut by clipping.
    pub clip_fraction: f64,
    pub gradients: Gradients,
}

/// PPO loss over a minibatch and its exact gradient.
///
/// `loss = -mean(min(r A, clip(r) A)) + value_coeff * mean((V - target)^2)
///         - entropy_coeff * entropy`.
pub fn ppo_loss(
    snapshot: &PolicySnapshot,
    samples: &[TrainSample<'_>],
    cfg: &PpoConfig,
    minibatch: usize,
) -> Result<LossOutput, PpoError> {
    if samples.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    let n = samples.len() as f64;
    let mut gradients = Gradients::zeros(snapshot.config());
    let (mut policy_loss, mut value_loss, mut clipped) = (0.0, 0.0, 0usize);
    let mut entropy = 0.0;
    for sample in samples {
        let out = net::forward(snapshot, sample.observation)?;
        let dist = ActionDistribution::new(out.scores, cfg.action_std);
        let ratio = libm::exp(dist.log_prob(sample.action) - sample.old_log_prob);
        let (objective, unclipped) = clipped_objective(ratio, sample.advantage, cfg.clip_param);
        policy_loss -= objective / n;
        let diff = out.value - sample.target;
        value_loss += diff * diff / n;
        entropy = dist.entropy();

        let grad_scores: Vec<f64> = if unclipped {
            let scale = -sample.advantage * ratio / n;
            dist.log_prob_grad_mean(sample.action).into_iter().map(|g| scale * g).collect()
        } else {
            clipped += 1;
            alloc::vec![0.0; dist.mean.len()]
        };
        let grad_value = 2.0 * cfg.value_coeff * diff / n;
        net::backward_accumulate(snapshot, &out.trace, &grad_scores, grad_value, &mut gradients)?;
    }
    let loss = policy_loss + cfg.value_coeff * value_loss - cfg.entropy_coeff * entropy;
    if !loss.is_finite() || gradients.as_slice().iter().any(|g| !g.is_finite()) {
        return Err(PpoError::NonFiniteLoss { minibatch });
    }
    Ok(LossOutput { loss, policy_loss, value_loss, entropy, clip_fraction: clipped as f64 / n, gradients })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { first: Vec<f64>, second: Vec<f64>, steps: u64 },
}

impl Optimizer {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd,
            OptimizerKind::Adam => Self::Adam { first: alloc::vec![0.0; params], second: alloc::vec![0.0; params], steps: 0 },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        match self {
            Self::Sgd => params.iter_mut().zip(grads).for_each(|(p, g)| *p -= lr * g),
            Self::Adam { first, second, steps } => {
                *steps += 1;
                let c1 = 1.0 - libm::pow(Self::BETA1, *steps as f64);
                let c2 = 1.0 - libm::pow(Self::BETA2, *steps as f64);
                for i in 0..params.len() {
                    let g = grads[i];
                    first[i] = Self::BETA1 * first[i] + (1.0 - Self::BETA1) * g;
                    second[i] = Self::BETA2 * second[i] + (1.0 - Self::BETA2) * g * g;
                    let m = first[i] / c1;
                    let v = second[i] / c2;
                    params[i] -= lr * m / (libm::sqrt(v) + Self::EPSILON);
                }
            }
        }
    }
}

/// Anything that can produce an on-policy batch for a snapshot.
pub trait RolloutSource {
    fn collect(&mut self, snapshot: &PolicySnapshot) -> Result<RolloutBatch, PpoError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationMetrics {
    pub iteration: u64,
    /// Mean total reward of episodes finished during collection; NaN when
    /// none finished.
    pub mean_reward: f64,
    pub mean_length: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Version of the snapshot produced by this iteration.
    pub version: u64,
}

impl IterationMetrics {
    pub const HEADER: [&'static str; 7] =
        ["iteration", "mean_reward", "mean_length", "policy_loss", "value_loss", "entropy", "version"];
}

/// Single-writer PPO learner.
pub struct Trainer {
    cfg: PpoConfig,
    data: Arc<MarketData>,
    window: WindowConfig,
    snapshot: PolicySnapshot,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    iteration: u64,
}

impl Trainer {
    pub fn new(cfg: PpoConfig, data: Arc<MarketData>, window: WindowConfig, snapshot: PolicySnapshot) -> Result<Self, PpoError> {
        cfg.validate()?;
        window.validate()?;
        let optimizer = Optimizer::new(cfg.optimizer, snapshot.params().len());
        // minibatch order stream, separate from every collection stream
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d69_6e69_6261_7463);
        Ok(Self { cfg, data, window, snapshot, optimizer, rng, iteration: 0 })
    }

    pub fn snapshot(&self) -> &PolicySnapshot {
        &self.snapshot
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Collect, then update. Returns the metrics of the iteration.
    pub fn iterate(&mut self, source: &mut dyn RolloutSource) -> Result<IterationMetrics, PpoError> {
        let batch = source.collect(&self.snapshot)?;
        self.update(&batch)
    }

    /// Epochs of shuffled minibatch updates on an on-policy batch, producing
    /// the next snapshot version.
    pub fn update(&mut self, batch: &RolloutBatch) -> Result<IterationMetrics, PpoError> {
        let version = self.snapshot.version();
        if batch.version != version || !batch.is_on_policy() {
            let found = batch.fragments.iter().map(|f| f.version).find(|v| *v != version).unwrap_or(batch.version);
            return Err(PpoError::OffPolicyBatch { expected: version, found });
        }
        if batch.steps() == 0 {
            return Err(PpoError::EmptyBatch);
        }

        let mut advantages = Vec::with_capacity(batch.steps());
        let mut targets = Vec::with_capacity(batch.steps());
        let mut observations = Vec::with_capacity(batch.steps());
        let mut steps = Vec::with_capacity(batch.steps());
        for fragment in &batch.fragments {
            let rewards: Vec<f64> = fragment.steps.iter().map(|s| s.reward).collect();
            let values: Vec<f64> = fragment.steps.iter().map(|s| s.value).collect();
            let dones: Vec<bool> = fragment.steps.iter().map(|s| s.done).collect();
            let (adv, tgt) =
                compute_gae(&rewards, &values, &dones, fragment.bootstrap_value, self.cfg.gamma, self.cfg.lambda)?;
            advantages.extend(adv);
            targets.extend(tgt);
            for step in &fragment.steps {
                observations.push(build_observation(&self.data, step.day_index, &step.prev_weights, &self.window)?);
                steps.push(step);
            }
        }
        normalize_advantages(&mut advantages);

        let mut params = self.snapshot.params().to_vec();
        let mut order: Vec<usize> = (0..steps.len()).collect();
        let (mut policy_sum, mut value_sum, mut entropy, mut updates) = (0.0, 0.0, 0.0, 0usize);
        let mut minibatch = 0usize;
        for _ in 0..self.cfg.epochs_per_batch {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.cfg.sgd_minibatch_size) {
                let working = PolicySnapshot::new(*self.snapshot.config(), version, params.clone())?;
                let samples: Vec<TrainSample<'_>> = chunk
                    .iter()
                    .map(|&i| TrainSample {
                        observation: &observations[i],
                        action: &steps[i].action,
                        old_log_prob: steps[i].log_prob,
                        advantage: advantages[i],
                        target: targets[i],
                    })
                    .collect();
                let out = ppo_loss(&working, &samples, &self.cfg, minibatch)?;
                self.optimizer.step(&mut params, out.gradients.as_slice(), self.cfg.learning_rate);
                policy_sum += out.policy_loss;
                value_sum += out.value_loss;
                entropy = out.entropy;
                updates += 1;
                minibatch += 1;
            }
        }
        self.iteration += 1;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(PpoError::NonFiniteParameters { iteration: self.iteration });
        }
        self.snapshot = self.snapshot.successor(params)?;

        let episodes: Vec<&EpisodeStat> = batch.completed_episodes().collect();
        let (mean_reward, mean_length) = if episodes.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let n = episodes.len() as f64;
            (
                episodes.iter().map(|e| e.total_reward).sum::<f64>() / n,
                episodes.iter().map(|e| e.length as f64).sum::<f64>() / n,
            )
        };
        Ok(IterationMetrics {
            iteration: self.iteration,
            mean_reward,
            mean_length,
            policy_loss: policy_sum / updates as f64,
            value_loss: value_sum / updates as f64,
            entropy,
            version: self.snapshot.version(),
        })
    }
}

/// Runs `cfg.max_iterations` iterations, calling `on_iteration` after each.
pub fn train(
    trainer: &mut Trainer,
    source: &mut dyn RolloutSource,
    mut on_iteration: impl FnMut(&IterationMetrics, &PolicySnapshot),
) -> Result<Vec<IterationMetrics>, PpoError> {
    let mut metrics = Vec::new();
    while trainer.iteration() < trainer.config().max_iterations {
        let m = trainer.iterate(source)?;
        on_iteration(&m, trainer.snapshot());
        metrics.push(m);
    }
    Ok(metrics)
}
