//! Synchronous leader/worker rollout protocol.
//!
//! Each round the leader broadcasts a snapshot, every worker acknowledges it,
//! generates its quota of fragments with that snapshot and sends them back.
//! The leader accepts only batches tagged with the current version and
//! orders fragments by worker id, then by fragment index.
//!
//! This module holds the transport-independent pieces. [`LocalCollector`]
//! runs the protocol in-process; threaded and framed transports live in the
//! std crate.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{EnvConfig, StartDay, TradingEnv};
use crate::net::{self, PolicySnapshot};
use crate::observation::Observation;
use crate::ppo::{ActionDistribution, EpisodeStat, Fragment, PpoError, RolloutBatch, RolloutSource, RolloutStep};
use crate::MarketData;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error("snapshot version {offered} is not newer than {current}")]
    VersionRegression { offered: u64, current: u64 },
    #[error("worker {worker_id} has no snapshot installed")]
    NoSnapshot { worker_id: u32 },
    #[error("worker {worker_id} sent version {found}, round expects {expected}")]
    StaleBatch { worker_id: u32, expected: u64, found: u64 },
    #[error("worker {worker_id} sent fragment indices {found:?}, expected 0..{expected}")]
    FragmentSequence { worker_id: u32, expected: u32, found: Vec<u32> },
    #[error("unknown or duplicate worker {0}")]
    UnknownWorker(u32),
    #[error("no round is open")]
    NoOpenRound,
    #[error("round incomplete: {missing} worker(s) missing")]
    Incomplete { missing: usize },
    #[error("quorum not reached: {live} live worker(s), {required} required")]
    QuorumLost { live: usize, required: usize },
    #[error("invalid worker set: {0}")]
    InvalidWorkers(&'static str),
    #[error("worker {worker_id} failed: {reason}")]
    WorkerFailed { worker_id: u32, reason: String },
}

impl From<OrchestratorError> for PpoError {
    fn from(e: OrchestratorError) -> Self {
        PpoError::Collection(alloc::format!("{e}"))
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WorkerSpec {
    pub worker_id: u32,
    pub env_seed: u64,
    /// Fragments per round.
    pub quota: usize,
}

impl WorkerSpec {
    /// Seed depends only on the run seed and the worker id, so adding
    /// workers never changes an existing worker's data stream.
    pub fn derive(run_seed: u64, worker_id: u32, quota: usize) -> Self {
        Self { worker_id, env_seed: mix(mix(run_seed) ^ u64::from(worker_id)), quota }
    }

    /// Splits `fragments` over `workers`, lower ids taking the remainder.
    pub fn split(run_seed: u64, workers: usize, fragments: usize) -> Result<Vec<Self>, OrchestratorError> {
        if workers == 0 {
            return Err(OrchestratorError::InvalidWorkers("need at least one worker"));
        }
        if fragments < workers {
            return Err(OrchestratorError::InvalidWorkers("every worker needs a quota of at least one fragment"));
        }
        Ok((0..workers)
            .map(|i| {
                let quota = fragments / workers + usize::from(i < fragments % workers);
                Self::derive(run_seed, i as u32, quota)
            })
            .collect())
    }
}

/// Messages of one round. Snapshots and collect requests flow from the
/// leader, acknowledgements and batches from workers.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundMessage {
    Snapshot(PolicySnapshot),
    Ack { worker_id: u32, version: u64 },
    Collect { version: u64 },
    Batch(WorkerBatch),
    /// A worker could not complete a request.
    Failed { worker_id: u32, reason: String },
    Shutdown,
}

/// Fragments from one worker for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerBatch {
    pub worker_id: u32,
    pub version: u64,
    pub fragments: Vec<Fragment>,
}

/// A worker's environment and policy copy.
pub struct RolloutWorker {
    spec: WorkerSpec,
    env: TradingEnv,
    rng: ChaCha8Rng,
    snapshot: Option<PolicySnapshot>,
    fragment_len: usize,
    action_std: f64,
    current: Option<Observation>,
    episode_reward: f64,
    episode_len: usize,
}

impl RolloutWorker {
    pub fn new(
        spec: WorkerSpec,
        data: Arc<MarketData>,
        env_cfg: EnvConfig,
        train_days: core::ops::Range<usize>,
        fragment_len: usize,
        action_std: f64,
    ) -> Result<Self, PpoError> {
        let env = TradingEnv::new(data, env_cfg)?.with_day_range(train_days)?;
        Ok(Self {
            spec,
            env,
            rng: ChaCha8Rng::seed_from_u64(spec.env_seed),
            snapshot: None,
            fragment_len,
            action_std,
            current: None,
            episode_reward: 0.0,
            episode_len: 0,
        })
    }

    pub fn spec(&self) -> &WorkerSpec {
        &self.spec
    }

    pub fn version(&self) -> Option<u64> {
        self.snapshot.as_ref().map(PolicySnapshot::version)
    }

    /// Installs a newer snapshot and returns the acknowledged version.
    pub fn install(&mut self, snapshot: PolicySnapshot) -> Result<u64, OrchestratorError> {
        if let Some(current) = self.version() {
            if snapshot.version() <= current {
                return Err(OrchestratorError::VersionRegression { offered: snapshot.version(), current });
            }
        }
        let v = snapshot.version();
        self.snapshot = Some(snapshot);
        Ok(v)
    }

    /// Generates this round's quota of fragments with the installed snapshot.
    /// Episodes continue across fragments and rounds.
    pub fn collect(&mut self) -> Result<WorkerBatch, PpoError> {
        let snapshot = self
            .snapshot
            .clone()
            .ok_or(OrchestratorError::NoSnapshot { worker_id: self.spec.worker_id })?;
        let mut fragments = Vec::with_capacity(self.spec.quota);
        for index in 0..self.spec.quota {
            fragments.push(self.fragment(&snapshot, index as u32)?);
        }
        Ok(WorkerBatch { worker_id: self.spec.worker_id, version: snapshot.version(), fragments })
    }

    fn fragment(&mut self, snapshot: &PolicySnapshot, index: u32) -> Result<Fragment, PpoError> {
        let mut steps = Vec::with_capacity(self.fragment_len);
        let mut completed = Vec::new();
        for _ in 0..self.fragment_len {
            let obs = match self.current.take() {
                Some(obs) => obs,
                None => self.env.reset(StartDay::Random, &mut self.rng)?.0,
            };
            let out = net::forward(snapshot, &obs)?;
            let dist = ActionDistribution::new(out.scores, self.action_std);
            let action = dist.sample(&mut self.rng);
            let log_prob = dist.log_prob(&action);
            let tr = self.env.step(&action)?;
            self.episode_reward += tr.reward;
            self.episode_len += 1;
            let done = tr.state.done;
            steps.push(RolloutStep {
                day_index: obs.day_index,
                prev_weights: obs.prev_weights,
                action,
                log_prob,
                reward: tr.reward,
                value: out.value,
                done,
            });
            if done {
                completed.push(EpisodeStat {
                    total_reward: self.episode_reward,
                    length: self.episode_len,
                    reason: tr.state.done_reason,
                });
                self.episode_reward = 0.0;
                self.episode_len = 0;
            } else {
                self.current = Some(tr.observation);
            }
        }
        let bootstrap_value = match &self.current {
            Some(obs) => net::forward(snapshot, obs)?.value,
            None => 0.0,
        };
        Ok(Fragment { worker_id: self.spec.worker_id, index, version: snapshot.version(), steps, bootstrap_value, completed })
    }
}

/// Leader bookkeeping: version monotonicity, stale-batch rejection and
/// deterministic aggregation.
#[derive(Debug, Clone, Default)]
pub struct Leader {
    last_broadcast: Option<u64>,
    /// Expected quota per live worker, by id.
    quotas: Vec<(u32, usize)>,
    received: Vec<WorkerBatch>,
    stale_rejected: u64,
    rounds_failed: u64,
}

impl Leader {
    pub fn new(workers: &[WorkerSpec]) -> Result<Self, OrchestratorError> {
        let mut quotas: Vec<(u32, usize)> = workers.iter().map(|w| (w.worker_id, w.quota)).collect();
        quotas.sort_unstable();
        if quotas.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(OrchestratorError::InvalidWorkers("worker ids must be unique"));
        }
        if quotas.iter().any(|q| q.1 == 0) {
            return Err(OrchestratorError::InvalidWorkers("quotas must be at least 1"));
        }
        Ok(Self { quotas, ..Self::default() })
    }

    pub fn last_broadcast(&self) -> Option<u64> {
        self.last_broadcast
    }

    pub fn stale_rejected(&self) -> u64 {
        self.stale_rejected
    }

    pub fn rounds_failed(&self) -> u64 {
        self.rounds_failed
    }

    pub fn live_workers(&self) -> Vec<u32> {
        self.quotas.iter().map(|q| q.0).collect()
    }

    /// Opens a round for `version`, which must exceed every earlier
    /// broadcast.
    pub fn begin_broadcast(&mut self, version: u64) -> Result<(), OrchestratorError> {
        if let Some(current) = self.last_broadcast {
            if version <= current {
                return Err(OrchestratorError::VersionRegression { offered: version, current });
            }
        }
        self.last_broadcast = Some(version);
        self.received.clear();
        Ok(())
    }

    /// Starts over on the current version after a failed round.
    pub fn retry_round(&mut self) {
        self.rounds_failed += 1;
        self.received.clear();
    }

    /// Drops a lost worker; its quota is not redistributed.
    pub fn remove_worker(&mut self, worker_id: u32) {
        self.quotas.retain(|q| q.0 != worker_id);
        self.received.retain(|b| b.worker_id != worker_id);
    }

    /// Accepts a worker's batch for the open round. Stale versions are
    /// counted and rejected.
    pub fn accept(&mut self, batch: WorkerBatch) -> Result<(), OrchestratorError> {
        let expected = self.last_broadcast.ok_or(OrchestratorError::NoOpenRound)?;
        if batch.version != expected || batch.fragments.iter().any(|f| f.version != expected) {
            self.stale_rejected += 1;
            let found = batch.fragments.iter().map(|f| f.version).find(|v| *v != expected).unwrap_or(batch.version);
            return Err(OrchestratorError::StaleBatch { worker_id: batch.worker_id, expected, found });
        }
        let quota = self
            .quotas
            .iter()
            .find(|q| q.0 == batch.worker_id)
            .map(|q| q.1)
            .ok_or(OrchestratorError::UnknownWorker(batch.worker_id))?;
        if self.received.iter().any(|b| b.worker_id == batch.worker_id) {
            return Err(OrchestratorError::UnknownWorker(batch.worker_id));
        }
        let indices: Vec<u32> = batch.fragments.iter().map(|f| f.index).collect();
        let in_order = indices.len() == quota
            && indices.iter().enumerate().all(|(i, &x)| x as usize == i)
            && batch.fragments.iter().all(|f| f.worker_id == batch.worker_id);
        if !in_order {
            return Err(OrchestratorError::FragmentSequence { worker_id: batch.worker_id, expected: quota as u32, found: indices });
        }
        self.received.push(batch);
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.received.len() == self.quotas.len()
    }

    /// Concatenates the round's batches by worker id then fragment index.
    pub fn aggregate(&mut self) -> Result<RolloutBatch, OrchestratorError> {
        let version = self.last_broadcast.ok_or(OrchestratorError::NoOpenRound)?;
        if !self.is_complete() {
            return Err(OrchestratorError::Incomplete { missing: self.quotas.len() - self.received.len() });
        }
        let mut batches = core::mem::take(&mut self.received);
        batches.sort_by_key(|b| b.worker_id);
        let fragments = batches.into_iter().flat_map(|b| b.fragments).collect();
        Ok(RolloutBatch { version, fragments })
    }
}

/// In-process collection with every worker stepped sequentially.
pub struct LocalCollector {
    workers: Vec<RolloutWorker>,
    leader: Leader,
}

impl LocalCollector {
    pub fn new(workers: Vec<RolloutWorker>) -> Result<Self, OrchestratorError> {
        let specs: Vec<WorkerSpec> = workers.iter().map(|w| w.spec).collect();
        let leader = Leader::new(&specs)?;
        Ok(Self { workers, leader })
    }

    pub fn leader(&self) -> &Leader {
        &self.leader
    }
}

impl RolloutSource for LocalCollector {
    fn collect(&mut self, snapshot: &PolicySnapshot) -> Result<RolloutBatch, PpoError> {
        self.leader.begin_broadcast(snapshot.version())?;
        for worker in &mut self.workers {
            worker.install(snapshot.clone())?;
        }
        for worker in &mut self.workers {
            let batch = worker.collect()?;
            self.leader.accept(batch)?;
        }
        Ok(self.leader.aggregate()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_parameters, NetConfig};
    use crate::observation::WindowConfig;
    use crate::synth::{synth_market, MarketParams};

    fn setup(workers: usize, fragments: usize) -> (Arc<MarketData>, EnvConfig, Vec<WorkerSpec>, PolicySnapshot) {
        let panel = synth_market(3, 80, 1, &MarketParams::default()).unwrap();
        let data = Arc::new(MarketData::prices_only(panel));
        let env_cfg = EnvConfig { window: WindowConfig { window: 12, ..Default::default() }, ..Default::default() };
        let net_cfg = NetConfig { conv2_channels: 2, hidden: 4, ..NetConfig::new(3, 5, 12) };
        let specs = WorkerSpec::split(7, workers, fragments).unwrap();
        (data, env_cfg, specs, init_parameters(net_cfg, 1).unwrap())
    }

    fn collector(data: &Arc<MarketData>, env_cfg: EnvConfig, specs: &[WorkerSpec]) -> LocalCollector {
        let workers = specs
            .iter()
            .map(|s| RolloutWorker::new(*s, data.clone(), env_cfg, 0..80, 10, 0.15).unwrap())
            .collect();
        LocalCollector::new(workers).unwrap()
    }

    #[test]
    fn quota_split_and_seeds() {
        let specs = WorkerSpec::split(3, 4, 10).unwrap();
        assert_eq!(specs.iter().map(|s| s.quota).collect::<Vec<_>>(), [3, 3, 2, 2]);
        assert_eq!(specs[1], WorkerSpec::derive(3, 1, 3));
        assert_ne!(specs[0].env_seed, specs[1].env_seed);
        assert!(WorkerSpec::split(3, 0, 10).is_err());
        assert!(WorkerSpec::split(3, 5, 4).is_err());
    }

    #[test]
    fn round_is_ordered_and_on_policy() {
        let (data, env_cfg, specs, snap) = setup(3, 5);
        let mut c = collector(&data, env_cfg, &specs);
        let batch = c.collect(&snap).unwrap();
        assert!(batch.is_on_policy());
        let keys: Vec<(u32, u32)> = batch.fragments.iter().map(|f| (f.worker_id, f.index)).collect();
        assert_eq!(keys, [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0)]);
        assert_eq!(batch.steps(), 50);
    }

    #[test]
    fn version_regression_rejected() {
        let (data, env_cfg, specs, snap) = setup(1, 1);
        let mut c = collector(&data, env_cfg, &specs);
        c.collect(&snap).unwrap();
        assert!(c.collect(&snap).is_err());
        let next = snap.successor(snap.params().to_vec()).unwrap();
        assert!(c.collect(&next).is_ok());
    }

    #[test]
    fn stale_batches_counted() {
        let (data, env_cfg, specs, snap) = setup(2, 2);
        let mut leader = Leader::new(&specs).unwrap();
        let mut w = RolloutWorker::new(specs[0], data, env_cfg, 0..80, 5, 0.15).unwrap();
        w.install(snap.clone()).unwrap();
        let batch = w.collect().unwrap();
        leader.begin_broadcast(1).unwrap();
        assert!(matches!(leader.accept(batch.clone()), Err(OrchestratorError::StaleBatch { .. })));
        assert_eq!(leader.stale_rejected(), 1);
        assert!(leader.begin_broadcast(1).is_err());
        assert!(leader.begin_broadcast(0).is_err());
        assert!(matches!(leader.aggregate(), Err(OrchestratorError::Incomplete { missing: 2 })));
    }

    #[test]
    fn sequence_gaps_detected() {
        let (data, env_cfg, specs, snap) = setup(1, 2);
        let mut leader = Leader::new(&specs).unwrap();
        let mut w = RolloutWorker::new(specs[0], data, env_cfg, 0..80, 5, 0.15).unwrap();
        w.install(snap).unwrap();
        let mut batch = w.collect().unwrap();
        leader.begin_broadcast(0).unwrap();
        batch.fragments[1].index = 0;
        assert!(matches!(leader.accept(batch.clone()), Err(OrchestratorError::FragmentSequence { .. })));
        batch.fragments.pop();
        assert!(leader.accept(batch).is_err());
    }

    #[test]
    fn workers_match_independent_runs() {
        let (data, env_cfg, specs, snap) = setup(2, 4);
        let joint = collector(&data, env_cfg, &specs).collect(&snap).unwrap();
        let mut separate = Vec::new();
        for s in &specs {
            separate.extend(collector(&data, env_cfg, &[*s]).collect(&snap).unwrap().fragments);
        }
        assert_eq!(joint.fragments, separate);
    }
}
