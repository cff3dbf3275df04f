//! Rollout workers on their own threads, exchanging encoded frames with the
//! leader over channels.

use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use sigfolio_core::net::PolicySnapshot;
use sigfolio_core::orchestrator::{Leader, OrchestratorError, RolloutWorker, RoundMessage, WorkerSpec};
use sigfolio_core::ppo::{PpoError, RolloutBatch, RolloutSource};

use crate::wire;

/// How many workers must stay alive for rounds to proceed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quorum {
    #[default]
    All,
    AtLeast(usize),
}

/// Injected misbehaviour, keyed by the worker's zero-based collect count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Thread exits when asked for this round.
    CrashAtRound(u64),
    /// Stops answering from this round on, without closing its channel.
    SilentAtRound(u64),
    /// Tags this round's batch with the previous snapshot version.
    StaleAtRound(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransportConfig {
    pub timeout: Duration,
    pub quorum: Quorum,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self { timeout: Duration::from_secs(600), quorum: Quorum::All }
    }
}

struct Link {
    worker_id: u32,
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    handle: JoinHandle<()>,
}

fn worker_loop(mut worker: RolloutWorker, fault: Fault, rx: Receiver<Vec<u8>>, tx: Sender<Vec<u8>>) {
    let id = worker.spec().worker_id;
    let mut collects = 0u64;
    let mut silent = false;
    while let Ok(bytes) = rx.recv() {
        let reply = match wire::decode(&bytes) {
            Ok((RoundMessage::Shutdown, _)) => return,
            _ if silent => continue,
            Ok((RoundMessage::Snapshot(s), _)) => match worker.install(s) {
                Ok(version) => RoundMessage::Ack { worker_id: id, version },
                Err(e) => RoundMessage::Failed { worker_id: id, reason: e.to_string() },
            },
            Ok((RoundMessage::Collect { version }, _)) => {
                let round = collects;
                collects += 1;
                match fault {
                    Fault::CrashAtRound(n) if n == round => return,
                    Fault::SilentAtRound(n) if n == round => {
                        silent = true;
                        continue;
                    }
                    _ => {}
                }
                if worker.version() != Some(version) {
                    RoundMessage::Failed { worker_id: id, reason: format!("asked to collect for version {version}") }
                } else {
                    match worker.collect() {
                        Ok(mut batch) => {
                            if fault == Fault::StaleAtRound(round) {
                                batch.version = batch.version.wrapping_sub(1);
                                batch.fragments.iter_mut().for_each(|f| f.version = batch.version);
                            }
                            RoundMessage::Batch(batch)
                        }
                        Err(e) => RoundMessage::Failed { worker_id: id, reason: e.to_string() },
                    }
                }
            }
            Ok((other, _)) => RoundMessage::Failed { worker_id: id, reason: format!("unexpected message {other:?}") },
            Err(e) => RoundMessage::Failed { worker_id: id, reason: e.to_string() },
        };
        if tx.send(wire::encode(&reply, id)).is_err() {
            return;
        }
    }
}

/// Leader side of the threaded topology.
pub struct ThreadedCollector {
    links: Vec<Link>,
    retired: Vec<Link>,
    leader: Leader,
    cfg: TransportConfig,
    required: usize,
    lost: Vec<u32>,
}

impl ThreadedCollector {
    pub fn spawn(workers: Vec<(RolloutWorker, Fault)>, cfg: TransportConfig) -> Result<Self, OrchestratorError> {
        let specs: Vec<WorkerSpec> = workers.iter().map(|(w, _)| *w.spec()).collect();
        let leader = Leader::new(&specs)?;
        let required = match cfg.quorum {
            Quorum::All => specs.len(),
            Quorum::AtLeast(n) if n >= 1 && n <= specs.len() => n,
            Quorum::AtLeast(_) => return Err(OrchestratorError::InvalidWorkers("quorum must lie in 1..=workers")),
        };
        let mut links: Vec<Link> = workers
            .into_iter()
            .map(|(worker, fault)| {
                let worker_id = worker.spec().worker_id;
                let (to_worker, worker_rx) = unbounded();
                let (worker_tx, from_worker) = unbounded();
                let handle = std::thread::Builder::new()
                    .name(format!("rollout-{worker_id}"))
                    .spawn(move || worker_loop(worker, fault, worker_rx, worker_tx))
                    .expect("spawn rollout worker");
                Link { worker_id, tx: to_worker, rx: from_worker, handle }
            })
            .collect();
        links.sort_by_key(|l| l.worker_id);
        Ok(Self { links, retired: Vec::new(), leader, cfg, required, lost: Vec::new() })
    }

    pub fn leader(&self) -> &Leader {
        &self.leader
    }

    /// Ids of workers dropped after timeouts, crashes or stale batches.
    pub fn lost_workers(&self) -> &[u32] {
        &self.lost
    }

    fn drop_worker(&mut self, worker_id: u32, why: &str) {
        log::warn!("dropping rollout worker {worker_id}: {why}");
        if let Some(pos) = self.links.iter().position(|l| l.worker_id == worker_id) {
            let link = self.links.remove(pos);
            let _ = link.tx.send(wire::encode(&RoundMessage::Shutdown, worker_id));
            self.retired.push(link);
        }
        self.leader.remove_worker(worker_id);
        self.lost.push(worker_id);
    }

    fn check_quorum(&self) -> Result<(), OrchestratorError> {
        if self.links.len() < self.required {
            return Err(OrchestratorError::QuorumLost { live: self.links.len(), required: self.required });
        }
        Ok(())
    }

    /// Sends `msg` to every live worker and gathers one reply each, in
    /// worker-id order. Workers that time out or hang up are reported as
    /// `Err` entries.
    fn exchange(&self, msg: &RoundMessage) -> Vec<(u32, Result<RoundMessage, String>)> {
        for link in &self.links {
            let _ = link.tx.send(wire::encode(msg, link.worker_id));
        }
        let deadline = Instant::now() + self.cfg.timeout;
        self.links
            .iter()
            .map(|link| {
                let reply = match link.rx.recv_deadline(deadline) {
                    Ok(bytes) => match wire::decode(&bytes) {
                        Ok((RoundMessage::Failed { reason, .. }, _)) => Err(reason),
                        Ok((m, _)) => Ok(m),
                        Err(e) => Err(e.to_string()),
                    },
                    Err(RecvTimeoutError::Timeout) => Err(String::from("timed out")),
                    Err(RecvTimeoutError::Disconnected) => Err(String::from("disconnected")),
                };
                (link.worker_id, reply)
            })
            .collect()
    }

    fn broadcast(&mut self, snapshot: &PolicySnapshot) -> Result<(), PpoError> {
        self.leader.begin_broadcast(snapshot.version())?;
        let replies = self.exchange(&RoundMessage::Snapshot(snapshot.clone()));
        for (id, reply) in replies {
            match reply {
                Ok(RoundMessage::Ack { version, .. }) if version == snapshot.version() => {}
                Ok(other) => self.drop_worker(id, &format!("bad acknowledgement {other:?}")),
                Err(why) => self.drop_worker(id, &why),
            }
        }
        Ok(self.check_quorum()?)
    }

    /// One collection attempt. `None` means a worker was lost and the round
    /// must be repeated.
    fn round(&mut self, version: u64) -> Result<Option<RolloutBatch>, PpoError> {
        let replies = self.exchange(&RoundMessage::Collect { version });
        let mut failed = false;
        for (id, reply) in replies {
            let outcome = match reply {
                Ok(RoundMessage::Batch(batch)) => self.leader.accept(batch).map_err(|e| e.to_string()),
                Ok(other) => Err(format!("unexpected reply {other:?}")),
                Err(why) => Err(why),
            };
            if let Err(why) = outcome {
                self.drop_worker(id, &why);
                failed = true;
            }
        }
        if failed {
            self.leader.retry_round();
            return Ok(None);
        }
        Ok(Some(self.leader.aggregate()?))
    }
}

impl RolloutSource for ThreadedCollector {
    fn collect(&mut self, snapshot: &PolicySnapshot) -> Result<RolloutBatch, PpoError> {
        self.broadcast(snapshot)?;
        loop {
            self.check_quorum()?;
            if let Some(batch) = self.round(snapshot.version())? {
                return Ok(batch);
            }
        }
    }
}

impl Drop for ThreadedCollector {
    fn drop(&mut self) {
        for link in &self.links {
            let _ = link.tx.send(wire::encode(&RoundMessage::Shutdown, link.worker_id));
        }
        for link in self.links.drain(..).chain(self.retired.drain(..)) {
            drop(link.tx);
            let _ = link.handle.join();
        }
    }
}
