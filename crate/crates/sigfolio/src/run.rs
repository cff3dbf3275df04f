//! Run driver behind the `train` and `evaluate` commands.
//!
//! Output directory layout:
//!
//! ```text
//! config.toml                resolved configuration
//! channels.txt               observation channel names, one per line
//! metrics.csv                one row per training iteration
//! checkpoints/iter-NNNNNN.bin
//! checkpoints/final.bin
//! evaluation/report.json
//! evaluation/trace.csv
//! ```

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use sigfolio_core::evaluate::{expert_profits, rolling_evaluation, EvaluationReport};
use sigfolio_core::net::{init_parameters, PolicySnapshot};
use sigfolio_core::observation::channel_names;
use sigfolio_core::orchestrator::{LocalCollector, RolloutWorker, WorkerSpec};
use sigfolio_core::ppo::{IterationMetrics, RolloutSource, Trainer};
use sigfolio_core::signals::build_signal_tracks;
use sigfolio_core::{EpisodeTrace, MarketData};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::csvio::{read_prices, read_signals, write_text};
use crate::report::{write_metrics, write_trace, EvaluationSummary};
use crate::transport::{Fault, ThreadedCollector};

pub fn load_market(cfg: &RunConfig) -> Result<Arc<MarketData>> {
    let panel = read_prices(&cfg.data.prices)?;
    let data = match &cfg.data.signals {
        Some(path) => {
            let records = read_signals(path)?;
            let tracks = build_signal_tracks(&records, &panel, cfg.overlap_scope())
                .with_context(|| format!("{}: signals do not fit the price panel", path.display()))?;
            MarketData::new(panel, tracks)
        }
        None => MarketData::prices_only(panel),
    };
    Ok(Arc::new(data))
}

/// Day ranges for training and testing. Training steps never land on a test
/// day: the last training step moves into day `train.end - 1`, and the first
/// test step moves out of day `test.start`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    pub fn new(days: usize, test_days: usize, window: usize) -> Result<Self> {
        if test_days >= days {
            bail!("test_days ({test_days}) leaves no training data in {days} days");
        }
        let cut = days - test_days;
        // one full window plus at least one step
        if cut < window + 1 {
            bail!("training range of {cut} days is shorter than window + 1 = {}", window + 1);
        }
        Ok(Self { train: 0..cut, test: cut..days })
    }
}

pub fn split(cfg: &RunConfig, data: &MarketData) -> Result<Split> {
    Split::new(data.panel.days(), cfg.data.test_days, cfg.window.window)
}

pub fn initial_snapshot(cfg: &RunConfig, data: &MarketData) -> Result<PolicySnapshot> {
    let net = cfg.net_config(data.panel.assets(), data.tracks.experts().len());
    Ok(init_parameters(net, cfg.seed)?)
}

/// Rollout workers for `workers` (at least one) over the training days.
pub fn rollout_workers(cfg: &RunConfig, data: &Arc<MarketData>, train: Range<usize>, workers: usize) -> Result<Vec<RolloutWorker>> {
    let ppo = cfg.ppo_config();
    WorkerSpec::split(cfg.seed, workers.max(1), ppo.fragments_per_batch())?
        .into_iter()
        .map(|spec| {
            RolloutWorker::new(spec, data.clone(), cfg.env_config(), train.clone(), ppo.rollout_fragment_length, ppo.action_std)
                .map_err(Into::into)
        })
        .collect()
}

/// In-process collection when `workers == 0`, worker threads otherwise.
pub fn collector(cfg: &RunConfig, data: &Arc<MarketData>, train: Range<usize>, workers: usize) -> Result<Box<dyn RolloutSource>> {
    let pool = rollout_workers(cfg, data, train, workers)?;
    Ok(if workers == 0 {
        Box::new(LocalCollector::new(pool)?)
    } else {
        let pool = pool.into_iter().map(|w| (w, Fault::None)).collect();
        Box::new(ThreadedCollector::spawn(pool, cfg.transport())?)
    })
}

pub fn checkpoint_path(out: &Path, iteration: u64) -> PathBuf {
    out.join("checkpoints").join(format!("iter-{iteration:06}.bin"))
}

pub fn final_checkpoint(out: &Path) -> PathBuf {
    out.join("checkpoints").join("final.bin")
}

pub struct TrainOutcome {
    pub metrics: Vec<IterationMetrics>,
    pub snapshot: PolicySnapshot,
}

/// Trains from a fresh network and writes every artifact of the run.
pub fn train(cfg: &RunConfig, data: &Arc<MarketData>, workers: usize) -> Result<TrainOutcome> {
    let out = &cfg.output_dir;
    let split = split(cfg, data)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let names = channel_names(&cfg.window_config(), data.tracks.experts());
    write_text(&out.join("channels.txt"), &(names.join("\n") + "\n"))?;

    let mut source = collector(cfg, data, split.train.clone(), workers)?;
    let mut trainer = Trainer::new(cfg.ppo_config(), data.clone(), cfg.window_config(), initial_snapshot(cfg, data)?)?;
    log::info!(
        "training on days {:?} with {} parameters, {}",
        split.train,
        trainer.snapshot().params().len(),
        if workers == 0 { String::from("in-process") } else { format!("{workers} worker threads") }
    );

    let metrics_path = out.join("metrics.csv");
    let mut metrics = Vec::new();
    while trainer.iteration() < cfg.ppo.max_iterations {
        let m = trainer.iterate(source.as_mut())?;
        log::info!("iteration {} mean reward {:.5} policy loss {:.5}", m.iteration, m.mean_reward, m.policy_loss);
        metrics.push(m);
        let every = cfg.train.checkpoint_every;
        if every > 0 && m.iteration % every == 0 {
            checkpoint::save(&checkpoint_path(out, m.iteration), trainer.snapshot())?;
            write_metrics(&metrics_path, &metrics)?;
        }
    }
    write_metrics(&metrics_path, &metrics)?;
    checkpoint::save(&final_checkpoint(out), trainer.snapshot())?;
    Ok(TrainOutcome { metrics, snapshot: trainer.snapshot().clone() })
}

/// Evaluation day range: the test split unless overridden. Warns when it
/// reaches into the training days.
pub fn evaluation_range(cfg: &RunConfig, data: &MarketData, from: Option<usize>, to: Option<usize>) -> Result<Range<usize>> {
    let split = split(cfg, data)?;
    let range = from.unwrap_or(split.test.start)..to.unwrap_or(split.test.end).min(data.panel.days());
    if range.start + 1 < split.train.end {
        log::warn!(
            "evaluation days {:?} overlap the training days {:?}; results are in-sample",
            range,
            split.train
        );
    }
    Ok(range)
}

pub struct EvaluationOutcome {
    pub report: EvaluationReport,
    pub traces: Vec<EpisodeTrace>,
    pub summary: EvaluationSummary,
}

/// Greedy rolling evaluation of `snapshot`. Reads nothing but the inputs.
pub fn evaluate_snapshot(cfg: &RunConfig, data: &Arc<MarketData>, snapshot: &PolicySnapshot, range: Range<usize>) -> Result<EvaluationOutcome> {
    let traces = rolling_evaluation(snapshot, data, cfg.eval_env_config(), range.clone(), cfg.eval_windows())?;
    let report = EvaluationReport::new(&traces, expert_profits(&data.tracks, &data.panel));
    let summary = EvaluationSummary::new(&report, &traces, &data.panel, range, snapshot.version());
    Ok(EvaluationOutcome { report, traces, summary })
}

/// Loads a checkpoint, evaluates it and writes `report.json` and `trace.csv`
/// into `out`.
pub fn evaluate(cfg: &RunConfig, data: &Arc<MarketData>, ckpt: &Path, range: Range<usize>, out: &Path) -> Result<EvaluationOutcome> {
    let expected = cfg.net_config(data.panel.assets(), data.tracks.experts().len());
    let snapshot = checkpoint::load_for(ckpt, &expected)?;
    let outcome = evaluate_snapshot(cfg, data, &snapshot, range)?;
    outcome.summary.save(&out.join("report.json"))?;
    write_trace(&out.join("trace.csv"), &outcome.traces, &data.panel)?;
    Ok(outcome)
}
