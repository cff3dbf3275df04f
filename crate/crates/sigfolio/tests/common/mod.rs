//! Small synthetic runs shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;

use sigfolio::config::{DataSection, EnvSection, NetSection, PpoSection, RunConfig, TrainSection, WindowSection};
use sigfolio::csvio::{write_prices, write_signals};
use sigfolio_core::synth::{synth_experts, synth_market, ExpertParams, MarketParams};

/// Writes a 3-asset, 140-day market with two experts into `dir` and returns
/// a configuration that trains a small network on it for `iterations`.
pub fn small_run(dir: &Path, iterations: u64) -> RunConfig {
    let params = MarketParams { drifts: vec![0.004, 0.0, -0.002], vols: vec![0.01, 0.02, 0.02], ..MarketParams::default() };
    let panel = synth_market(3, 140, 5, &params).unwrap();
    let signals = synth_experts(&panel, 2, 0.8, 6, &ExpertParams { signals_per_expert: 30, ..ExpertParams::default() }).unwrap();
    let prices = dir.join("prices.csv");
    let signal_file = dir.join("signals.csv");
    write_prices(&prices, &panel).unwrap();
    write_signals(&signal_file, &signals).unwrap();
    RunConfig {
        seed: 21,
        output_dir: dir.join("run"),
        data: DataSection { prices, signals: Some(signal_file), test_days: 40, ..Default::default() },
        env: EnvSection::default(),
        window: WindowSection { window: 16, ..Default::default() },
        net: NetSection { conv2_channels: 3, hidden: 8, ..Default::default() },
        ppo: PpoSection {
            learning_rate: 3e-3,
            train_batch_size: 120,
            sgd_minibatch_size: 40,
            rollout_fragment_length: 20,
            epochs_per_batch: 2,
            max_iterations: iterations,
            ..Default::default()
        },
        train: TrainSection { checkpoint_every: 2, ..Default::default() },
        ..Default::default()
    }
}
