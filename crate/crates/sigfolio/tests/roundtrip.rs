use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigfolio::checkpoint;
use sigfolio::config::RunConfig;
use sigfolio::csvio::{read_prices, read_signals, write_prices, write_signals};
use sigfolio::wire;
use sigfolio_core::net::{init_parameters, NetConfig};
use sigfolio_core::orchestrator::{RoundMessage, WorkerBatch};
use sigfolio_core::ppo::{EpisodeStat, Fragment, RolloutStep};
use sigfolio_core::synth::{synth_experts, synth_market, ExpertParams, MarketParams};
use sigfolio_core::{DoneReason, PortfolioVector};

fn any_bits<R: Rng>(rng: &mut R) -> f64 {
    f64::from_bits(rng.random())
}

fn random_fragment<R: Rng>(rng: &mut R, worker_id: u32, index: u32) -> Fragment {
    let steps = (0..rng.random_range(0..6))
        .map(|_| RolloutStep {
            day_index: rng.random_range(0..10_000),
            prev_weights: PortfolioVector::uniform(rng.random_range(1..4)),
            action: (0..rng.random_range(1..5)).map(|_| any_bits(rng)).collect(),
            log_prob: any_bits(rng),
            reward: any_bits(rng),
            value: any_bits(rng),
            done: rng.random(),
        })
        .collect();
    let reasons = [DoneReason::DataExhausted, DoneReason::MinProfitBreached, DoneReason::DrawdownBreached];
    let completed = (0..rng.random_range(0..3))
        .map(|_| EpisodeStat { total_reward: any_bits(rng), length: rng.random_range(1..500), reason: reasons[rng.random_range(0..3)] })
        .collect();
    Fragment { worker_id, index, version: rng.random(), steps, bootstrap_value: any_bits(rng), completed }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_frames_survive_any_bit_pattern(seed in any::<u64>(), count in 0u32..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let worker_id = rng.random_range(0..8);
        let fragments = (0..count).map(|i| random_fragment(&mut rng, worker_id, i)).collect();
        let bytes = wire::encode(&RoundMessage::Batch(WorkerBatch { worker_id, version: rng.random(), fragments }), worker_id);
        let (decoded, from) = wire::decode(&bytes).unwrap();
        prop_assert_eq!(from, worker_id);
        prop_assert_eq!(wire::encode(&decoded, from), bytes);
    }

    #[test]
    fn checkpoints_survive_any_bit_pattern(seed in any::<u64>(), version in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = NetConfig { conv2_channels: 2, hidden: 3, ..NetConfig::new(2, 5, 12) };
        let base = init_parameters(cfg, seed).unwrap();
        let params = base.params().iter().map(|_| any_bits(&mut rng)).collect();
        let snap = sigfolio_core::PolicySnapshot::new(cfg, version, params).unwrap();
        let bytes = checkpoint::encode(&snap);
        let back = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(back.version(), version);
        prop_assert_eq!(checkpoint::encode(&back), bytes);
    }

    #[test]
    fn market_files_round_trip(seed in any::<u64>(), assets in 1usize..4, days in 30usize..60) {
        let dir = tempfile::tempdir().unwrap();
        let panel = synth_market(assets, days, seed, &MarketParams::uniform(0.001, 0.03)).unwrap();
        let signals = synth_experts(&panel, 2, 0.5, seed, &ExpertParams { signals_per_expert: 8, min_horizon: 2, max_horizon: 10, ..ExpertParams::default() }).unwrap();
        write_prices(&dir.path().join("p.csv"), &panel).unwrap();
        write_signals(&dir.path().join("s.csv"), &signals).unwrap();
        prop_assert_eq!(read_prices(&dir.path().join("p.csv")).unwrap(), panel);
        prop_assert_eq!(read_signals(&dir.path().join("s.csv")).unwrap(), signals);
    }

    #[test]
    fn config_text_round_trips(seed in any::<u64>(), lr in 1e-6..1e-1f64, window in 10usize..120, workers in 0usize..8) {
        let mut cfg = RunConfig { seed, ..RunConfig::default() };
        cfg.ppo.learning_rate = lr;
        cfg.window.window = window;
        cfg.train.workers = workers;
        prop_assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
