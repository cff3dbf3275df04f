mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigfolio_core::net::{backward, forward, init_parameters, NetConfig};
use sigfolio_core::observation::build_observation;
use sigfolio_core::ppo::{ppo_loss, ActionDistribution, PpoConfig, TrainSample};
use sigfolio_core::signals::{build_signal_tracks, OverlapScope};
use sigfolio_core::synth::{synth_experts, synth_market, ExpertParams, MarketParams};
use sigfolio_core::{MarketData, Observation, PolicySnapshot, PortfolioVector, WindowConfig};

use oracles::finite_difference_errors;

const WINDOW: usize = 12;

fn reduced_net(seed: u64) -> (MarketData, PolicySnapshot) {
    let panel = synth_market(2, 60, seed, &MarketParams::default()).unwrap();
    let recs = synth_experts(&panel, 1, 0.8, seed, &ExpertParams { signals_per_expert: 20, ..Default::default() }).unwrap();
    let tracks = build_signal_tracks(&recs, &panel, OverlapScope::SameExpert).unwrap();
    let window = WindowConfig { window: WINDOW, ..Default::default() };
    let cfg = NetConfig { conv1_channels: 2, conv2_channels: 3, hidden: 8, ..NetConfig::new(2, window.channels(1), WINDOW) };
    // larger weights than the default init so every layer is well away
    // from linear
    let snap = init_parameters(cfg, seed).unwrap();
    let params = snap.params().iter().map(|p| p * 3.0).collect();
    (MarketData::new(panel, tracks), PolicySnapshot::new(cfg, 0, params).unwrap())
}

fn observations(data: &MarketData, rng: &mut ChaCha8Rng, count: usize) -> Vec<Observation> {
    let window = WindowConfig { window: WINDOW, ..Default::default() };
    (0..count)
        .map(|_| {
            let w = oracles::random_weights(rng, 3);
            build_observation(data, rng.random_range(WINDOW..60), &PortfolioVector::new(w).unwrap(), &window).unwrap()
        })
        .collect()
}

#[test]
fn network_gradients_match_central_differences() {
    for seed in 0..3 {
        let (data, snap) = reduced_net(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = observations(&data, &mut rng, 1).remove(0);
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = rng.random_range(-1.0..1.0);
        let loss = |s: &PolicySnapshot| {
            let f = forward(s, &obs).unwrap();
            f.scores.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>() + b * f.value
        };
        let f = forward(&snap, &obs).unwrap();
        let g = backward(&snap, &f.trace, &a, b).unwrap();
        for (group, err) in finite_difference_errors(&snap, g.as_slice(), loss, 1e-5, 1e-6) {
            assert!(err < 1e-4, "seed {seed} group {group}: relative error {err:e}");
        }
    }
}

#[test]
fn ppo_loss_gradient_matches_central_differences() {
    let (data, snap) = reduced_net(7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let obs = observations(&data, &mut rng, 6);
    let cfg = PpoConfig { action_std: 0.3, entropy_coeff: 0.01, ..Default::default() };
    let actions: Vec<Vec<f64>> = obs
        .iter()
        .map(|o| ActionDistribution::new(forward(&snap, o).unwrap().scores, cfg.action_std).sample(&mut rng))
        .collect();
    // old log-probs a little off the current ones keep every ratio inside
    // the clip range, away from the kink
    let olds: Vec<f64> = obs
        .iter()
        .zip(&actions)
        .map(|(o, a)| ActionDistribution::new(forward(&snap, o).unwrap().scores, cfg.action_std).log_prob(a) + rng.random_range(-0.1..0.1))
        .collect();
    let samples: Vec<TrainSample<'_>> = (0..obs.len())
        .map(|i| TrainSample {
            observation: &obs[i],
            action: &actions[i],
            old_log_prob: olds[i],
            advantage: rng.random_range(-2.0..2.0),
            target: rng.random_range(-0.5..0.5),
        })
        .collect();
    let out = ppo_loss(&snap, &samples, &cfg, 0).unwrap();
    assert_eq!(out.clip_fraction, 0.0);
    let loss = |s: &PolicySnapshot| ppo_loss(s, &samples, &cfg, 0).unwrap().loss;
    for (group, err) in finite_difference_errors(&snap, out.gradients.as_slice(), loss, 1e-5, 1e-6) {
        assert!(err < 1e-4, "group {group}: relative error {err:e}");
    }
}
