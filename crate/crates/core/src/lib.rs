//! Portfolio management with expert advice aggregation and deep reinforcement
//! learning.
//!
//! This crate holds the pure, allocation-only part of the system: the
//! fee-aware portfolio arithmetic, price/signal data structures and their
//! repair, observation tensors, the trading environment, a convolutional
//! policy/value network with exact backpropagation, PPO training and the
//! leader/worker rollout protocol. Everything that touches files, threads or
//! the command line lives in the `sigfolio` crate.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod day;
pub mod env;
pub mod evaluate;
pub mod math;
pub mod net;
pub mod observation;
pub mod orchestrator;
pub mod panel;
pub mod ppo;
pub mod signals;
pub mod stats;
pub mod synth;

pub use day::Day;
pub use env::{DoneReason, EnvConfig, EpisodeTrace, PortfolioState, TradingEnv};
pub use math::{CommissionSchedule, PortfolioVector, PriceVector, RelativePriceVector, StepResult};
pub use net::{NetConfig, PolicySnapshot};
pub use observation::{Observation, SignalMode, WindowConfig};
pub use panel::{Bar, Ohlcv, PricePanel, SparsePanel};
pub use ppo::{PpoConfig, RolloutBatch};
pub use signals::{ExpertId, SignalRecord, SignalTrack};

/// Shared, read-only market history used by environments and evaluators.
#[derive(Debug, Clone)]
pub struct MarketData {
    pub panel: PricePanel,
    pub tracks: SignalTrack,
}

impl MarketData {
    pub fn new(panel: PricePanel, tracks: SignalTrack) -> Self {
        Self { panel, tracks }
    }

    /// Market with no expert signals at all.
    pub fn prices_only(panel: PricePanel) -> Self {
        let tracks = SignalTrack::empty(&panel);
        Self { panel, tracks }
    }
}
