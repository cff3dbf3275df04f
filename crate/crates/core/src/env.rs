//! Episodic daily trading simulator.
//!
//! The agent observes the window ending on the current day and picks target
//! weights. The step then moves to the next day: holdings drift with the
//! day-to-day price relatives, the portfolio is rebalanced to the target at
//! that day's close, and the reward is the period's log return. Trades
//! therefore execute one day after the decision.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use thiserror::Error;

use crate::day::Day;
use crate::math::{self, CommissionSchedule, MathError, PortfolioVector, StepResult};
use crate::observation::{build_observation, Observation, ObservationError, WindowConfig};
use crate::MarketData;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(&'static str),
    #[error("start day {day} outside the valid range {first}..={last}")]
    StartOutOfRange { day: usize, first: usize, last: usize },
    #[error("no valid start day: data range too short for the window")]
    NoValidStart,
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("step called before reset")]
    NotReset,
    #[error("action has {found} entries, expected {expected}")]
    ActionDimension { expected: usize, found: usize },
    #[error("action contains a non-finite value")]
    NonFiniteAction,
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DoneReason {
    #[default]
    None,
    /// No next trading day in the data range.
    DataExhausted,
    /// Value fell below the episode start by more than `min_profit`.
    MinProfitBreached,
    /// Value fell below the episode maximum by more than `max_drawdown`.
    DrawdownBreached,
}

impl DoneReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DoneReason::None => "none",
            DoneReason::DataExhausted => "data_exhausted",
            DoneReason::MinProfitBreached => "min_profit_breached",
            DoneReason::DrawdownBreached => "drawdown_breached",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub fees: CommissionSchedule,
    pub window: WindowConfig,
    /// Loss threshold against the episode start, e.g. -0.1.
    pub min_profit: f64,
    /// Loss threshold against the episode maximum, e.g. -0.2.
    pub max_drawdown: f64,
    pub initial_value: f64,
    /// When false, episodes end only when the data runs out.
    pub termination_rules_enabled: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            fees: CommissionSchedule::default(),
            window: WindowConfig::default(),
            min_profit: -0.1,
            max_drawdown: -0.2,
            initial_value: 1.0,
            termination_rules_enabled: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        // zero is allowed for the strict evaluation mode
        if !(self.min_profit <= 0.0 && self.min_profit > -1.0) {
            return Err(EnvError::InvalidConfig("min_profit must lie in (-1, 0]"));
        }
        if !(self.max_drawdown < 0.0 && self.max_drawdown > -1.0) {
            return Err(EnvError::InvalidConfig("max_drawdown must lie in (-1, 0)"));
        }
        if !(self.initial_value.is_finite() && self.initial_value > 0.0) {
            return Err(EnvError::InvalidConfig("initial value must be positive"));
        }
        self.window.validate()?;
        Ok(())
    }

    /// Evaluation settings: rules off.
    pub fn for_evaluation(mut self) -> Self {
        self.termination_rules_enabled = false;
        self
    }

    /// Evaluation settings with rules on and any loss against the start
    /// ending the episode.
    pub fn zero_threshold(mut self) -> Self {
        self.termination_rules_enabled = true;
        self.min_profit = 0.0;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    pub value: f64,
    /// Weights held after the latest rebalance.
    pub weights: PortfolioVector,
    pub episode_start_value: f64,
    pub episode_max_value: f64,
    pub day_index: usize,
    pub done: bool,
    pub done_reason: DoneReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Day on which the rebalance executed.
    pub day: Day,
    pub day_index: usize,
    pub weights: PortfolioVector,
    pub mu: f64,
    pub rate_of_return: f64,
    pub log_return: f64,
    pub value: f64,
}

/// Step-by-step record of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub initial_value: f64,
    pub start_day_index: usize,
    pub rows: Vec<TraceRow>,
    pub reason: DoneReason,
}

impl EpisodeTrace {
    pub fn final_value(&self) -> f64 {
        self.rows.last().map_or(self.initial_value, |r| r.value)
    }

    pub fn total_log_return(&self) -> f64 {
        self.rows.iter().map(|r| r.log_return).sum()
    }

    /// `p_f / p_0 - 1`.
    pub fn gain(&self) -> f64 {
        self.final_value() / self.initial_value - 1.0
    }
}

/// How to pick the first day of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartDay {
    Fixed(usize),
    Random,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: Observation,
    pub reward: f64,
    pub state: PortfolioState,
    pub step: StepResult,
}

/// Softmax of the raw action scores: a valid portfolio vector.
pub fn action_to_weights(raw: &[f64]) -> Result<PortfolioVector, EnvError> {
    if raw.is_empty() {
        return Err(EnvError::ActionDimension { expected: 1, found: 0 });
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(EnvError::NonFiniteAction);
    }
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|v| libm::exp(v - max)).collect();
    let sum: f64 = exps.iter().sum();
    Ok(PortfolioVector::new(exps.into_iter().map(|e| e / sum).collect())?)
}

pub struct TradingEnv {
    data: Arc<MarketData>,
    cfg: EnvConfig,
    days: Range<usize>,
    state: Option<PortfolioState>,
    trace: Option<EpisodeTrace>,
}

impl TradingEnv {
    pub fn new(data: Arc<MarketData>, cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let days = 0..data.panel.days();
        let env = Self { data, cfg, days, state: None, trace: None };
        env.start_range()?;
        Ok(env)
    }

    /// Restricts episodes to the trading-day indices in `days`. Observations
    /// may still look back before `days.start`.
    pub fn with_day_range(mut self, days: Range<usize>) -> Result<Self, EnvError> {
        let end = days.end.min(self.data.panel.days());
        self.days = days.start..end;
        self.start_range()?;
        Ok(self)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn data(&self) -> &Arc<MarketData> {
        &self.data
    }

    pub fn assets(&self) -> usize {
        self.data.panel.assets()
    }

    /// Valid first days: enough history for the window and at least one
    /// following day.
    pub fn start_range(&self) -> Result<Range<usize>, EnvError> {
        let first = self.days.start.max(self.cfg.window.window - 1);
        let last_exclusive = self.days.end.saturating_sub(1);
        if first >= last_exclusive {
            return Err(EnvError::NoValidStart);
        }
        Ok(first..last_exclusive)
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, start: StartDay, rng: &mut R) -> Result<(Observation, PortfolioState), EnvError> {
        let range = self.start_range()?;
        let day = match start {
            StartDay::Fixed(day) => day,
            StartDay::Random => rng.random_range(range.clone()),
        };
        if !range.contains(&day) {
            return Err(EnvError::StartOutOfRange { day, first: range.start, last: range.end - 1 });
        }
        let p0 = self.cfg.initial_value;
        let state = PortfolioState {
            value: p0,
            weights: PortfolioVector::all_cash(self.assets()),
            episode_start_value: p0,
            episode_max_value: p0,
            day_index: day,
            done: false,
            done_reason: DoneReason::None,
        };
        let obs = build_observation(&self.data, day, &state.weights, &self.cfg.window)?;
        self.trace = Some(EpisodeTrace { initial_value: p0, start_day_index: day, rows: Vec::new(), reason: DoneReason::None });
        self.state = Some(state.clone());
        Ok((obs, state))
    }

    /// Maps raw scores through softmax and steps.
    pub fn step(&mut self, raw: &[f64]) -> Result<Transition, EnvError> {
        if raw.len() != self.assets() + 1 {
            return Err(EnvError::ActionDimension { expected: self.assets() + 1, found: raw.len() });
        }
        let target = action_to_weights(raw)?;
        self.step_to(&target)
    }

    /// Steps with explicit target weights.
    pub fn step_to(&mut self, target: &PortfolioVector) -> Result<Transition, EnvError> {
        let state = self.state.as_mut().ok_or(EnvError::NotReset)?;
        if state.done {
            return Err(EnvError::EpisodeDone);
        }
        if target.len() != state.weights.len() {
            return Err(EnvError::ActionDimension { expected: state.weights.len(), found: target.len() });
        }
        let t = state.day_index;
        let y = self.data.panel.relative_prices(t);
        let step = math::step_portfolio(state.value, &state.weights, target, &y, &self.cfg.fees)?;

        state.value = step.new_value;
        state.weights = target.clone();
        state.day_index = t + 1;
        state.episode_max_value = state.episode_max_value.max(state.value);

        let rules = self.cfg.termination_rules_enabled;
        state.done_reason = if state.day_index + 1 >= self.days.end {
            DoneReason::DataExhausted
        } else if rules && state.value / state.episode_start_value - 1.0 < self.cfg.min_profit {
            DoneReason::MinProfitBreached
        } else if rules && state.value / state.episode_max_value - 1.0 < self.cfg.max_drawdown {
            DoneReason::DrawdownBreached
        } else {
            DoneReason::None
        };
        state.done = state.done_reason != DoneReason::None;

        let trace = self.trace.as_mut().expect("trace exists after reset");
        trace.rows.push(TraceRow {
            day: self.data.panel.calendar()[state.day_index],
            day_index: state.day_index,
            weights: target.clone(),
            mu: step.mu,
            rate_of_return: step.rate_of_return,
            log_return: step.log_return,
            value: state.value,
        });
        trace.reason = state.done_reason;

        let state = state.clone();
        let observation = build_observation(&self.data, state.day_index, &state.weights, &self.cfg.window)?;
        Ok(Transition { observation, reward: step.log_return, state, step })
    }

    pub fn state(&self) -> Option<&PortfolioState> {
        self.state.as_ref()
    }

    pub fn trace(&self) -> Option<&EpisodeTrace> {
        self.trace.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Ohlcv, PricePanel};
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_asset(closes: &[f64]) -> Arc<MarketData> {
        let bars = closes
            .iter()
            .map(|&c| Ohlcv { open: c, high: c, low: c, close: c, volume: 1.0 })
            .collect();
        let panel = PricePanel::new(vec!["A".into()], (0..closes.len() as i32).map(Day).collect(), bars).unwrap();
        Arc::new(MarketData::prices_only(panel))
    }

    fn cfg(window: usize) -> EnvConfig {
        EnvConfig {
            fees: CommissionSchedule::free(),
            window: WindowConfig { window, ..WindowConfig::default() },
            ..EnvConfig::default()
        }
    }

    #[test]
    fn softmax_mapping() {
        let w = action_to_weights(&[0.3, 0.3, 0.3]).unwrap();
        assert!(w.as_slice().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let w = action_to_weights(&[10.0, 0.0, 0.0]).unwrap();
        let expected = libm::exp(10.0) / (libm::exp(10.0) + 2.0);
        assert!((w.as_slice()[0] - expected).abs() < 1e-15);
        assert!(w.as_slice()[0] > 0.9999);
        let shifted = action_to_weights(&[10.0 + 7.5, 7.5, 7.5]).unwrap();
        assert_eq!(w, shifted);
        assert!(matches!(action_to_weights(&[f64::NAN, 0.0]), Err(EnvError::NonFiniteAction)));
    }

    #[test]
    fn reset_bounds_and_determinism() {
        let data = single_asset(&[1.0; 30]);
        let mut env = TradingEnv::new(data, cfg(10)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (obs, state) = env.reset(StartDay::Fixed(9), &mut rng).unwrap();
        assert_eq!(obs.day_index, 9);
        assert_eq!(state.weights.as_slice(), &[1.0, 0.0]);
        assert!(matches!(env.reset(StartDay::Fixed(8), &mut rng), Err(EnvError::StartOutOfRange { .. })));
        assert!(matches!(env.reset(StartDay::Fixed(29), &mut rng), Err(EnvError::StartOutOfRange { .. })));
        assert!(matches!(env.reset(StartDay::Fixed(40), &mut rng), Err(EnvError::StartOutOfRange { .. })));
        let a = env.reset(StartDay::Random, &mut ChaCha8Rng::seed_from_u64(5)).unwrap().1.day_index;
        let b = env.reset(StartDay::Random, &mut ChaCha8Rng::seed_from_u64(5)).unwrap().1.day_index;
        assert_eq!(a, b);
    }

    #[test]
    fn cash_never_moves_and_runs_to_end() {
        let closes: Vec<f64> = (0..40).map(|i| 10.0 + (i % 7) as f64).collect();
        let mut env = TradingEnv::new(single_asset(&closes), cfg(10)).unwrap();
        env.reset(StartDay::Fixed(9), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut steps = 0;
        loop {
            let tr = env.step(&[50.0, -50.0]).unwrap();
            steps += 1;
            assert!(tr.reward.abs() < 1e-20);
            if tr.state.done {
                assert_eq!(tr.state.done_reason, DoneReason::DataExhausted);
                assert_eq!(tr.state.day_index, 39);
                break;
            }
        }
        assert_eq!(steps, 30);
        assert!(matches!(env.step(&[0.0, 0.0]), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn min_profit_rule() {
        // all-in from day 10 onward; value follows closes from day 11
        let mut closes = vec![1.0; 11];
        closes.extend([1.0, 0.95, 0.89, 0.85, 0.8, 0.8]);
        let mut env = TradingEnv::new(single_asset(&closes), cfg(10)).unwrap();
        env.reset(StartDay::Fixed(10), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let all_in = PortfolioVector::new(vec![0.0, 1.0]).unwrap();
        let mut last = None;
        for _ in 0..4 {
            let tr = env.step_to(&all_in).unwrap();
            last = Some(tr.state.clone());
            if tr.state.done {
                break;
            }
        }
        let state = last.unwrap();
        assert_eq!(state.done_reason, DoneReason::MinProfitBreached);
        assert!((state.value - 0.89).abs() < 1e-12);
    }

    #[test]
    fn drawdown_rule() {
        let mut closes = vec![1.0; 11];
        closes.extend([1.0, 1.5, 1.3, 1.199, 1.1, 1.0]);
        let mut env = TradingEnv::new(single_asset(&closes), cfg(10)).unwrap();
        env.reset(StartDay::Fixed(10), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let all_in = PortfolioVector::new(vec![0.0, 1.0]).unwrap();
        let mut states = Vec::new();
        loop {
            let tr = env.step_to(&all_in).unwrap();
            states.push(tr.state.clone());
            if tr.state.done {
                break;
            }
        }
        let last = states.last().unwrap();
        assert_eq!(last.done_reason, DoneReason::DrawdownBreached);
        assert_eq!(last.day_index, 14);
        assert_eq!(last.episode_max_value, 1.5);
    }

    #[test]
    fn rules_disabled_run_to_data_end() {
        let mut closes = vec![1.0; 11];
        closes.extend([1.0, 0.5, 0.4, 0.3]);
        let mut env = TradingEnv::new(single_asset(&closes), cfg(10).for_evaluation()).unwrap();
        env.reset(StartDay::Fixed(10), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let all_in = PortfolioVector::new(vec![0.0, 1.0]).unwrap();
        let mut reason = DoneReason::None;
        while reason == DoneReason::None {
            reason = env.step_to(&all_in).unwrap().state.done_reason;
        }
        assert_eq!(reason, DoneReason::DataExhausted);
    }

    #[test]
    fn zero_threshold_mode_stops_on_any_loss() {
        let mut closes = vec![1.0; 11];
        closes.extend([1.0, 0.999, 0.5, 0.5]);
        let mut env = TradingEnv::new(single_asset(&closes), cfg(10).zero_threshold()).unwrap();
        env.reset(StartDay::Fixed(10), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let all_in = PortfolioVector::new(vec![0.0, 1.0]).unwrap();
        env.step_to(&all_in).unwrap();
        let tr = env.step_to(&all_in).unwrap();
        assert_eq!(tr.state.done_reason, DoneReason::MinProfitBreached);
    }

    #[test]
    fn config_validation() {
        let data = single_asset(&[1.0; 30]);
        let mut bad = cfg(10);
        bad.max_drawdown = 0.1;
        assert!(TradingEnv::new(data.clone(), bad).is_err());
        let mut bad = cfg(10);
        bad.initial_value = 0.0;
        assert!(TradingEnv::new(data.clone(), bad).is_err());
        assert!(matches!(TradingEnv::new(data, cfg(30)), Err(EnvError::NoValidStart)));
    }

    #[test]
    fn trace_replays_through_step_portfolio() {
        let closes: Vec<f64> = (0..30).map(|i| 10.0 * (1.0 + 0.05 * libm::sin(i as f64))).collect();
        let mut c = cfg(10);
        c.fees = CommissionSchedule::default();
        let mut env = TradingEnv::new(single_asset(&closes), c).unwrap();
        env.reset(StartDay::Fixed(12), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for k in 0..10 {
            env.step(&[(k as f64).sin(), (k as f64).cos()]).unwrap();
        }
        let trace = env.trace().unwrap().clone();
        let mut w = PortfolioVector::all_cash(1);
        let mut p = trace.initial_value;
        for row in &trace.rows {
            let y = env.data().panel.relative_prices(row.day_index - 1);
            let s = math::step_portfolio(p, &w, &row.weights, &y, &c.fees).unwrap();
            assert!((s.new_value - row.value).abs() <= 1e-9 * row.value);
            p = s.new_value;
            w = row.weights.clone();
        }
    }
}
