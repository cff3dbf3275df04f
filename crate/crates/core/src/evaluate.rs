//! Greedy backtests over rolling windows and expert baselines.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::ops::Range;

use rand::SeedableRng;

use crate::env::{EnvConfig, EnvError, EpisodeTrace, StartDay, TradingEnv};
use crate::net::{self, NetError, PolicySnapshot};
use crate::panel::PricePanel;
use crate::signals::{ExpertId, SignalTrack};
use crate::MarketData;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("evaluation range {start}..{end} leaves no complete period")]
    EmptyRange { start: usize, end: usize },
    #[error("invalid evaluation windows: {0}")]
    InvalidWindows(&'static str),
}

/// Rolling evaluation periods in trading days.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalWindows {
    pub length: usize,
    pub stride: usize,
}

impl Default for EvalWindows {
    fn default() -> Self {
        Self { length: 120, stride: 20 }
    }
}

/// Runs one episode from `start` using the mean action scores.
pub fn greedy_episode(snapshot: &PolicySnapshot, env: &mut TradingEnv, start: usize) -> Result<EpisodeTrace, EvalError> {
    // the start is fixed, so the rng is never drawn from
    let mut unused = rand_chacha::ChaCha8Rng::from_seed([0; 32]);
    let (mut obs, mut state) = env.reset(StartDay::Fixed(start), &mut unused)?;
    while !state.done {
        let out = net::forward(snapshot, &obs)?;
        let tr = env.step(&out.scores)?;
        obs = tr.observation;
        state = tr.state;
    }
    Ok(env.trace().cloned().expect("trace exists after an episode"))
}

/// Start indices of the rolling periods inside `range`. A range shorter than
/// one period yields a single period covering it.
pub fn period_starts(range: Range<usize>, windows: EvalWindows) -> Result<Vec<usize>, EvalError> {
    if windows.length == 0 || windows.stride == 0 {
        return Err(EvalError::InvalidWindows("length and stride must be at least 1"));
    }
    if range.end < range.start + 2 {
        return Err(EvalError::EmptyRange { start: range.start, end: range.end });
    }
    let last_step_day = range.end - 1;
    if range.start + windows.length > last_step_day {
        return Ok(alloc::vec![range.start]);
    }
    Ok((range.start..=last_step_day - windows.length).step_by(windows.stride).collect())
}

/// Greedy episodes over the rolling periods of `range`. Each period holds at
/// most `windows.length` rebalancing steps.
pub fn rolling_evaluation(
    snapshot: &PolicySnapshot,
    data: &Arc<MarketData>,
    env_cfg: EnvConfig,
    range: Range<usize>,
    windows: EvalWindows,
) -> Result<Vec<EpisodeTrace>, EvalError> {
    let first = range.start.max(env_cfg.window.window - 1);
    let end = range.end.min(data.panel.days());
    if end < first + 2 {
        return Err(EvalError::EmptyRange { start: first, end });
    }
    period_starts(first..end, windows)?
        .into_iter()
        .map(|start| {
            let stop = (start + windows.length + 1).min(end);
            let mut env = TradingEnv::new(data.clone(), env_cfg)?.with_day_range(start..stop)?;
            greedy_episode(snapshot, &mut env, start)
        })
        .collect()
}

/// Average profit of an expert's signals: realized close-to-close return in
/// the called direction. `None` when the expert has no signals.
pub fn expert_baseline(tracks: &SignalTrack, panel: &PricePanel, expert: &ExpertId) -> Option<f64> {
    let e = tracks.expert_index(expert)?;
    let profits: Vec<f64> = tracks
        .signals()
        .iter()
        .filter(|s| s.expert == e)
        .map(|s| {
            let r = s.realized_return(panel);
            if s.expected_return < 0.0 {
                -r
            } else {
                r
            }
        })
        .collect();
    if profits.is_empty() {
        return None;
    }
    Some(profits.iter().sum::<f64>() / profits.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertProfit {
    pub expert: ExpertId,
    pub signals: usize,
    pub average_profit: f64,
}

/// Baselines of every expert with at least one signal, in expert order.
pub fn expert_profits(tracks: &SignalTrack, panel: &PricePanel) -> Vec<ExpertProfit> {
    tracks
        .experts()
        .iter()
        .enumerate()
        .filter_map(|(i, id)| {
            let signals = tracks.signals().iter().filter(|s| s.expert == i).count();
            expert_baseline(tracks, panel, id).map(|average_profit| ExpertProfit { expert: id.clone(), signals, average_profit })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    /// `p_f / p_0 - 1` per period.
    pub period_gains: Vec<f64>,
    pub average_gain: f64,
    pub max_gain: f64,
    pub min_gain: f64,
    pub experts: Vec<ExpertProfit>,
    pub best_expert: Option<ExpertProfit>,
    /// `average_gain / best average profit`, defined when that profit is
    /// positive.
    pub average_gain_ratio: Option<f64>,
    /// `max_gain / best average profit`, same condition.
    pub max_gain_ratio: Option<f64>,
}

impl EvaluationReport {
    pub fn new(traces: &[EpisodeTrace], experts: Vec<ExpertProfit>) -> Self {
        let period_gains: Vec<f64> = traces.iter().map(EpisodeTrace::gain).collect();
        let n = period_gains.len() as f64;
        let (average_gain, max_gain, min_gain) = if period_gains.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            (
                period_gains.iter().sum::<f64>() / n,
                period_gains.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                period_gains.iter().copied().fold(f64::INFINITY, f64::min),
            )
        };
        let best_expert = experts
            .iter()
            .filter(|e| e.average_profit.is_finite())
            .max_by(|a, b| a.average_profit.total_cmp(&b.average_profit))
            .cloned();
        let ratio = |gain: f64| match &best_expert {
            Some(best) if best.average_profit > 0.0 && gain.is_finite() => Some(gain / best.average_profit),
            _ => None,
        };
        Self {
            average_gain_ratio: ratio(average_gain),
            max_gain_ratio: ratio(max_gain),
            period_gains,
            average_gain,
            max_gain,
            min_gain,
            experts,
            best_expert,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::day::Day;
    use crate::math::CommissionSchedule;
    use crate::net::NetConfig;
    use crate::observation::WindowConfig;
    use crate::panel::Ohlcv;
    use crate::signals::{build_signal_tracks, OverlapScope, SignalRecord};
    use crate::synth::{synth_market, MarketParams};
    use alloc::string::String;

    fn flat_panel(closes: &[&[f64]]) -> PricePanel {
        let days = closes[0].len();
        let symbols = (0..closes.len()).map(|i| alloc::format!("S{i}")).collect();
        let calendar = (0..days as i32).map(Day).collect();
        let bars = closes
            .iter()
            .flat_map(|row| row.iter().map(|&c| Ohlcv { open: c, high: c, low: c, close: c, volume: 1.0 }))
            .collect();
        PricePanel::new(symbols, calendar, bars).unwrap()
    }

    fn record(expert: &str, start: i32, close: i32, ret: f64) -> SignalRecord {
        SignalRecord {
            expert_id: ExpertId::from(expert),
            symbol: String::from("S0"),
            start_date: Day(start),
            close_date: Day(close),
            expected_return: ret,
            expected_risk: -1.0,
        }
    }

    #[test]
    fn expert_average_profit() {
        let panel = flat_panel(&[&[100.0, 110.0, 120.0, 108.0, 90.0]]);
        let one = [record("a", 0, 1, 5.0)];
        let tracks = build_signal_tracks(&one, &panel, OverlapScope::SameExpert).unwrap();
        let p = expert_baseline(&tracks, &panel, &ExpertId::from("a")).unwrap();
        assert!((p - 0.10).abs() < 1e-12);

        let panel = flat_panel(&[&[100.0, 110.0, 120.0, 108.0, 90.0], &[50.0, 50.0, 50.0, 50.0, 45.0]]);
        let mut second = record("b", 3, 4, 5.0);
        second.symbol = String::from("S1");
        let two = [record("b", 0, 2, 5.0), second];
        let tracks = build_signal_tracks(&two, &panel, OverlapScope::SameExpert).unwrap();
        let p = expert_baseline(&tracks, &panel, &ExpertId::from("b")).unwrap();
        assert!((p - 0.05).abs() < 1e-12);
        assert_eq!(expert_profits(&tracks, &panel).len(), 1);
        assert!(expert_baseline(&tracks, &panel, &ExpertId::from("zzz")).is_none());
    }

    #[test]
    fn disjoint_signals_average() {
        let panel = flat_panel(&[&[100.0, 110.0, 120.0, 108.0, 90.0]]);
        let two = [record("b", 0, 2, 5.0), record("b", 3, 4, 5.0)];
        let tracks = build_signal_tracks(&two, &panel, OverlapScope::SameExpert).unwrap();
        let p = expert_baseline(&tracks, &panel, &ExpertId::from("b")).unwrap();
        let expected = (0.2 + (90.0 / 108.0 - 1.0)) / 2.0;
        assert!((p - expected).abs() < 1e-12);
        let short = [record("c", 3, 4, -5.0)];
        let tracks = build_signal_tracks(&short, &panel, OverlapScope::SameExpert).unwrap();
        let p = expert_baseline(&tracks, &panel, &ExpertId::from("c")).unwrap();
        assert!((p - (1.0 - 90.0 / 108.0)).abs() < 1e-12);
    }

    #[test]
    fn periods() {
        assert_eq!(period_starts(59..300, EvalWindows::default()).unwrap(), [59, 79, 99, 119, 139, 159, 179]);
        assert_eq!(period_starts(59..100, EvalWindows::default()).unwrap(), [59]);
        assert!(period_starts(59..60, EvalWindows::default()).is_err());
    }

    #[test]
    fn hold_cash_fee_free_gains_nothing() {
        let panel = synth_market(3, 200, 2, &MarketParams::default()).unwrap();
        let data = Arc::new(MarketData::prices_only(panel));
        let env_cfg = EnvConfig {
            fees: CommissionSchedule::free(),
            window: WindowConfig { window: 20, ..Default::default() },
            ..Default::default()
        }
        .for_evaluation();
        let cfg = NetConfig::new(3, 5, 20);
        let mut params = alloc::vec![0.0; cfg.param_count()];
        let bias = cfg.layout().into_iter().find(|g| g.name == "policy.bias").unwrap();
        params[bias.offset] = 50.0;
        let snap = PolicySnapshot::new(cfg, 0, params).unwrap();
        let traces = rolling_evaluation(&snap, &data, env_cfg, 100..200, EvalWindows { length: 30, stride: 30 }).unwrap();
        assert_eq!(traces.len(), 3);
        assert!(traces.iter().all(|t| t.rows.len() == 30));
        let report = EvaluationReport::new(&traces, Vec::new());
        assert_eq!(report.period_gains, [0.0; 3]);
        assert!(report.average_gain_ratio.is_none());

        // the zero network holds the uniform portfolio instead
        let uniform = PolicySnapshot::zeros(cfg).unwrap();
        let traces = rolling_evaluation(&uniform, &data, env_cfg, 100..200, EvalWindows { length: 30, stride: 30 }).unwrap();
        let w = &traces[0].rows[0].weights;
        assert!(w.as_slice().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn report_ratios() {
        let trace = |gain: f64| EpisodeTrace {
            initial_value: 1.0,
            start_day_index: 0,
            rows: alloc::vec![crate::env::TraceRow {
                day: Day(1),
                day_index: 1,
                weights: crate::math::PortfolioVector::all_cash(1),
                mu: 1.0,
                rate_of_return: gain,
                log_return: libm::log1p(gain),
                value: 1.0 + gain,
            }],
            reason: crate::env::DoneReason::DataExhausted,
        };
        let experts = alloc::vec![
            ExpertProfit { expert: ExpertId::from("a"), signals: 3, average_profit: 0.5 },
            ExpertProfit { expert: ExpertId::from("b"), signals: 1, average_profit: 0.25 },
        ];
        let r = EvaluationReport::new(&[trace(0.1), trace(0.3), trace(-0.1)], experts);
        assert!((r.average_gain - 0.1).abs() < 1e-15);
        assert_eq!((r.max_gain, r.min_gain), (1.3 - 1.0, 0.9 - 1.0));
        assert_eq!(r.best_expert.as_ref().unwrap().expert, ExpertId::from("a"));
        assert_eq!(r.average_gain_ratio, Some(r.average_gain / 0.5));
        assert_eq!(r.max_gain_ratio, Some(r.max_gain / 0.5));
    }
}
