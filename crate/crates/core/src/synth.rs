//! Synthetic markets and experts for desk-scale experiments.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::day::Day;
use crate::panel::{DataError, Ohlcv, PricePanel};
use crate::signals::{ExpertId, SignalRecord};

/// Per-asset dynamics of a synthetic market.
///
/// Log closes follow a random walk with per-day drift `ln(1 + drift)` and
/// volatility `vol`, so a zero-volatility asset grows exactly by `1 + drift`
/// per day.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    /// Daily drift per asset; a single entry applies to every asset.
    pub drifts: Vec<f64>,
    /// Daily log-volatility per asset; a single entry applies to every asset.
    pub vols: Vec<f64>,
    pub start_day: Day,
    pub base_volume: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self::uniform(0.0, 0.02)
    }
}

impl MarketParams {
    pub fn uniform(drift: f64, vol: f64) -> Self {
        Self {
            drifts: alloc::vec![drift],
            vols: alloc::vec![vol],
            start_day: Day::SYNTH_EPOCH,
            base_volume: 1.0e6,
        }
    }

    fn per_asset(values: &[f64], m: usize) -> Result<Vec<f64>, DataError> {
        match values.len() {
            1 => Ok(alloc::vec![values[0]; m]),
            n if n == m => Ok(values.to_vec()),
            _ => Err(DataError::InvalidParameter("per-asset parameter length must be 1 or m")),
        }
    }
}

/// Weekday calendar of `len` days starting on (or after) `start`.
pub fn weekday_calendar(start: Day, len: usize) -> Vec<Day> {
    let mut day = if start.is_weekend() { start.next_weekday() } else { start };
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(day);
        day = day.next_weekday();
    }
    out
}

pub fn synth_symbol(i: usize) -> String {
    format!("SYN{i:03}")
}

/// Generates `m` OHLCV paths over `days` weekdays, deterministic per seed.
pub fn synth_market(m: usize, days: usize, seed: u64, params: &MarketParams) -> Result<PricePanel, DataError> {
    if m < 1 || days < 2 {
        return Err(DataError::InvalidParameter("synthetic market needs m >= 1 and T >= 2"));
    }
    let drifts = MarketParams::per_asset(&params.drifts, m)?;
    let vols = MarketParams::per_asset(&params.vols, m)?;
    if drifts.iter().any(|d| !(d.is_finite() && *d > -1.0)) {
        return Err(DataError::InvalidParameter("drift must be finite and above -1"));
    }
    if vols.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(DataError::InvalidParameter("volatility must be finite and non-negative"));
    }
    if !(params.base_volume.is_finite() && params.base_volume >= 0.0) {
        return Err(DataError::InvalidParameter("base volume must be non-negative"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bars = Vec::with_capacity(m * days);
    for (drift, vol) in drifts.iter().zip(&vols) {
        let log_drift = libm::log1p(*drift);
        let mut close: f64 = rng.random_range(50.0..150.0);
        let mut prev_close = close;
        for t in 0..days {
            let gap: f64 = StandardNormal.sample(&mut rng);
            let shock: f64 = StandardNormal.sample(&mut rng);
            let up: f64 = StandardNormal.sample(&mut rng);
            let down: f64 = StandardNormal.sample(&mut rng);
            let vol_noise: f64 = StandardNormal.sample(&mut rng);
            if t > 0 {
                close = prev_close * libm::exp(log_drift + vol * shock);
            }
            let open = prev_close * libm::exp(0.5 * vol * gap);
            let high = open.max(close) * libm::exp(0.5 * vol * up.abs());
            let low = open.min(close) * libm::exp(-0.5 * vol * down.abs());
            let volume = params.base_volume * libm::exp(0.3 * vol_noise);
            bars.push(Ohlcv { open, high, low, close, volume });
            prev_close = close;
        }
    }
    let symbols = (0..m).map(synth_symbol).collect();
    PricePanel::new(symbols, weekday_calendar(params.start_day, days), bars)
}

/// Shape of the synthetic expert population.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertParams {
    pub signals_per_expert: usize,
    /// Signal horizon in trading days, inclusive range.
    pub min_horizon: usize,
    pub max_horizon: usize,
    /// Scale of the noise added to expected return and risk at zero skill.
    pub noise: f64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        Self { signals_per_expert: 75, min_horizon: 5, max_horizon: 30, noise: 0.05 }
    }
}

/// Generates signals from `experts` experts of equal `skill`.
///
/// For each signal an expert looks at the realized move over the horizon and
/// calls its direction correctly with probability `0.5 + skill / 2`. The sign
/// of the expected return is the called direction. Expected return and risk
/// are the realized move and adverse excursion plus noise scaled by
/// `1 - skill`.
pub fn synth_experts(
    panel: &PricePanel,
    experts: usize,
    skill: f64,
    seed: u64,
    params: &ExpertParams,
) -> Result<Vec<SignalRecord>, DataError> {
    if experts < 1 {
        return Err(DataError::InvalidParameter("need at least one expert"));
    }
    if !(0.0..=1.0).contains(&skill) {
        return Err(DataError::InvalidParameter("skill must lie in [0, 1]"));
    }
    if params.min_horizon < 1 || params.min_horizon > params.max_horizon {
        return Err(DataError::InvalidParameter("invalid horizon range"));
    }
    let days = panel.days();
    let max_horizon = params.max_horizon.min(days - 1);
    if params.min_horizon > max_horizon {
        return Err(DataError::InvalidParameter("panel too short for the signal horizon"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(experts * params.signals_per_expert);
    for e in 0..experts {
        let expert_id = ExpertId(format!("{e:03}"));
        for _ in 0..params.signals_per_expert {
            let symbol = rng.random_range(0..panel.assets());
            let horizon = rng.random_range(params.min_horizon..=max_horizon);
            let start = rng.random_range(0..days - horizon);
            let close = start + horizon;
            let base = panel.close(symbol, start);
            let realized = panel.close(symbol, close) / base - 1.0;
            let truth = if realized < 0.0 { -1.0 } else { 1.0 };
            let correct = rng.random::<f64>() < 0.5 + skill / 2.0;
            let direction = if correct { truth } else { -truth };

            let adverse = (start..=close)
                .map(|t| direction * (base - panel.close(symbol, t)) / base)
                .fold(0.0_f64, f64::max);
            let n1: f64 = StandardNormal.sample(&mut rng);
            let n2: f64 = StandardNormal.sample(&mut rng);
            let blur = (1.0 - skill) * params.noise;
            out.push(SignalRecord {
                expert_id: expert_id.clone(),
                symbol: panel.symbols()[symbol].clone(),
                start_date: panel.calendar()[start],
                close_date: panel.calendar()[close],
                expected_return: 100.0 * direction * (realized.abs() + blur * n1.abs()),
                expected_risk: -100.0 * (adverse + blur * n2.abs()),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{build_signal_tracks, OverlapScope};

    #[test]
    fn deterministic_per_seed() {
        let p = MarketParams::default();
        assert_eq!(synth_market(3, 50, 9, &p).unwrap(), synth_market(3, 50, 9, &p).unwrap());
        assert_ne!(synth_market(3, 50, 9, &p).unwrap(), synth_market(3, 50, 10, &p).unwrap());
    }

    #[test]
    fn zero_vol_is_compound_drift() {
        let panel = synth_market(2, 40, 1, &MarketParams::uniform(0.01, 0.0)).unwrap();
        for s in 0..2 {
            let c0 = panel.close(s, 0);
            for t in 0..40 {
                let expected = c0 * libm::pow(1.01, t as f64);
                assert!((panel.close(s, t) - expected).abs() <= 1e-9 * expected);
            }
        }
    }

    #[test]
    fn full_size_market_is_consistent() {
        let panel = synth_market(54, 750, 3, &MarketParams::default()).unwrap();
        assert_eq!((panel.assets(), panel.days()), (54, 750));
        assert!(panel.bars().iter().all(|b| b.validate().is_ok()));
        assert!(panel.calendar().iter().all(|d| !d.is_weekend()));
    }

    #[test]
    fn invalid_params() {
        assert!(synth_market(0, 10, 0, &MarketParams::default()).is_err());
        assert!(synth_market(2, 1, 0, &MarketParams::default()).is_err());
        let bad = MarketParams { drifts: alloc::vec![0.0, 0.0, 0.0], ..MarketParams::default() };
        assert!(synth_market(2, 10, 0, &bad).is_err());
        let panel = synth_market(2, 50, 0, &MarketParams::default()).unwrap();
        assert!(synth_experts(&panel, 0, 0.5, 0, &ExpertParams::default()).is_err());
        assert!(synth_experts(&panel, 1, 1.5, 0, &ExpertParams::default()).is_err());
    }

    #[test]
    fn skilled_expert_long_calls_close_in_profit() {
        let panel = synth_market(4, 300, 5, &MarketParams::default()).unwrap();
        let records = synth_experts(&panel, 1, 1.0, 6, &ExpertParams::default()).unwrap();
        let track = build_signal_tracks(&records, &panel, OverlapScope::SameExpert).unwrap();
        let mut longs = 0;
        for s in track.signals() {
            if s.expected_return > 0.0 {
                longs += 1;
                assert_eq!(s.outcome(&panel), 1);
            }
        }
        assert!(longs > 10);
    }

    #[test]
    fn coin_flip_expert_hit_rate() {
        let panel = synth_market(5, 400, 8, &MarketParams::default()).unwrap();
        let params = ExpertParams { signals_per_expert: 100, ..ExpertParams::default() };
        let records = synth_experts(&panel, 40, 0.0, 9, &params).unwrap();
        assert_eq!(records.len(), 4000);
        let hits = records
            .iter()
            .filter(|r| {
                let s = panel.symbol_index(&r.symbol).unwrap();
                let a = panel.day_index(r.start_date).unwrap();
                let b = panel.day_index(r.close_date).unwrap();
                let realized = panel.close(s, b) / panel.close(s, a) - 1.0;
                (realized >= 0.0) == (r.expected_return >= 0.0)
            })
            .count();
        let rate = hits as f64 / records.len() as f64;
        assert!((rate - 0.5).abs() < 0.03, "hit rate {rate}");
    }

    #[test]
    fn full_size_experts() {
        let panel = synth_market(54, 750, 1, &MarketParams::default()).unwrap();
        let records = synth_experts(&panel, 85, 0.5, 2, &ExpertParams::default()).unwrap();
        assert_eq!(records.len(), 85 * 75);
        assert!(records.iter().all(|r| r.expected_risk <= 0.0 && r.start_date <= r.close_date));
    }
}
