//! Per-step model input: a window of normalized prices and signal features
//! for every stock, plus the previous portfolio vector.
//!
//! Channel layout per stock (stable, see [`channel_names`]):
//!
//! * 0..5: open, high, low, close divided by the close on the last window
//!   day; volume divided by its window mean (0 when the mean is 0).
//! * per-expert mode: four channels per expert in id order: expected return
//!   and expected risk (as fractions), instant return, status.
//! * aggregated mode: active-expert count, mean expected return, mean
//!   expected risk, mean instant return over active experts, and mean status
//!   over all experts.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use thiserror::Error;

use crate::day::Day;
use crate::math::PortfolioVector;
use crate::signals::ExpertId;
use crate::MarketData;

pub const PRICE_CHANNELS: usize = 5;
pub const PER_EXPERT_CHANNELS: usize = 4;
pub const AGGREGATED_CHANNELS: usize = 5;
/// Shortest window for which both valid convolutions (kernels 6 and 5)
/// leave at least one column.
pub const MIN_WINDOW: usize = 6 + 5 - 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObservationError {
    #[error("day {day_index} has fewer than {window} days of history")]
    InsufficientHistory { day_index: usize, window: usize },
    #[error("day {day_index} is beyond the calendar ({days} days)")]
    UnknownDay { day_index: usize, days: usize },
    #[error("window {0} is shorter than the minimum {MIN_WINDOW}")]
    WindowTooShort(usize),
    #[error("previous weights have {found} entries, expected {expected}")]
    WeightsMismatch { expected: usize, found: usize },
    #[error("signal track shape does not match the price panel")]
    TrackMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignalMode {
    #[default]
    PerExpert,
    Aggregated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub window: usize,
    pub signal_mode: SignalMode,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { window: 60, signal_mode: SignalMode::PerExpert }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), ObservationError> {
        if self.window < MIN_WINDOW {
            return Err(ObservationError::WindowTooShort(self.window));
        }
        Ok(())
    }

    pub fn signal_channels(&self, experts: usize) -> usize {
        match self.signal_mode {
            SignalMode::PerExpert => PER_EXPERT_CHANNELS * experts,
            SignalMode::Aggregated => AGGREGATED_CHANNELS,
        }
    }

    /// Total channels per stock.
    pub fn channels(&self, experts: usize) -> usize {
        PRICE_CHANNELS + self.signal_channels(experts)
    }
}

/// Channel names in tensor order, used for the layout manifest.
pub fn channel_names(cfg: &WindowConfig, experts: &[ExpertId]) -> Vec<String> {
    let mut names: Vec<String> = ["open", "high", "low", "close", "volume"].iter().map(|s| s.to_string()).collect();
    match cfg.signal_mode {
        SignalMode::PerExpert => {
            for e in experts {
                for f in ["expected_return", "expected_risk", "instant_return", "status"] {
                    names.push(format!("expert[{e}].{f}"));
                }
            }
        }
        SignalMode::Aggregated => {
            for f in ["active_count", "mean_expected_return", "mean_expected_risk", "mean_instant_return", "mean_status"] {
                names.push(format!("experts.{f}"));
            }
        }
    }
    names
}

/// Model input for one decision day.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    tensor: Vec<f64>,
    assets: usize,
    channels: usize,
    window: usize,
    pub prev_weights: PortfolioVector,
    pub as_of: Day,
    pub day_index: usize,
}

impl Observation {
    /// Assembles an observation from raw parts; `tensor` is stock-major,
    /// then channel, then time.
    pub fn from_parts(
        tensor: Vec<f64>,
        assets: usize,
        channels: usize,
        window: usize,
        prev_weights: PortfolioVector,
        as_of: Day,
        day_index: usize,
    ) -> Option<Self> {
        (tensor.len() == assets * channels * window && prev_weights.len() == assets + 1).then_some(Self {
            tensor,
            assets,
            channels,
            window,
            prev_weights,
            as_of,
            day_index,
        })
    }

    pub fn tensor(&self) -> &[f64] {
        &self.tensor
    }

    pub fn assets(&self) -> usize {
        self.assets
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// (stocks, channels, window)
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.assets, self.channels, self.window)
    }

    pub fn at(&self, stock: usize, channel: usize, k: usize) -> f64 {
        self.tensor[(stock * self.channels + channel) * self.window + k]
    }

    /// The `channels x window` block of one stock.
    pub fn stock(&self, stock: usize) -> &[f64] {
        let n = self.channels * self.window;
        &self.tensor[stock * n..(stock + 1) * n]
    }
}

/// Builds the observation for decision day `day_index`, using the window of
/// days ending on it.
pub fn build_observation(
    data: &MarketData,
    day_index: usize,
    prev_weights: &PortfolioVector,
    cfg: &WindowConfig,
) -> Result<Observation, ObservationError> {
    cfg.validate()?;
    let panel = &data.panel;
    let tracks = &data.tracks;
    let (m, days, l) = (panel.assets(), panel.days(), cfg.window);
    if day_index >= days {
        return Err(ObservationError::UnknownDay { day_index, days });
    }
    if day_index + 1 < l {
        return Err(ObservationError::InsufficientHistory { day_index, window: l });
    }
    if prev_weights.len() != m + 1 {
        return Err(ObservationError::WeightsMismatch { expected: m + 1, found: prev_weights.len() });
    }
    if tracks.assets() != m || tracks.days() != days {
        return Err(ObservationError::TrackMismatch);
    }

    let experts = tracks.experts().len();
    let c = cfg.channels(experts);
    let t0 = day_index + 1 - l;
    let mut tensor = alloc::vec![0.0; m * c * l];
    for s in 0..m {
        let block = &mut tensor[s * c * l..(s + 1) * c * l];
        let series = &panel.series(s)[t0..=day_index];
        let last_close = series[l - 1].close;
        let mean_volume = series.iter().map(|b| b.volume).sum::<f64>() / l as f64;
        for (k, bar) in series.iter().enumerate() {
            block[k] = bar.open / last_close;
            block[l + k] = bar.high / last_close;
            block[2 * l + k] = bar.low / last_close;
            block[3 * l + k] = bar.close / last_close;
            block[4 * l + k] = if mean_volume == 0.0 { 0.0 } else { bar.volume / mean_volume };
        }
        match cfg.signal_mode {
            SignalMode::PerExpert => {
                for e in 0..experts {
                    let base = (PRICE_CHANNELS + PER_EXPERT_CHANNELS * e) * l;
                    for k in 0..l {
                        let cell = tracks.cell(e, s, t0 + k);
                        if cell.active {
                            block[base + k] = cell.expected_return / 100.0;
                            block[base + l + k] = cell.expected_risk / 100.0;
                            block[base + 2 * l + k] = cell.instant_return;
                        }
                        block[base + 3 * l + k] = f64::from(cell.status);
                    }
                }
            }
            SignalMode::Aggregated => {
                let base = PRICE_CHANNELS * l;
                for k in 0..l {
                    let (mut n, mut ret, mut risk, mut inst, mut status) = (0usize, 0.0, 0.0, 0.0, 0.0);
                    for e in 0..experts {
                        let cell = tracks.cell(e, s, t0 + k);
                        if cell.active {
                            n += 1;
                            ret += cell.expected_return / 100.0;
                            risk += cell.expected_risk / 100.0;
                            inst += cell.instant_return;
                        }
                        status += f64::from(cell.status);
                    }
                    block[base + k] = n as f64;
                    if n > 0 {
                        block[base + l + k] = ret / n as f64;
                        block[base + 2 * l + k] = risk / n as f64;
                        block[base + 3 * l + k] = inst / n as f64;
                    }
                    if experts > 0 {
                        block[base + 4 * l + k] = status / experts as f64;
                    }
                }
            }
        }
    }
    Ok(Observation {
        tensor,
        assets: m,
        channels: c,
        window: l,
        prev_weights: prev_weights.clone(),
        as_of: panel.calendar()[day_index],
        day_index,
    })
}
