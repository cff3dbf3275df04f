//! Daily OHLCV history on a dense symbol x day grid.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

use crate::day::Day;
use crate::math::{MathError, PriceVector, RelativePriceVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("no symbols in price data")]
    EmptySymbolSet,
    #[error("symbol {0} has no valid bars")]
    NoValidBars(String),
    #[error("duplicate bar for symbol {symbol} on {day}")]
    DuplicateBar { symbol: String, day: Day },
    #[error("bar #{index} is invalid: {reason}")]
    InvalidBar { index: usize, reason: BarError },
    #[error("calendar is not strictly increasing at position {0}")]
    CalendarNotIncreasing(usize),
    #[error("grid has {found} cells, expected {expected}")]
    GridSize { expected: usize, found: usize },
    #[error("unknown symbol {0}")]
    UnknownSymbol(String),
    #[error("series has zero variance")]
    ConstantSeries,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error(transparent)]
    Math(#[from] MathError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BarError {
    #[error("prices must be positive and finite")]
    NonPositivePrice,
    #[error("low is above open or close")]
    LowAboveBody,
    #[error("high is below open or close")]
    HighBelowBody,
    #[error("volume must be non-negative and finite")]
    NegativeVolume,
}

/// Prices and traded volume of one symbol on one day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ohlcv {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Ohlcv {
    pub fn validate(&self) -> Result<(), BarError> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(BarError::NonPositivePrice);
        }
        if self.low > self.open.min(self.close) {
            return Err(BarError::LowAboveBody);
        }
        if self.high < self.open.max(self.close) {
            return Err(BarError::HighBelowBody);
        }
        if !(self.volume.is_finite() && self.volume >= 0.0) {
            return Err(BarError::NegativeVolume);
        }
        Ok(())
    }
}

/// One row of a price file.
#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub date: Day,
    pub symbol: String,
    pub ohlcv: Ohlcv,
}

/// Symbol x day grid in which some cells may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePanel {
    pub symbols: Vec<String>,
    pub calendar: Vec<Day>,
    /// Row-major by symbol: `cells[s * calendar.len() + t]`.
    pub cells: Vec<Option<Ohlcv>>,
}

impl SparsePanel {
    /// Groups bars into a grid. Symbols are sorted lexicographically and the
    /// calendar is the sorted union of every date seen.
    pub fn from_bars(bars: &[Bar]) -> Result<Self, DataError> {
        for (index, bar) in bars.iter().enumerate() {
            bar.ohlcv.validate().map_err(|reason| DataError::InvalidBar { index, reason })?;
        }
        let symbols: Vec<String> = bars
            .iter()
            .map(|b| b.symbol.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if symbols.is_empty() {
            return Err(DataError::EmptySymbolSet);
        }
        let calendar: Vec<Day> = bars.iter().map(|b| b.date).collect::<BTreeSet<_>>().into_iter().collect();
        let t_len = calendar.len();
        let mut cells = alloc::vec![None; symbols.len() * t_len];
        for bar in bars {
            let s = symbols.binary_search(&bar.symbol).expect("symbol collected above");
            let t = calendar.binary_search(&bar.date).expect("date collected above");
            let cell = &mut cells[s * t_len + t];
            if cell.is_some() {
                return Err(DataError::DuplicateBar { symbol: bar.symbol.clone(), day: bar.date });
            }
            *cell = Some(bar.ohlcv);
        }
        Ok(Self { symbols, calendar, cells })
    }

    pub fn get(&self, symbol: usize, t: usize) -> Option<&Ohlcv> {
        self.cells[symbol * self.calendar.len() + t].as_ref()
    }
}

/// Fully dense market history: `m` symbols over `T` trading days.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    symbols: Vec<String>,
    calendar: Vec<Day>,
    bars: Vec<Ohlcv>,
    fill_mask: Vec<bool>,
}

impl PricePanel {
    /// Builds a complete panel (no imputed cells).
    pub fn new(symbols: Vec<String>, calendar: Vec<Day>, bars: Vec<Ohlcv>) -> Result<Self, DataError> {
        let fill_mask = alloc::vec![false; bars.len()];
        Self::with_mask(symbols, calendar, bars, fill_mask)
    }

    pub fn with_mask(
        symbols: Vec<String>,
        calendar: Vec<Day>,
        bars: Vec<Ohlcv>,
        fill_mask: Vec<bool>,
    ) -> Result<Self, DataError> {
        if symbols.is_empty() {
            return Err(DataError::EmptySymbolSet);
        }
        if let Some(i) = calendar.windows(2).position(|w| w[0] >= w[1]) {
            return Err(DataError::CalendarNotIncreasing(i + 1));
        }
        let expected = symbols.len() * calendar.len();
        if bars.len() != expected || fill_mask.len() != expected {
            return Err(DataError::GridSize { expected, found: bars.len().min(fill_mask.len()) });
        }
        for (index, bar) in bars.iter().enumerate() {
            bar.validate().map_err(|reason| DataError::InvalidBar { index, reason })?;
        }
        Ok(Self { symbols, calendar, bars, fill_mask })
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn calendar(&self) -> &[Day] {
        &self.calendar
    }

    /// Number of assets `m`.
    pub fn assets(&self) -> usize {
        self.symbols.len()
    }

    /// Number of trading days `T`.
    pub fn days(&self) -> usize {
        self.calendar.len()
    }

    pub fn symbol_index(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    /// Index of `day` in the calendar, if it is a trading day.
    pub fn day_index(&self, day: Day) -> Option<usize> {
        self.calendar.binary_search(&day).ok()
    }

    /// First trading-day index on or after `day`.
    pub fn first_index_on_or_after(&self, day: Day) -> Option<usize> {
        let i = self.calendar.partition_point(|d| *d < day);
        (i < self.calendar.len()).then_some(i)
    }

    /// Last trading-day index on or before `day`.
    pub fn last_index_on_or_before(&self, day: Day) -> Option<usize> {
        self.calendar.partition_point(|d| *d <= day).checked_sub(1)
    }

    pub fn bar(&self, symbol: usize, t: usize) -> &Ohlcv {
        &self.bars[symbol * self.calendar.len() + t]
    }

    pub fn close(&self, symbol: usize, t: usize) -> f64 {
        self.bar(symbol, t).close
    }

    pub fn is_filled(&self, symbol: usize, t: usize) -> bool {
        self.fill_mask[symbol * self.calendar.len() + t]
    }

    pub fn fill_mask(&self) -> &[bool] {
        &self.fill_mask
    }

    pub fn bars(&self) -> &[Ohlcv] {
        &self.bars
    }

    /// Row of one symbol across the calendar.
    pub fn series(&self, symbol: usize) -> &[Ohlcv] {
        let t_len = self.calendar.len();
        &self.bars[symbol * t_len..(symbol + 1) * t_len]
    }

    pub fn closes(&self, symbol: usize) -> Vec<f64> {
        self.series(symbol).iter().map(|b| b.close).collect()
    }

    /// Closing prices on day `t` with the cash quote in front.
    pub fn price_vector(&self, t: usize) -> PriceVector {
        let closes: Vec<f64> = (0..self.assets()).map(|s| self.close(s, t)).collect();
        PriceVector::from_closes(&closes).expect("panel prices are validated positive")
    }

    /// Relative prices from day `t` to day `t + 1`.
    pub fn relative_prices(&self, t: usize) -> RelativePriceVector {
        let mut values = Vec::with_capacity(self.assets() + 1);
        values.push(1.0);
        values.extend((0..self.assets()).map(|s| self.close(s, t + 1) / self.close(s, t)));
        RelativePriceVector::new(values).expect("panel prices are validated positive")
    }
}

/// Completes a sparse grid with the last valid bar of each symbol, or the
/// nearest next one when nothing precedes the gap. Imputed bars carry zero
/// volume and are flagged in the fill mask.
pub fn fill_missing(sparse: &SparsePanel) -> Result<PricePanel, DataError> {
    if sparse.symbols.is_empty() {
        return Err(DataError::EmptySymbolSet);
    }
    let t_len = sparse.calendar.len();
    let mut bars = Vec::with_capacity(sparse.cells.len());
    let mut mask = Vec::with_capacity(sparse.cells.len());
    for (s, symbol) in sparse.symbols.iter().enumerate() {
        let row = &sparse.cells[s * t_len..(s + 1) * t_len];
        let first = row
            .iter()
            .flatten()
            .next()
            .ok_or_else(|| DataError::NoValidBars(symbol.clone()))?;
        let mut last = *first;
        for cell in row {
            match cell {
                Some(bar) => {
                    last = *bar;
                    bars.push(*bar);
                    mask.push(false);
                }
                None => {
                    bars.push(Ohlcv { volume: 0.0, ..last });
                    mask.push(true);
                }
            }
        }
    }
    PricePanel::with_mask(sparse.symbols.clone(), sparse.calendar.clone(), bars, mask)
}
