//! Expert signals: overlap resolution and the precomputed per-day track.
//!
//! A signal is active on every trading day between its start and close date
//! (both inclusive, after clipping to the price calendar). While active it
//! contributes its expected return, expected risk and mark-to-market
//! ("instant") return. Once it closes, the expert/symbol pair reports the
//! signal's outcome as a status of +1 (profit) or -1 (loss) until another
//! signal of the same pair becomes active.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::day::Day;
use crate::panel::{DataError, PricePanel};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExpertId(pub String);

impl fmt::Display for ExpertId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ExpertId {
    fn from(s: &str) -> Self {
        Self(String::from(s))
    }
}

/// An expert's advisory on one symbol. Returns are in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub expert_id: ExpertId,
    pub symbol: String,
    pub start_date: Day,
    pub close_date: Day,
    pub expected_return: f64,
    pub expected_risk: f64,
}

/// Which signals are averaged together where they overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverlapScope {
    /// Only signals of the same expert on the same symbol.
    #[default]
    SameExpert,
    /// All signals on the same symbol, whichever expert issued them.
    AcrossExperts,
}

fn canonical_order(a: &SignalRecord, b: &SignalRecord) -> Ordering {
    a.symbol
        .cmp(&b.symbol)
        .then(a.expert_id.cmp(&b.expert_id))
        .then(a.start_date.cmp(&b.start_date))
        .then(a.close_date.cmp(&b.close_date))
        .then(a.expected_return.total_cmp(&b.expected_return))
        .then(a.expected_risk.total_cmp(&b.expected_risk))
}

/// Arithmetic mean, summed in iteration order. Equal values give that value
/// back exactly, which keeps re-averaging already merged pieces a no-op.
fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut first = None;
    let mut all_equal = true;
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| {
        match first {
            None => first = Some(v),
            Some(f) => all_equal &= f64::to_bits(f) == f64::to_bits(v),
        }
        (s + v, n + 1)
    });
    match first {
        Some(f) if all_equal => f,
        _ => sum / n as f64,
    }
}

/// Replaces overlapping signals by day-resolved pieces whose expected return
/// and risk are the means over every signal covering that piece.
///
/// Each group (see [`OverlapScope`]) is cut at every start date and every
/// day after a close date; each covered piece becomes one record. Signals that
/// overlap nothing come out unchanged. Output is sorted by symbol, expert and
/// start date.
pub fn resolve_overlaps(records: &[SignalRecord], scope: OverlapScope) -> Vec<SignalRecord> {
    let mut sorted: Vec<&SignalRecord> = records.iter().collect();
    sorted.sort_by(|a, b| canonical_order(a, b));

    let same_group = |a: &SignalRecord, b: &SignalRecord| match scope {
        OverlapScope::SameExpert => a.symbol == b.symbol && a.expert_id == b.expert_id,
        OverlapScope::AcrossExperts => a.symbol == b.symbol,
    };

    let mut out = Vec::new();
    let mut begin = 0;
    while begin < sorted.len() {
        let mut end = begin + 1;
        while end < sorted.len() && same_group(sorted[begin], sorted[end]) {
            end += 1;
        }
        let group = &sorted[begin..end];
        let cuts: Vec<Day> = group
            .iter()
            .flat_map(|r| [r.start_date, r.close_date.next()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for piece in cuts.windows(2) {
            let (from, to) = (piece[0], piece[1].prev());
            let covering = || group.iter().filter(move |r| r.start_date <= from && r.close_date >= to);
            if covering().next().is_none() {
                continue;
            }
            let expected_return = mean(covering().map(|r| r.expected_return));
            let expected_risk = mean(covering().map(|r| r.expected_risk));
            let experts: BTreeSet<&ExpertId> = covering().map(|r| &r.expert_id).collect();
            for expert in experts {
                out.push(SignalRecord {
                    expert_id: expert.clone(),
                    symbol: group[0].symbol.clone(),
                    start_date: from,
                    close_date: to,
                    expected_return,
                    expected_risk,
                });
            }
        }
        begin = end;
    }
    out.sort_by(canonical_order);
    out
}

/// A signal mapped onto trading-day indices of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSignal {
    pub expert: usize,
    pub symbol: usize,
    /// First trading day on or after the start date.
    pub start: usize,
    /// Last trading day on or before the close date.
    pub close: usize,
    pub expected_return: f64,
    pub expected_risk: f64,
}

impl ResolvedSignal {
    pub fn covers(&self, t: usize) -> bool {
        self.start <= t && t <= self.close
    }

    /// Return realized from the start close to the close-date close.
    pub fn realized_return(&self, panel: &PricePanel) -> f64 {
        instant_return(panel, self.symbol, self.start, self.close)
    }

    /// +1 for a profit, -1 for a loss, 0 for an exact tie.
    pub fn outcome(&self, panel: &PricePanel) -> i8 {
        status_of(self.realized_return(panel))
    }
}

fn status_of(ret: f64) -> i8 {
    if ret > 0.0 {
        1
    } else if ret < 0.0 {
        -1
    } else {
        0
    }
}

/// Mark-to-market return on day `t` of a position opened at the close of day
/// `start`.
pub fn instant_return(panel: &PricePanel, symbol: usize, start: usize, t: usize) -> f64 {
    let base = panel.close(symbol, start);
    (panel.close(symbol, t) - base) / base
}

/// Derived signal features of one (expert, symbol, day) cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackCell {
    pub active: bool,
    /// Percent.
    pub expected_return: f64,
    /// Percent.
    pub expected_risk: f64,
    pub instant_return: f64,
    pub status: i8,
}

/// Per-day signal features for every expert, symbol and trading day,
/// precomputed once from the records and the panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrack {
    experts: Vec<ExpertId>,
    assets: usize,
    days: usize,
    scope: OverlapScope,
    cells: Vec<TrackCell>,
    signals: Vec<ResolvedSignal>,
}

impl SignalTrack {
    /// A track with no experts.
    pub fn empty(panel: &PricePanel) -> Self {
        Self {
            experts: Vec::new(),
            assets: panel.assets(),
            days: panel.days(),
            scope: OverlapScope::default(),
            cells: Vec::new(),
            signals: Vec::new(),
        }
    }

    /// Experts in lexicographic order of their id; this order fixes the
    /// observation channel layout.
    pub fn experts(&self) -> &[ExpertId] {
        &self.experts
    }

    pub fn expert_index(&self, id: &ExpertId) -> Option<usize> {
        self.experts.binary_search(id).ok()
    }

    pub fn assets(&self) -> usize {
        self.assets
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn scope(&self) -> OverlapScope {
        self.scope
    }

    pub fn cell(&self, expert: usize, symbol: usize, t: usize) -> &TrackCell {
        &self.cells[(expert * self.assets + symbol) * self.days + t]
    }

    fn cell_mut(&mut self, expert: usize, symbol: usize, t: usize) -> &mut TrackCell {
        &mut self.cells[(expert * self.assets + symbol) * self.days + t]
    }

    /// Signals that survived clipping, in canonical order.
    pub fn signals(&self) -> &[ResolvedSignal] {
        &self.signals
    }

    fn in_group(&self, a: &ResolvedSignal, expert: usize, symbol: usize) -> bool {
        a.symbol == symbol && (self.scope == OverlapScope::AcrossExperts || a.expert == expert)
    }

    /// Recomputes the instant return of a cell directly from the signals and
    /// the panel, bypassing the precomputed grid.
    pub fn instant_return_on_demand(&self, panel: &PricePanel, expert: usize, symbol: usize, t: usize) -> f64 {
        let own_active = self.signals.iter().any(|s| s.expert == expert && s.symbol == symbol && s.covers(t));
        if !own_active {
            return 0.0;
        }
        mean(
            self.signals
                .iter()
                .filter(|s| self.in_group(s, expert, symbol) && s.covers(t))
                .map(|s| instant_return(panel, s.symbol, s.start, t)),
        )
    }
}

/// Clips records to the panel calendar and precomputes every track cell.
///
/// Records whose dates fall entirely outside the calendar are dropped with a
/// warning.
pub fn build_signal_tracks(
    records: &[SignalRecord],
    panel: &PricePanel,
    scope: OverlapScope,
) -> Result<SignalTrack, DataError> {
    let experts: Vec<ExpertId> = records
        .iter()
        .map(|r| r.expert_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut sorted: Vec<&SignalRecord> = records.iter().collect();
    sorted.sort_by(|a, b| canonical_order(a, b));

    let mut signals = Vec::with_capacity(records.len());
    for record in sorted {
        let symbol = panel
            .symbol_index(&record.symbol)
            .ok_or_else(|| DataError::UnknownSymbol(record.symbol.clone()))?;
        if record.start_date > record.close_date {
            return Err(DataError::InvalidParameter("signal starts after it closes"));
        }
        if record.expected_risk > 0.0 {
            log::warn!(
                "signal of expert {} on {} has positive expected risk {}",
                record.expert_id,
                record.symbol,
                record.expected_risk
            );
        }
        let clipped = panel
            .first_index_on_or_after(record.start_date)
            .zip(panel.last_index_on_or_before(record.close_date))
            .filter(|(start, close)| start <= close);
        let Some((start, close)) = clipped else {
            log::warn!(
                "dropping signal of expert {} on {}: no trading days between {} and {}",
                record.expert_id,
                record.symbol,
                record.start_date,
                record.close_date
            );
            continue;
        };
        signals.push(ResolvedSignal {
            expert: experts.binary_search(&record.expert_id).expect("expert collected above"),
            symbol,
            start,
            close,
            expected_return: record.expected_return,
            expected_risk: record.expected_risk,
        });
    }

    let (assets, days) = (panel.assets(), panel.days());
    let mut track = SignalTrack {
        cells: alloc::vec![TrackCell::default(); experts.len() * assets * days],
        experts,
        assets,
        days,
        scope,
        signals,
    };

    // Averaged features over each value group.
    let groups = value_groups(&track.signals, scope);
    for members in &groups {
        // members are ordered by expert first, so scan for the earliest start
        let first = members.iter().map(|&i| track.signals[i].start).min().unwrap_or(0);
        let last = members.iter().map(|&i| track.signals[i].close).max().unwrap_or(first);
        for t in first..=last {
            let covering = || members.iter().map(|&i| &track.signals[i]).filter(move |s| s.covers(t));
            if covering().next().is_none() {
                continue;
            }
            let cell = TrackCell {
                active: true,
                expected_return: mean(covering().map(|s| s.expected_return)),
                expected_risk: mean(covering().map(|s| s.expected_risk)),
                instant_return: mean(covering().map(|s| instant_return(panel, s.symbol, s.start, t))),
                status: 0,
            };
            let targets: BTreeSet<(usize, usize)> = covering().map(|s| (s.expert, s.symbol)).collect();
            for (e, s) in targets {
                *track.cell_mut(e, s, t) = cell;
            }
        }
    }

    // Outcome of the latest closed signal, carried while the pair is idle.
    let pairs = value_groups(&track.signals, OverlapScope::SameExpert);
    for members in &pairs {
        let (expert, symbol) = (track.signals[members[0]].expert, track.signals[members[0]].symbol);
        let mut by_close: Vec<usize> = members.clone();
        by_close.sort_by_key(|&i| track.signals[i].close);
        let mut next = 0;
        let mut status = 0i8;
        let start = by_close.iter().map(|&i| track.signals[i].start).min().unwrap_or(0);
        for t in start..days {
            // signals that closed strictly before t
            let mut closed_today = Vec::new();
            while next < by_close.len() && track.signals[by_close[next]].close < t {
                closed_today.push(by_close[next]);
                next += 1;
            }
            if let Some(&last) = closed_today.last() {
                let close_day = track.signals[last].close;
                let same_day = closed_today.iter().filter(|&&i| track.signals[i].close == close_day);
                status = status_of(mean(same_day.map(|&i| track.signals[i].realized_return(panel))));
            }
            let cell = track.cell_mut(expert, symbol, t);
            if !cell.active {
                cell.status = status;
            }
        }
    }

    Ok(track)
}

/// Indices of signals sharing a value group, each list in canonical order.
fn value_groups(signals: &[ResolvedSignal], scope: OverlapScope) -> Vec<Vec<usize>> {
    let mut groups: alloc::collections::BTreeMap<(usize, usize), Vec<usize>> = Default::default();
    for (i, s) in signals.iter().enumerate() {
        let key = match scope {
            OverlapScope::SameExpert => (s.symbol, s.expert),
            OverlapScope::AcrossExperts => (s.symbol, 0),
        };
        groups.entry(key).or_default().push(i);
    }
    groups.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Ohlcv;
    use alloc::string::ToString;
    use alloc::vec;

    fn sig(expert: &str, symbol: &str, start: i32, close: i32, ret: f64) -> SignalRecord {
        SignalRecord {
            expert_id: expert.into(),
            symbol: symbol.to_string(),
            start_date: Day(start),
            close_date: Day(close),
            expected_return: ret,
            expected_risk: -ret / 2.0,
        }
    }

    fn panel_from_closes(rows: &[&[f64]]) -> PricePanel {
        let days = rows[0].len();
        let bars = rows
            .iter()
            .flat_map(|r| r.iter().map(|&c| Ohlcv { open: c, high: c, low: c, close: c, volume: 1.0 }))
            .collect();
        let symbols = (0..rows.len()).map(|i| alloc::format!("S{i}")).collect();
        PricePanel::new(symbols, (0..days as i32).map(Day).collect(), bars).unwrap()
    }

    #[test]
    fn overlap_average_on_shared_days() {
        let out = resolve_overlaps(&[sig("e", "A", 5, 10, 10.0), sig("e", "A", 8, 15, 20.0)], OverlapScope::SameExpert);
        assert_eq!(out.len(), 3);
        assert_eq!((out[0].start_date, out[0].close_date, out[0].expected_return), (Day(5), Day(7), 10.0));
        assert_eq!((out[1].start_date, out[1].close_date, out[1].expected_return), (Day(8), Day(10), 15.0));
        assert_eq!((out[2].start_date, out[2].close_date, out[2].expected_return), (Day(11), Day(15), 20.0));
    }

    #[test]
    fn disjoint_signals_unchanged() {
        let input = vec![sig("e", "A", 1, 3, 5.0), sig("e", "A", 4, 9, 7.0), sig("f", "A", 2, 8, 1.0)];
        let out = resolve_overlaps(&input, OverlapScope::SameExpert);
        let mut expected = input.clone();
        expected.sort_by(canonical_order);
        assert_eq!(out, expected);
    }

    #[test]
    fn triple_overlap_mean() {
        let out = resolve_overlaps(
            &[sig("e", "A", 1, 5, 10.0), sig("e", "A", 5, 9, 20.0), sig("e", "A", 3, 5, 30.0)],
            OverlapScope::SameExpert,
        );
        let day5 = out.iter().find(|r| r.start_date <= Day(5) && r.close_date >= Day(5)).unwrap();
        assert_eq!(day5.expected_return, 20.0);
    }

    #[test]
    fn across_experts_scope_averages_everyone() {
        let out = resolve_overlaps(&[sig("e", "A", 1, 4, 10.0), sig("f", "A", 1, 4, 30.0)], OverlapScope::AcrossExperts);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|r| r.expected_return == 20.0));
        let same = resolve_overlaps(&[sig("e", "A", 1, 4, 10.0), sig("f", "A", 1, 4, 30.0)], OverlapScope::SameExpert);
        assert_eq!(same[0].expected_return, 10.0);
    }

    #[test]
    fn instant_return_and_status() {
        let panel = panel_from_closes(&[&[100.0, 110.0, 95.0, 90.0, 91.0]]);
        let track = build_signal_tracks(&[sig("e", "S0", 0, 2, 10.0)], &panel, OverlapScope::SameExpert).unwrap();
        assert_eq!(track.cell(0, 0, 0).instant_return, 0.0);
        assert!(track.cell(0, 0, 0).active);
        assert!((track.cell(0, 0, 1).instant_return - 0.10).abs() < 1e-15);
        assert_eq!(track.cell(0, 0, 2).status, 0);
        // realized -5% at close -> -1 from the next day on
        assert!(!track.cell(0, 0, 3).active);
        assert_eq!(track.cell(0, 0, 3).instant_return, 0.0);
        assert_eq!(track.cell(0, 0, 3).status, -1);
        assert_eq!(track.cell(0, 0, 4).status, -1);
    }

    #[test]
    fn zero_realized_return_keeps_status_zero() {
        let panel = panel_from_closes(&[&[100.0, 120.0, 100.0, 100.0]]);
        let track = build_signal_tracks(&[sig("e", "S0", 0, 2, 10.0)], &panel, OverlapScope::SameExpert).unwrap();
        assert_eq!(track.cell(0, 0, 3).status, 0);
    }

    #[test]
    fn status_resets_when_new_signal_starts() {
        let panel = panel_from_closes(&[&[1.0, 2.0, 2.0, 2.0, 2.0, 3.0]]);
        let track = build_signal_tracks(
            &[sig("e", "S0", 0, 1, 1.0), sig("e", "S0", 3, 4, 1.0)],
            &panel,
            OverlapScope::SameExpert,
        )
        .unwrap();
        assert_eq!(track.cell(0, 0, 2).status, 1);
        assert_eq!(track.cell(0, 0, 3).status, 0);
        assert_eq!(track.cell(0, 0, 5).status, 0, "second signal realized exactly zero");
    }

    #[test]
    fn unknown_symbol_and_clipping() {
        let panel = panel_from_closes(&[&[1.0, 2.0, 3.0]]);
        assert!(matches!(
            build_signal_tracks(&[sig("e", "ZZ", 0, 1, 1.0)], &panel, OverlapScope::SameExpert),
            Err(DataError::UnknownSymbol(_))
        ));
        let track = build_signal_tracks(
            &[sig("e", "S0", -10, 1, 1.0), sig("f", "S0", 50, 60, 1.0)],
            &panel,
            OverlapScope::SameExpert,
        )
        .unwrap();
        assert_eq!(track.experts().len(), 2, "expert layout is frozen before clipping");
        assert_eq!(track.signals().len(), 1);
        assert_eq!(track.signals()[0].start, 0);
    }

    #[test]
    fn on_demand_matches_precomputed() {
        let panel = panel_from_closes(&[&[10.0, 11.0, 12.5, 9.0, 10.0, 10.5], &[5.0, 4.0, 6.0, 7.0, 7.5, 8.0]]);
        let records = vec![
            sig("a", "S0", 0, 3, 4.0),
            sig("a", "S0", 2, 5, 8.0),
            sig("b", "S1", 1, 4, 2.0),
            sig("b", "S0", 1, 2, 3.0),
        ];
        for scope in [OverlapScope::SameExpert, OverlapScope::AcrossExperts] {
            let track = build_signal_tracks(&records, &panel, scope).unwrap();
            for e in 0..2 {
                for s in 0..2 {
                    for t in 0..6 {
                        assert_eq!(
                            track.cell(e, s, t).instant_return.to_bits(),
                            track.instant_return_on_demand(&panel, e, s, t).to_bits()
                        );
                    }
                }
            }
        }
    }
}
