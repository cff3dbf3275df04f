//! Price and signal files.
//!
//! Prices: `date,symbol,open,high,low,close,volume`, one row per symbol and
//! day. Signals: `expert_id,symbol,start_date,close_date,expected_return,expected_risk`
//! with returns in percent. Dates are `YYYY-MM-DD`.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sigfolio_core::panel::{fill_missing, DataError, SparsePanel};
use sigfolio_core::{Bar, Day, ExpertId, Ohlcv, PricePanel, SignalRecord};
use thiserror::Error;

pub const PRICE_HEADER: [&str; 7] = ["date", "symbol", "open", "high", "low", "close", "volume"];
pub const SIGNAL_HEADER: [&str; 6] =
    ["expert_id", "symbol", "start_date", "close_date", "expected_return", "expected_risk"];

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}, line {line}: {reason}")]
    Row { path: PathBuf, line: u64, reason: String },
    #[error("{path}: header must be {expected}")]
    Header { path: PathBuf, expected: String },
    #[error("{path}: {source}")]
    Data { path: PathBuf, source: DataError },
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

pub fn parse_date(s: &str) -> Result<Day, String> {
    let date = NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| format!("bad date {s:?}: {e}"))?;
    Ok(Day((date - epoch()).num_days() as i32))
}

pub fn format_date(day: Day) -> String {
    (epoch() + chrono::Duration::days(i64::from(day.0))).format("%Y-%m-%d").to_string()
}

#[derive(Debug, Deserialize, Serialize)]
struct PriceRow {
    date: String,
    symbol: String,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct SignalRow {
    expert_id: String,
    symbol: String,
    start_date: String,
    close_date: String,
    expected_return: f64,
    expected_risk: f64,
}

fn reader(path: &Path, header: &[&str]) -> Result<csv::Reader<File>, FileError> {
    let file = File::open(path).map_err(|source| FileError::Io { path: path.into(), source })?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let found = rdr.headers().map_err(|source| FileError::Csv { path: path.into(), source })?;
    if found.iter().ne(header.iter().copied()) {
        return Err(FileError::Header { path: path.into(), expected: header.join(",") });
    }
    Ok(rdr)
}

fn row_error(path: &Path, line: u64, reason: impl Into<String>) -> FileError {
    FileError::Row { path: path.into(), line, reason: reason.into() }
}

fn rows<T: serde::de::DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<(u64, T)>, FileError> {
    let mut rdr = reader(path, header)?;
    let headers = rdr.headers().map_err(|source| FileError::Csv { path: path.into(), source })?.clone();
    let mut out = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            row_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record.deserialize(Some(&headers)).map_err(|e| row_error(path, line, e.to_string()))?;
        out.push((line, row));
    }
    Ok(out)
}

/// Reads raw bars, validating each row.
pub fn read_bars(path: &Path) -> Result<Vec<Bar>, FileError> {
    let mut bars = Vec::new();
    for (line, row) in rows::<PriceRow>(path, &PRICE_HEADER)? {
        let date = parse_date(&row.date).map_err(|e| row_error(path, line, e))?;
        let ohlcv = Ohlcv { open: row.open, high: row.high, low: row.low, close: row.close, volume: row.volume };
        ohlcv.validate().map_err(|e| row_error(path, line, e.to_string()))?;
        if row.symbol.is_empty() {
            return Err(row_error(path, line, "empty symbol"));
        }
        bars.push(Bar { date, symbol: row.symbol, ohlcv });
    }
    Ok(bars)
}

/// Reads a price file into a dense, gap-filled panel.
pub fn read_prices(path: &Path) -> Result<PricePanel, FileError> {
    let bars = read_bars(path)?;
    let data = |source| FileError::Data { path: path.into(), source };
    let sparse = SparsePanel::from_bars(&bars).map_err(data)?;
    let panel = fill_missing(&sparse).map_err(data)?;
    let filled = panel.fill_mask().iter().filter(|&&m| m).count();
    if filled > 0 {
        log::info!("{}: filled {filled} missing bar(s)", path.display());
    }
    Ok(panel)
}

pub fn write_prices(path: &Path, panel: &PricePanel) -> Result<(), FileError> {
    let mut w = writer(path)?;
    let csv_err = |source| FileError::Csv { path: path.into(), source };
    for t in 0..panel.days() {
        let date = format_date(panel.calendar()[t]);
        for (s, symbol) in panel.symbols().iter().enumerate() {
            let b = panel.bar(s, t);
            w.serialize(PriceRow {
                date: date.clone(),
                symbol: symbol.clone(),
                open: b.open,
                high: b.high,
                low: b.low,
                close: b.close,
                volume: b.volume,
            })
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|source| FileError::Io { path: path.into(), source })
}

pub fn read_signals(path: &Path) -> Result<Vec<SignalRecord>, FileError> {
    let mut out = Vec::new();
    for (line, row) in rows::<SignalRow>(path, &SIGNAL_HEADER)? {
        let start_date = parse_date(&row.start_date).map_err(|e| row_error(path, line, e))?;
        let close_date = parse_date(&row.close_date).map_err(|e| row_error(path, line, e))?;
        if start_date > close_date {
            return Err(row_error(path, line, "start_date is after close_date"));
        }
        if !(row.expected_return.is_finite() && row.expected_risk.is_finite()) {
            return Err(row_error(path, line, "expected return and risk must be finite"));
        }
        out.push(SignalRecord {
            expert_id: ExpertId(row.expert_id),
            symbol: row.symbol,
            start_date,
            close_date,
            expected_return: row.expected_return,
            expected_risk: row.expected_risk,
        });
    }
    Ok(out)
}

pub fn write_signals(path: &Path, records: &[SignalRecord]) -> Result<(), FileError> {
    let mut w = writer(path)?;
    for r in records {
        w.serialize(SignalRow {
            expert_id: r.expert_id.0.clone(),
            symbol: r.symbol.clone(),
            start_date: format_date(r.start_date),
            close_date: format_date(r.close_date),
            expected_return: r.expected_return,
            expected_risk: r.expected_risk,
        })
        .map_err(|source| FileError::Csv { path: path.into(), source })?;
    }
    if records.is_empty() {
        w.write_record(SIGNAL_HEADER).map_err(|source| FileError::Csv { path: path.into(), source })?;
    }
    w.flush().map_err(|source| FileError::Io { path: path.into(), source })
}

pub(crate) fn writer(path: &Path) -> Result<csv::Writer<File>, FileError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| FileError::Io { path: dir.into(), source })?;
    }
    let file = File::create(path).map_err(|source| FileError::Io { path: path.into(), source })?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes `text` to `path`, creating parent directories.
pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), FileError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| FileError::Io { path: dir.into(), source })?;
    }
    let mut f = File::create(path).map_err(|source| FileError::Io { path: path.into(), source })?;
    f.write_all(text.as_bytes()).map_err(|source| FileError::Io { path: path.into(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn dates_round_trip() {
        assert_eq!(parse_date("1970-01-02").unwrap(), Day(1));
        assert_eq!(parse_date("2017-01-02").unwrap(), Day::SYNTH_EPOCH);
        assert_eq!(format_date(Day(17168)), "2017-01-02");
        assert!(parse_date("2017/01/02").is_err());
    }

    #[test]
    fn complete_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("date,symbol,open,high,low,close,volume\n");
        for d in 2..7 {
            for s in ["B", "A"] {
                body += &format!("2020-03-0{d},{s},10,11,9,10.5,100\n");
            }
        }
        let panel = read_prices(&write(dir.path(), "p.csv", &body)).unwrap();
        assert_eq!((panel.assets(), panel.days()), (2, 5));
        assert_eq!(panel.symbols(), ["A", "B"]);
        assert!(panel.fill_mask().iter().all(|m| !m));
    }

    #[test]
    fn gap_is_filled() {
        let dir = tempfile::tempdir().unwrap();
        let body = "date,symbol,open,high,low,close,volume\n\
            2020-03-02,A,1,1,1,1,5\n2020-03-02,B,2,2,2,2,5\n\
            2020-03-03,B,2,2,2,2,5\n\
            2020-03-04,A,3,3,3,3,5\n2020-03-04,B,2,2,2,2,5\n";
        let panel = read_prices(&write(dir.path(), "p.csv", body)).unwrap();
        assert!(panel.is_filled(0, 1));
        assert_eq!(panel.close(0, 1), 1.0);
        assert_eq!(panel.bar(0, 1).volume, 0.0);
    }

    #[test]
    fn bad_row_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let body = "date,symbol,open,high,low,close,volume\n\
            2020-03-02,A,1,1,1,1,5\n2020-03-03,A,1,0.5,1,1,5\n";
        let err = read_prices(&write(dir.path(), "p.csv", body)).unwrap_err();
        assert!(matches!(err, FileError::Row { line: 3, .. }), "{err}");
        let err = read_prices(&dir.path().join("missing.csv")).unwrap_err();
        assert!(err.to_string().contains("missing.csv"));
        let err = read_prices(&write(dir.path(), "h.csv", "day,symbol\n")).unwrap_err();
        assert!(matches!(err, FileError::Header { .. }));
        let dup = "date,symbol,open,high,low,close,volume\n2020-03-02,A,1,1,1,1,5\n2020-03-02,A,1,1,1,1,5\n";
        assert!(matches!(read_prices(&write(dir.path(), "d.csv", dup)), Err(FileError::Data { .. })));
    }

    #[test]
    fn signals_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![SignalRecord {
            expert_id: ExpertId::from("e1"),
            symbol: String::from("A"),
            start_date: Day(18000),
            close_date: Day(18010),
            expected_return: 12.5,
            expected_risk: -3.25,
        }];
        let p = dir.path().join("s.csv");
        write_signals(&p, &records).unwrap();
        assert_eq!(read_signals(&p).unwrap(), records);
        write_signals(&p, &[]).unwrap();
        assert!(read_signals(&p).unwrap().is_empty());
        let bad = write(dir.path(), "b.csv", "expert_id,symbol,start_date,close_date,expected_return,expected_risk\ne,A,2020-01-05,2020-01-02,1,-1\n");
        assert!(matches!(read_signals(&bad), Err(FileError::Row { line: 2, .. })));
    }

    #[test]
    fn prices_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let panel = sigfolio_core::synth::synth_market(3, 20, 1, &Default::default()).unwrap();
        let p = dir.path().join("p.csv");
        write_prices(&p, &panel).unwrap();
        assert_eq!(read_prices(&p).unwrap(), panel);
    }
}
