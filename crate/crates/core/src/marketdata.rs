//! End-of-day market data: CSV ingestion, pair alignment, returns,
//! log-normalized features and the rolling train/validation/test protocol.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("malformed row at line {0}")]
    MalformedRow(usize),
    #[error("non-positive price at line {0}")]
    NonPositivePrice(usize),
    #[error("negative volume at line {0}")]
    NegativeVolume(usize),
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("series is empty")]
    EmptySeries,
    #[error("insufficient overlap between the two series")]
    InsufficientOverlap,
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("channel {0} has zero variance over the fit range")]
    ZeroVariance(usize),
    #[error("sample span shorter than the rolling window")]
    SampleTooShort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EodRow {
    pub date: NaiveDate,
    pub open: f64,
    pub close: f64,
    pub volume: f64,
}

/// Dated OHLCV records for one asset. Dates are strictly increasing and all
/// prices positive after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSeries {
    pub symbol: String,
    pub rows: Vec<EodRow>,
}

impl AssetSeries {
    pub fn new(symbol: impl Into<String>, mut rows: Vec<EodRow>) -> Result<Self, MarketDataError> {
        rows.sort_by_key(|r| r.date);
        for pair in rows.windows(2) {
            if pair[0].date == pair[1].date {
                return Err(MarketDataError::DuplicateDate(pair[0].date));
            }
        }
        for (i, r) in rows.iter().enumerate() {
            if !(r.open > 0.0 && r.close > 0.0) {
                return Err(MarketDataError::NonPositivePrice(i + 2));
            }
            if r.volume < 0.0 {
                return Err(MarketDataError::NegativeVolume(i + 2));
            }
        }
        Ok(AssetSeries { symbol: symbol.into(), rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.rows.iter().map(|r| r.date)
    }
}

/// Two aligned asset series sharing an identical date vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSeries {
    pub x: AssetSeries,
    pub y: AssetSeries,
}

impl PairSeries {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.x.dates().collect()
    }

    /// Index range [start, end) of dates falling inside `range`.
    pub fn index_range(&self, range: &DateRange) -> (usize, usize) {
        let dates: Vec<NaiveDate> = self.dates();
        let start = dates.partition_point(|d| *d < range.start);
        let end = dates.partition_point(|d| *d < range.end);
        (start, end)
    }
}

/// Half-open calendar range [start, end).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        DateRange { start, end }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        d >= self.start && d < self.end
    }
}

/// One 18-month window split into contiguous train/validation/test ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingSplit {
    pub index: usize,
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
}

/// Parse `<SYMBOL>.csv` with header `date,open,close,volume`; rows are sorted
/// by date and validated against the series invariants.
pub fn load_eod_csv(path: impl AsRef<Path>) -> Result<AssetSeries, MarketDataError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(MarketDataError::MissingFile(path.display().to_string()));
    }
    let symbol = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|_| MarketDataError::MissingFile(path.display().to_string()))?;
    {
        let headers = reader
            .headers()
            .map_err(|_| MarketDataError::MalformedRow(1))?;
        let expect = ["date", "open", "close", "volume"];
        if headers.len() != 4 || headers.iter().zip(expect).any(|(h, e)| h.trim() != e) {
            return Err(MarketDataError::MalformedRow(1));
        }
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|_| MarketDataError::MalformedRow(line))?;
        if record.len() != 4 {
            return Err(MarketDataError::MalformedRow(line));
        }
        let date = NaiveDate::parse_from_str(record[0].trim(), "%Y-%m-%d")
            .map_err(|_| MarketDataError::MalformedRow(line))?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| MarketDataError::MalformedRow(line));
        let open = parse(&record[1])?;
        let close = parse(&record[2])?;
        let volume = parse(&record[3])?;
        if !(open > 0.0 && close > 0.0) {
            return Err(MarketDataError::NonPositivePrice(line));
        }
        if volume < 0.0 {
            return Err(MarketDataError::NegativeVolume(line));
        }
        rows.push(EodRow { date, open, close, volume });
    }
    AssetSeries::new(symbol, rows)
}

/// Restrict both series to the intersection of their dates.
pub fn align_pair(x: &AssetSeries, y: &AssetSeries) -> Result<PairSeries, MarketDataError> {
    if x.is_empty() || y.is_empty() {
        return Err(MarketDataError::EmptySeries);
    }
    let common: BTreeSet<NaiveDate> = x
        .dates()
        .collect::<BTreeSet<_>>()
        .intersection(&y.dates().collect())
        .copied()
        .collect();
    if common.len() < 2 {
        return Err(MarketDataError::InsufficientOverlap);
    }
    let restrict = |s: &AssetSeries| AssetSeries {
        symbol: s.symbol.clone(),
        rows: s.rows.iter().filter(|r| common.contains(&r.date)).copied().collect(),
    };
    Ok(PairSeries { x: restrict(x), y: restrict(y) })
}

/// close_t / close_{t-1} - 1.
pub fn simple_return(series: &AssetSeries, t: usize) -> Result<f64, MarketDataError> {
    if t == 0 || t >= series.len() {
        return Err(MarketDataError::IndexOutOfRange(t));
    }
    Ok(series.rows[t].close / series.rows[t - 1].close - 1.0)
}

/// Per-day feature row: log open/close/volume of each asset, standardized.
pub type FeatureRow = [f64; 6];

fn raw_features(pair: &PairSeries) -> Vec<FeatureRow> {
    pair.x
        .rows
        .iter()
        .zip(&pair.y.rows)
        .map(|(rx, ry)| {
            [
                rx.open.ln(),
                rx.close.ln(),
                (1.0 + rx.volume).ln(),
                ry.open.ln(),
                ry.close.ln(),
                (1.0 + ry.volume).ln(),
            ]
        })
        .collect()
}

/// Log-transform the six price channels and standardize each with mean/stdev
/// computed on `fit_range` only (population statistics).
pub fn log_normalize(
    pair: &PairSeries,
    fit_range: &DateRange,
) -> Result<Vec<FeatureRow>, MarketDataError> {
    let raw = raw_features(pair);
    let dates = pair.dates();
    let fit: Vec<usize> = (0..raw.len()).filter(|&i| fit_range.contains(dates[i])).collect();
    if fit.is_empty() {
        return Err(MarketDataError::SampleTooShort);
    }
    let mut mean = [0.0f64; 6];
    let mut std = [0.0f64; 6];
    for ch in 0..6 {
        let m = fit.iter().map(|&i| raw[i][ch]).sum::<f64>() / fit.len() as f64;
        let v = fit.iter().map(|&i| (raw[i][ch] - m).powi(2)).sum::<f64>() / fit.len() as f64;
        if v <= 0.0 {
            return Err(MarketDataError::ZeroVariance(ch));
        }
        mean[ch] = m;
        std[ch] = v.sqrt();
    }
    Ok(raw
        .iter()
        .map(|row| {
            let mut out = [0.0; 6];
            for ch in 0..6 {
                out[ch] = (row[ch] - mean[ch]) / std[ch];
            }
            out
        })
        .collect())
}

fn month_floor(d: NaiveDate) -> NaiveDate {
    NaiveDate::from_ymd_opt(d.year(), d.month(), 1).unwrap()
}

fn add_months(d: NaiveDate, m: u32) -> NaiveDate {
    d.checked_add_months(Months::new(m)).unwrap()
}

/// Rolling window protocol: 18-month windows advancing by `stride_months`,
/// each split into contiguous train/validation/test month ranges. Windows are
/// aligned to the calendar month of the first sample date.
pub fn make_rollings(
    pair: &PairSeries,
    window_months: u32,
    stride_months: u32,
    split: (u32, u32, u32),
) -> Result<Vec<RollingSplit>, MarketDataError> {
    assert_eq!(split.0 + split.1 + split.2, window_months, "split must sum to the window");
    if pair.is_empty() {
        return Err(MarketDataError::EmptySeries);
    }
    let first = month_floor(pair.x.rows.first().unwrap().date);
    let last = pair.x.rows.last().unwrap().date;
    let day_after_last = last.succ_opt().unwrap();
    // whole months covered by the sample
    let mut span = 0u32;
    while add_months(first, span + 1) <= day_after_last {
        span += 1;
    }
    if span < window_months {
        return Err(MarketDataError::SampleTooShort);
    }
    let count = ((span - window_months) / stride_months) as usize + 1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let s = add_months(first, k as u32 * stride_months);
        let t_end = add_months(s, split.0);
        let v_end = add_months(t_end, split.1);
        let e_end = add_months(v_end, split.2);
        out.push(RollingSplit {
            index: k,
            train: DateRange::new(s, t_end),
            validation: DateRange::new(t_end, v_end),
            test: DateRange::new(v_end, e_end),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn series(symbol: &str, rows: &[(&str, f64, f64, f64)]) -> AssetSeries {
        AssetSeries::new(
            symbol,
            rows.iter()
                .map(|&(d, o, c, v)| EodRow { date: date(d), open: o, close: c, volume: v })
                .collect(),
        )
        .unwrap()
    }

    fn daily_series(symbol: &str, start: &str, closes: &[f64]) -> AssetSeries {
        let mut d = date(start);
        let rows = closes
            .iter()
            .map(|&c| {
                let row = EodRow { date: d, open: c, close: c, volume: 1000.0 + c };
                d = d.succ_opt().unwrap();
                row
            })
            .collect();
        AssetSeries::new(symbol, rows).unwrap()
    }

    #[test]
    fn csv_round_trip_two_rows() {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        writeln!(f, "date,open,close,volume").unwrap();
        writeln!(f, "2015-01-02,10.0,10.5,100").unwrap();
        writeln!(f, "2015-01-05,10.5,10.25,200").unwrap();
        let s = load_eod_csv(f.path()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.rows[0].date, date("2015-01-02"));
        assert_eq!(s.rows[1].close, 10.25);
    }

    #[test]
    fn csv_zero_price_rejected() {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        writeln!(f, "date,open,close,volume").unwrap();
        writeln!(f, "2015-01-02,0,10.5,100").unwrap();
        assert!(matches!(load_eod_csv(f.path()), Err(MarketDataError::NonPositivePrice(2))));
    }

    #[test]
    fn csv_out_of_order_rows_sorted() {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        writeln!(f, "date,open,close,volume").unwrap();
        writeln!(f, "2015-01-05,10.5,10.25,200").unwrap();
        writeln!(f, "2015-01-02,10.0,10.5,100").unwrap();
        let s = load_eod_csv(f.path()).unwrap();
        assert_eq!(s.rows[0].date, date("2015-01-02"));
        assert_eq!(s.rows[1].date, date("2015-01-05"));
    }

    #[test]
    fn csv_missing_file() {
        assert!(matches!(
            load_eod_csv("/nonexistent/NOPE.csv"),
            Err(MarketDataError::MissingFile(_))
        ));
    }

    #[test]
    fn duplicate_date_rejected() {
        let rows = vec![
            EodRow { date: date("2015-01-02"), open: 1.0, close: 1.0, volume: 0.0 },
            EodRow { date: date("2015-01-02"), open: 1.0, close: 1.0, volume: 0.0 },
        ];
        assert!(matches!(AssetSeries::new("A", rows), Err(MarketDataError::DuplicateDate(_))));
    }

    #[test]
    fn align_identical_dates() {
        let x = daily_series("X", "2015-01-01", &[1.0; 10]);
        let y = daily_series("Y", "2015-01-01", &[2.0; 10]);
        let p = align_pair(&x, &y).unwrap();
        assert_eq!(p.len(), 10);
    }

    #[test]
    fn align_drops_extra_date() {
        let x = daily_series("X", "2015-01-01", &[1.0, 1.0, 1.0]);
        let y = daily_series("Y", "2015-01-01", &[2.0, 2.0]);
        let p = align_pair(&x, &y).unwrap();
        assert_eq!(p.len(), 2);
        assert!(!p.x.dates().any(|d| d == date("2015-01-03")));
    }

    #[test]
    fn align_disjoint_fails() {
        let x = daily_series("X", "2015-01-01", &[1.0, 1.0]);
        let y = daily_series("Y", "2016-01-01", &[2.0, 2.0]);
        assert!(matches!(align_pair(&x, &y), Err(MarketDataError::InsufficientOverlap)));
    }

    #[test]
    fn align_commutative_in_dates() {
        let x = daily_series("X", "2015-01-01", &[1.0, 1.0, 1.0, 1.0]);
        let y = daily_series("Y", "2015-01-02", &[2.0, 2.0, 2.0, 2.0]);
        let a = align_pair(&x, &y).unwrap();
        let b = align_pair(&y, &x).unwrap();
        assert_eq!(a.dates(), b.dates());
    }

    #[test]
    fn simple_returns() {
        let s = daily_series("X", "2015-01-01", &[100.0, 110.0, 110.0, 99.0]);
        assert!((simple_return(&s, 1).unwrap() - 0.10).abs() < 1e-12);
        assert_eq!(simple_return(&s, 2).unwrap(), 0.0);
        assert!((simple_return(&s, 3).unwrap() + 0.10).abs() < 1e-12);
        assert!(matches!(simple_return(&s, 0), Err(MarketDataError::IndexOutOfRange(0))));
        assert!(matches!(simple_return(&s, 4), Err(MarketDataError::IndexOutOfRange(4))));
    }

    proptest! {
        #[test]
        fn simple_return_scale_invariant(scale in 0.01f64..100.0, closes in proptest::collection::vec(1.0f64..500.0, 2..20)) {
            let s = daily_series("X", "2015-01-01", &closes);
            let scaled: Vec<f64> = closes.iter().map(|c| c * scale).collect();
            let s2 = daily_series("X", "2015-01-01", &scaled);
            for t in 1..s.len() {
                let a = simple_return(&s, t).unwrap();
                let b = simple_return(&s2, t).unwrap();
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn log_normalize_constant_channel_fails() {
        let x = daily_series("X", "2015-01-01", &[5.0, 5.0, 5.0]);
        let y = daily_series("Y", "2015-01-01", &[1.0, 2.0, 3.0]);
        let p = align_pair(&x, &y).unwrap();
        let range = DateRange::new(date("2015-01-01"), date("2015-02-01"));
        assert!(matches!(log_normalize(&p, &range), Err(MarketDataError::ZeroVariance(_))));
    }

    #[test]
    fn log_normalize_standardizes_fit_range() {
        let e = std::f64::consts::E;
        // closes [e, e^2] -> logs [1, 2] -> standardized [-1, 1]
        let x = series("X", &[("2015-01-01", e, e, 10.0), ("2015-01-02", e * e, e * e, 20.0)]);
        let y = series("Y", &[("2015-01-01", 2.0, 3.0, 10.0), ("2015-01-02", 4.0, 5.0, 20.0)]);
        let p = align_pair(&x, &y).unwrap();
        let range = DateRange::new(date("2015-01-01"), date("2015-02-01"));
        let feats = log_normalize(&p, &range).unwrap();
        assert!((feats[0][1] + 1.0).abs() < 1e-12);
        assert!((feats[1][1] - 1.0).abs() < 1e-12);
        // every channel standardized to mean 0, stdev 1 over the fit range
        for ch in 0..6 {
            let m = (feats[0][ch] + feats[1][ch]) / 2.0;
            let v = ((feats[0][ch] - m).powi(2) + (feats[1][ch] - m).powi(2)) / 2.0;
            assert!(m.abs() < 1e-9);
            assert!((v.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn log_normalize_uses_only_fit_statistics() {
        let mut closes: Vec<f64> = (0..30).map(|i| 50.0 + (i as f64).sin() * 3.0 + i as f64).collect();
        let x = daily_series("X", "2015-01-01", &closes);
        let y = daily_series("Y", "2015-01-01", &closes.iter().map(|c| c * 0.5 + 7.0).collect::<Vec<_>>());
        let p = align_pair(&x, &y).unwrap();
        let fit = DateRange::new(date("2015-01-01"), date("2015-01-16"));
        let a = log_normalize(&p, &fit).unwrap();
        // mutate prices after the fit range
        for c in closes.iter_mut().skip(20) {
            *c *= 3.0;
        }
        let x2 = daily_series("X", "2015-01-01", &closes);
        let p2 = align_pair(&x2, &p.y).unwrap();
        let b = log_normalize(&p2, &fit).unwrap();
        for i in 0..15 {
            assert_eq!(a[i], b[i]);
        }
    }

    fn long_pair(start: &str, end: &str) -> PairSeries {
        let mut d = date(start);
        let stop = date(end);
        let mut rows_x = Vec::new();
        let mut rows_y = Vec::new();
        let mut i = 0u32;
        while d <= stop {
            let c = 100.0 + (i % 17) as f64;
            rows_x.push(EodRow { date: d, open: c, close: c, volume: 100.0 });
            rows_y.push(EodRow { date: d, open: c * 0.5, close: c * 0.5, volume: 50.0 });
            d = d.succ_opt().unwrap();
            i += 1;
        }
        PairSeries {
            x: AssetSeries::new("X", rows_x).unwrap(),
            y: AssetSeries::new("Y", rows_y).unwrap(),
        }
    }

    #[test]
    fn reference_calendar_yields_eleven_rollings() {
        let pair = long_pair("2015-01-02", "2018-12-31");
        let rollings = make_rollings(&pair, 18, 3, (12, 3, 3)).unwrap();
        assert_eq!(rollings.len(), 11);
        for r in &rollings {
            assert_eq!(add_months(r.train.start, 12), r.train.end);
            assert_eq!(r.train.end, r.validation.start);
            assert_eq!(add_months(r.validation.start, 3), r.validation.end);
            assert_eq!(r.validation.end, r.test.start);
            assert_eq!(add_months(r.test.start, 3), r.test.end);
            assert_eq!(add_months(r.train.start, 18), r.test.end);
        }
    }

    #[test]
    fn twenty_four_month_sample_gives_three_rollings() {
        let pair = long_pair("2015-01-01", "2016-12-31");
        assert_eq!(make_rollings(&pair, 18, 3, (12, 3, 3)).unwrap().len(), 3);
    }

    #[test]
    fn twelve_month_sample_too_short() {
        let pair = long_pair("2015-01-01", "2015-12-31");
        assert!(matches!(
            make_rollings(&pair, 18, 3, (12, 3, 3)),
            Err(MarketDataError::SampleTooShort)
        ));
    }

    #[test]
    fn consecutive_test_ranges_advance_by_stride() {
        let pair = long_pair("2015-01-02", "2018-12-31");
        let rollings = make_rollings(&pair, 18, 3, (12, 3, 3)).unwrap();
        for w in rollings.windows(2) {
            assert_eq!(add_months(w[0].test.start, 3), w[1].test.start);
        }
    }
}
