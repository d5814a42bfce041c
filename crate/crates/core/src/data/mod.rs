//! Liquidity ingestion: USD conversion, aggregation, lead shift, dense lag
//! features and leakage-free split labelling.

mod dataset;
mod series;

pub use dataset::{
    audit_no_lookahead, build_lag_features, AlignedDataset, AlignedRow, AuditReport, RowSources, SplitCounts,
    SplitLabel, SplitSpec, Violation,
};
pub use series::{convert_to_usd, load_csv, parse_date, CsvSchema, RawSeries, Rejection};

use chrono::NaiveDate;
use serde::Serialize;
use thiserror::Error;

pub(crate) use series::add_days;

/// Lag offsets in days used for the dense lag configuration.
pub const LAG_OFFSETS: [u32; 15] = [1, 7, 14, 21, 28, 35, 42, 49, 56, 63, 70, 77, 84, 91, 98];

/// Twelve weeks.
pub const DEFAULT_SHIFT_DAYS: i64 = 84;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{path}:{line}: {reason}")]
    Row { path: String, line: usize, reason: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("no fully covered rows: {0}")]
    EmptyDataset(String),
}

/// Inclusive daily calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let end = self.end;
        self.start.iter_days().take_while(move |d| *d <= end)
    }

    pub fn len(&self) -> usize {
        ((self.end - self.start).num_days() + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One aggregated liquidity value and the date it was first observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LiquidityPoint {
    pub date: NaiveDate,
    pub value: f64,
    /// Calendar date of the underlying observation before any shift.
    pub source_date: NaiveDate,
}

/// Aggregated USD liquidity, possibly shifted in time.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalLiquiditySeries {
    points: Vec<LiquidityPoint>,
}

impl GlobalLiquiditySeries {
    pub fn from_points(points: Vec<LiquidityPoint>) -> Result<Self, DataError> {
        if let Some(w) = points.windows(2).find(|w| w[0].date >= w[1].date) {
            return Err(DataError::Data(format!(
                "liquidity dates not strictly increasing at {}",
                w[1].date
            )));
        }
        Ok(Self { points })
    }

    /// Forward-fills an already-aggregated series onto its own daily calendar.
    pub fn from_series(series: &RawSeries) -> Result<Self, DataError> {
        let (Some(start), Some(end)) = (series.first_date(), series.last_date()) else {
            return Err(DataError::Contract("liquidity series is empty".into()));
        };
        aggregate_global(std::slice::from_ref(series), DateRange::new(start, end))
    }

    pub fn points(&self) -> &[LiquidityPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, date: NaiveDate) -> Option<&LiquidityPoint> {
        self.points
            .binary_search_by_key(&date, |p| p.date)
            .ok()
            .map(|i| &self.points[i])
    }
}

/// Sums forward-filled USD constituents on each calendar day.
///
/// A day is emitted only when every constituent has an observation on or
/// before it. Constituents are summed in name order so the result does not
/// depend on the order of `series`.
pub fn aggregate_global(series: &[RawSeries], calendar: DateRange) -> Result<GlobalLiquiditySeries, DataError> {
    if series.is_empty() {
        return Err(DataError::Contract("aggregate_global needs at least one series".into()));
    }
    let mut ordered: Vec<&RawSeries> = series.iter().collect();
    ordered.sort_by(|a, b| a.name.cmp(&b.name));
    if let Some(w) = ordered.windows(2).find(|w| w[0].name == w[1].name) {
        return Err(DataError::Contract(format!("duplicate constituent `{}`", w[0].name)));
    }

    let mut points = Vec::with_capacity(calendar.len());
    // cursor per constituent: index of the first observation after the current day
    let mut cursors = vec![0usize; ordered.len()];
    'days: for day in calendar.days() {
        let mut total = 0.0;
        for (s, cur) in ordered.iter().zip(cursors.iter_mut()) {
            let obs = s.observations();
            while *cur < obs.len() && obs[*cur].0 <= day {
                *cur += 1;
            }
            if *cur == 0 {
                continue 'days;
            }
            total += obs[*cur - 1].1;
        }
        points.push(LiquidityPoint {
            date: day,
            value: total,
            source_date: day,
        });
    }
    GlobalLiquiditySeries::from_points(points)
}

/// Moves every observation `shift_days` later (earlier when negative),
/// keeping its source date.
pub fn apply_lead_shift(g: &GlobalLiquiditySeries, shift_days: i64) -> GlobalLiquiditySeries {
    GlobalLiquiditySeries {
        points: g
            .points
            .iter()
            .map(|p| LiquidityPoint {
                date: add_days(p.date, shift_days),
                ..*p
            })
            .collect(),
    }
}
