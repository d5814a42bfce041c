use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{add_days, parse_date, DataError, GlobalLiquiditySeries, RawSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabel {
    Train,
    Validation,
    Test,
}

impl SplitLabel {
    pub const ALL: [SplitLabel; 3] = [SplitLabel::Train, SplitLabel::Validation, SplitLabel::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Validation => "validation",
            SplitLabel::Test => "test",
        }
    }
}

impl fmt::Display for SplitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitLabel {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitLabel::Train),
            "validation" => Ok(SplitLabel::Validation),
            "test" => Ok(SplitLabel::Test),
            other => Err(DataError::Schema(format!("unknown split label `{other}`"))),
        }
    }
}

/// Inclusive date windows for the three splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub val_start: NaiveDate,
    pub val_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
    pub reference_date: NaiveDate,
}

impl SplitSpec {
    /// 2020-01-01 .. 2024-09-23 / .. 2025-01-21 / .. 2025-05-21, anchored on 2025-08-27.
    pub fn standard() -> Self {
        let d = |s| parse_date(s).expect("static date");
        Self {
            train_start: d("2020-01-01"),
            train_end: d("2024-09-23"),
            val_start: d("2024-09-24"),
            val_end: d("2025-01-21"),
            test_start: d("2025-01-22"),
            test_end: d("2025-05-21"),
            reference_date: d("2025-08-27"),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let windows = [
            ("train", self.train_start, self.train_end),
            ("validation", self.val_start, self.val_end),
            ("test", self.test_start, self.test_end),
        ];
        for (name, s, e) in windows {
            if s > e {
                return Err(DataError::Contract(format!(
                    "{name} window starts {s} after it ends {e}"
                )));
            }
        }
        for pair in windows.windows(2) {
            let (a, _, a_end) = pair[0];
            let (b, b_start, _) = pair[1];
            if b_start <= a_end {
                return Err(DataError::Contract(format!("{b} window overlaps or precedes {a}")));
            }
            if add_days(a_end, 1) != b_start {
                return Err(DataError::Contract(format!("gap between {a} and {b} windows")));
            }
        }
        if self.test_end > self.reference_date {
            return Err(DataError::Contract(format!(
                "test window ends {} after reference date {}",
                self.test_end, self.reference_date
            )));
        }
        Ok(())
    }

    pub fn label(&self, date: NaiveDate) -> Option<SplitLabel> {
        if date >= self.train_start && date <= self.train_end {
            Some(SplitLabel::Train)
        } else if date >= self.val_start && date <= self.val_end {
            Some(SplitLabel::Validation)
        } else if date >= self.test_start && date <= self.test_end {
            Some(SplitLabel::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedRow {
    pub date: NaiveDate,
    pub bitcoin_price: f64,
    pub global: f64,
    /// One value per entry of the dataset's lag offsets.
    pub lags: Vec<f64>,
}

/// Pre-shift observation dates behind a row's exogenous cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowSources {
    pub global: NaiveDate,
    pub lags: Vec<NaiveDate>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Rows outside every window, removed by the split.
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDataset {
    lag_offsets: Vec<u32>,
    rows: Vec<AlignedRow>,
    labels: Vec<Option<SplitLabel>>,
    sources: Option<Vec<RowSources>>,
    dropped: usize,
}

impl AlignedDataset {
    pub fn lag_offsets(&self) -> &[u32] {
        &self.lag_offsets
    }

    pub fn rows(&self) -> &[AlignedRow] {
        &self.rows
    }

    pub fn labels(&self) -> &[Option<SplitLabel>] {
        &self.labels
    }

    pub fn sources(&self) -> Option<&[RowSources]> {
        self.sources.as_deref()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut cols = vec!["global".to_string()];
        cols.extend(self.lag_offsets.iter().map(|k| format!("global_lag_{k}")));
        cols
    }

    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts {
            dropped: self.dropped,
            ..SplitCounts::default()
        };
        for l in self.labels.iter().flatten() {
            match l {
                SplitLabel::Train => c.train += 1,
                SplitLabel::Validation => c.validation += 1,
                SplitLabel::Test => c.test += 1,
            }
        }
        c
    }

    /// Keeps rows inside the spec's windows and labels each one.
    pub fn split(&self, spec: &SplitSpec) -> Result<AlignedDataset, DataError> {
        spec.validate()?;
        let (Some(first), Some(last)) = (self.rows.first(), self.rows.last()) else {
            return Err(DataError::EmptyDataset("cannot split an empty dataset".into()));
        };
        if spec.train_start < first.date || spec.test_end > last.date {
            return Err(DataError::Contract(format!(
                "split {}..{} is outside dataset range {}..{}",
                spec.train_start, spec.test_end, first.date, last.date
            )));
        }
        let mut out = AlignedDataset {
            lag_offsets: self.lag_offsets.clone(),
            rows: Vec::new(),
            labels: Vec::new(),
            sources: self.sources.as_ref().map(|_| Vec::new()),
            dropped: 0,
        };
        for (i, row) in self.rows.iter().enumerate() {
            match spec.label(row.date) {
                Some(label) => {
                    out.rows.push(row.clone());
                    out.labels.push(Some(label));
                    if let (Some(dst), Some(src)) = (out.sources.as_mut(), self.sources.as_ref()) {
                        dst.push(src[i].clone());
                    }
                }
                None => out.dropped += 1,
            }
        }
        Ok(out)
    }

    /// Writes `date,bitcoin_price,global,global_lag_*,split`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| DataError::Io(e.to_string());
        let mut header = vec!["date".to_string(), "bitcoin_price".to_string()];
        header.extend(self.column_names());
        header.push("split".into());
        w.write_record(&header).map_err(io)?;
        for (row, label) in self.rows.iter().zip(&self.labels) {
            let mut rec = vec![
                row.date.to_string(),
                row.bitcoin_price.to_string(),
                row.global.to_string(),
            ];
            rec.extend(row.lags.iter().map(f64::to_string));
            rec.push(label.map(SplitLabel::as_str).unwrap_or("").to_string());
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| DataError::Io(e.to_string()))
    }

    /// Reads a file produced by [`AlignedDataset::write_csv`]. Provenance is not stored in
    /// the file, so the result cannot be audited.
    pub fn read_csv<R: Read>(reader: R) -> Result<AlignedDataset, DataError> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers().map_err(|e| DataError::Io(e.to_string()))?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 4
            || cols[0] != "date"
            || cols[1] != "bitcoin_price"
            || cols[2] != "global"
            || cols[cols.len() - 1] != "split"
        {
            return Err(DataError::Schema(format!("unexpected dataset header {cols:?}")));
        }
        let lag_offsets = cols[3..cols.len() - 1]
            .iter()
            .map(|c| {
                c.strip_prefix("global_lag_")
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(|| DataError::Schema(format!("bad lag column `{c}`")))
            })
            .collect::<Result<Vec<u32>, _>>()?;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| DataError::Io(e.to_string()))?;
            let row_err = |reason: String| DataError::Row {
                path: "<dataset>".into(),
                line,
                reason,
            };
            let num = |j: usize| -> Result<f64, DataError> {
                rec.get(j)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| row_err(format!("bad number in column {}", cols[j])))
            };
            let date = parse_date(&rec[0]).map_err(|e| row_err(e.to_string()))?;
            let lags = (3..cols.len() - 1).map(num).collect::<Result<Vec<_>, _>>()?;
            rows.push(AlignedRow {
                date,
                bitcoin_price: num(1)?,
                global: num(2)?,
                lags,
            });
            let label = &rec[cols.len() - 1];
            labels.push(if label.is_empty() { None } else { Some(label.parse()?) });
        }
        Ok(AlignedDataset {
            lag_offsets,
            rows,
            labels,
            sources: None,
            dropped: 0,
        })
    }

    #[doc(hidden)]
    pub fn rows_and_sources_mut(&mut self) -> (&mut [AlignedRow], Option<&mut Vec<RowSources>>) {
        (&mut self.rows, self.sources.as_mut())
    }
}

/// Joins the target with the (already shifted) liquidity series and its lags.
///
/// A row is emitted for each target date where the liquidity value exists on
/// that date and on every `date - k`. With `reference_date`, rows later than
/// `reference_date - max(offsets)` are dropped.
pub fn build_lag_features(
    g: &GlobalLiquiditySeries,
    target: &RawSeries,
    offsets: &[u32],
    reference_date: Option<NaiveDate>,
) -> Result<AlignedDataset, DataError> {
    if offsets.is_empty() {
        return Err(DataError::Contract("lag offsets must be non-empty".into()));
    }
    if offsets.contains(&0) {
        return Err(DataError::Contract("lag offsets must be positive".into()));
    }
    let mut sorted = offsets.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(DataError::Contract("lag offsets must be distinct".into()));
    }
    let max_lag = *sorted.last().expect("non-empty") as i64;
    let cutoff = reference_date.map(|r| add_days(r, -max_lag));

    let mut rows = Vec::new();
    let mut sources = Vec::new();
    'rows: for &(date, price) in target.observations() {
        if cutoff.is_some_and(|c| date > c) {
            break;
        }
        let Some(now) = g.get(date) else { continue };
        let mut lags = Vec::with_capacity(offsets.len());
        let mut lag_sources = Vec::with_capacity(offsets.len());
        for &k in offsets {
            let Some(p) = g.get(add_days(date, -(k as i64))) else {
                continue 'rows;
            };
            lags.push(p.value);
            lag_sources.push(p.source_date);
        }
        rows.push(AlignedRow {
            date,
            bitcoin_price: price,
            global: now.value,
            lags,
        });
        sources.push(RowSources {
            global: now.source_date,
            lags: lag_sources,
        });
    }
    if rows.is_empty() {
        return Err(DataError::EmptyDataset(format!(
            "target `{}` and liquidity series share no date with full lag coverage",
            target.name
        )));
    }
    let n = rows.len();
    Ok(AlignedDataset {
        lag_offsets: offsets.to_vec(),
        rows,
        labels: vec![None; n],
        sources: Some(sources),
        dropped: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub row_date: NaiveDate,
    pub column: String,
    pub source_date: NaiveDate,
    pub latest_allowed: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub reference_date: NaiveDate,
    pub shift_days: i64,
    pub rows_checked: usize,
    pub cells_checked: usize,
    pub last_row_date: Option<NaiveDate>,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every exogenous cell against its provenance: the source date must
/// be no later than the reference date, and no later than
/// `row date - k - shift_days` for lag `k` (`k = 0` for the contemporaneous column).
pub fn audit_no_lookahead(
    dataset: &AlignedDataset,
    shift_days: i64,
    reference_date: NaiveDate,
) -> Result<AuditReport, DataError> {
    let sources = dataset
        .sources()
        .ok_or_else(|| DataError::Contract("dataset carries no provenance to audit".into()))?;
    let mut report = AuditReport {
        reference_date,
        shift_days,
        rows_checked: dataset.len(),
        cells_checked: 0,
        last_row_date: dataset.rows().last().map(|r| r.date),
        violations: Vec::new(),
    };
    let mut check = |row_date: NaiveDate, column: String, k: i64, source: NaiveDate| {
        report.cells_checked += 1;
        let latest = add_days(row_date, -k - shift_days).min(reference_date);
        if source > latest {
            report.violations.push(Violation {
                row_date,
                column,
                source_date: source,
                latest_allowed: latest,
            });
        }
    };
    for (row, src) in dataset.rows().iter().zip(sources) {
        check(row.date, "global".into(), 0, src.global);
        for (&k, &s) in dataset.lag_offsets().iter().zip(&src.lags) {
            check(row.date, format!("global_lag_{k}"), k as i64, s);
        }
    }
    Ok(report)
}
