use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::Serialize;

use super::DataError;

/// A single named, date-ordered series.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub name: String,
    observations: Vec<(NaiveDate, f64)>,
}

/// A row that was read but not used, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub source: String,
    pub line: Option<usize>,
    pub date: Option<NaiveDate>,
    pub reason: String,
}

impl RawSeries {
    /// Observations must already be strictly increasing in date.
    pub fn new(name: impl Into<String>, observations: Vec<(NaiveDate, f64)>) -> Result<Self, DataError> {
        let name = name.into();
        if let Some(w) = observations.windows(2).find(|w| w[0].0 >= w[1].0) {
            return Err(DataError::Data(format!(
                "{name}: dates not strictly increasing at {} -> {}",
                w[0].0, w[1].0
            )));
        }
        Ok(Self { name, observations })
    }

    pub fn observations(&self) -> &[(NaiveDate, f64)] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.observations.first().map(|o| o.0)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.observations.last().map(|o| o.0)
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.observations
            .binary_search_by_key(&date, |o| o.0)
            .ok()
            .map(|i| self.observations[i].1)
    }

    /// Most recent observation on or before `date`.
    pub fn as_of(&self, date: NaiveDate) -> Option<(NaiveDate, f64)> {
        let idx = self.observations.partition_point(|o| o.0 <= date);
        idx.checked_sub(1).map(|i| self.observations[i])
    }
}

/// Column names and strictness for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub date_column: String,
    pub value_column: String,
    /// Abort on the first bad row instead of reporting it.
    pub strict: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            date_column: "date".into(),
            value_column: "value".into(),
            strict: false,
        }
    }
}

pub fn parse_date(s: &str) -> Result<NaiveDate, chrono::ParseError> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
}

pub(crate) fn add_days(date: NaiveDate, days: i64) -> NaiveDate {
    if days >= 0 {
        date.checked_add_days(Days::new(days as u64))
    } else {
        date.checked_sub_days(Days::new(days.unsigned_abs()))
    }
    .expect("date arithmetic within calendar range")
}

/// Reads a `date,value` file into a sorted series.
///
/// Rows that fail to parse, or repeat an earlier date, are returned as
/// rejections (or abort the load when `schema.strict`).
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<(RawSeries, Vec<Rejection>), DataError> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?
        .clone();
    let find = |col: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(col))
            .ok_or_else(|| DataError::Schema(format!("{}: missing column `{col}`", path.display())))
    };
    let date_idx = find(&schema.date_column)?;
    let value_idx = find(&schema.value_column)?;

    let mut rows = Vec::new();
    let mut rejections = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let parsed = record.map_err(|e| e.to_string()).and_then(|r| {
            let d = r.get(date_idx).ok_or("missing date field")?;
            let v = r.get(value_idx).ok_or("missing value field")?;
            let date = parse_date(d).map_err(|e| format!("bad date `{d}`: {e}"))?;
            let value: f64 = v.parse().map_err(|_| format!("bad value `{v}`"))?;
            if !value.is_finite() {
                return Err(format!("non-finite value `{v}`"));
            }
            Ok((date, value))
        });
        match parsed {
            Ok(obs) => rows.push((line, obs)),
            Err(reason) if schema.strict => {
                return Err(DataError::Row {
                    path: path.display().to_string(),
                    line,
                    reason,
                })
            }
            Err(reason) => rejections.push(Rejection {
                source: name.clone(),
                line: Some(line),
                date: None,
                reason,
            }),
        }
    }
    rows.sort_by_key(|(line, (d, _))| (*d, *line));
    let mut observations: Vec<(NaiveDate, f64)> = Vec::with_capacity(rows.len());
    for (line, (date, value)) in rows {
        if observations.last().is_some_and(|o| o.0 == date) {
            let reason = format!("duplicate date {date}");
            if schema.strict {
                return Err(DataError::Row {
                    path: path.display().to_string(),
                    line,
                    reason,
                });
            }
            rejections.push(Rejection {
                source: name.clone(),
                line: Some(line),
                date: Some(date),
                reason,
            });
            continue;
        }
        observations.push((date, value));
    }
    Ok((RawSeries::new(name, observations)?, rejections))
}

/// Divides each M2 value by the latest FX quote (local currency per USD) on
/// or before its date. M2 dates with no earlier quote are dropped and reported.
pub fn convert_to_usd(m2: &RawSeries, fx: &RawSeries) -> Result<(RawSeries, Vec<Rejection>), DataError> {
    if m2.is_empty() || fx.is_empty() {
        return Err(DataError::Contract(format!(
            "convert_to_usd needs non-empty inputs ({} has {}, {} has {})",
            m2.name,
            m2.len(),
            fx.name,
            fx.len()
        )));
    }
    if let Some((d, v)) = fx.observations().iter().find(|(_, v)| *v <= 0.0) {
        return Err(DataError::Data(format!(
            "{}: non-positive FX quote {v} on {d}",
            fx.name
        )));
    }
    let mut out = Vec::with_capacity(m2.len());
    let mut rejections = Vec::new();
    for &(date, value) in m2.observations() {
        match fx.as_of(date) {
            Some((_, rate)) => out.push((date, value / rate)),
            None => rejections.push(Rejection {
                source: m2.name.clone(),
                line: None,
                date: Some(date),
                reason: format!("no {} quote on or before {date}", fx.name),
            }),
        }
    }
    Ok((RawSeries::new(m2.name.clone(), out)?, rejections))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_and_sorts() {
        let f = write_tmp("date,value\n2020-01-03,3\n2020-01-01,1\n2020-01-02,2\n");
        let (s, rej) = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert!(rej.is_empty());
        assert_eq!(
            s.observations(),
            &[(d("2020-01-01"), 1.0), (d("2020-01-02"), 2.0), (d("2020-01-03"), 3.0)]
        );
    }

    #[test]
    fn reports_malformed_row_with_line() {
        let f = write_tmp("date,value\n2020-01-01,1\n2020-13-45,2\n2020-01-03,3\n");
        let (s, rej) = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(rej.len(), 1);
        assert_eq!(rej[0].line, Some(3));

        let strict = CsvSchema {
            strict: true,
            ..CsvSchema::default()
        };
        match load_csv(f.path(), &strict).unwrap_err() {
            DataError::Row { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let f = write_tmp("day,value\n2020-01-01,1\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::default()),
            Err(DataError::Schema(_))
        ));
    }

    #[test]
    fn duplicate_dates_are_rejected() {
        let f = write_tmp("date,value\n2020-01-01,1\n2020-01-01,5\n");
        let (s, rej) = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.observations()[0].1, 1.0);
        assert_eq!(rej.len(), 1);
    }

    #[test]
    fn usd_conversion_forward_fills_fx() {
        let m2 = RawSeries::new("m2", vec![(d("2020-01-02"), 100.0)]).unwrap();
        let fx = RawSeries::new("fx", vec![(d("2020-01-01"), 2.0)]).unwrap();
        let (usd, rej) = convert_to_usd(&m2, &fx).unwrap();
        assert!(rej.is_empty());
        assert_eq!(usd.observations(), &[(d("2020-01-02"), 50.0)]);
    }

    #[test]
    fn usd_conversion_identity_and_drop() {
        let m2 = RawSeries::new("m2", vec![(d("2020-01-01"), 7.0), (d("2020-01-05"), 9.0)]).unwrap();
        let ones = RawSeries::new("usd", vec![(d("2020-01-01"), 1.0)]).unwrap();
        assert_eq!(convert_to_usd(&m2, &ones).unwrap().0.observations(), m2.observations());

        let late = RawSeries::new("fx", vec![(d("2020-01-03"), 1.0)]).unwrap();
        let (usd, rej) = convert_to_usd(&m2, &late).unwrap();
        assert_eq!(usd.len(), 1);
        assert_eq!(rej.len(), 1);

        let bad = RawSeries::new("fx", vec![(d("2020-01-01"), 0.0)]).unwrap();
        assert!(matches!(convert_to_usd(&m2, &bad), Err(DataError::Data(_))));
    }
}
