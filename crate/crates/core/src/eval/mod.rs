//! Rolling-origin evaluation over the test split and the aligned error
//! matrix consumed by the model confidence set.

use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{parse_date, SplitLabel};
use crate::train::{Forecaster, Frame, TrainError};

/// Reported MSEs are divided by this.
pub const MSE_SCALE: f64 = 1e7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("csv error: {0}")]
    Csv(String),
}

impl From<csv::Error> for EvalError {
    fn from(e: csv::Error) -> Self {
        EvalError::Csv(e.to_string())
    }
}

/// Forecasts of one model at one horizon, one entry per origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub model_name: String,
    pub horizon: usize,
    /// Date of the last observed row at each origin.
    pub origins: Vec<NaiveDate>,
    pub predictions: Vec<Vec<f64>>,
    pub actuals: Vec<Vec<f64>>,
    pub mse_raw: f64,
    pub mse_scaled: f64,
}

impl ForecastReport {
    /// Builds a report and scores it.
    pub fn new(
        model_name: impl Into<String>,
        horizon: usize,
        origins: Vec<NaiveDate>,
        predictions: Vec<Vec<f64>>,
        actuals: Vec<Vec<f64>>,
    ) -> Result<Self, EvalError> {
        let mut r = Self {
            model_name: model_name.into(),
            horizon,
            origins,
            predictions,
            actuals,
            mse_raw: f64::NAN,
            mse_scaled: f64::NAN,
        };
        (r.mse_raw, r.mse_scaled) = score(&r)?;
        Ok(r)
    }

    /// Squared errors, origin-major then step.
    pub fn squared_errors(&self) -> Vec<f64> {
        self.predictions
            .iter()
            .zip(&self.actuals)
            .flat_map(|(p, a)| p.iter().zip(a).map(|(p, a)| (p - a) * (p - a)))
            .collect()
    }

    /// MSE at each forecast step, averaged over origins.
    pub fn step_mse(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon];
        for (p, a) in self.predictions.iter().zip(&self.actuals) {
            for (s, (p, a)) in p.iter().zip(a).enumerate() {
                out[s] += (p - a) * (p - a);
            }
        }
        let n = self.origins.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }
}

/// Forecasts every test origin, stepping one day, with targets kept inside
/// the test split. Lookback windows may reach back into earlier splits.
pub fn rolling_origin(model_name: &str, fc: &Forecaster, frame: &Frame) -> Result<ForecastReport, EvalError> {
    let h = fc.horizon();
    let rows = frame.eval_origins(SplitLabel::Test, fc.lookback(), h)?;
    let predictions = fc.forecast(frame, &rows)?;
    let y = frame.target();
    let actuals = rows.iter().map(|&t| y[t + 1..=t + h].to_vec()).collect();
    let origins = rows.iter().map(|&t| frame.dates()[t]).collect();
    ForecastReport::new(model_name, h, origins, predictions, actuals)
}

/// Mean squared error over every (origin, step), raw and scaled.
///
/// The raw value is rounded through the scaled one so that
/// `scaled * MSE_SCALE == raw` holds exactly.
pub fn score(report: &ForecastReport) -> Result<(f64, f64), EvalError> {
    let n = report.origins.len();
    if n == 0 {
        return Err(EvalError::Contract(format!(
            "report for `{}` has no origins",
            report.model_name
        )));
    }
    if report.predictions.len() != n || report.actuals.len() != n {
        return Err(EvalError::Contract(format!(
            "report for `{}` has {n} origins, {} predictions and {} actuals",
            report.model_name,
            report.predictions.len(),
            report.actuals.len()
        )));
    }
    if let Some(i) =
        (0..n).find(|&i| report.predictions[i].len() != report.horizon || report.actuals[i].len() != report.horizon)
    {
        return Err(EvalError::Contract(format!(
            "origin {} of `{}` does not hold {} steps",
            report.origins[i], report.model_name, report.horizon
        )));
    }
    let errors = report.squared_errors();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    let scaled = mean / MSE_SCALE;
    Ok((scaled * MSE_SCALE, scaled))
}

/// Squared errors of several models on identical (origin, step) points.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMatrix {
    pub horizon: usize,
    pub origins: Vec<NaiveDate>,
    pub models: Vec<String>,
    /// One column per model, origin-major then step.
    pub columns: Vec<Vec<f64>>,
}

impl ErrorMatrix {
    pub fn new(
        horizon: usize,
        origins: Vec<NaiveDate>,
        models: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self, EvalError> {
        if horizon == 0 {
            return Err(EvalError::Contract("error matrix horizon must be positive".into()));
        }
        if models.len() != columns.len() {
            return Err(EvalError::Contract(format!(
                "{} model names for {} columns",
                models.len(),
                columns.len()
            )));
        }
        let n = origins.len() * horizon;
        if let Some((m, c)) = models.iter().zip(&columns).find(|(_, c)| c.len() != n) {
            return Err(EvalError::Contract(format!(
                "column `{m}` has {} points, expected {n}",
                c.len()
            )));
        }
        Ok(Self {
            horizon,
            origins,
            models,
            columns,
        })
    }

    pub fn n_points(&self) -> usize {
        self.origins.len() * self.horizon
    }

    pub fn column(&self, model: &str) -> Option<&[f64]> {
        self.models
            .iter()
            .position(|m| m == model)
            .map(|i| self.columns[i].as_slice())
    }

    /// Keeps only `models`, in the given order.
    pub fn select(&self, models: &[String]) -> Result<Self, EvalError> {
        let columns = models
            .iter()
            .map(|m| {
                self.column(m)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| EvalError::Contract(format!("error matrix has no model `{m}`")))
            })
            .collect::<Result<_, _>>()?;
        Self::new(self.horizon, self.origins.clone(), models.to_vec(), columns)
    }

    /// CSV with columns `origin_date,step,<models…>`; steps count from 1.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec!["origin_date".to_string(), "step".to_string()];
        header.extend(self.models.iter().cloned());
        w.write_record(&header)?;
        for (i, origin) in self.origins.iter().enumerate() {
            for s in 0..self.horizon {
                let p = i * self.horizon + s;
                let mut rec = vec![origin.to_string(), (s + 1).to_string()];
                rec.extend(self.columns.iter().map(|c| c[p].to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| EvalError::Csv(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, EvalError> {
        let mut r = csv::Reader::from_reader(r);
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "origin_date" || &header[1] != "step" {
            return Err(EvalError::Csv("expected header `origin_date,step,<models…>`".into()));
        }
        let models: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let mut origins = Vec::new();
        let mut columns = vec![Vec::new(); models.len()];
        let mut horizon = 0;
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| EvalError::Csv(format!("row {}: bad {what}", line + 2));
            let date = parse_date(&rec[0]).map_err(|_| bad("origin_date"))?;
            let step: usize = rec[1].parse().map_err(|_| bad("step"))?;
            if step == 1 {
                origins.push(date);
            } else if origins.last() != Some(&date) {
                return Err(bad("step order"));
            }
            horizon = horizon.max(step);
            for (c, v) in columns.iter_mut().zip(rec.iter().skip(2)) {
                c.push(v.parse::<f64>().map_err(|_| bad("error value"))?);
            }
        }
        Self::new(horizon, origins, models, columns)
    }
}

/// Aligns reports of one horizon into an error matrix.
pub fn build_error_matrix(reports: &[ForecastReport]) -> Result<ErrorMatrix, EvalError> {
    let Some(first) = reports.first() else {
        return Err(EvalError::Contract("no reports to align".into()));
    };
    for r in &reports[1..] {
        if r.horizon != first.horizon {
            return Err(EvalError::Contract(format!(
                "`{}` has horizon {}, `{}` has {}",
                r.model_name, r.horizon, first.model_name, first.horizon
            )));
        }
        let n = first.origins.len().max(r.origins.len());
        if let Some(i) = (0..n).find(|&i| first.origins.get(i) != r.origins.get(i)) {
            let origin = first
                .origins
                .get(i)
                .or(r.origins.get(i))
                .expect("index below max length");
            return Err(EvalError::Contract(format!(
                "`{}` and `{}` disagree at origin {origin}",
                first.model_name, r.model_name
            )));
        }
        if let Some(i) = (0..n).find(|&i| first.actuals[i] != r.actuals[i]) {
            return Err(EvalError::Contract(format!(
                "`{}` and `{}` have different actuals at origin {}",
                first.model_name, r.model_name, first.origins[i]
            )));
        }
    }
    ErrorMatrix::new(
        first.horizon,
        first.origins.clone(),
        reports.iter().map(|r| r.model_name.clone()).collect(),
        reports.iter().map(ForecastReport::squared_errors).collect(),
    )
}

/// Scaled MSE table: one row per horizon, one column per model, three
/// decimals. The `origins` column counts the rolling origins averaged.
pub fn write_results_table<W: Write>(reports: &[ForecastReport], w: W) -> Result<(), EvalError> {
    let mut models: Vec<&str> = Vec::new();
    let mut horizons: Vec<usize> = Vec::new();
    for r in reports {
        if !models.contains(&r.model_name.as_str()) {
            models.push(&r.model_name);
        }
        if !horizons.contains(&r.horizon) {
            horizons.push(r.horizon);
        }
    }
    horizons.sort_unstable();
    let mut w = csv::Writer::from_writer(w);
    let mut header = vec!["horizon", "origins"];
    header.extend(&models);
    w.write_record(&header)?;
    for h in horizons {
        let row: Vec<&ForecastReport> = reports.iter().filter(|r| r.horizon == h).collect();
        let mut rec = vec![h.to_string(), row[0].origins.len().to_string()];
        for m in &models {
            rec.push(
                row.iter()
                    .find(|r| r.model_name == *m)
                    .map_or(String::new(), |r| format!("{:.3}", r.mse_scaled)),
            );
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| EvalError::Csv(e.to_string()))
}

/// Per-origin predictions for plotting: `model,horizon,origin_date,step,prediction,actual`.
pub fn write_predictions<W: Write>(reports: &[ForecastReport], w: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["model", "horizon", "origin_date", "step", "prediction", "actual"])?;
    for r in reports {
        for ((o, p), a) in r.origins.iter().zip(&r.predictions).zip(&r.actuals) {
            for (s, (p, a)) in p.iter().zip(a).enumerate() {
                w.write_record([
                    r.model_name.clone(),
                    r.horizon.to_string(),
                    o.to_string(),
                    (s + 1).to_string(),
                    p.to_string(),
                    a.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| EvalError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig, WindowConfig};
    use crate::synthetic::{daily_dates, split_labels};
    use crate::train::{EndogScaling, ExogScaling};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(frame: &Frame, l: usize, h: usize) -> Forecaster {
        let model = Model::new(
            &ModelConfig::Naive(WindowConfig {
                lookback: l,
                horizon: h,
            }),
            0,
        )
        .unwrap();
        Forecaster::new(model, frame, EndogScaling::Instance, ExogScaling::Frozen).unwrap()
    }

    fn frame(target: Vec<f64>, train: usize, val: usize, test: usize) -> Frame {
        let start = parse_date("2024-01-01").unwrap();
        Frame::new(daily_dates(start, target.len()), target, split_labels(train, val, test)).unwrap()
    }

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.37).sin() * 50.0 + i as f64).collect()
    }

    #[test]
    fn origin_count_for_a_120_day_test_split() {
        let f = frame(ramp(400), 200, 80, 120);
        for h in [7, 14, 21, 28, 35, 42, 49, 56, 63, 70] {
            let r = rolling_origin("naive", &naive(&f, 30, h), &f).unwrap();
            assert_eq!(r.origins.len(), 120 - h + 1);
            let first = f.split_range(SplitLabel::Test).unwrap().start;
            assert_eq!(r.origins[0], f.dates()[first - 1]);
            assert_eq!(r.mse_scaled * MSE_SCALE, r.mse_raw);
        }
        let r = rolling_origin("naive", &naive(&f, 30, 70), &f).unwrap();
        assert_eq!(r.origins.len(), 51);
    }

    #[test]
    fn test_split_equal_to_horizon_has_one_origin() {
        let f = frame(ramp(100), 60, 20, 20);
        let r = rolling_origin("naive", &naive(&f, 10, 20), &f).unwrap();
        assert_eq!(r.origins.len(), 1);
        assert_eq!(r.actuals[0], f.target()[80..].to_vec());
    }

    #[test]
    fn short_test_split_is_a_sizing_error() {
        let f = frame(ramp(100), 60, 20, 20);
        let e = rolling_origin("naive", &naive(&f, 10, 21), &f).unwrap_err();
        assert!(matches!(e, EvalError::Train(TrainError::Sizing(_))), "{e}");
    }

    #[test]
    fn naive_on_constant_series_is_exact() {
        let f = frame(vec![42.5; 90], 50, 20, 20);
        let r = rolling_origin("naive", &naive(&f, 7, 7), &f).unwrap();
        assert_eq!(r.mse_raw, 0.0);
    }

    fn single(pred: Vec<f64>, actual: Vec<f64>) -> ForecastReport {
        let h = pred.len();
        ForecastReport::new(
            "m",
            h,
            vec![parse_date("2025-01-01").unwrap()],
            vec![pred],
            vec![actual],
        )
        .unwrap()
    }

    #[test]
    fn hand_scores() {
        let r = single(vec![1.0, 2.0], vec![0.0, 0.0]);
        assert_eq!(r.mse_raw, 2.5);
        let e = 1e7f64.sqrt();
        let r = single(vec![e, -e, e], vec![0.0; 3]);
        assert!((r.mse_scaled - 1.0).abs() < 1e-15);
        let r = single(vec![0.0; 2], vec![0.0; 2]);
        assert_eq!((r.mse_raw, r.mse_scaled), (0.0, 0.0));
    }

    #[test]
    fn empty_report_is_rejected() {
        let e = ForecastReport::new("m", 3, vec![], vec![], vec![]).unwrap_err();
        assert!(matches!(e, EvalError::Contract(_)));
    }

    fn random_report(name: &str, seed: u64, n: usize, h: usize) -> ForecastReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let origins = daily_dates(parse_date("2025-01-01").unwrap(), n);
        let actuals: Vec<Vec<f64>> = (0..n).map(|i| (0..h).map(|s| (i + s) as f64).collect()).collect();
        let predictions = actuals
            .iter()
            .map(|a| a.iter().map(|v| v + rng.gen_range(-1e4..1e4)).collect())
            .collect();
        ForecastReport::new(name, h, origins, predictions, actuals).unwrap()
    }

    #[test]
    fn score_matches_flat_recomputation() {
        let r = random_report("m", 9, 37, 5);
        let mut dump = Vec::new();
        write_predictions(std::slice::from_ref(&r), &mut dump).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for rec in csv::Reader::from_reader(dump.as_slice()).records() {
            let rec = rec.unwrap();
            let p: f64 = rec[4].parse().unwrap();
            let a: f64 = rec[5].parse().unwrap();
            total += (p - a) * (p - a);
            count += 1;
        }
        assert_eq!(count, 37 * 5);
        let flat = total / count as f64;
        assert!((r.mse_raw - flat).abs() <= 1e-12 * flat);
        assert_eq!(r.step_mse().len(), 5);
        let mean_of_steps = r.step_mse().iter().sum::<f64>() / 5.0;
        assert!((mean_of_steps - flat).abs() <= 1e-12 * flat);
    }

    proptest! {
        #[test]
        fn scaled_times_scale_is_raw(errs in prop::collection::vec(-1e5f64..1e5, 1..40)) {
            let r = single(errs.clone(), vec![0.0; errs.len()]);
            prop_assert_eq!(r.mse_scaled * MSE_SCALE, r.mse_raw);
        }

        #[test]
        fn mse_ignores_origin_order(seed in 0u64..1000) {
            let r = random_report("m", seed, 12, 3);
            let mut idx: Vec<usize> = (0..12).collect();
            idx.reverse();
            idx.swap(0, (seed % 12) as usize);
            let shuffled = ForecastReport::new(
                "m",
                3,
                idx.iter().map(|&i| r.origins[i]).collect(),
                idx.iter().map(|&i| r.predictions[i].clone()).collect(),
                idx.iter().map(|&i| r.actuals[i].clone()).collect(),
            )
            .unwrap();
            prop_assert!((shuffled.mse_raw - r.mse_raw).abs() <= 1e-12 * r.mse_raw);
        }
    }

    #[test]
    fn identical_models_give_identical_columns() {
        let a = random_report("a", 1, 10, 4);
        let mut b = a.clone();
        b.model_name = "b".into();
        let m = build_error_matrix(&[a, b]).unwrap();
        assert_eq!(m.columns[0], m.columns[1]);
        assert_eq!(m.n_points(), 40);
    }

    #[test]
    fn missing_origin_is_named() {
        let a = random_report("a", 1, 10, 4);
        let mut b = random_report("b", 2, 10, 4);
        let dropped = b.origins[6];
        b.origins.remove(6);
        b.predictions.remove(6);
        b.actuals.remove(6);
        let e = build_error_matrix(&[a, b]).unwrap_err().to_string();
        assert!(e.contains(&dropped.to_string()), "{e}");
    }

    #[test]
    fn column_means_reproduce_report_mse() {
        let reports: Vec<_> = (0..3).map(|i| random_report(&format!("m{i}"), i, 25, 6)).collect();
        let m = build_error_matrix(&reports).unwrap();
        for (c, r) in m.columns.iter().zip(&reports) {
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            assert!((mean - r.mse_raw).abs() <= 1e-12 * r.mse_raw);
        }
    }

    #[test]
    fn error_matrix_csv_round_trip() {
        let reports: Vec<_> = (0..2).map(|i| random_report(&format!("m{i}"), i, 8, 3)).collect();
        let m = build_error_matrix(&reports).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = ErrorMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(String::from_utf8(buf).unwrap().starts_with("origin_date,step,m0,m1\n"));
    }

    #[test]
    fn results_table_layout() {
        let mut reports = vec![random_report("a", 1, 5, 2), random_report("b", 2, 5, 2)];
        reports.push(random_report("a", 3, 4, 7));
        let mut buf = Vec::new();
        write_results_table(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "horizon,origins,a,b");
        assert!(lines[1].starts_with("2,5,"));
        assert!(lines[2].starts_with("7,4,") && lines[2].ends_with(','));
        let cell = lines[1].split(',').nth(2).unwrap();
        assert_eq!(cell, format!("{:.3}", reports[0].mse_scaled));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let f = frame(ramp(300), 200, 50, 50);
        let fc = naive(&f, 14, 7);
        assert_eq!(
            rolling_origin("n", &fc, &f).unwrap(),
            rolling_origin("n", &fc, &f).unwrap()
        );
    }
}
