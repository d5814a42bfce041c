use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};

use chrono::NaiveDate;

use super::TrainError;
use crate::data::{AlignedDataset, SplitLabel};

/// Why rows are being read; only gradient reads are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Gradient,
    Inference,
}

/// Column-oriented model input: target, named exogenous columns and split
/// labels over a contiguous daily index.
#[derive(Debug)]
pub struct Frame {
    dates: Vec<NaiveDate>,
    target: Vec<f64>,
    exog_names: Vec<String>,
    exog: Vec<Vec<f64>>,
    labels: Vec<SplitLabel>,
    gradient_reads: [AtomicUsize; 3],
}

impl Clone for Frame {
    fn clone(&self) -> Self {
        Self {
            dates: self.dates.clone(),
            target: self.target.clone(),
            exog_names: self.exog_names.clone(),
            exog: self.exog.clone(),
            labels: self.labels.clone(),
            gradient_reads: Default::default(),
        }
    }
}

fn label_index(l: SplitLabel) -> usize {
    match l {
        SplitLabel::Train => 0,
        SplitLabel::Validation => 1,
        SplitLabel::Test => 2,
    }
}

impl Frame {
    pub fn new(dates: Vec<NaiveDate>, target: Vec<f64>, labels: Vec<SplitLabel>) -> Result<Self, TrainError> {
        if dates.len() != target.len() || dates.len() != labels.len() {
            return Err(TrainError::Contract(format!(
                "frame columns differ in length: {} dates, {} targets, {} labels",
                dates.len(),
                target.len(),
                labels.len()
            )));
        }
        let frame = Self {
            dates,
            target,
            exog_names: Vec::new(),
            exog: Vec::new(),
            labels,
            gradient_reads: Default::default(),
        };
        for l in SplitLabel::ALL {
            frame.split_range(l)?;
        }
        Ok(frame)
    }

    pub fn with_exog(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self, TrainError> {
        let name = name.into();
        if values.len() != self.len() {
            return Err(TrainError::Contract(format!(
                "exogenous column `{name}` has {} rows, frame has {}",
                values.len(),
                self.len()
            )));
        }
        if self.exog_names.contains(&name) {
            return Err(TrainError::Contract(format!("duplicate exogenous column `{name}`")));
        }
        self.exog_names.push(name);
        self.exog.push(values);
        Ok(self)
    }

    /// Every labelled row of `ds`, with the named liquidity columns.
    pub fn from_dataset(ds: &AlignedDataset, columns: &[String]) -> Result<Self, TrainError> {
        let mut labels = Vec::with_capacity(ds.len());
        for (row, l) in ds.rows().iter().zip(ds.labels()) {
            labels.push(l.ok_or_else(|| TrainError::Contract(format!("row {} has no split label", row.date)))?);
        }
        let rows = ds.rows();
        let mut frame = Self::new(
            rows.iter().map(|r| r.date).collect(),
            rows.iter().map(|r| r.bitcoin_price).collect(),
            labels,
        )?;
        let names = ds.column_names();
        for col in columns {
            let idx = names.iter().position(|n| n == col).ok_or_else(|| {
                TrainError::Contract(format!(
                    "dataset has no column `{col}`; available: {}",
                    names.join(", ")
                ))
            })?;
            let values = rows
                .iter()
                .map(|r| if idx == 0 { r.global } else { r.lags[idx - 1] })
                .collect();
            frame = frame.with_exog(col.clone(), values)?;
        }
        Ok(frame)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn labels(&self) -> &[SplitLabel] {
        &self.labels
    }

    pub fn exog_names(&self) -> &[String] {
        &self.exog_names
    }

    pub fn exog_column(&self, name: &str) -> Option<&[f64]> {
        let i = self.exog_names.iter().position(|n| n == name)?;
        Some(&self.exog[i])
    }

    pub(crate) fn exog_index(&self, name: &str) -> Result<usize, TrainError> {
        self.exog_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| TrainError::Contract(format!("frame has no exogenous column `{name}`")))
    }

    pub(crate) fn exog_at(&self, col: usize, row: usize) -> f64 {
        self.exog[col][row]
    }

    /// Row range of a split; empty when the split has no rows.
    pub fn split_range(&self, label: SplitLabel) -> Result<Range<usize>, TrainError> {
        let first = self.labels.iter().position(|l| *l == label);
        let Some(first) = first else {
            return Ok(0..0);
        };
        let last = self.labels.iter().rposition(|l| *l == label).expect("found first");
        if self.labels[first..=last].iter().any(|l| *l != label) {
            return Err(TrainError::Contract(format!("{label} rows are not contiguous")));
        }
        Ok(first..last + 1)
    }

    /// Origins (last observed row) whose lookback and targets both lie in
    /// the training split.
    pub fn train_origins(&self, lookback: usize, horizon: usize) -> Result<Vec<usize>, TrainError> {
        let r = self.split_range(SplitLabel::Train)?;
        let need = lookback + horizon;
        if r.len() < need {
            return Err(TrainError::Sizing(format!(
                "training split has {} rows; lookback {lookback} + horizon {horizon} needs at least {need}",
                r.len()
            )));
        }
        Ok((r.start + lookback - 1..=r.end - 1 - horizon).collect())
    }

    /// Origins whose `horizon` targets all lie in `label`'s split, stepping
    /// one day. The lookback may reach into earlier rows.
    pub fn eval_origins(&self, label: SplitLabel, lookback: usize, horizon: usize) -> Result<Vec<usize>, TrainError> {
        let r = self.split_range(label)?;
        if r.len() < horizon {
            return Err(TrainError::Sizing(format!(
                "{label} split has {} rows, fewer than horizon {horizon}",
                r.len()
            )));
        }
        if r.start < lookback {
            return Err(TrainError::Sizing(format!(
                "{label} split starts at row {}; lookback {lookback} needs {lookback} earlier rows",
                r.start
            )));
        }
        Ok((r.start - 1..=r.end - 1 - horizon).collect())
    }

    pub(crate) fn record(&self, rows: Range<usize>, access: Access) {
        if access == Access::Gradient {
            for l in &self.labels[rows] {
                self.gradient_reads[label_index(*l)].fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    /// Rows read for gradient computation, per split (train, validation, test).
    pub fn gradient_reads(&self) -> [usize; 3] {
        [0, 1, 2].map(|i| self.gradient_reads[i].load(Ordering::Relaxed))
    }
}
