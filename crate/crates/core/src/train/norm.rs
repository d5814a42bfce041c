use serde::{Deserialize, Serialize};

use super::frame::{Access, Frame};
use super::TrainError;
use crate::data::SplitLabel;
use crate::model::Batch;
use crate::tensor::Tensor;

pub const STD_FLOOR: f64 = 1e-8;

/// Mean and (floored, population) standard deviation of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormState {
    pub mean: f64,
    pub std: f64,
}

impl NormState {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt().max(STD_FLOOR),
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Per-sample z-scoring of an endogenous window.
pub fn normalize(window: &[f64]) -> (Vec<f64>, NormState) {
    let s = NormState::of(window);
    (window.iter().map(|v| s.apply(*v)).collect(), s)
}

pub fn denormalize(forecast: &[f64], state: &NormState) -> Vec<f64> {
    forecast.iter().map(|v| state.invert(*v)).collect()
}

/// How the endogenous window is scaled before it reaches the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndogScaling {
    /// Reversible instance normalization, statistics from each window.
    #[default]
    Instance,
    /// One z-score fitted on the training split.
    Frozen,
    /// Window mean removed per sample, divided by the training-split std.
    Level,
}

/// How exogenous columns are scaled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExogScaling {
    /// Per-column z-score fitted on the training split.
    #[default]
    Frozen,
    /// Each column z-scored on its own lookback window.
    Instance,
    /// Window mean removed per column, divided by the training-split std.
    Level,
    /// Scaled with the endogenous window's own state; only meaningful when
    /// the columns share the target's units.
    Shared,
}

/// Input scaling fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub endog: EndogScaling,
    #[serde(default)]
    pub exog_mode: ExogScaling,
    pub target: NormState,
    pub exog_names: Vec<String>,
    pub exog: Vec<NormState>,
}

/// Model-ready inputs for a list of origins.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub batch: Batch,
    pub states: Vec<NormState>,
    /// `[B×H]` normalized targets, when requested.
    pub target: Option<Tensor>,
    /// Raw targets, row-major `[B×H]`, when requested.
    pub target_raw: Option<Vec<f64>>,
}

impl Scaler {
    pub fn fit(
        frame: &Frame,
        exog_names: &[String],
        endog: EndogScaling,
        exog_mode: ExogScaling,
    ) -> Result<Self, TrainError> {
        let r = frame.split_range(SplitLabel::Train)?;
        if r.is_empty() {
            return Err(TrainError::Sizing("training split is empty".into()));
        }
        let mut exog = Vec::with_capacity(exog_names.len());
        for name in exog_names {
            let col = frame.exog_index(name)?;
            let values: Vec<f64> = r.clone().map(|i| frame.exog_at(col, i)).collect();
            exog.push(NormState::of(&values));
        }
        Ok(Self {
            endog,
            exog_mode,
            target: NormState::of(&frame.target()[r]),
            exog_names: exog_names.to_vec(),
            exog,
        })
    }

    fn window_state(&self, window: &[f64]) -> NormState {
        match self.endog {
            EndogScaling::Instance => NormState::of(window),
            EndogScaling::Frozen => self.target,
            EndogScaling::Level => NormState {
                mean: window.iter().sum::<f64>() / window.len() as f64,
                std: self.target.std,
            },
        }
    }

    /// Builds the batch for `origins` (last observed row of each window).
    pub fn assemble(
        &self,
        frame: &Frame,
        origins: &[usize],
        lookback: usize,
        horizon: usize,
        with_targets: bool,
        access: Access,
    ) -> Result<Assembled, TrainError> {
        let b = origins.len();
        let n = self.exog_names.len();
        let cols = self
            .exog_names
            .iter()
            .map(|name| frame.exog_index(name))
            .collect::<Result<Vec<_>, _>>()?;
        let mut endog = Vec::with_capacity(b * lookback);
        let mut exog = Vec::with_capacity(b * lookback * n);
        let mut states = Vec::with_capacity(b);
        let mut target = with_targets.then(|| Vec::with_capacity(b * horizon));
        let mut target_raw = with_targets.then(|| Vec::with_capacity(b * horizon));
        let y = frame.target();
        for &t in origins {
            if t + 1 < lookback || (with_targets && t + horizon >= frame.len()) || t >= frame.len() {
                return Err(TrainError::Contract(format!("origin row {t} has no complete window")));
            }
            let start = t + 1 - lookback;
            frame.record(start..t + 1, access);
            let window = &y[start..=t];
            let state = self.window_state(window);
            endog.extend(window.iter().map(|v| state.apply(*v)));
            let col_states: Vec<NormState> = match self.exog_mode {
                ExogScaling::Frozen => self.exog.clone(),
                ExogScaling::Instance => cols
                    .iter()
                    .map(|c| {
                        let w: Vec<f64> = (start..=t).map(|r| frame.exog_at(*c, r)).collect();
                        NormState::of(&w)
                    })
                    .collect(),
                ExogScaling::Shared => vec![state; cols.len()],
                ExogScaling::Level => cols
                    .iter()
                    .zip(&self.exog)
                    .map(|(c, s)| NormState {
                        mean: (start..=t).map(|r| frame.exog_at(*c, r)).sum::<f64>() / lookback as f64,
                        std: s.std,
                    })
                    .collect(),
            };
            for row in start..=t {
                for (c, s) in cols.iter().zip(&col_states) {
                    exog.push(s.apply(frame.exog_at(*c, row)));
                }
            }
            if let (Some(tn), Some(tr)) = (target.as_mut(), target_raw.as_mut()) {
                frame.record(t + 1..t + 1 + horizon, access);
                for v in &y[t + 1..=t + horizon] {
                    tn.push(state.apply(*v));
                    tr.push(*v);
                }
            }
            states.push(state);
        }
        Ok(Assembled {
            batch: Batch {
                endog: Tensor::new(&[b, lookback], endog)?,
                exog: if n > 0 {
                    Some(Tensor::new(&[b, lookback, n], exog)?)
                } else {
                    None
                },
            },
            states,
            target: target.map(|t| Tensor::new(&[b, horizon], t)).transpose()?,
            target_raw,
        })
    }
}
