//! Synthetic series with known structure for tests and experiments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{parse_date, SplitLabel};
use crate::model::{Model, ModelConfig, TimeXerConfig};
use crate::train::{train, ExogScaling, Frame, TrainConfig, TrainError};

/// Cumulative sum of AR(1)-smoothed standard normal increments.
pub fn smooth_random_walk(n: usize, smoothing: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut level = 0.0;
    let mut step = 0.0;
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            step = smoothing * step + (1.0 - smoothing * smoothing).sqrt() * e;
            level += step;
            level
        })
        .collect()
}

/// Zero-mean AR(1) noise with stationary standard deviation `sigma`.
pub fn ar1_noise(n: usize, phi: f64, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let innov = sigma * (1.0 - phi * phi).sqrt();
    let z: f64 = StandardNormal.sample(rng);
    let mut x = sigma * z;
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            x = phi * x + innov * e;
            x
        })
        .collect()
}

/// Contiguous train/validation/test labels.
pub fn split_labels(train: usize, validation: usize, test: usize) -> Vec<SplitLabel> {
    let mut v = vec![SplitLabel::Train; train];
    v.extend(std::iter::repeat_n(SplitLabel::Validation, validation));
    v.extend(std::iter::repeat_n(SplitLabel::Test, test));
    v
}

pub fn daily_dates(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start.iter_days().take(n).collect()
}

/// Target `y_t = g_{t-lead} + AR(1) noise`, with the driver `g` supplied as
/// the exogenous column `global_lag_{lead}`, which therefore leads the target
/// by `lead` days. Each decoy `global_lag_k`
/// holds the driver `k` days after it reaches the target, so it shares the
/// target's units but says nothing the target history has not already said.
#[derive(Debug, Clone)]
pub struct LeadLagTask {
    pub lead: usize,
    pub decoy_lags: Vec<u32>,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub walk_smoothing: f64,
    pub noise_phi: f64,
    pub noise_sigma: f64,
}

impl Default for LeadLagTask {
    fn default() -> Self {
        Self {
            lead: 84,
            decoy_lags: vec![1, 7, 14, 21, 28],
            train: 3000,
            validation: 200,
            test: 200,
            walk_smoothing: 0.9,
            noise_phi: 0.95,
            noise_sigma: 1.0,
        }
    }
}

impl LeadLagTask {
    pub fn informative_label(&self) -> String {
        format!("global_lag_{}", self.lead)
    }

    /// Exogenous column names: the informative one first, then decoys.
    pub fn exog_labels(&self) -> Vec<String> {
        let mut v = vec![self.informative_label()];
        v.extend(self.decoy_lags.iter().map(|k| format!("global_lag_{k}")));
        v
    }

    pub fn frame(&self, seed: u64) -> Result<Frame, TrainError> {
        let n = self.train + self.validation + self.test;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pad = self.decoy_lags.iter().copied().max().unwrap_or(0) as usize;
        let g = smooth_random_walk(pad + n + self.lead, self.walk_smoothing, &mut rng);
        let noise = ar1_noise(n, self.noise_phi, self.noise_sigma, &mut rng);
        // g[pad + i] reaches the target on row i
        let target: Vec<f64> = (0..n).map(|t| g[pad + t] + noise[t]).collect();
        let driver: Vec<f64> = (0..n).map(|t| g[pad + t + self.lead]).collect();
        let start = parse_date("2019-01-01").expect("static date");
        let mut frame = Frame::new(
            daily_dates(start, n),
            target,
            split_labels(self.train, self.validation, self.test),
        )?
        .with_exog(self.informative_label(), driver)?;
        for k in &self.decoy_lags {
            let decoy = (0..n).map(|t| g[pad + t - *k as usize]).collect();
            frame = frame.with_exog(format!("global_lag_{k}"), decoy)?;
        }
        Ok(frame)
    }
}

/// Desk-scale TimeXer settings for the planted lead-lag comparison.
///
/// Exogenous columns are scaled with the target window's statistics, which is
/// sound here because every column shares the target's units.
#[derive(Debug, Clone)]
pub struct LeadLagExperiment {
    pub task: LeadLagTask,
    pub lookback: usize,
    pub d_model: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for LeadLagExperiment {
    fn default() -> Self {
        Self {
            task: LeadLagTask::default(),
            lookback: 64,
            d_model: 32,
            dropout: 0.1,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 40,
            patience: 6,
        }
    }
}

/// Test-split outcome of one seed at one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadLagRun {
    pub seed: u64,
    pub horizon: usize,
    pub exog_mse: f64,
    pub endog_mse: f64,
    /// Layer-0 cross-attention, head-averaged and averaged over test origins.
    pub attention: Vec<(String, f64)>,
}

impl LeadLagRun {
    pub fn attention_argmax(&self) -> &str {
        self.attention
            .iter()
            .fold(None::<&(String, f64)>, |best, a| match best {
                Some(b) if b.1 >= a.1 => Some(b),
                _ => Some(a),
            })
            .map_or("", |a| a.0.as_str())
    }
}

impl LeadLagExperiment {
    pub fn model_config(&self, horizon: usize, exogenous: bool) -> ModelConfig {
        ModelConfig::TimeXer(TimeXerConfig {
            lookback: self.lookback,
            horizon,
            patch_len: 16,
            stride: 16,
            d_model: self.d_model,
            n_layers: 2,
            n_heads: 2,
            d_ff: 2 * self.d_model,
            dropout: self.dropout,
            use_exogenous: exogenous,
            exog_labels: if exogenous { self.task.exog_labels() } else { Vec::new() },
        })
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            exog_scaling: ExogScaling::Shared,
            ..TrainConfig::default()
        }
    }

    /// Trains the exogenous and endogenous variants on one synthetic draw.
    pub fn run(&self, seed: u64, horizon: usize) -> Result<LeadLagRun, TrainError> {
        let frame = self.task.frame(seed)?;
        let fit = |exogenous: bool| {
            let model = Model::new(&self.model_config(horizon, exogenous), seed)?;
            train(model, &frame, &self.train_config(seed)).map(|(fc, _)| fc)
        };
        let exog = fit(true)?;
        let endog = fit(false)?;
        let origins = frame.eval_origins(SplitLabel::Test, self.lookback, horizon)?;
        Ok(LeadLagRun {
            seed,
            horizon,
            exog_mse: exog.split_mse(&frame, SplitLabel::Test)?,
            endog_mse: endog.split_mse(&frame, SplitLabel::Test)?,
            attention: exog.attention(&frame, &origins, 0)?,
        })
    }
}

/// Locations written by [`RawInputs::write`].
#[derive(Debug, Clone)]
pub struct RawInputPaths {
    pub m2_dir: PathBuf,
    pub fx_dir: PathBuf,
    pub bitcoin: PathBuf,
}

/// Synthetic raw inputs in the ingest formats: weekly M2 per economy in local
/// currency, daily FX quotes, and a daily bitcoin price that follows USD
/// liquidity `lead` days later. The first economy is quoted in USD and has no
/// FX file.
#[derive(Debug, Clone)]
pub struct RawInputs {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub economies: Vec<(String, f64, f64)>,
    pub lead: i64,
    pub seed: u64,
}

impl RawInputs {
    /// Economies as `(name, M2 level, FX rate)`.
    pub fn new(start: NaiveDate, end: NaiveDate, seed: u64) -> Self {
        Self {
            start,
            end,
            economies: vec![
                ("us".into(), 2.1e13, 1.0),
                ("ez".into(), 1.5e13, 0.9),
                ("jp".into(), 1.2e15, 140.0),
                ("cn".into(), 2.9e14, 7.1),
            ],
            lead: 84,
            seed,
        }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<RawInputPaths> {
        let paths = RawInputPaths {
            m2_dir: dir.join("m2"),
            fx_dir: dir.join("fx"),
            bitcoin: dir.join("bitcoin.csv"),
        };
        std::fs::create_dir_all(&paths.m2_dir)?;
        std::fs::create_dir_all(&paths.fx_dir)?;
        let dates: Vec<NaiveDate> = self.start.iter_days().take_while(|d| *d <= self.end).collect();
        let n = dates.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut usd = vec![0.0; n];
        for (i, (name, level, rate)) in self.economies.iter().enumerate() {
            let growth = smooth_random_walk(n, 0.95, &mut rng);
            let fx_walk = smooth_random_walk(n, 0.5, &mut rng);
            let m2: Vec<f64> = (0..n)
                .map(|t| level * (0.0003 * t as f64 + 0.004 * growth[t]).exp())
                .collect();
            let fx: Vec<f64> = (0..n).map(|t| rate * (0.003 * fx_walk[t]).exp()).collect();
            let mut text = String::from("date,value\n");
            for t in (0..n).filter(|t| dates[*t].weekday() == chrono::Weekday::Mon) {
                writeln!(text, "{},{}", dates[t], m2[t]).expect("string write");
            }
            std::fs::write(paths.m2_dir.join(format!("{name}.csv")), text)?;
            if i > 0 {
                let mut text = String::from("date,value\n");
                for t in 0..n {
                    writeln!(text, "{},{}", dates[t], fx[t]).expect("string write");
                }
                std::fs::write(paths.fx_dir.join(format!("{name}.csv")), text)?;
            }
            for t in 0..n {
                usd[t] += m2[t] / fx[t];
            }
        }
        let base = usd[0].ln();
        let drift = smooth_random_walk(n, 0.3, &mut rng);
        let mut text = String::from("date,value\n");
        for t in 0..n {
            let led = usd[(t as i64 - self.lead).max(0) as usize].ln() - base;
            writeln!(text, "{},{}", dates[t], 20_000.0 * (3.0 * led + 0.01 * drift[t]).exp()).expect("string write");
        }
        std::fs::write(&paths.bitcoin, text)?;
        Ok(paths)
    }
}
