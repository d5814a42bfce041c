//! Loss, optimizer, input scaling and the early-stopped training loop.

mod adam;
mod frame;
mod norm;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{Adam, AdamParams};
pub use frame::{Access, Frame};
pub use norm::{denormalize, normalize, Assembled, EndogScaling, ExogScaling, NormState, Scaler, STD_FLOOR};

use crate::data::SplitLabel;
use crate::model::{Checkpoint, Mode, Model, ModelConfig, ModelError};
use crate::tensor::{ParamStore, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("sizing error: {0}")]
    Sizing(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

/// Mean squared error of two equal-length slices.
pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64, TrainError> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(TrainError::Contract(format!(
            "mse needs equal non-empty lengths, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Recorded MSE between a prediction and a constant target.
pub fn mse_loss(tape: &Tape, y_hat: Var, y: &Tensor) -> Result<Var, TensorError> {
    let diff = tape.sub(y_hat, tape.constant(y.clone()))?;
    Ok(tape.mean(tape.mul(diff, diff)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamParams,
    pub endog_scaling: EndogScaling,
    pub exog_scaling: ExogScaling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 5e-5,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            adam: AdamParams::default(),
            endog_scaling: EndogScaling::Instance,
            exog_scaling: ExogScaling::Frozen,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(TrainError::Config(
                "batch_size, patience and max_epochs must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub best_val_mse: f64,
}

impl TrainReport {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.log {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// A model together with the scaling it was trained with; produces raw-scale
/// forecasts.
#[derive(Debug, Clone)]
pub struct Forecaster {
    pub model: Model,
    pub scaler: Scaler,
}

impl Forecaster {
    /// Fits the scaler on `frame`'s training split for `model`'s inputs.
    pub fn new(model: Model, frame: &Frame, endog: EndogScaling, exog: ExogScaling) -> Result<Self, TrainError> {
        let names = match model.config() {
            ModelConfig::TimeXer(c) if c.use_exogenous => c.exog_labels,
            _ => Vec::new(),
        };
        let scaler = Scaler::fit(frame, &names, endog, exog)?;
        Ok(Self { model, scaler })
    }

    pub fn lookback(&self) -> usize {
        self.model.lookback()
    }

    pub fn horizon(&self) -> usize {
        self.model.horizon()
    }

    pub fn assemble(
        &self,
        frame: &Frame,
        origins: &[usize],
        with_targets: bool,
        access: Access,
    ) -> Result<Assembled, TrainError> {
        self.scaler
            .assemble(frame, origins, self.lookback(), self.horizon(), with_targets, access)
    }

    /// Raw-scale forecasts, one `Vec` of length H per origin.
    pub fn forecast(&self, frame: &Frame, origins: &[usize]) -> Result<Vec<Vec<f64>>, TrainError> {
        let h = self.horizon();
        let mut out = Vec::with_capacity(origins.len());
        for chunk in origins.chunks(256) {
            let a = self.assemble(frame, chunk, false, Access::Inference)?;
            let pred = self.model.predict(&a.batch)?;
            for (row, state) in pred.data().chunks(h).zip(&a.states) {
                out.push(denormalize(row, state));
            }
        }
        Ok(out)
    }

    /// Raw-scale MSE over every (origin, step) whose targets lie in `label`.
    pub fn split_mse(&self, frame: &Frame, label: SplitLabel) -> Result<f64, TrainError> {
        let origins = frame.eval_origins(label, self.lookback(), self.horizon())?;
        let preds = self.forecast(frame, &origins)?;
        let y = frame.target();
        let h = self.horizon();
        let mut actual = Vec::with_capacity(origins.len() * h);
        for &t in &origins {
            actual.extend_from_slice(&y[t + 1..=t + h]);
        }
        mse(&actual, &preds.concat())
    }

    /// Head-averaged cross-attention of `layer`, averaged again over `origins`.
    pub fn attention(&self, frame: &Frame, origins: &[usize], layer: usize) -> Result<Vec<(String, f64)>, TrainError> {
        if origins.is_empty() {
            return Err(TrainError::Contract("attention needs at least one origin".into()));
        }
        let mut labels = Vec::new();
        let mut total: Vec<f64> = Vec::new();
        for chunk in origins.chunks(256) {
            let a = self.assemble(frame, chunk, false, Access::Inference)?;
            for rec in self.model.extract_cross_attention(&a.batch, layer)? {
                if total.is_empty() {
                    labels = rec.key_labels.clone();
                    total = vec![0.0; labels.len()];
                }
                for (t, w) in total.iter_mut().zip(rec.head_mean()) {
                    *t += w;
                }
            }
        }
        let n = origins.len() as f64;
        Ok(labels.into_iter().zip(total.into_iter().map(|t| t / n)).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(
            &self.model,
            serde_json::to_value(&self.scaler).expect("scaler serializes"),
        )
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, TrainError> {
        let (model, extra) = ck.into_model()?;
        let scaler: Scaler = serde_json::from_value(extra)
            .map_err(|e| TrainError::Model(ModelError::Checkpoint(format!("bad scaler: {e}"))))?;
        Ok(Self { model, scaler })
    }
}

/// Runs epochs until validation stops improving for `patience` epochs or
/// `max_epochs` is reached, then restores the best parameters.
///
/// `epoch` trains one epoch in place and returns the training loss;
/// `validate` scores the current parameters.
pub fn early_stopping<E, V>(
    store: &mut ParamStore,
    max_epochs: usize,
    patience: usize,
    lr: f64,
    mut epoch: E,
    mut validate: V,
) -> Result<TrainReport, TrainError>
where
    E: FnMut(&mut ParamStore, usize) -> Result<f64, TrainError>,
    V: FnMut(&ParamStore) -> Result<f64, TrainError>,
{
    let start = Instant::now();
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;
    let mut log = Vec::new();
    let mut stopped = 0;
    for e in 1..=max_epochs {
        let train_mse = epoch(store, e)?;
        let val_mse = validate(store)?;
        log.push(EpochLog {
            epoch: e,
            train_mse,
            val_mse,
            lr,
            elapsed_ms: start.elapsed().as_millis() as u64,
        });
        stopped = e;
        let improved = match &best {
            None => val_mse.is_finite(),
            Some((_, b, _)) => val_mse < *b,
        };
        if improved {
            best = Some((e, val_mse, store.values().to_vec()));
        } else if e - best.as_ref().map_or(0, |b| b.0) >= patience {
            break;
        }
    }
    let Some((best_epoch, best_val, values)) = best else {
        return Err(TrainError::Contract("validation loss was never finite".into()));
    };
    store.load_values(&values)?;
    Ok(TrainReport {
        log,
        best_epoch,
        stopped_epoch: stopped,
        best_val_mse: best_val,
    })
}

fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | batch as u64);
    rand::RngCore::next_u64(&mut rng)
}

/// Trains `model` on the training split of `frame` with early stopping on
/// raw-scale validation MSE.
pub fn train(model: Model, frame: &Frame, cfg: &TrainConfig) -> Result<(Forecaster, TrainReport), TrainError> {
    cfg.validate()?;
    let (l, h) = (model.lookback(), model.horizon());
    let origins = frame.train_origins(l, h)?;
    frame.eval_origins(SplitLabel::Validation, l, h)?;
    let mut fc = Forecaster::new(model, frame, cfg.endog_scaling, cfg.exog_scaling)?;
    if !fc.model.is_trainable() {
        let val = fc.split_mse(frame, SplitLabel::Validation)?;
        return Ok((
            fc,
            TrainReport {
                log: Vec::new(),
                best_epoch: 0,
                stopped_epoch: 0,
                best_val_mse: val,
            },
        ));
    }

    let mut store = fc.model.params().clone();
    let mut adam = Adam::new(&store, cfg.adam);
    let mut probe = fc.clone();
    let report = early_stopping(
        &mut store,
        cfg.max_epochs,
        cfg.patience,
        cfg.learning_rate,
        |store, epoch| {
            let mut order = origins.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let a = fc.assemble(frame, chunk, true, Access::Gradient)?;
                let target = a.target.expect("targets requested");
                store.zero_grad();
                let tape = Tape::new();
                let mode = Mode::Train {
                    seed: batch_seed(cfg.seed, epoch, bi),
                };
                let out = fc.model.forward_with(&tape, store, &a.batch, mode)?;
                let loss = mse_loss(&tape, out, &target)?;
                total += tape.with_value(loss, |t| t.item()) * chunk.len() as f64;
                tape.backward_into(loss, store)?;
                adam.step(store, cfg.learning_rate)?;
            }
            Ok(total / origins.len() as f64)
        },
        |store| {
            *probe.model.params_mut() = store.clone();
            probe.split_mse(frame, SplitLabel::Validation)
        },
    )?;
    *fc.model.params_mut() = store;
    Ok((fc, report))
}
