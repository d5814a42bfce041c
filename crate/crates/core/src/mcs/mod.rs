//! Model confidence set with a moving-block bootstrap.

mod bootstrap;
mod table;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{block_bootstrap_indices, block_starts};
pub use table::{mcs_table, McsTable};

use crate::eval::ErrorMatrix;
use bootstrap::{prefix_sums, resampled_mean};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McsError {
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("csv error: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// Largest studentized loss differential against the set average.
    #[default]
    TMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McsConfig {
    pub alpha: f64,
    pub n_bootstrap: usize,
    /// Block length; `None` uses the forecast horizon.
    pub block_size: Option<usize>,
    pub seed: u64,
    pub statistic: Statistic,
}

impl Default for McsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.10,
            n_bootstrap: 5000,
            block_size: None,
            seed: 0,
            statistic: Statistic::TMax,
        }
    }
}

impl McsConfig {
    pub fn validate(&self) -> Result<(), McsError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(McsError::Config(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if self.n_bootstrap < 100 {
            return Err(McsError::Config(format!(
                "n_bootstrap {} is below 100",
                self.n_bootstrap
            )));
        }
        if self.block_size == Some(0) {
            return Err(McsError::Config("block_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn block_for(&self, horizon: usize) -> usize {
        self.block_size.unwrap_or(horizon)
    }
}

/// Pairwise loss differentials `d[i][j][t] = L_i,t - L_j,t` and their means.
#[derive(Debug, Clone, PartialEq)]
pub struct Differentials {
    pub models: Vec<String>,
    pub series: Vec<Vec<Vec<f64>>>,
    pub means: Vec<Vec<f64>>,
}

pub fn loss_differentials(errors: &ErrorMatrix) -> Result<Differentials, McsError> {
    check_shape(errors)?;
    let cols = &errors.columns;
    let series: Vec<Vec<Vec<f64>>> = cols
        .iter()
        .map(|a| {
            cols.iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect()
        })
        .collect();
    let means = series
        .iter()
        .map(|row| row.iter().map(|d| d.iter().sum::<f64>() / d.len() as f64).collect())
        .collect();
    Ok(Differentials {
        models: errors.models.clone(),
        series,
        means,
    })
}

fn check_shape(errors: &ErrorMatrix) -> Result<(), McsError> {
    if errors.models.len() < 2 {
        return Err(McsError::Contract(format!(
            "need at least 2 models, got {}",
            errors.models.len()
        )));
    }
    if errors.n_points() < 2 {
        return Err(McsError::Contract(format!(
            "need at least 2 evaluation points, got {}",
            errors.n_points()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elimination {
    pub model: String,
    /// MCS p-value, i.e. after the running maximum.
    pub p_value: f64,
}

/// One elimination round. Infinite statistics serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsRound {
    pub round: usize,
    pub statistic: f64,
    pub p: f64,
    pub eliminated: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsResult {
    pub horizon: usize,
    pub alpha: f64,
    /// Models in input order; `p_values` follows the same order.
    pub models: Vec<String>,
    pub p_values: Vec<f64>,
    pub elimination_order: Vec<Elimination>,
    pub surviving_set: Vec<String>,
    pub trace: Vec<McsRound>,
}

impl McsResult {
    pub fn p_value(&self, model: &str) -> Option<f64> {
        self.models.iter().position(|m| m == model).map(|i| self.p_values[i])
    }

    pub fn survives(&self, model: &str) -> bool {
        self.surviving_set.iter().any(|m| m == model)
    }

    pub fn trace_json(&self) -> String {
        serde_json::to_string_pretty(&self.trace).expect("trace serializes")
    }
}

/// Bootstrap means of every model's loss, `[replicate][model]`.
fn bootstrap_means(columns: &[Vec<f64>], block: usize, cfg: &McsConfig) -> Result<Vec<Vec<f64>>, McsError> {
    let n = columns[0].len();
    let prefixes: Vec<Vec<f64>> = columns.iter().map(|c| prefix_sums(c)).collect();
    (0..cfg.n_bootstrap)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            let starts = block_starts(n, block, &mut rng)?;
            Ok(prefixes.iter().map(|p| resampled_mean(p, &starts, block)).collect())
        })
        .collect()
}

/// Studentized statistic; a zero standard error means the differential
/// never moves under resampling.
fn studentize(d: f64, se: f64) -> f64 {
    if se > 0.0 {
        d / se
    } else if d == 0.0 {
        0.0
    } else {
        d.signum() * f64::INFINITY
    }
}

/// Runs the elimination sequence with the `T_max` statistic.
///
/// Elimination continues past the first non-rejection so every model gets a
/// p-value; the surviving set is every model with p-value at least `alpha`.
/// An exactly tied set (no differential moves and all are zero) stops the
/// procedure with p = 1 for every remaining model.
pub fn mcs_run(errors: &ErrorMatrix, cfg: &McsConfig) -> Result<McsResult, McsError> {
    cfg.validate()?;
    check_shape(errors)?;
    let m = errors.models.len();
    let block = cfg.block_for(errors.horizon);
    let n = errors.n_points();
    let means: Vec<f64> = errors
        .columns
        .iter()
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect();
    let boot = bootstrap_means(&errors.columns, block, cfg)?;

    let mut alive: Vec<usize> = (0..m).collect();
    let mut p_values = vec![1.0; m];
    let mut elimination_order = Vec::new();
    let mut trace = Vec::new();
    let mut running = 0.0f64;
    let mut round = 0;
    while alive.len() > 1 {
        round += 1;
        let k = alive.len() as f64;
        let avg = alive.iter().map(|&i| means[i]).sum::<f64>() / k;
        let d: Vec<f64> = alive.iter().map(|&i| means[i] - avg).collect();
        // centred bootstrap deviations of each d_i
        let dev: Vec<Vec<f64>> = boot
            .iter()
            .map(|rep| {
                let avg_b = alive.iter().map(|&i| rep[i]).sum::<f64>() / k;
                alive.iter().zip(&d).map(|(&i, di)| (rep[i] - avg_b) - di).collect()
            })
            .collect();
        let se: Vec<f64> = (0..alive.len())
            .map(|j| (dev.iter().map(|r| r[j] * r[j]).sum::<f64>() / cfg.n_bootstrap as f64).sqrt())
            .collect();
        if se.iter().all(|s| *s == 0.0) && d.iter().all(|v| *v == 0.0) {
            trace.push(McsRound {
                round,
                statistic: 0.0,
                p: 1.0,
                eliminated: None,
            });
            break;
        }
        let t: Vec<f64> = d.iter().zip(&se).map(|(d, s)| studentize(*d, *s)).collect();
        let (worst, stat) =
            t.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |(bj, bt), (j, tj)| if *tj > bt { (j, *tj) } else { (bj, bt) },
            );
        let exceed = dev
            .iter()
            .filter(|r| {
                let t_star = r
                    .iter()
                    .zip(&se)
                    .map(|(x, s)| if *s > 0.0 { x / s } else { 0.0 })
                    .fold(f64::NEG_INFINITY, f64::max);
                t_star >= stat
            })
            .count();
        let p = exceed as f64 / cfg.n_bootstrap as f64;
        running = running.max(p);
        let model = alive.remove(worst);
        p_values[model] = running;
        elimination_order.push(Elimination {
            model: errors.models[model].clone(),
            p_value: running,
        });
        trace.push(McsRound {
            round,
            statistic: stat,
            p,
            eliminated: Some(errors.models[model].clone()),
        });
    }
    let surviving_set = (0..m)
        .filter(|&i| p_values[i] >= cfg.alpha)
        .map(|i| errors.models[i].clone())
        .collect();
    Ok(McsResult {
        horizon: errors.horizon,
        alpha: cfg.alpha,
        models: errors.models.clone(),
        p_values,
        elimination_order,
        surviving_set,
        trace,
    })
}

#[cfg(test)]
mod tests;
