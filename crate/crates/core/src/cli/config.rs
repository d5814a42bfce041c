//! Experiment configuration: a TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::data::{SplitSpec, DEFAULT_SHIFT_DAYS, LAG_OFFSETS};
use crate::mcs::McsConfig;
use crate::model::{ModelConfig, NBeatsConfig, TimeXerConfig, WindowConfig};
use crate::train::TrainConfig;

pub const DEFAULT_HORIZONS: [usize; 10] = [7, 14, 21, 28, 35, 42, 49, 56, 63, 70];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// One CSV per economy (`date,value`, local currency).
    pub m2_dir: Option<PathBuf>,
    /// FX quotes named like the M2 files (local currency per USD).
    pub fx_dir: Option<PathBuf>,
    /// Bitcoin prices, `date,value`.
    pub bitcoin: Option<PathBuf>,
    /// `date,bitcoin_price,global` in place of the three inputs above.
    pub preaggregated: Option<PathBuf>,
    pub shift_days: i64,
    pub lags: Vec<u32>,
    /// Reject whole files on the first malformed row.
    pub strict: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            m2_dir: None,
            fx_dir: None,
            bitcoin: None,
            preaggregated: None,
            shift_days: DEFAULT_SHIFT_DAYS,
            lags: LAG_OFFSETS.to_vec(),
            strict: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Timexer,
    Nbeats,
    Linear,
    Naive,
}

/// One model of the comparison. Unset architecture fields take the
/// tuned configuration for that family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    #[serde(default)]
    pub exogenous: bool,
    /// Liquidity columns fed to an exogenous model; empty means all.
    #[serde(default)]
    pub exog_columns: Vec<String>,
    pub lookback: Option<usize>,
    pub patch_len: Option<usize>,
    pub stride: Option<usize>,
    pub d_model: Option<usize>,
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_ff: Option<usize>,
    pub dropout: Option<f64>,
    pub n_blocks: Option<usize>,
    pub hidden: Option<usize>,
    pub layers_per_block: Option<usize>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ModelSpec {
    pub fn new(name: &str, kind: ModelKind) -> Self {
        Self {
            name: name.into(),
            kind,
            exogenous: false,
            exog_columns: Vec::new(),
            lookback: None,
            patch_len: None,
            stride: None,
            d_model: None,
            n_layers: None,
            n_heads: None,
            d_ff: None,
            dropout: None,
            n_blocks: None,
            hidden: None,
            layers_per_block: None,
            train: TrainConfig::default(),
        }
    }

    /// Columns this model reads, given the dataset's liquidity columns.
    pub fn columns(&self, available: &[String]) -> Vec<String> {
        match (self.kind, self.exogenous, self.exog_columns.is_empty()) {
            (ModelKind::Timexer, true, true) => available.to_vec(),
            (ModelKind::Timexer, true, false) => self.exog_columns.clone(),
            _ => Vec::new(),
        }
    }

    pub fn model_config(&self, horizon: usize, columns: Vec<String>) -> ModelConfig {
        match self.kind {
            ModelKind::Timexer => {
                let base = if self.exogenous {
                    TimeXerConfig::tuned_exog(horizon, columns)
                } else {
                    TimeXerConfig::tuned_endog(horizon)
                };
                ModelConfig::TimeXer(TimeXerConfig {
                    lookback: self.lookback.unwrap_or(base.lookback),
                    patch_len: self.patch_len.unwrap_or(base.patch_len),
                    stride: self.stride.unwrap_or(base.stride),
                    d_model: self.d_model.unwrap_or(base.d_model),
                    n_layers: self.n_layers.unwrap_or(base.n_layers),
                    n_heads: self.n_heads.unwrap_or(base.n_heads),
                    d_ff: self.d_ff.unwrap_or(base.d_ff),
                    dropout: self.dropout.unwrap_or(base.dropout),
                    ..base
                })
            }
            ModelKind::Nbeats => {
                let base = NBeatsConfig::tuned(self.lookback.unwrap_or(256), horizon);
                ModelConfig::NBeats(NBeatsConfig {
                    n_blocks: self.n_blocks.unwrap_or(base.n_blocks),
                    hidden: self.hidden.unwrap_or(base.hidden),
                    layers_per_block: self.layers_per_block.unwrap_or(base.layers_per_block),
                    dropout: self.dropout.unwrap_or(base.dropout),
                    ..base
                })
            }
            ModelKind::Linear => ModelConfig::Linear(WindowConfig {
                lookback: self.lookback.unwrap_or(256),
                horizon,
            }),
            ModelKind::Naive => ModelConfig::Naive(WindowConfig {
                lookback: self.lookback.unwrap_or(256),
                horizon,
            }),
        }
    }
}

/// Axes of the `grid` command; every combination is one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lookback: Vec<usize>,
    pub patch_len: Vec<usize>,
    pub stride: Vec<usize>,
    pub d_model: Vec<usize>,
    pub n_layers: Vec<usize>,
    pub n_heads: Vec<usize>,
    pub dropout: Vec<f64>,
    pub learning_rate: Vec<f64>,
    /// Stop after this many trials (in enumeration order).
    pub max_trials: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lookback: vec![128, 256, 512],
            patch_len: vec![32, 64, 96, 128],
            stride: vec![8, 16, 32],
            d_model: vec![64, 128, 256],
            n_layers: vec![4, 8, 12, 16],
            n_heads: vec![4, 8],
            dropout: vec![0.2, 0.3, 0.4],
            learning_rate: vec![1e-6, 1e-5, 1e-4],
            max_trials: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub horizons: Vec<usize>,
    pub data: DataConfig,
    pub split: SplitSpec,
    pub models: Vec<ModelSpec>,
    pub mcs: McsConfig,
    pub grid: GridConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let exog = ModelSpec {
            exogenous: true,
            ..ModelSpec::new("timexer_exog", ModelKind::Timexer)
        };
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            horizons: DEFAULT_HORIZONS.to_vec(),
            data: DataConfig::default(),
            split: SplitSpec::standard(),
            models: vec![
                exog,
                ModelSpec::new("timexer", ModelKind::Timexer),
                ModelSpec::new("nbeats", ModelKind::Nbeats),
                ModelSpec::new("linear", ModelKind::Linear),
                ModelSpec::new("naive", ModelKind::Naive),
            ],
            mcs: McsConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML. Relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data.m2_dir);
        fix(&mut cfg.data.fx_dir);
        fix(&mut cfg.data.bitcoin);
        fix(&mut cfg.data.preaggregated);
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        Ok(cfg)
    }

    /// Defaults, then the file at `path` if any, then flag overrides.
    pub fn load(path: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text, p.parent().unwrap_or(Path::new("")))?
            }
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(o) = out {
            cfg.out = o;
        }
        cfg.mcs.seed = cfg.seed;
        for m in &mut cfg.models {
            m.train.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(CliError::Config(
                "horizons must be a non-empty list of positive integers".into(),
            ));
        }
        if self.models.is_empty() {
            return Err(CliError::Config("at least one model is required".into()));
        }
        for (i, m) in self.models.iter().enumerate() {
            let ok = !m.name.is_empty()
                && m.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok {
                return Err(CliError::Config(format!(
                    "model name `{}` must use [A-Za-z0-9_-]",
                    m.name
                )));
            }
            if self.models[..i].iter().any(|o| o.name == m.name) {
                return Err(CliError::Config(format!("duplicate model name `{}`", m.name)));
            }
            m.train
                .validate()
                .map_err(|e| CliError::Config(format!("model `{}`: {e}", m.name)))?;
        }
        self.mcs.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.split.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn model(&self, name: &str) -> Result<&ModelSpec, CliError> {
        self.models.iter().find(|m| m.name == name).ok_or_else(|| {
            let names: Vec<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
            CliError::Config(format!("no model `{name}` in config; known: {}", names.join(", ")))
        })
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.out.join("dataset.csv")
    }

    pub fn checkpoint_path(&self, model: &str, horizon: usize) -> PathBuf {
        self.out.join("checkpoints").join(format!("{model}_h{horizon}.json"))
    }

    pub fn log_path(&self, model: &str, horizon: usize) -> PathBuf {
        self.out.join("logs").join(format!("{model}_h{horizon}.jsonl"))
    }

    pub fn errors_path(&self, horizon: usize) -> PathBuf {
        self.out.join("errors").join(format!("h{horizon}.csv"))
    }
}
