#![allow(dead_code)]

use std::path::{Path, PathBuf};

use liqcast::data::parse_date;
use liqcast::synthetic::RawInputs;

pub fn d(s: &str) -> chrono::NaiveDate {
    parse_date(s).unwrap()
}

/// Raw inputs plus a config with a one-year train split and small models.
pub fn small_experiment(dir: &Path, models: &str) -> PathBuf {
    let paths = RawInputs::new(d("2019-01-01"), d("2021-08-06"), 11)
        .write(&dir.join("raw"))
        .unwrap();
    let config = format!(
        r#"
seed = 3
out = "out"
horizons = [7, 14]

[data]
m2_dir = "{m2}"
fx_dir = "{fx}"
bitcoin = "{btc}"

[split]
train_start = "2020-01-01"
train_end = "2020-12-31"
val_start = "2021-01-01"
val_end = "2021-02-28"
test_start = "2021-03-01"
test_end = "2021-04-29"
reference_date = "2021-08-06"

[mcs]
n_bootstrap = 200

[grid]
lookback = [32]
patch_len = [8]
stride = [8]
d_model = [8]
n_layers = [1]
n_heads = [1, 2]
dropout = [0.1]
learning_rate = [1e-3]
{models}
"#,
        m2 = paths.m2_dir.display(),
        fx = paths.fx_dir.display(),
        btc = paths.bitcoin.display(),
    );
    let path = dir.join("exp.toml");
    std::fs::write(&path, config).unwrap();
    path
}

pub const FOUR_MODELS: &str = r#"
[[models]]
name = "timexer_exog"
kind = "timexer"
exogenous = true
exog_columns = ["global_lag_1", "global_lag_49", "global_lag_98"]
lookback = 32
patch_len = 8
stride = 8
d_model = 8
n_layers = 1
n_heads = 2
d_ff = 16
[models.train]
learning_rate = 1e-3
batch_size = 32
max_epochs = 5

[[models]]
name = "timexer"
kind = "timexer"
lookback = 32
patch_len = 8
stride = 8
d_model = 8
n_layers = 1
n_heads = 2
d_ff = 16
[models.train]
learning_rate = 1e-3
batch_size = 32
max_epochs = 5

[[models]]
name = "linear"
kind = "linear"
lookback = 32
[models.train]
learning_rate = 1e-2
batch_size = 32
max_epochs = 5

[[models]]
name = "naive"
kind = "naive"
lookback = 32
"#;

pub const NAIVE_ONLY: &str = r#"
[[models]]
name = "naive"
kind = "naive"
lookback = 32
"#;

pub fn run(config: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["liqcast", "--config", config.to_str().unwrap()];
    argv.extend_from_slice(args);
    liqcast::cli::run(argv)
}
