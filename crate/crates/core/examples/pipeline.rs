//! The command-line pipeline end to end on synthetic raw inputs.
//!
//! `cargo run --release --example pipeline -- [dir]`

use std::path::PathBuf;

use liqcast::data::parse_date;
use liqcast::synthetic::RawInputs;

const CONFIG: &str = r#"
seed = 1
out = "out"
horizons = [7, 28]

[data]
m2_dir = "raw/m2"
fx_dir = "raw/fx"
bitcoin = "raw/bitcoin.csv"

[mcs]
n_bootstrap = 1000

[[models]]
name = "timexer_exog"
kind = "timexer"
exogenous = true
exog_columns = ["global_lag_1", "global_lag_28", "global_lag_56", "global_lag_84"]
lookback = 64
patch_len = 16
stride = 16
d_model = 16
n_layers = 2
n_heads = 2
d_ff = 32
dropout = 0.1
[models.train]
learning_rate = 1e-3
batch_size = 32
max_epochs = 8

[[models]]
name = "linear"
kind = "linear"
lookback = 64
[models.train]
learning_rate = 1e-2
batch_size = 32
max_epochs = 8

[[models]]
name = "naive"
kind = "naive"
lookback = 64
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("liqcast_pipeline"));
    RawInputs::new(parse_date("2019-01-01")?, parse_date("2025-08-27")?, 0).write(&dir.join("raw"))?;
    let config = dir.join("experiment.toml");
    std::fs::write(&config, CONFIG)?;
    let config = config.to_string_lossy().into_owned();
    let steps: [&[&str]; 5] = [
        &["ingest"],
        &["train"],
        &["evaluate"],
        &["mcs"],
        &["attention", "--model", "timexer_exog", "--horizon", "28"],
    ];
    for step in steps {
        let mut argv = vec!["liqcast", "--config", &config];
        argv.extend_from_slice(step);
        let code = liqcast::cli::run(argv);
        if code != 0 {
            return Err(format!("{step:?} exited with {code}").into());
        }
    }
    let out = dir.join("out");
    for table in ["results.csv", "mcs.csv", "attention/timexer_exog_h28_layer0.csv"] {
        println!("== {table}\n{}", std::fs::read_to_string(out.join(table))?);
    }
    Ok(())
}
