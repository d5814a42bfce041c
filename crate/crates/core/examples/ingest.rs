//! Raw M2, FX and price files to an aligned, split and audited dataset.
//!
//! `cargo run --release --example ingest -- [dir]`

use std::path::PathBuf;

use liqcast::cli::{build_dataset, ExperimentConfig};
use liqcast::data::parse_date;
use liqcast::synthetic::RawInputs;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("liqcast_ingest"));
    let paths = RawInputs::new(parse_date("2019-01-01")?, parse_date("2025-08-27")?, 0).write(&dir)?;
    let mut cfg = ExperimentConfig::default();
    cfg.data.m2_dir = Some(paths.m2_dir);
    cfg.data.fx_dir = Some(paths.fx_dir);
    cfg.data.bitcoin = Some(paths.bitcoin);

    let (ds, report) = build_dataset(&cfg)?;
    let c = report.counts;
    println!("economies: {}", report.constituents.join(", "));
    println!(
        "rows {} (train {}, validation {}, test {})",
        report.rows, c.train, c.validation, c.test
    );
    println!("first {}  last {}", ds.rows()[0].date, ds.rows().last().unwrap().date);
    println!(
        "cells audited {}, violations {}",
        report.audit.cells_checked, report.violations
    );
    let row = &ds.rows()[0];
    println!(
        "first row: price {:.2}, global {:.4e}, global_lag_84 {:.4e}",
        row.bitcoin_price, row.global, row.lags[12]
    );

    let mut shifted = cfg.clone();
    shifted.data.shift_days = -14;
    let (_, bad) = build_dataset(&shifted)?;
    println!(
        "with a backward shift: {} violations, e.g. {:?}",
        bad.violations,
        bad.audit.violations.first()
    );
    Ok(())
}
