use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{DataConfig, ExperimentConfig};
use super::CliError;
use crate::data::{
    aggregate_global, apply_lead_shift, audit_no_lookahead, build_lag_features, convert_to_usd, load_csv,
    AlignedDataset, AuditReport, CsvSchema, DateRange, GlobalLiquiditySeries, RawSeries, Rejection, SplitCounts,
};

const PRICE_COLUMNS: [&str; 5] = ["bitcoin_price", "bitcoin", "btc", "price", "close"];
const GLOBAL_COLUMNS: [&str; 3] = ["global", "global_liquidity", "liquidity"];

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub rows: usize,
    pub counts: SplitCounts,
    pub constituents: Vec<String>,
    pub rejections: Vec<Rejection>,
    /// Number of look-ahead violations; details are in `audit`.
    pub violations: usize,
    pub audit: AuditReport,
}

fn pick_column(path: &Path, candidates: &[&str]) -> Result<String, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let headers = r
        .headers()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    candidates
        .iter()
        .find(|c| headers.iter().any(|h| h.trim().eq_ignore_ascii_case(c)))
        .map(|c| c.to_string())
        .ok_or_else(|| {
            CliError::Data(format!(
                "{}: none of the columns {} present",
                path.display(),
                candidates.join(", ")
            ))
        })
}

fn load(path: &Path, value: &str, strict: bool, rejections: &mut Vec<Rejection>) -> Result<RawSeries, CliError> {
    let schema = CsvSchema {
        value_column: value.into(),
        strict,
        ..CsvSchema::default()
    };
    let (series, rej) = load_csv(path, &schema)?;
    rejections.extend(rej);
    Ok(series)
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("{}: no CSV files", dir.display())));
    }
    Ok(files)
}

/// Target prices and the unshifted global liquidity series.
fn load_inputs(
    data: &DataConfig,
    rejections: &mut Vec<Rejection>,
) -> Result<(RawSeries, GlobalLiquiditySeries, Vec<String>), CliError> {
    if let Some(path) = &data.preaggregated {
        let price = load(path, &pick_column(path, &PRICE_COLUMNS)?, data.strict, rejections)?;
        let global = load(path, &pick_column(path, &GLOBAL_COLUMNS)?, data.strict, rejections)?;
        return Ok((price, GlobalLiquiditySeries::from_series(&global)?, vec![global.name]));
    }
    let (Some(m2_dir), Some(btc)) = (&data.m2_dir, &data.bitcoin) else {
        return Err(CliError::Config(
            "set data.preaggregated, or data.m2_dir and data.bitcoin".into(),
        ));
    };
    let mut usd = Vec::new();
    for file in csv_files(m2_dir)? {
        let m2 = load(&file, "value", data.strict, rejections)?;
        let fx_path = data
            .fx_dir
            .as_ref()
            .map(|d| d.join(file.file_name().expect("listed file")));
        match fx_path.filter(|p| p.exists()) {
            Some(p) => {
                let fx = load(&p, "value", data.strict, rejections)?;
                let (converted, rej) = convert_to_usd(&m2, &fx)?;
                rejections.extend(rej);
                usd.push(converted);
            }
            None => usd.push(m2),
        }
    }
    let start = usd.iter().filter_map(RawSeries::first_date).min();
    let end = usd.iter().filter_map(RawSeries::last_date).max();
    let (Some(start), Some(end)) = (start, end) else {
        return Err(CliError::Data(format!("{}: every M2 file is empty", m2_dir.display())));
    };
    let global = aggregate_global(&usd, DateRange::new(start, end))?;
    let price = load(btc, "value", data.strict, rejections)?;
    Ok((price, global, usd.into_iter().map(|s| s.name).collect()))
}

/// Builds, splits and audits the dataset.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<(AlignedDataset, IngestReport), CliError> {
    let mut rejections = Vec::new();
    let (price, global, constituents) = load_inputs(&cfg.data, &mut rejections)?;
    let shifted = apply_lead_shift(&global, cfg.data.shift_days);
    let full = build_lag_features(&shifted, &price, &cfg.data.lags, Some(cfg.split.reference_date))?;
    let ds = full.split(&cfg.split)?;
    // a backward shift is a look-ahead by construction; audit against zero
    let audit = audit_no_lookahead(&ds, cfg.data.shift_days.max(0), cfg.split.reference_date)?;
    let report = IngestReport {
        rows: ds.len(),
        counts: ds.counts(),
        constituents,
        rejections,
        violations: audit.violations.len(),
        audit,
    };
    Ok((ds, report))
}
