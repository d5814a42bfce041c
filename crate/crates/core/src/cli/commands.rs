use std::fmt::Write as _;

use rayon::prelude::*;

use super::config::{ExperimentConfig, ModelKind, ModelSpec};
use super::{build_dataset, write_atomic, CliError};
use crate::data::{AlignedDataset, SplitLabel};
use crate::eval::{
    build_error_matrix, rolling_origin, write_predictions, write_results_table, ErrorMatrix, ForecastReport,
};
use crate::mcs::{mcs_run, mcs_table, McsResult};
use crate::model::{Checkpoint, Model};
use crate::train::{train, Forecaster, Frame, TrainError, TrainReport};

fn load_dataset(cfg: &ExperimentConfig) -> Result<AlignedDataset, CliError> {
    let path = cfg.dataset_path();
    let file = std::fs::File::open(&path)
        .map_err(|e| CliError::Io(format!("dataset {}: {e} (run `ingest` first)", path.display())))?;
    Ok(AlignedDataset::read_csv(file)?)
}

fn load_forecaster(cfg: &ExperimentConfig, model: &str, horizon: usize) -> Result<Forecaster, CliError> {
    let path = cfg.checkpoint_path(model, horizon);
    if !path.exists() {
        return Err(CliError::Io(format!(
            "no checkpoint for model `{model}` at horizon {horizon} ({})",
            path.display()
        )));
    }
    let ck = Checkpoint::read(&path).map_err(TrainError::from)?;
    Ok(Forecaster::from_checkpoint(ck)?)
}

fn csv_bytes<F, E>(write: F) -> Result<Vec<u8>, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), E>,
    CliError: From<E>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

pub fn cmd_ingest(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let (ds, report) = build_dataset(cfg)?;
    let audit_path = cfg.out.join("audit.json");
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    write_atomic(&audit_path, &json)?;
    if report.violations > 0 {
        return Err(CliError::Integrity(format!(
            "{} exogenous cells use data later than allowed; see {}",
            report.violations,
            audit_path.display()
        )));
    }
    let bytes = csv_bytes(|b| ds.write_csv(b))?;
    write_atomic(&cfg.dataset_path(), &bytes)?;
    let c = report.counts;
    eprintln!(
        "dataset: {} rows (train {}, validation {}, test {}), {} rejected input rows",
        report.rows,
        c.train,
        c.validation,
        c.test,
        report.rejections.len()
    );
    Ok(())
}

fn selected<'a>(cfg: &'a ExperimentConfig, model: Option<&str>) -> Result<Vec<&'a ModelSpec>, CliError> {
    match model {
        Some(name) => Ok(vec![cfg.model(name)?]),
        None => Ok(cfg.models.iter().collect()),
    }
}

fn train_one(
    ds: &AlignedDataset,
    spec: &ModelSpec,
    horizon: usize,
    seed: u64,
    epochs: Option<usize>,
) -> Result<(Forecaster, TrainReport), CliError> {
    let columns = spec.columns(&ds.column_names());
    let frame = Frame::from_dataset(ds, &columns)?;
    let model = Model::new(&spec.model_config(horizon, columns), seed).map_err(TrainError::from)?;
    let mut tc = spec.train.clone();
    if let Some(e) = epochs {
        tc.max_epochs = e;
    }
    Ok(train(model, &frame, &tc)?)
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    model: Option<&str>,
    horizon: Option<usize>,
    epochs: Option<usize>,
) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let horizons = horizon.map_or_else(|| cfg.horizons.clone(), |h| vec![h]);
    let jobs: Vec<(&ModelSpec, usize)> = selected(cfg, model)?
        .into_iter()
        .flat_map(|m| horizons.iter().map(move |h| (m, *h)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(spec, h)| train_one(&ds, spec, *h, cfg.seed, epochs))
        .collect();
    for ((spec, h), res) in jobs.iter().zip(results) {
        let (fc, report) = res.map_err(|e| CliError::Io(format!("training `{}` at horizon {h}: {e}", spec.name)))?;
        write_atomic(
            &cfg.checkpoint_path(&spec.name, *h),
            fc.to_checkpoint().to_json().as_bytes(),
        )?;
        let mut log = Vec::new();
        report.write_jsonl(&mut log).map_err(|e| CliError::Io(e.to_string()))?;
        write_atomic(&cfg.log_path(&spec.name, *h), &log)?;
        eprintln!(
            "{} h={h}: best epoch {} of {}, validation mse {:.6e}",
            spec.name, report.best_epoch, report.stopped_epoch, report.best_val_mse
        );
    }
    Ok(())
}

fn evaluate_one(
    cfg: &ExperimentConfig,
    ds: &AlignedDataset,
    model: &str,
    horizon: usize,
) -> Result<ForecastReport, CliError> {
    let fc = load_forecaster(cfg, model, horizon)?;
    let frame = Frame::from_dataset(ds, &fc.scaler.exog_names)?;
    Ok(rolling_origin(model, &fc, &frame)?)
}

pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let jobs: Vec<(&str, usize)> = cfg
        .horizons
        .iter()
        .flat_map(|h| cfg.models.iter().map(move |m| (m.name.as_str(), *h)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|(m, h)| evaluate_one(cfg, &ds, m, *h))
        .collect::<Result<Vec<_>, _>>()?;

    write_atomic(
        &cfg.out.join("results.csv"),
        &csv_bytes(|b| write_results_table(&reports, b))?,
    )?;
    write_atomic(
        &cfg.out.join("predictions.csv"),
        &csv_bytes(|b| write_predictions(&reports, b))?,
    )?;
    let mut steps = String::from("model,horizon,step,mse\n");
    for r in &reports {
        for (s, v) in r.step_mse().iter().enumerate() {
            writeln!(steps, "{},{},{},{v}", r.model_name, r.horizon, s + 1).expect("string write");
        }
    }
    write_atomic(&cfg.out.join("step_mse.csv"), steps.as_bytes())?;
    for h in &cfg.horizons {
        let at_h: Vec<ForecastReport> = reports.iter().filter(|r| r.horizon == *h).cloned().collect();
        let matrix = build_error_matrix(&at_h)?;
        write_atomic(&cfg.errors_path(*h), &csv_bytes(|b| matrix.write_csv(b))?)?;
    }
    for r in &reports {
        eprintln!(
            "{} h={}: scaled mse {:.3} over {} origins",
            r.model_name,
            r.horizon,
            r.mse_scaled,
            r.origins.len()
        );
    }
    Ok(())
}

fn single_model(m: &ErrorMatrix, alpha: f64) -> McsResult {
    McsResult {
        horizon: m.horizon,
        alpha,
        models: m.models.clone(),
        p_values: vec![1.0],
        elimination_order: Vec::new(),
        surviving_set: m.models.clone(),
        trace: Vec::new(),
    }
}

pub fn cmd_mcs(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut results = Vec::new();
    for &h in &cfg.horizons {
        let path = cfg.errors_path(h);
        let file = std::fs::File::open(&path)
            .map_err(|e| CliError::Io(format!("error matrix {}: {e} (run `evaluate` first)", path.display())))?;
        let matrix = ErrorMatrix::read_csv(file)?;
        let result = if matrix.models.len() == 1 {
            single_model(&matrix, cfg.mcs.alpha)
        } else {
            mcs_run(&matrix, &cfg.mcs)?
        };
        write_atomic(
            &cfg.out.join("mcs").join(format!("trace_h{h}.json")),
            result.trace_json().as_bytes(),
        )?;
        eprintln!("h={h}: surviving {}", result.surviving_set.join(", "));
        results.push(result);
    }
    let table = mcs_table(&results);
    write_atomic(&cfg.out.join("mcs.csv"), &csv_bytes(|b| table.write_csv(b))?)
}

pub fn cmd_attention(cfg: &ExperimentConfig, model: &str, horizon: usize, layer: usize) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let fc = load_forecaster(cfg, model, horizon)?;
    let frame = Frame::from_dataset(&ds, &fc.scaler.exog_names)?;
    let origins = frame.eval_origins(SplitLabel::Test, fc.lookback(), fc.horizon())?;
    let weights = fc.attention(&frame, &origins, layer)?;
    let mut out = String::from("variate_label,mean_weight\n");
    for (label, w) in &weights {
        writeln!(out, "{label},{w}").expect("string write");
    }
    let path = cfg
        .out
        .join("attention")
        .join(format!("{model}_h{horizon}_layer{layer}.csv"));
    write_atomic(&path, out.as_bytes())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct Trial {
    lookback: usize,
    patch_len: usize,
    stride: usize,
    d_model: usize,
    n_layers: usize,
    n_heads: usize,
    dropout: f64,
    learning_rate: f64,
}

fn enumerate_trials(g: &super::GridConfig, limit: usize) -> Vec<Trial> {
    let mut out = Vec::new();
    for &lookback in &g.lookback {
        for &patch_len in &g.patch_len {
            for &stride in &g.stride {
                for &d_model in &g.d_model {
                    for &n_layers in &g.n_layers {
                        for &n_heads in &g.n_heads {
                            for &dropout in &g.dropout {
                                for &learning_rate in &g.learning_rate {
                                    if out.len() == limit {
                                        return out;
                                    }
                                    out.push(Trial {
                                        lookback,
                                        patch_len,
                                        stride,
                                        d_model,
                                        n_layers,
                                        n_heads,
                                        dropout,
                                        learning_rate,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn cmd_grid(
    cfg: &ExperimentConfig,
    model: Option<&str>,
    horizon: Option<usize>,
    limit: Option<usize>,
) -> Result<(), CliError> {
    let base = match model {
        Some(m) => cfg.model(m)?,
        None => cfg
            .models
            .iter()
            .find(|m| m.kind == ModelKind::Timexer)
            .ok_or_else(|| CliError::Config("grid needs a timexer model in the config".into()))?,
    };
    if base.kind != ModelKind::Timexer {
        return Err(CliError::Config(format!(
            "grid searches TimeXer settings; `{}` is not a timexer model",
            base.name
        )));
    }
    let horizon = horizon.unwrap_or(cfg.horizons[0]);
    let limit = limit.or(cfg.grid.max_trials).unwrap_or(usize::MAX);
    let ds = load_dataset(cfg)?;
    let trials = enumerate_trials(&cfg.grid, limit);
    let outcomes: Vec<Result<TrainReport, CliError>> = trials
        .par_iter()
        .map(|t| {
            let mut spec = base.clone();
            spec.lookback = Some(t.lookback);
            spec.patch_len = Some(t.patch_len);
            spec.stride = Some(t.stride);
            spec.d_model = Some(t.d_model);
            spec.n_layers = Some(t.n_layers);
            spec.n_heads = Some(t.n_heads);
            spec.dropout = Some(t.dropout);
            spec.train.learning_rate = t.learning_rate;
            train_one(&ds, &spec, horizon, cfg.seed, None).map(|(_, r)| r)
        })
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = [
        "trial",
        "lookback",
        "patch_len",
        "stride",
        "d_model",
        "n_layers",
        "n_heads",
        "dropout",
        "learning_rate",
        "best_epoch",
        "val_mse",
        "status",
    ];
    w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
    for (i, (t, o)) in trials.iter().zip(&outcomes).enumerate() {
        let (epoch, mse, status) = match o {
            Ok(r) => (r.best_epoch.to_string(), r.best_val_mse.to_string(), "ok".to_string()),
            Err(e) => (String::new(), String::new(), e.to_string()),
        };
        let rec = [
            i.to_string(),
            t.lookback.to_string(),
            t.patch_len.to_string(),
            t.stride.to_string(),
            t.d_model.to_string(),
            t.n_layers.to_string(),
            t.n_heads.to_string(),
            t.dropout.to_string(),
            t.learning_rate.to_string(),
            epoch,
            mse,
            status,
        ];
        w.write_record(&rec).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let out = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    let path = cfg.out.join(format!("grid_{}_h{horizon}.csv", base.name));
    write_atomic(&path, &out)?;
    let ok = outcomes.iter().filter(|o| o.is_ok()).count();
    eprintln!("{ok}/{} trials trained; wrote {}", trials.len(), path.display());
    Ok(())
}
