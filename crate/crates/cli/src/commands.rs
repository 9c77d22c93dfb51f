use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use dgcn_core::bench::{
    load_csv, read_table, run_protocol_with, timing_benchmark, timing_csv, BatchSize, Protocol, RunRecord,
    TargetColumn, TimingConfig,
};
use dgcn_core::gp::{PredictOptions, Prediction};
use dgcn_core::linalg::Matrix;
use dgcn_core::timeseries::{
    fit_direct, forecast_recursive, gap_protocol, lag_embed, read_series, write_forecast_csv, BlockSpec, ForecastMode,
    LagSpec, CATS_LEN,
};
use dgcn_core::trainer::{fit, load, predict_batched, save, TrainedModel};
use dgcn_core::DgcnError;

use crate::config::CliConfig;
use crate::{BenchTimeArgs, CatsArgs, CliError, CrossvalArgs, ForecastArgs, PredictArgs, TrainArgs};

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| DgcnError::io(p, e).into()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Data(format!("writing output: {e}")))
        }
    }
}

fn target_column(s: &str) -> Result<TargetColumn, CliError> {
    s.parse().map_err(|e: DgcnError| CliError::Usage(e.to_string()))
}

fn load_config(common: &crate::Common) -> Result<CliConfig, CliError> {
    let mut cfg = CliConfig::load(common.config.as_deref())?;
    cfg.resolve_seed(common.seed);
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.common)?;
    cfg.train.validate()?;
    let data = load_csv(&a.data, &target_column(&a.target)?)?;
    let model = fit(&data, &cfg.train)?;
    save(&model, &a.out)?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".log.json");
        PathBuf::from(s)
    });
    let log = model.log();
    let doc = json!({
        "config": cfg.to_json(),
        "data": a.data,
        "model": a.out,
        "n_train": model.n_train(),
        "columns": model.columns(),
        "target": model.target(),
        "epochs_run": log.epochs.len(),
        "final_nll": log.final_nll(),
        "stopped_early": log.stopped_early,
        "epoch_nll": log.epochs.iter().map(|e| e.mean_nll).collect::<Vec<_>>(),
        "jitter_events": log.jitter_events,
    });
    let text = serde_json::to_string_pretty(&doc).expect("log serializes") + "\n";
    std::fs::write(&log_path, text).map_err(|e| DgcnError::io(&log_path, e))?;
    eprintln!(
        "trained on {} rows: {} epochs, final NLL {:.6}; wrote {}",
        model.n_train(),
        log.epochs.len(),
        log.final_nll().unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

/// The model's inputs from a table: by column name when every name is
/// present, otherwise by position when the widths agree.
fn model_inputs(model: &TrainedModel, path: &Path) -> Result<Matrix, CliError> {
    let table = read_table(path)?;
    let names = model.columns();
    if names.iter().all(|n| table.column_index(n).is_some()) {
        return Ok(table.select(names)?);
    }
    if table.headers.len() == model.n_inputs() {
        return Ok(table.values);
    }
    Err(DgcnError::SchemaMismatch {
        expected: model.n_inputs(),
        found: table.headers.len(),
    }
    .into())
}

fn prediction_csv(first_col: &str, labels: impl Iterator<Item = usize>, p: &Prediction) -> String {
    let mut s = format!("{first_col},mean,variance,ci_low,ci_high\n");
    for (i, label) in labels.enumerate() {
        s.push_str(&format!(
            "{label},{},{},{},{}\n",
            p.mean[i], p.variance[i], p.ci_low[i], p.ci_high[i]
        ));
    }
    s
}

pub fn predict(a: PredictArgs) -> Result<(), CliError> {
    let opts = PredictOptions {
        alpha_level: a.alpha,
        include_noise: a.include_noise,
        ..Default::default()
    };
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(DgcnError::InvalidAlpha(a.alpha).into());
    }
    if a.k == Some(0) {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let model = load(&a.model)?;
    let x = model_inputs(&model, &a.data)?;
    let p = predict_batched(&model, &x, a.k, &opts)?;
    write_or_print(a.out.as_deref(), &prediction_csv("row", 0..p.len(), &p))
}

pub fn crossval(a: CrossvalArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.common)?;
    if let Some(name) = &a.preset {
        let seed = cfg.protocol.seed;
        cfg.protocol = Protocol {
            seed,
            ..Protocol::preset(name)?
        };
    }
    if let Some(f) = a.folds {
        cfg.protocol.folds = f;
    }
    if let Some(r) = a.repeats {
        cfg.protocol.repeats = r;
    }
    cfg.train.validate()?;
    eprintln!("config: {}", cfg.to_json());
    let data = load_csv(&a.data, &target_column(&a.target)?)?;
    let progress = |r: &RunRecord| {
        eprintln!(
            "run {} (repeat {}, fold {}): {:.6} in {:.2}s",
            r.run_id, r.repeat, r.fold, r.metric_value, r.seconds
        )
    };
    let report = run_protocol_with(&data, &cfg.protocol, &cfg.train, a.model.into(), Some(&progress))?;
    if let Some(p) = &a.out_csv {
        report.write_csv(p)?;
    }
    if let Some(p) = &a.out_json {
        report.write_json(p)?;
    }
    let s = &report.summary;
    eprintln!(
        "{:?} {:?}: {:.4} ± {:.4} over {} repeats",
        s.model,
        s.metric,
        s.mean,
        s.std,
        report.repeat_values.len()
    );
    write_or_print(None, &(report.summary_json()? + "\n"))
}

pub fn forecast(a: ForecastArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.common)?;
    if let Some(l) = a.lags {
        cfg.lags.n_lags = l;
    }
    cfg.lags.validate()?;
    cfg.train.validate()?;
    let series = read_series(&a.series)?;
    let opts = PredictOptions::default();
    let p = match ForecastMode::from(a.mode) {
        ForecastMode::Recursive => {
            let lagged = lag_embed(&series, &LagSpec::new(cfg.lags.n_lags))?;
            let model = fit(&lagged.dataset(0)?, &cfg.train)?;
            forecast_recursive(&model, &series, a.steps, None, &opts)?
        }
        ForecastMode::Direct => {
            if a.steps == 0 {
                Prediction::empty(opts.alpha_level)
            } else {
                let spec = LagSpec::with_horizons(cfg.lags.n_lags, (0..a.steps).collect());
                fit_direct(&series, &spec, &cfg.train)?.forecast(&series, None, &opts)?
            }
        }
    };
    // 1-based positions continuing the series
    let n = series.len();
    write_or_print(a.out.as_deref(), &prediction_csv("index", n + 1..n + 1 + p.len(), &p))
}

fn parse_blocks(specs: &[String]) -> Result<BlockSpec, CliError> {
    if specs.is_empty() {
        return Ok(BlockSpec::cats());
    }
    let ranges = specs
        .iter()
        .map(|s| {
            let (a, b) = s
                .split_once('-')
                .ok_or_else(|| CliError::Usage(format!("block {s:?} is not START-END")))?;
            let num = |t: &str| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("block {s:?} is not START-END")))
            };
            Ok((num(a)?, num(b)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(BlockSpec::new(ranges)?)
}

pub fn cats(a: CatsArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.common)?;
    cfg.train.validate()?;
    let blocks = parse_blocks(&a.blocks)?;
    let lags: Vec<LagSpec> = match a.lags.as_slice() {
        [] => vec![LagSpec::new(cfg.lags.n_lags); blocks.ranges.len()],
        [l] => vec![LagSpec::new(*l); blocks.ranges.len()],
        many if many.len() == blocks.ranges.len() => many.iter().map(|&l| LagSpec::new(l)).collect(),
        many => {
            return Err(CliError::Usage(format!(
                "{} lag counts for {} blocks",
                many.len(),
                blocks.ranges.len()
            )))
        }
    };
    for l in &lags {
        l.validate()?;
    }
    let series = read_series(&a.series)?;
    if a.blocks.is_empty() && series.len() != CATS_LEN {
        return Err(DgcnError::ShapeMismatch(format!("expected {CATS_LEN} values, got {}", series.len())).into());
    }
    let truth = a.truth.as_ref().map(read_series).transpose()?;
    let result = gap_protocol(&series, &blocks, &lags, &cfg.train, a.mode.into(), truth.as_deref())?;
    if let Some(path) = &a.out {
        let idx: Vec<usize> = blocks.ranges.iter().flat_map(|&(s, e)| s..=e).collect();
        let mut all = Prediction::empty(0.05);
        for b in &result.blocks {
            all.alpha_level = b.prediction.alpha_level;
            all.mean.extend(&b.prediction.mean);
            all.variance.extend(&b.prediction.variance);
            all.ci_low.extend(&b.prediction.ci_low);
            all.ci_high.extend(&b.prediction.ci_high);
        }
        write_forecast_csv(path, &idx, &all)?;
    }
    for (i, b) in result.blocks.iter().enumerate() {
        let score = result
            .block_scores
            .as_ref()
            .map(|s| format!("{:.6}", s[i]))
            .unwrap_or_else(|| "n/a".into());
        println!("block {} [{}-{}] lags {}: {score}", i + 1, b.range.0, b.range.1, b.n_lags);
    }
    match result.e1 {
        Some(e1) => println!("E1 {e1:.6}"),
        None => println!("E1 n/a (no --truth given)"),
    }
    Ok(())
}

pub fn bench_time(a: BenchTimeArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.common)?;
    let batch_sizes = a
        .batch
        .iter()
        .map(|s| s.parse::<BatchSize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let timing = TimingConfig {
        sizes: a.sizes,
        batch_sizes,
        epochs: a.epochs,
        n_inputs: a.n_inputs,
        memory_cap_bytes: a.mem_cap_mib.saturating_mul(1 << 20),
        seed: cfg.train.seed,
    };
    let rows = timing_benchmark(&timing, &cfg.train)?;
    write_or_print(a.out.as_deref(), &timing_csv(&rows))
}
