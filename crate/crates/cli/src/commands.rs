use std::path::{Path, PathBuf};

use isoinv::harness::{self, ExportFormat, StudyConfig, StudyResult};
use isoinv::limitdist::{ChernoffParams, ChernoffTable, DEFAULT_TABLE_PROBS};
use isoinv::oracles::{self, QueueConfig, ResponseOracle};
use isoinv::procedures::{self, DesignConfig, Procedure, Tuning};
use isoinv::rng::{derive_seed, tags};
use isoinv::{fit_isotonic, DataSet, Execution};
use serde_json::json;

use crate::{Cli, Command, EstimateArgs, QuantileTableArgs, QueueDemoArgs, StudyArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] isoinv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_input_error() => 2,
            CliError::Core(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

const DEFAULT_SEED: u64 = 1;

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(workers) = cli.workers {
        if workers == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| CliError::Usage(format!("could not size the worker pool: {e}")))?;
    }
    match &cli.command {
        Command::Estimate(args) => estimate(cli.seed.unwrap_or(DEFAULT_SEED), args),
        Command::Study(args) => study(cli.seed, args),
        Command::QuantileTable(args) => quantile_table(cli.seed.unwrap_or(ChernoffParams::default().seed), args),
        Command::QueueDemo(args) => queue_demo(cli.seed.unwrap_or(DEFAULT_SEED), args),
    }
}

fn print_config(value: &serde_json::Value) {
    eprintln!("config: {value}");
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

enum StageTwoSource {
    Queue(QueueConfig),
    File(PathBuf),
}

fn parse_oracle(spec: &str, seed: u64) -> Result<QueueConfig> {
    let (kind, opts) = spec.split_once(':').unwrap_or((spec, ""));
    if kind != "queue" {
        return Err(CliError::Usage(format!(
            "unknown oracle `{kind}`, expected `queue:<key=value,...>`"
        )));
    }
    let base = QueueConfig {
        seed: derive_seed(seed, &[tags::ORACLE]),
        ..QueueConfig::default()
    };
    Ok(base.parse_overrides(opts)?)
}

fn estimate(seed: u64, args: &EstimateArgs) -> Result<()> {
    let procedure: Procedure = args.procedure.parse()?;
    if !procedure.is_practical() {
        return Err(CliError::Usage(format!(
            "{procedure} needs the true nuisance values, which are unknown for recorded data; use {}",
            procedure.practical()
        )));
    }
    let source = match (&args.oracle, &args.stage2_file) {
        (Some(spec), _) => Some(StageTwoSource::Queue(parse_oracle(spec, seed)?)),
        (None, Some(path)) => Some(StageTwoSource::File(path.clone())),
        (None, None) => None,
    };
    if procedure.is_two_stage() && source.is_none() {
        return Err(CliError::Usage(format!(
            "{procedure} samples new responses at the chosen L and U; pass --oracle queue:... \
             for live sampling or --stage2-file with responses recorded at L and U"
        )));
    }
    let tuning = match (args.gamma, args.k) {
        (Some(gamma), Some(k)) => Tuning::Fixed { gamma, k },
        _ => Tuning::Rule,
    };
    let data = oracles::read_xy_csv(&args.data)?;
    let cfg = DesignConfig {
        n: data.len(),
        p: args.p,
        theta0: args.theta0,
        tuning,
        alpha: args.alpha,
        beta: args.beta,
        bootstrap: args.bootstrap,
        seed,
        heteroskedastic: args.heteroskedastic,
        ..DesignConfig::default()
    };
    let source_desc = match &source {
        Some(StageTwoSource::Queue(q)) => json!({ "queue": q }),
        Some(StageTwoSource::File(p)) => json!({ "file": p }),
        None => json!(null),
    };
    print_config(&json!({
        "command": "estimate",
        "data": args.data,
        "procedure": procedure,
        "design": cfg,
        "stage2": if procedure.is_two_stage() { source_desc } else { json!(null) },
    }));

    let report = if procedure.is_two_stage() {
        let mut oracle: Box<dyn ResponseOracle> = match source.expect("checked above") {
            StageTwoSource::Queue(q) => Box::new(oracles::queue_oracle(q)?),
            StageTwoSource::File(path) => {
                let stage2 = oracles::read_xy_csv(&path)?;
                Box::new(oracles::replay_oracle(&stage2, None)?)
            }
        };
        procedures::estimate_recorded(procedure, &data, Some(oracle.as_mut()), &cfg)?
    } else {
        procedures::estimate_recorded(procedure, &data, None, &cfg)?
    };
    print_json(&report);
    Ok(())
}

fn with_extension(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write_study(result: &StudyResult, csv: &Path, json: &Path) -> isoinv::Result<()> {
    harness::export(result, csv, ExportFormat::Csv)?;
    harness::export(result, json, ExportFormat::Json)
}

fn study(seed: Option<u64>, args: &StudyArgs) -> Result<()> {
    let mut cfg = StudyConfig::read(&args.config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    print_config(&serde_json::to_value(&cfg).expect("config serializes"));
    let (csv, json) = (with_extension(&args.out, "csv"), with_extension(&args.out, "json"));
    let result = harness::run_study_with(&cfg, |partial| write_study(partial, &csv, &json))?;
    write_study(&result, &csv, &json)?;
    print_json(&json!({ "cells": result.cells.len(), "csv": csv, "json": json }));
    Ok(())
}

fn quantile_table(seed: u64, args: &QuantileTableArgs) -> Result<()> {
    let params = ChernoffParams {
        half_width: args.half_width,
        step: args.step,
        replications: args.replications,
        seed,
    };
    print_config(&json!({ "command": "quantile-table", "mc_params": params, "out": args.out }));
    let table = ChernoffTable::generate(&params, &DEFAULT_TABLE_PROBS, Execution::Parallel)?;
    table.write(&args.out)?;
    let q = |a: f64| table.upper_quantile(a).ok();
    print_json(&json!({
        "out": args.out,
        "rows": table.probs.len(),
        "q_0.025": q(0.025),
        "q_0.5": q(0.5),
    }));
    Ok(())
}

fn queue_demo(seed: u64, args: &QueueDemoArgs) -> Result<()> {
    let loadings = match &args.points {
        Some(points) => points.clone(),
        None => oracles::loading_grid(args.start, args.stop, args.step)?,
    };
    if args.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let cfg = QueueConfig {
        service_rate: args.service_rate,
        horizon: args.horizon,
        warmup: args.warmup,
        seed,
    };
    print_config(&json!({
        "command": "queue-demo",
        "queue": cfg,
        "loadings": loadings.len(),
        "runs": args.runs,
        "out": args.out,
    }));
    let (rows, mut meta) = oracles::queue_dataset(&loadings, args.runs, cfg)?;
    oracles::write_xy_csv(&args.out, &rows)?;
    let meta_path = with_extension(&args.out, "meta.json");
    meta["data"] = json!(args.out);
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n",
    )
    .map_err(|e| isoinv::Error::Io {
        path: meta_path.display().to_string(),
        message: e.to_string(),
    })?;

    let data = DataSet::from_pairs(&rows)?;
    let fit = fit_isotonic(&data)?;
    let levels = fit.levels();
    print_json(&json!({
        "out": args.out,
        "meta": meta_path,
        "rows": rows.len(),
        "isotonic_blocks": fit.num_blocks(),
        "fit_min": levels.first(),
        "fit_max": levels.last(),
        "unstable_loadings": meta["unstable_loadings"],
    }));
    Ok(())
}
