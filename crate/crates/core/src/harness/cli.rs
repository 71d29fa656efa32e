//! `dlgain` command line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::downlink::SymbolModel;
use crate::estimators::Method;
use crate::harness::{run_simulation, with_workers, RunManifest, SimulateOptions, OUT_DIR_ENV};
use crate::learn::{
    generate_dataset, load_model, save_model, train, write_training_log, Dataset, DatasetSpec, Preprocessing, Split,
    TrainConfig,
};
use crate::metrics::{gnuplot_script, nmse, SeMethod};
use crate::scenario::{Scenario, ScenarioConfig};
use crate::{Error, Result, C64};

#[derive(Debug, Parser)]
#[command(name = "dlgain", version, about = "Blind downlink effective-gain estimation in multi-cell Massive MIMO")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate estimators over drops and blocks; writes NMSE/SE CSVs and CDFs.
    Simulate(SimulateArgs),
    /// Generate a labeled dataset for the learned estimator.
    Dataset(DatasetArgs),
    /// Train the regression network on a dataset CSV.
    Train(TrainArgs),
    /// Run a trained model on a dataset split.
    Eval(EvalArgs),
    /// Write a gnuplot script for the CDF files in a directory.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario JSON; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of users per cell.
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

impl Common {
    fn scenario(&self) -> Result<Scenario> {
        let mut config = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        let scenario = Scenario::new(config)?;
        match self.k {
            Some(k) if k != scenario.users_per_cell() => scenario.with_users_per_cell(k),
            _ => Ok(scenario),
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(&self.out)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 200)]
    pub drops: u64,
    #[arg(long, default_value_t = 200)]
    pub blocks: u64,
    /// Comma-separated subset of hardening, model, genie, learned.
    #[arg(long, default_value = "hardening,model,genie", value_delimiter = ',')]
    pub estimators: Vec<Method>,
    /// Trained model, required by the learned estimator.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Data symbol distribution: gaussian or qpsk.
    #[arg(long, default_value = "gaussian")]
    pub symbols: SymbolModel,
    /// Threshold multiplier of the model-aided estimator (>= 1).
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    /// Skip the SE bounds.
    #[arg(long)]
    pub no_se: bool,
    /// Average the blind SE moments over all symbol indices.
    #[arg(long)]
    pub se_all_symbols: bool,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 100)]
    pub drops: u64,
    #[arg(long, default_value_t = 500)]
    pub blocks: u64,
    #[arg(long, default_value = "gaussian")]
    pub symbols: SymbolModel,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "dataset.csv")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Feature/label mapping: log-ratio or linear.
    #[arg(long, default_value = "log-ratio")]
    pub preprocessing: Preprocessing,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub testset: PathBuf,
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
    /// Split to evaluate: train, val or test.
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Directory holding cdf_*.csv files; defaults to the output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub dir: PathBuf,
}

/// Parses the process arguments, runs the command and maps errors to exit
/// codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dlgain: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Dataset(a) => cmd_dataset(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Plot(a) => cmd_plot(&a),
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let scenario = a.common.scenario()?;
    let mut methods = a.estimators.clone();
    methods.sort();
    methods.dedup();
    let model = match (&a.model, methods.contains(&Method::Learned)) {
        (Some(p), true) => Some(load_model(p)?),
        (None, true) => return Err(Error::Config("--estimators learned needs --model".into())),
        _ => None,
    };
    let opts = SimulateOptions {
        drops: a.drops,
        blocks: a.blocks,
        methods,
        model,
        symbols: a.symbols,
        theta: a.theta,
        se: !a.no_se,
        se_all_symbols: a.se_all_symbols,
        symbol_index: 0,
    };
    if opts.se && opts.blocks < crate::metrics::MIN_SE_BLOCKS {
        eprintln!(
            "warning: {} blocks per drop; SE moments are reliable from {} blocks",
            opts.blocks,
            crate::metrics::MIN_SE_BLOCKS
        );
    }
    let mut manifest = RunManifest::new(
        "simulate",
        &scenario.config,
        json!({
            "drops": a.drops,
            "blocks": a.blocks,
            "estimators": opts.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
            "model": a.model,
            "users_per_cell": scenario.users_per_cell(),
            "symbols": format!("{:?}", a.symbols).to_lowercase(),
            "theta": a.theta,
            "se": opts.se,
            "se_all_symbols": a.se_all_symbols,
            "rho_dl_mw": scenario.rho_dl(),
        }),
        scenario.config.seed,
    );
    let report = with_workers(a.common.workers, || run_simulation(&scenario, &opts))??;
    let dir = a.common.out_dir()?;
    manifest.outputs = report.write_all(dir)?;
    for m in &report.methods {
        let v = report.nmse_values(*m);
        println!("mean NMSE {:<10} {:.4e}", m.name(), mean(&v));
    }
    for m in report.se_methods() {
        println!("mean SE   {:<10} {:.4} b/s/Hz", m.name(), mean(&report.se_values(m)));
    }
    if opts.se {
        let flagged = report.flagged_users();
        if flagged > 0 {
            eprintln!("warning: {flagged} users rejected more than 1% of blocks in the SE moments");
        }
        println!("variance clamp events: {}", report.variance_clamps());
    }
    manifest.write(&dir.join("manifest.json"))
}

pub fn cmd_dataset(a: &DatasetArgs) -> Result<()> {
    let scenario = a.common.scenario()?;
    let spec = DatasetSpec {
        drops: a.drops,
        blocks: a.blocks,
        symbols: a.symbols,
        ..Default::default()
    };
    let mut manifest = RunManifest::new(
        "dataset",
        &scenario.config,
        json!({ "drops": a.drops, "blocks": a.blocks, "users_per_cell": scenario.users_per_cell() }),
        scenario.config.seed,
    );
    let streams = crate::rng::RngStreams::new(scenario.config.seed);
    let ds = with_workers(a.common.workers, || generate_dataset(&scenario, &spec, &streams))??;
    let dir = a.common.out_dir()?;
    let path = dir.join(&a.name);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    ds.write_csv(file)?;
    println!(
        "{} rows ({} train, {} val, {} test), {} skipped -> {}",
        ds.rows.len(),
        ds.count(Split::Train),
        ds.count(Split::Val),
        ds.count(Split::Test),
        ds.skipped,
        path.display()
    );
    manifest.outputs.push(path);
    manifest.write(&dir.join("dataset_manifest.json"))
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Dataset::read_csv(file)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let ds = read_dataset(&a.dataset)?;
    let config = TrainConfig {
        lr: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        preprocessing: a.preprocessing,
        ..Default::default()
    };
    let started = crate::harness::unix_now();
    let outcome = train(&ds, &config)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let model_path = a.out.join("model.json");
    save_model(&outcome.model, &model_path)?;
    let log_path = a.out.join("training_log.csv");
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    write_training_log(&outcome.log, file)?;
    let meta = &outcome.model.meta;
    println!(
        "best epoch {} of {}: validation MAE {:.4e} -> {}",
        meta.best_epoch,
        meta.epochs,
        meta.best_val_mae,
        model_path.display()
    );
    let manifest = json!({
        "command": "train",
        "version": crate::harness::VERSION,
        "dataset": a.dataset,
        "options": config,
        "started_unix": started,
        "finished_unix": crate::harness::unix_now(),
        "outputs": [model_path, log_path],
    });
    let path = a.out.join("train_manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let started = crate::harness::unix_now();
    let model = load_model(&a.model)?;
    let ds = read_dataset(&a.testset)?;
    let rows: Vec<_> = ds.split(a.split).collect();
    if rows.is_empty() {
        return Err(Error::Config(format!("dataset has no {} rows", a.split)));
    }
    let features: Vec<[f64; 3]> = rows.iter().map(|r| r.features).collect();
    let predictions = model.predict_many(&features)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let path = a.out.join("predictions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["drop_id", "block_id", "label", "prediction"])?;
    for (r, p) in rows.iter().zip(&predictions) {
        w.write_record([r.drop_id.to_string(), r.block_id.to_string(), format!("{:e}", r.label), format!("{p:e}")])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let truths: Vec<C64> = rows.iter().map(|r| C64::new(r.label, 0.0)).collect();
    let mae = rows.iter().zip(&predictions).map(|(r, p)| (r.label - p).abs()).sum::<f64>() / rows.len() as f64;
    let score = nmse(&predictions, &truths)?;
    println!(
        "{} {} rows: NMSE(|alpha|) {score:.4e}, MAE {mae:.4e} -> {}",
        rows.len(),
        a.split,
        path.display()
    );
    let manifest = json!({
        "command": "eval",
        "version": crate::harness::VERSION,
        "model": a.model,
        "testset": a.testset,
        "split": a.split,
        "rows": rows.len(),
        "nmse": score,
        "mae": mae,
        "started_unix": started,
        "finished_unix": crate::harness::unix_now(),
        "outputs": [path],
    });
    let mpath = a.out.join("eval_manifest.json");
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))
}

pub fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let mut curves = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(&a.dir)
        .map_err(|e| Error::io(&a.dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    entries.sort();
    for name in entries {
        let Some(stem) = name.strip_prefix("cdf_").and_then(|s| s.strip_suffix(".csv")) else {
            continue;
        };
        let Some((metric, method)) = stem.split_once('_') else {
            continue;
        };
        let metric = match metric {
            "nmse" => "nmse",
            "se" => "se",
            _ => continue,
        };
        if metric == "se" {
            method.parse::<SeMethod>()?;
        } else {
            method.parse::<Method>()?;
        }
        curves.push((metric, name.clone(), method.to_owned()));
    }
    if curves.is_empty() {
        return Err(Error::Config(format!("no cdf_*.csv files in {}", a.dir.display())));
    }
    let path = a.dir.join("plot.gp");
    fs::write(&path, gnuplot_script(&curves)).map_err(|e| Error::io(&path, e))?;
    println!("{} curves -> {}", curves.len(), path.display());
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

