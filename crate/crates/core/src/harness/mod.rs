//! Experiment orchestration: worker pool, drop loop, run manifests and the
//! command line front-end in [`cli`].

pub mod cli;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::downlink::SymbolModel;
use crate::estimators::Method;
use crate::learn::MlpModel;
use crate::metrics::{evaluate_drop, EvalOptions, EvalReport, ReportMeta};
use crate::pipeline::{DropContext, DEFAULT_THETA};
use crate::rng::{RngStreams, Stage};
use crate::scenario::{Scenario, ScenarioConfig};
use crate::{Error, Result};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "DLGAIN_OUT_DIR";

/// Artifact version recorded in manifests.
pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

/// Runs `f` on a dedicated pool of `workers` threads (0 picks the default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub drops: u64,
    pub blocks: u64,
    pub methods: Vec<Method>,
    pub model: Option<MlpModel>,
    pub symbols: SymbolModel,
    pub theta: f64,
    pub se: bool,
    pub se_all_symbols: bool,
    pub symbol_index: usize,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            drops: 200,
            blocks: 200,
            methods: vec![Method::Hardening, Method::ModelAided, Method::Genie],
            model: None,
            symbols: SymbolModel::Gaussian,
            theta: DEFAULT_THETA,
            se: true,
            se_all_symbols: false,
            symbol_index: 0,
        }
    }
}

/// Evaluates `opts.drops` drops in parallel on the current pool. Results are
/// merged in drop order, so the report does not depend on the worker count.
pub fn run_simulation(scenario: &Scenario, opts: &SimulateOptions) -> Result<EvalReport> {
    if opts.methods.is_empty() {
        return Err(Error::Config("no estimator selected".into()));
    }
    if opts.methods.contains(&Method::Learned) && opts.model.is_none() {
        return Err(Error::Config("--estimators learned needs --model".into()));
    }
    let streams = RngStreams::new(scenario.config.seed);
    let eval = EvalOptions {
        blocks: opts.blocks,
        symbols: opts.symbols,
        methods: &opts.methods,
        model: opts.model.as_ref(),
        se: opts.se,
        symbol_index: opts.symbol_index,
        se_all_symbols: opts.se_all_symbols,
    };
    let drops = (0..opts.drops)
        .into_par_iter()
        .map(|d| {
            let ctx = DropContext::generate(scenario, &streams, d, opts.theta)?;
            evaluate_drop(scenario, &ctx, &streams, d, &eval)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        meta: ReportMeta {
            seed: scenario.config.seed,
            drops: opts.drops,
            blocks: opts.blocks,
            users_per_cell: scenario.users_per_cell(),
            cells: scenario.cells(),
            antennas: scenario.antennas(),
        },
        methods: opts.methods.clone(),
        drops,
    })
}

/// Stream key of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub tag: u64,
}

/// Provenance record written next to every set of outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: ScenarioConfig,
    /// Command options as given.
    pub options: serde_json::Value,
    pub seeds: BTreeMap<String, StreamKey>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<PathBuf>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, config: &ScenarioConfig, options: serde_json::Value, seed: u64) -> Self {
        let seeds = Stage::ALL
            .iter()
            .map(|s| (s.label().to_owned(), StreamKey { seed, tag: s.tag() }))
            .collect();
        Self {
            command: command.into(),
            version: VERSION.into(),
            config: config.clone(),
            options,
            seeds,
            started_unix: unix_now(),
            finished_unix: 0,
            outputs: Vec::new(),
        }
    }

    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Scenario {
        Scenario::new(ScenarioConfig {
            antennas: 4,
            tau_c: 20,
            seed: 11,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let s = scenario();
        let opts = SimulateOptions {
            drops: 3,
            blocks: 8,
            ..Default::default()
        };
        let a = with_workers(1, || run_simulation(&s, &opts)).unwrap().unwrap();
        let b = with_workers(3, || run_simulation(&s, &opts)).unwrap().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adding_an_estimator_leaves_others_unchanged() {
        let s = scenario();
        let base = SimulateOptions {
            drops: 2,
            blocks: 6,
            methods: vec![Method::Hardening, Method::ModelAided],
            ..Default::default()
        };
        let more = SimulateOptions {
            methods: vec![Method::Hardening, Method::ModelAided, Method::Genie],
            ..base.clone()
        };
        let a = run_simulation(&s, &base).unwrap();
        let b = run_simulation(&s, &more).unwrap();
        assert_eq!(a.nmse_values(Method::ModelAided), b.nmse_values(Method::ModelAided));
    }

    #[test]
    fn learned_without_model_is_a_config_error() {
        let opts = SimulateOptions {
            methods: vec![Method::Learned],
            ..Default::default()
        };
        assert!(matches!(run_simulation(&scenario(), &opts), Err(Error::Config(_))));
    }
}
