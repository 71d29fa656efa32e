//! Labeled feature rows for the learned estimator.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::downlink::SymbolModel;
use crate::estimators::InterferenceProfile;
use crate::learn::mlp::INPUTS;
use crate::pipeline::DropContext;
use crate::rng::{RngStreams, Stage};
use crate::scenario::Scenario;
use crate::{Error, Result, C64};

/// CSV header of a dataset file.
pub const DATASET_HEADER: [&str; 7] = ["xi_loo", "T", "eta_rho_beta", "label", "drop_id", "block_id", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split '{s}'"))),
        }
    }
}

/// Fractions of rows assigned to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.4,
            val: 0.1,
            test: 0.5,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(*p >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Row counts `(train, val)`; the test split takes the remainder.
    pub fn counts(&self, rows: usize) -> (usize, usize) {
        let train = (self.train * rows as f64).round() as usize;
        let val = ((self.val * rows as f64).round() as usize).min(rows - train.min(rows));
        (train.min(rows), val)
    }
}

/// Simulator-side context of a row, kept in memory only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowAux {
    pub user: usize,
    /// Full-block sample power `xi`.
    pub xi: f64,
    pub alpha: C64,
    pub profile: InterferenceProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    /// `[xi'(n), T, eta rho beta]`.
    pub features: [f64; INPUTS],
    /// `|alpha_lk^lk|`.
    pub label: f64,
    pub drop_id: u64,
    pub block_id: u64,
    pub split: Split,
    pub aux: Option<RowAux>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<DatasetRow>,
    /// Rows dropped because a feature was not finite.
    pub skipped: usize,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(DATASET_HEADER)?;
        for r in &self.rows {
            w.write_record([
                format!("{:e}", r.features[0]),
                format!("{:e}", r.features[1]),
                format!("{:e}", r.features[2]),
                format!("{:e}", r.label),
                r.drop_id.to_string(),
                r.block_id.to_string(),
                r.split.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<dataset>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
        if header != DATASET_HEADER {
            return Err(Error::Config(format!(
                "dataset header {header:?} does not match {DATASET_HEADER:?}"
            )));
        }
        let mut rows = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("dataset row {}: column {}: {e}", line + 1, DATASET_HEADER[i])))
            };
            let int = |i: usize| -> Result<u64> {
                rec[i]
                    .parse::<u64>()
                    .map_err(|e| Error::Config(format!("dataset row {}: column {}: {e}", line + 1, DATASET_HEADER[i])))
            };
            rows.push(DatasetRow {
                features: [num(0)?, num(1)?, num(2)?],
                label: num(3)?,
                drop_id: int(4)?,
                block_id: int(5)?,
                split: rec[6].parse()?,
                aux: None,
            });
        }
        Ok(Self { rows, skipped: 0 })
    }
}

/// Size and generation options of a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub drops: u64,
    pub blocks: u64,
    pub ratios: SplitRatios,
    pub symbols: SymbolModel,
    pub theta_mult: f64,
    /// Symbol index used for the leave-one-out feature.
    pub symbol_index: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            drops: 100,
            blocks: 500,
            ratios: SplitRatios::default(),
            symbols: SymbolModel::Gaussian,
            theta_mult: 1.0,
            symbol_index: 0,
        }
    }
}

/// Index of the shuffle stream, outside the range used for drops.
const SHUFFLE_STREAM: u64 = u64::MAX;

/// Runs the full pipeline for a typical user of every drop, one row per
/// `(drop, block)`, then shuffles and splits the rows.
pub fn generate_dataset(scenario: &Scenario, spec: &DatasetSpec, streams: &RngStreams) -> Result<Dataset> {
    spec.ratios.validate()?;
    if spec.symbol_index >= scenario.data_len() {
        return Err(Error::Config(format!(
            "symbol index {} outside the {} data symbols",
            spec.symbol_index,
            scenario.data_len()
        )));
    }
    let per_drop: Vec<Result<(Vec<DatasetRow>, usize)>> = (0..spec.drops)
        .into_par_iter()
        .map(|d| drop_rows(scenario, spec, streams, d))
        .collect();
    let mut rows = Vec::with_capacity((spec.drops * spec.blocks) as usize);
    let mut skipped = 0;
    for r in per_drop {
        let (mut part, skip) = r?;
        rows.append(&mut part);
        skipped += skip;
    }
    rows.shuffle(&mut streams.stream(Stage::Dataset, SHUFFLE_STREAM));
    let (train, val) = spec.ratios.counts(rows.len());
    for (i, r) in rows.iter_mut().enumerate() {
        r.split = if i < train {
            Split::Train
        } else if i < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(Dataset { rows, skipped })
}

fn drop_rows(scenario: &Scenario, spec: &DatasetSpec, streams: &RngStreams, d: u64) -> Result<(Vec<DatasetRow>, usize)> {
    let ctx = DropContext::generate(scenario, streams, d, spec.theta_mult)?;
    let user = streams.stream(Stage::Dataset, d).random_range(0..scenario.num_users());
    let mut rows = Vec::with_capacity(spec.blocks as usize);
    let mut skipped = 0;
    for b in 0..spec.blocks {
        let blk = ctx.block(scenario, streams, d, b, spec.symbols)?;
        let features = ctx.features(&blk.received, user, spec.symbol_index);
        let alpha = blk.channels.gains.own(user);
        if features.iter().any(|f| !f.is_finite()) || !alpha.norm().is_finite() {
            skipped += 1;
            continue;
        }
        rows.push(DatasetRow {
            features,
            label: alpha.norm(),
            drop_id: d,
            block_id: b,
            split: Split::Train,
            aux: Some(RowAux {
                user,
                xi: blk.received.xi[user],
                alpha,
                profile: ctx.profiles[user],
            }),
        });
    }
    Ok((rows, skipped))
}
