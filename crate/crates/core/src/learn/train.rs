//! Mini-batch training with best-validation checkpointing.

use std::io::Write;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::learn::adam::{AdamConfig, AdamState};
use crate::learn::dataset::{Dataset, Split};
use crate::learn::mlp::{gradient_slices, MlpModel, Preprocessing, Standardizer, HIDDEN, INPUTS};
use crate::rng::{RngStreams, Stage};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub preprocessing: Preprocessing,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: HIDDEN.to_vec(),
            lr: 0.01,
            batch_size: 128,
            epochs: 200,
            seed: 1,
            preprocessing: Preprocessing::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub log: Vec<EpochLog>,
}

/// Design matrix and working-space targets of one split.
struct Encoded {
    x: Array2<f64>,
    y: Array1<f64>,
}

fn encode(model: &MlpModel, dataset: &Dataset, split: Split) -> Result<Encoded> {
    let rows: Vec<_> = dataset.split(split).collect();
    let mut data = Vec::with_capacity(rows.len() * INPUTS);
    let mut y = Vec::with_capacity(rows.len());
    for r in &rows {
        data.extend_from_slice(&model.encode(&r.features)?);
        y.push(model.encode_label(&r.features, r.label));
    }
    Ok(Encoded {
        x: Array2::from_shape_vec((rows.len(), INPUTS), data).expect("shape"),
        y: Array1::from(y),
    })
}

/// Trains a fresh network on the train split and keeps the parameters with
/// the lowest validation MAE (measured in the network's working space).
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let n_train = dataset.count(Split::Train);
    let n_val = dataset.count(Split::Val);
    if n_train == 0 || n_val == 0 {
        return Err(Error::Config(format!(
            "training needs non-empty train and validation splits (got {n_train} and {n_val})"
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if !(config.lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {}", config.lr)));
    }
    let streams = RngStreams::new(config.seed);
    let raw: Vec<[f64; INPUTS]> = dataset
        .split(Split::Train)
        .map(|r| config.preprocessing.transform(&r.features))
        .collect();
    let standardizer = Standardizer::fit(&raw)?;
    let mut model = MlpModel::init(
        &config.hidden,
        standardizer,
        config.preprocessing,
        &mut streams.stream(Stage::Init, 0),
    )?;
    let train_set = encode(&model, dataset, Split::Train)?;
    let val_set = encode(&model, dataset, Split::Val)?;

    let mut adam = AdamState::new(
        &model.tensor_sizes(),
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
    );
    let mut best = model.clone();
    let mut best_val = model.mae(val_set.x.view(), val_set.y.view());
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut bx = Array2::zeros((config.batch_size, INPUTS));
    let mut by = Array1::zeros(config.batch_size);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut streams.stream(Stage::Batch, epoch as u64));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            if bx.nrows() != b {
                bx = Array2::zeros((b, INPUTS));
                by = Array1::zeros(b);
            }
            for (i, &row) in chunk.iter().enumerate() {
                bx.row_mut(i).assign(&train_set.x.row(row));
                by[i] = train_set.y[row];
            }
            let (loss, grads) = model.gradient(bx.view(), by.view());
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch}, step {}: batch loss {loss}",
                    adam.step + 1
                )));
            }
            loss_sum += loss * b as f64;
            adam.update(&mut model.tensors_mut(), &gradient_slices(&grads))?;
        }
        let train_mae = loss_sum / n_train as f64;
        let val_mae = model.mae(val_set.x.view(), val_set.y.view());
        if !val_mae.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged at epoch {epoch}: validation MAE {val_mae} (train MAE {train_mae})"
            )));
        }
        if val_mae < best_val {
            best_val = val_mae;
            best_epoch = epoch;
            best = model.clone();
        }
        log.push(EpochLog {
            epoch,
            train_mae,
            val_mae,
        });
    }

    let last = log.last().copied();
    best.meta = crate::learn::mlp::TrainingMeta {
        epochs: config.epochs,
        learning_rate: config.lr,
        batch_size: config.batch_size,
        seed: config.seed,
        best_epoch,
        best_val_mae: best_val,
        final_train_mae: last.map_or(f64::NAN, |l| l.train_mae),
        final_val_mae: last.map_or(best_val, |l| l.val_mae),
        train_rows: n_train,
        val_rows: n_val,
    };
    Ok(TrainOutcome { model: best, log })
}

/// Writes the loss curves as `epoch,train_mae,val_mae`.
pub fn write_training_log<W: Write>(log: &[EpochLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_mae", "val_mae"])?;
    for l in log {
        w.write_record([l.epoch.to_string(), format!("{:e}", l.train_mae), format!("{:e}", l.val_mae)])?;
    }
    w.flush().map_err(|e| Error::io("<training log>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::dataset::DatasetRow;

    fn synthetic(n: usize, label: impl Fn([f64; 3]) -> f64) -> Dataset {
        let rows = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                let f = [0.5 + t, 1.0 + (7.0 * t).sin().abs(), 0.2 + (3.0 * t).cos().abs()];
                DatasetRow {
                    features: f,
                    label: label(f),
                    drop_id: i as u64,
                    block_id: 0,
                    split: match i % 10 {
                        0..=3 => Split::Train,
                        4 => Split::Val,
                        _ => Split::Test,
                    },
                    aux: None,
                }
            })
            .collect();
        Dataset { rows, skipped: 0 }
    }

    #[test]
    fn constant_label_is_learned() {
        let ds = synthetic(2000, |_| 1.5);
        for pre in [Preprocessing::Linear, Preprocessing::LogRatio] {
            let cfg = TrainConfig {
                preprocessing: pre,
                ..Default::default()
            };
            let out = train(&ds, &cfg).unwrap();
            let mae = ds
                .rows
                .iter()
                .map(|r| (out.model.predict(&r.features).unwrap() - 1.5).abs())
                .sum::<f64>()
                / ds.rows.len() as f64;
            assert!(mae < 0.02, "{pre:?}: {mae}");
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let ds = synthetic(200, |f| f[0]);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train(&ds, &cfg).unwrap();
        assert!(out.log.is_empty());
        let streams = RngStreams::new(cfg.seed);
        let raw: Vec<_> = ds.split(Split::Train).map(|r| cfg.preprocessing.transform(&r.features)).collect();
        let init = MlpModel::init(
            &HIDDEN,
            Standardizer::fit(&raw).unwrap(),
            cfg.preprocessing,
            &mut streams.stream(Stage::Init, 0),
        )
        .unwrap();
        assert_eq!(out.model.layers, init.layers);
    }

    #[test]
    fn training_is_deterministic_and_improves() {
        let ds = synthetic(1500, |f| f[0] * f[2]);
        let cfg = TrainConfig {
            epochs: 15,
            ..Default::default()
        };
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.model.meta.best_val_mae < a.log[0].val_mae.max(a.model.meta.best_val_mae) + 1e-12);
        assert!(a.log.last().unwrap().train_mae < a.log[0].train_mae);
    }

    #[test]
    fn empty_validation_is_rejected() {
        let mut ds = synthetic(50, |_| 1.0);
        ds.rows.retain(|r| r.split != Split::Val);
        assert!(matches!(train(&ds, &TrainConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn log_csv_header() {
        let mut buf = Vec::new();
        write_training_log(
            &[EpochLog {
                epoch: 1,
                train_mae: 0.5,
                val_mae: 0.25,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_mae,val_mae\n1,5e-1,2.5e-1\n");
    }
}
