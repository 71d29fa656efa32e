//! JSON persistence of trained networks.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::learn::mlp::{Dense, MlpModel, Preprocessing, Standardizer, TrainingMeta, INPUTS};
use crate::{Error, Result};

const FORMAT: &str = "dlgain-mlp";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    /// Row-major `(rows, cols)`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    layout: Vec<usize>,
    hidden_activation: String,
    output: String,
    preprocessing: Preprocessing,
    layers: Vec<LayerFile>,
    standardizer: Standardizer,
    meta: TrainingMeta,
}

pub fn model_to_json(model: &MlpModel) -> Result<String> {
    let file = ModelFile {
        format: FORMAT.into(),
        version: VERSION,
        layout: model.layout(),
        hidden_activation: "relu".into(),
        output: "linear, clamped at 0".into(),
        preprocessing: model.preprocessing,
        layers: model
            .layers
            .iter()
            .map(|l| LayerFile {
                rows: l.outputs(),
                cols: l.inputs(),
                weights: l.weights.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect(),
        standardizer: model.standardizer.clone(),
        meta: model.meta.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn model_from_json(text: &str) -> Result<MlpModel> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::Model(format!("malformed model file: {e}")))?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(Error::Model(format!(
            "unsupported model format {} v{}",
            file.format, file.version
        )));
    }
    if file.layers.is_empty() || file.layout.len() != file.layers.len() + 1 {
        return Err(Error::Model(format!(
            "layout {:?} does not match {} layers",
            file.layout,
            file.layers.len()
        )));
    }
    if file.layout[0] != INPUTS || *file.layout.last().expect("non-empty") != 1 {
        return Err(Error::Model(format!(
            "layout {:?} must map {INPUTS} inputs to 1 output",
            file.layout
        )));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, l) in file.layers.into_iter().enumerate() {
        if l.cols != file.layout[i] || l.rows != file.layout[i + 1] || l.bias.len() != l.rows {
            return Err(Error::Model(format!("layer {} shape mismatch with layout", i + 1)));
        }
        let weights = Array2::from_shape_vec((l.rows, l.cols), l.weights)
            .map_err(|e| Error::Model(format!("layer {}: {e}", i + 1)))?;
        if weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("layer {} holds non-finite parameters", i + 1)));
        }
        layers.push(Dense {
            weights,
            bias: Array1::from(l.bias),
        });
    }
    let st = &file.standardizer;
    if st.mean.len() != INPUTS || st.std.len() != INPUTS || st.std.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Model("standardizer must hold 3 means and 3 positive deviations".into()));
    }
    Ok(MlpModel {
        layers,
        standardizer: file.standardizer,
        preprocessing: file.preprocessing,
        meta: file.meta,
    })
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_json(model)?).map_err(|e| Error::io(path, e))
}

/// Loads a model. A missing file maps to a configuration error.
pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::mlp::HIDDEN;
    use crate::rng::{RngStreams, Stage};
    use rand::Rng;

    fn model() -> MlpModel {
        let mut rng = RngStreams::new(5).stream(Stage::Init, 0);
        let mut m = MlpModel::init(
            &HIDDEN,
            Standardizer {
                mean: vec![0.1, -2.0, 3.3],
                std: vec![0.7, 1.9, 0.01],
            },
            Preprocessing::LogRatio,
            &mut rng,
        )
        .unwrap();
        for l in &mut m.layers {
            l.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        m
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        let mut rng = RngStreams::new(6).stream(Stage::Trial, 0);
        for _ in 0..100 {
            let x = [
                rng.random_range(1e-12..1e-6),
                rng.random_range(1e-12..1e-6),
                rng.random_range(1e-12..1e-6),
            ];
            assert_eq!(m.predict(&x).unwrap().to_bits(), back.predict(&x).unwrap().to_bits());
        }
    }

    #[test]
    fn corrupted_files_are_errors() {
        let text = model_to_json(&model()).unwrap();
        assert!(matches!(model_from_json(&text[..text.len() / 2]), Err(Error::Model(_))));
        let bad = text.replacen("\"rows\": 32", "\"rows\": 31", 1);
        assert!(matches!(model_from_json(&bad), Err(Error::Model(_))));
        let bad = text.replacen("\"dlgain-mlp\"", "\"other\"", 1);
        assert!(matches!(model_from_json(&bad), Err(Error::Model(_))));
        assert!(matches!(load_model("/nonexistent/model.json"), Err(Error::Io { .. })));
    }
}
