use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::Architecture;
use super::model::CnnModel;
use super::train::TrainConfig;
use crate::dataset::{InputTransform, Process};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ParameterSpace};
use crate::scalar::{to_f64, Scalar};
use crate::tensor::{read_tensor, write_tensor};

pub const MODEL_FORMAT: &str = "nlsurf-model/1";

/// Provenance stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub process: Option<Process>,
    pub grid: Option<GridSpec>,
    pub space: Option<ParameterSpace>,
    pub dataset_seed: Option<u64>,
    pub train_config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub architecture: Architecture,
    pub input_transform: InputTransform,
    pub dtype: String,
    pub weights: Vec<TensorEntry>,
    pub biases: Vec<TensorEntry>,
    pub info: ModelInfo,
}

/// Write `manifest.json` plus one NLT file per weight and bias tensor.
/// Values are stored as `f32`.
pub fn save_model<T: Scalar>(model: &CnnModel<T>, dir: impl AsRef<Path>, info: &ModelInfo) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let shapes = model.arch.parameter_shapes();
    for (l, ((ws, bs), (w, b))) in shapes.iter().zip(model.weights.iter().zip(&model.biases)).enumerate() {
        for (kind, shape, data, list) in [("weight", ws, w, &mut weights), ("bias", bs, b, &mut biases)] {
            let file = format!("layer{l}_{kind}.nlt");
            let payload: Vec<f32> = data.iter().map(|&v| to_f64(v) as f32).collect();
            write_tensor(dir.join(&file), shape, &payload)?;
            list.push(TensorEntry { file, shape: shape.clone() });
        }
    }
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        architecture: model.arch.clone(),
        input_transform: model.input_transform,
        dtype: "f32".into(),
        weights,
        biases,
        info: info.clone(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<CnnModel<f32>> {
    Ok(load_model_with_info(dir)?.0)
}

pub fn load_model_with_info(dir: impl AsRef<Path>) -> Result<(CnnModel<f32>, ModelInfo)> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: ModelManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("model manifest: {e}")))?;
    if manifest.format != MODEL_FORMAT {
        return Err(Error::format(format!("unsupported model format {:?}", manifest.format)));
    }
    if manifest.dtype != "f32" {
        return Err(Error::format(format!("unsupported weight dtype {:?}", manifest.dtype)));
    }
    manifest
        .architecture
        .validate()
        .map_err(|e| Error::format(format!("model architecture: {e}")))?;
    let shapes = manifest.architecture.parameter_shapes();
    if manifest.weights.len() != shapes.len() || manifest.biases.len() != shapes.len() {
        return Err(Error::format(format!(
            "manifest lists {} weight and {} bias tensors, architecture needs {}",
            manifest.weights.len(),
            manifest.biases.len(),
            shapes.len()
        )));
    }
    let read = |entry: &TensorEntry, want: &[usize]| -> Result<Vec<f32>> {
        if entry.shape != want {
            return Err(Error::format(format!(
                "{} has manifest shape {:?}, architecture needs {:?}",
                entry.file, entry.shape, want
            )));
        }
        let t = read_tensor(dir.join(&entry.file)).map_err(|e| match e {
            Error::Io(io) => Error::format(format!("{}: {io}", entry.file)),
            other => other,
        })?;
        if t.shape != want {
            return Err(Error::format(format!(
                "{} holds shape {:?}, manifest says {:?}",
                entry.file, t.shape, want
            )));
        }
        Ok(t.data)
    };
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for ((ws, bs), (we, be)) in shapes.iter().zip(manifest.weights.iter().zip(&manifest.biases)) {
        weights.push(read(we, ws)?);
        biases.push(read(be, bs)?);
    }
    let model = CnnModel::from_parts(manifest.architecture, manifest.input_transform, weights, biases)?;
    Ok((model, manifest.info))
}
