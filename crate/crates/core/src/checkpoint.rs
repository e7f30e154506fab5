//! JSON model checkpoints.
//!
//! Layout (version 1):
//!
//! ```text
//! {
//!   "format": "tcconf-mlp",
//!   "version": 1,
//!   "layer_sizes": [d, h1, ..., K],
//!   "activation": "relu" | "tanh",
//!   "weights": [[...], ...],   // one flat array per layer, row-major (fan_in, fan_out)
//!   "biases":  [[...], ...]    // one array per layer, length fan_out
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so save/load is lossless.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, MlpModel};

pub const CHECKPOINT_FORMAT: &str = "tcconf-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_model(model: &MlpModel) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layer_sizes: model.layer_sizes().to_vec(),
            activation: model.activation(),
            weights: model
                .weights()
                .iter()
                .map(|w| w.iter().copied().collect())
                .collect(),
            biases: model.biases().iter().map(|b| b.to_vec()).collect(),
        }
    }

    pub fn into_model(self) -> Result<MlpModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Contract(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let n = self.layer_sizes.len();
        if n < 2 || self.weights.len() != n - 1 || self.biases.len() != n - 1 {
            return Err(Error::Shape(
                "checkpoint layer count does not match layer_sizes".into(),
            ));
        }
        let mut weights = Vec::with_capacity(n - 1);
        for (l, flat) in self.weights.into_iter().enumerate() {
            let shape = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = Array2::from_shape_vec(shape, flat).map_err(|e| {
                Error::Shape(format!("layer {l} weights: {e}"))
            })?;
            weights.push(w);
        }
        let biases = self.biases.into_iter().map(Array1::from).collect();
        let model = MlpModel::from_parameters(weights, biases, self.activation)?;
        if model.layer_sizes() != self.layer_sizes.as_slice() {
            return Err(Error::Shape("bias lengths disagree with layer_sizes".into()));
        }
        Ok(model)
    }
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&Checkpoint::from_model(model))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    ckpt.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let model = MlpModel::new(&[3, 5, 2], Activation::Tanh, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.weights(), model.weights());
        assert_eq!(back.biases(), model.biases());
        assert_eq!(back.activation(), Activation::Tanh);
    }

    #[test]
    fn wrong_shapes_rejected() {
        let mut ckpt = Checkpoint::from_model(&MlpModel::new(&[2, 2], Activation::Relu, 0).unwrap());
        ckpt.weights[0].pop();
        assert!(matches!(ckpt.into_model(), Err(Error::Shape(_))));
    }
}
