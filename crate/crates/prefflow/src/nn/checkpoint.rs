//! Model checkpoint schema.
//!
//! A checkpoint is a JSON document:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "layer_dims": [6, 32, 32, 2],
//!   "activation": "tanh",
//!   "seed": 42,
//!   "layers": [{"w": [...], "b": [...]}, ...],
//!   "moments": {"first_moment": [...], "second_moment": [...], "step_count": 0, "hyper": {...}}
//! }
//! ```
//!
//! `moments` is optional; inference-only checkpoints omit it.

use crate::error::{Error, Result};
use crate::nn::mlp::{mlp_init, Activation, MlpModel};
use crate::nn::optim::OptimizerState;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

/// Flattened parameters of one layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerParams {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Serialized model, optionally with optimizer moments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub schema_version: u32,
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub layers: Vec<LayerParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<OptimizerState>,
}

impl ModelCheckpoint {
    pub fn from_model(model: &MlpModel, moments: Option<&OptimizerState>) -> Self {
        let dims = model.layer_dims();
        let flat = model.flat_params();
        let mut layers = Vec::new();
        let mut off = 0;
        for win in dims.windows(2) {
            let (nw, nb) = (win[0] * win[1], win[1]);
            layers.push(LayerParams {
                w: flat[off..off + nw].to_vec(),
                b: flat[off + nw..off + nw + nb].to_vec(),
            });
            off += nw + nb;
        }
        ModelCheckpoint {
            schema_version: SCHEMA_VERSION,
            layer_dims: dims.to_vec(),
            activation: model.activation(),
            seed: model.seed(),
            layers,
            moments: moments.cloned(),
        }
    }

    pub fn to_model(&self) -> Result<MlpModel> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint schema_version {}",
                self.schema_version
            )));
        }
        let mut model = mlp_init(&self.layer_dims, self.activation, self.seed)?;
        let mut flat = Vec::with_capacity(model.param_count());
        if self.layers.len() != self.layer_dims.len() - 1 {
            return Err(Error::Shape(format!(
                "checkpoint has {} layers for dims {:?}",
                self.layers.len(),
                self.layer_dims
            )));
        }
        for (layer, win) in self.layers.iter().zip(self.layer_dims.windows(2)) {
            if layer.w.len() != win[0] * win[1] || layer.b.len() != win[1] {
                return Err(Error::Shape(format!(
                    "layer parameter lengths {}x{} do not fit dims {win:?}",
                    layer.w.len(),
                    layer.b.len()
                )));
            }
            flat.extend_from_slice(&layer.w);
            flat.extend_from_slice(&layer.b);
        }
        model.set_flat_params(&flat)?;
        if !flat.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(
                "checkpoint contains non-finite parameters".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("checkpoint serialization failed: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: format!("bad checkpoint {}: {e}", path.display()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let model = mlp_init(&[4, 8, 2], Activation::Silu, 77).unwrap();
        let ck = ModelCheckpoint::from_model(&model, None);
        let text = serde_json::to_string(&ck).unwrap();
        let back: ModelCheckpoint = serde_json::from_str(&text).unwrap();
        let restored = back.to_model().unwrap();
        assert_eq!(model.flat_params(), restored.flat_params());
        assert_eq!(model.layer_dims(), restored.layer_dims());
    }

    #[test]
    fn moments_survive_roundtrip() {
        let model = mlp_init(&[3, 5, 2], Activation::Tanh, 1).unwrap();
        let mut st = OptimizerState::new(model.param_count(), Default::default());
        st.first_moment[0] = 0.125;
        st.step_count = 9;
        let ck = ModelCheckpoint::from_model(&model, Some(&st));
        let back: ModelCheckpoint =
            serde_json::from_str(&serde_json::to_string(&ck).unwrap()).unwrap();
        let m = back.moments.unwrap();
        assert_eq!(m.first_moment[0], 0.125);
        assert_eq!(m.step_count, 9);
    }

    #[test]
    fn corrupted_layer_shapes_are_rejected() {
        let model = mlp_init(&[3, 5, 2], Activation::Tanh, 1).unwrap();
        let mut ck = ModelCheckpoint::from_model(&model, None);
        ck.layers[0].w.pop();
        assert!(matches!(ck.to_model(), Err(Error::Shape(_))));
    }
}
