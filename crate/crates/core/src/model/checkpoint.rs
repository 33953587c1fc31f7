use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{EncoderParams, Mat};
use super::train::EncoderModel;
use crate::error::{read_to_string, write_string, Error, Result};

const FORMAT: &str = "kginject-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

impl EncoderModel {
    /// JSON checkpoint holding the config (vocabulary included) and every
    /// tensor in declaration order.
    pub fn to_json(&self) -> Result<String> {
        let tensors = self
            .params
            .named()
            .into_iter()
            .map(|(name, m)| TensorRecord {
                name,
                rows: m.nrows(),
                cols: m.ncols(),
                data: m.iter().copied().collect(),
            })
            .collect();
        let file = CheckpointFile {
            format: FORMAT.into(),
            version: VERSION,
            config: self.config.clone(),
            tensors,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(Error::Invalid(format!("unsupported checkpoint {} v{}", file.format, file.version)));
        }
        let mut params = EncoderParams::init(&file.config, 0)?;
        {
            let mut slots = params.named_mut();
            if slots.len() != file.tensors.len() {
                return Err(Error::Shape(format!("checkpoint has {} tensors, expected {}", file.tensors.len(), slots.len())));
            }
            for ((name, slot), rec) in slots.iter_mut().zip(file.tensors) {
                if *name != rec.name || slot.dim() != (rec.rows, rec.cols) {
                    return Err(Error::Shape(format!(
                        "tensor `{}` {}x{} does not match `{name}` {:?}",
                        rec.name,
                        rec.rows,
                        rec.cols,
                        slot.dim()
                    )));
                }
                **slot = Mat::from_shape_vec((rec.rows, rec.cols), rec.data)
                    .map_err(|e| Error::Shape(format!("tensor `{name}`: {e}")))?;
            }
        }
        Ok(EncoderModel { config: file.config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{AttentionMode, Vocab};

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig::toy(Vocab::build(["x", "y"]), AttentionMode::ModifiedDea);
        let model = EncoderModel::new(cfg, 11).unwrap();
        let back = EncoderModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = ModelConfig::toy(Vocab::build(["x"]), AttentionMode::Plain);
        let model = EncoderModel::new(cfg, 1).unwrap();
        let text = model.to_json().unwrap().replacen("\"rows\":6", "\"rows\":7", 1);
        assert!(EncoderModel::from_json(&text).is_err());
    }
}
