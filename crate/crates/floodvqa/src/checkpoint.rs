//! Fusion-head checkpoints as safetensors files.
//!
//! Every parameter tensor is stored as F32 under its model name
//! (`fc1.weight`, `image_proj.bias`, ...). The header metadata carries
//! `format_version`, `model_tag` and `fusion_config` (JSON).

use std::collections::HashMap;
use std::path::Path;

use floodvqa_core::{FusionConfig, FusionModel};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_tag: String,
    pub model: FusionModel<f32>,
}

fn err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn save(path: &Path, model_tag: &str, model: &FusionModel<f32>) -> Result<()> {
    let params = model.named_parameters();
    let bytes: Vec<Vec<u8>> = params
        .iter()
        .map(|(_, _, data)| data.iter().flat_map(|v| v.to_le_bytes()).collect())
        .collect();
    let mut views = Vec::with_capacity(params.len());
    for ((name, shape, _), raw) in params.iter().zip(&bytes) {
        let view = TensorView::new(Dtype::F32, shape.clone(), raw).map_err(|e| err(path, e.to_string()))?;
        views.push((name.clone(), view));
    }
    let config = serde_json::to_string(model.config()).expect("fusion config serializes");
    let metadata = HashMap::from([
        ("format_version".to_string(), CHECKPOINT_FORMAT_VERSION.to_string()),
        ("model_tag".to_string(), model_tag.to_string()),
        ("fusion_config".to_string(), config),
    ]);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    let tmp = path.with_extension("safetensors.tmp");
    safetensors::serialize_to_file(views, Some(metadata), &tmp).map_err(|e| err(path, e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(Error::io(path))?;
    let (_, header) = SafeTensors::read_metadata(&buf).map_err(|e| err(path, e.to_string()))?;
    let meta = header.metadata().clone().unwrap_or_default();
    let version = meta.get("format_version").map(String::as_str);
    if version != Some(CHECKPOINT_FORMAT_VERSION) {
        return Err(err(path, format!("unsupported format_version {version:?}")));
    }
    let config_json = meta
        .get("fusion_config")
        .ok_or_else(|| err(path, "missing fusion_config metadata"))?;
    let config: FusionConfig =
        serde_json::from_str(config_json).map_err(|e| err(path, format!("bad fusion_config: {e}")))?;
    let model_tag = meta.get("model_tag").cloned().unwrap_or_default();

    let tensors = SafeTensors::deserialize(&buf).map_err(|e| err(path, e.to_string()))?;
    let mut model = FusionModel::<f32>::init(config)?;
    let expected: Vec<(String, Vec<usize>)> =
        model.named_parameters().into_iter().map(|(n, s, _)| (n, s)).collect();
    if tensors.len() != expected.len() {
        return Err(err(path, format!("{} tensors, expected {}", tensors.len(), expected.len())));
    }
    for (name, shape) in expected {
        let view = tensors
            .tensor(&name)
            .map_err(|_| err(path, format!("missing tensor {name}")))?;
        if view.dtype() != Dtype::F32 || view.shape() != shape.as_slice() {
            return Err(err(
                path,
                format!("tensor {name}: {:?}{:?}, expected F32{shape:?}", view.dtype(), view.shape()),
            ));
        }
        let data: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        model.set_parameter(&name, &data)?;
    }
    Ok(Checkpoint { model_tag, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use floodvqa_core::FusionMethod;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for method in [FusionMethod::Concat, FusionMethod::Add, FusionMethod::Mul] {
            let mut cfg = FusionConfig::new(method, 6, 5);
            cfg.common_dim = 8;
            cfg.hidden_dims = [7, 4];
            cfg.seed = 11;
            let model = FusionModel::<f32>::init(cfg).unwrap();
            let path = dir.path().join(format!("{}.safetensors", method.short_name()));
            save(&path, "toy", &model).unwrap();
            let back = load(&path).unwrap();
            assert_eq!(back.model_tag, "toy");
            assert_eq!(back.model.config(), model.config());
            assert_eq!(back.model.param_slices(), model.param_slices());
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let model = FusionModel::<f32>::init(FusionConfig::new(FusionMethod::Concat, 3, 3)).unwrap();
        save(&path, "x", &model).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint { .. })));
    }
}
