//! Versioned checkpoint files: architecture, parameter blobs, tap
//! registry, and probe blobs in one JSON container.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_model, Probe, TapSpec, TappedModel};
use crate::error::{Error, Result};
use crate::num::Scalar;

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ProbeBlob {
    tap_index: usize,
    weight: Vec<f64>,
    bias: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    arch_name: String,
    image_side: usize,
    init_seed: u64,
    taps: Vec<TapSpec>,
    /// Named encoder+head tensors, in model traversal order.
    state: Vec<(String, Vec<f64>)>,
    probes: Vec<ProbeBlob>,
}

/// Persist a model and its probes.
pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    model: &TappedModel<F>,
    probes: &[Probe<F>],
) -> Result<()> {
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        arch_name: model.arch_name.clone(),
        image_side: model.image_side,
        init_seed: model.init_seed,
        taps: model.taps.clone(),
        state: model.state(),
        probes: probes
            .iter()
            .map(|p| ProbeBlob {
                tap_index: p.tap_index,
                weight: p.weight.iter().map(|v| v.as_f64()).collect(),
                bias: p.bias.as_f64(),
            })
            .collect(),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let json = serde_json::to_vec(&file)?;
    fs::write(path, json)?;
    Ok(())
}

/// Load a checkpoint: the topology is rebuilt from the architecture name
/// and the stored tensors are loaded positionally.
pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<(TappedModel<F>, Vec<Probe<F>>)> {
    let bytes = fs::read(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let file: CheckpointFile = serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("unsupported format version {}", file.format_version),
        });
    }
    let mut model = build_model::<F>(&file.arch_name, file.image_side, file.init_seed)?;
    if file.taps != model.taps {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: "tap registry does not match the architecture".into(),
        });
    }
    model.load_state(file.state)?;
    let probes = file
        .probes
        .into_iter()
        .map(|p| Probe {
            tap_index: p.tap_index,
            weight: p.weight.into_iter().map(F::f).collect(),
            bias: F::f(p.bias),
        })
        .collect();
    Ok((model, probes))
}

/// SHA-256 of the serialized encoder+head state; the probe-isolation
/// contract is checked by comparing digests before and after probe
/// fine-tuning.
pub fn state_digest<F: Scalar>(model: &TappedModel<F>) -> String {
    let mut hasher = Sha256::new();
    for (name, values) in model.state() {
        hasher.update(name.as_bytes());
        for v in values {
            hasher.update(v.to_le_bytes());
        }
    }
    crate::seed::hex_digest(&hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_probes;

    #[test]
    fn roundtrip_preserves_state_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        let model = build_model::<f32>("small_cnn_3", 32, 77).unwrap();
        let probes = init_probes(&model);
        save_checkpoint(&path, &model, &probes).unwrap();
        let (loaded, loaded_probes) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(model.state(), loaded.state());
        assert_eq!(probes, loaded_probes);
        assert_eq!(state_digest(&model), state_digest(&loaded));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_checkpoint::<f32>(Path::new("/nonexistent/m.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/m.json"));
    }

    #[test]
    fn corrupt_json_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, b"{not json").unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path).unwrap_err(),
            Error::Corrupt { .. }
        ));
    }
}
