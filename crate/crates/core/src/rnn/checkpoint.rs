//! JSON manifest plus little-endian f64 weight blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{Layout, RnnArch, RnnModel};
use super::train::History;
use crate::data::Scaler;
use crate::error::{Error, Result};

const FORMAT: &str = "rnnmpc-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub arch: RnnArch,
    pub scaler: Option<Scaler>,
    pub seed: u64,
    /// Free-form training metadata (spec, dataset ids, ...).
    #[serde(default)]
    pub training: serde_json::Value,
    #[serde(default)]
    pub history: Option<History>,
    pub layout: String,
    pub n_params: usize,
    /// Weight file, relative to the manifest.
    pub weights: String,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path minus extension>.bin` (weights).
pub fn save_checkpoint(
    path: &Path,
    model: &RnnModel,
    seed: u64,
    training: serde_json::Value,
    history: Option<&History>,
) -> Result<Manifest> {
    let blob = blob_path(path);
    let manifest = Manifest {
        format: FORMAT.into(),
        arch: model.arch.clone(),
        scaler: model.scaler.clone(),
        seed,
        training,
        history: history.cloned(),
        layout: model.layout.describe(&model.arch),
        n_params: model.params.len(),
        weights: blob
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let bytes: Vec<u8> = model.params.iter().flat_map(|p| p.to_le_bytes()).collect();
    fs::write(&blob, bytes)?;
    fs::write(path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<(RnnModel, Manifest)> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(path)?)?;
    if manifest.format != FORMAT {
        return Err(Error::Format(format!(
            "unknown checkpoint format {:?}",
            manifest.format
        )));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let bytes = fs::read(dir.join(&manifest.weights))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(
            "weight blob length is not a multiple of 8".into(),
        ));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let expected = Layout::new(&manifest.arch).total;
    if params.len() != expected || manifest.n_params != expected {
        return Err(Error::dim("checkpoint parameters", expected, params.len()));
    }
    let mut model = RnnModel::zeros(manifest.arch.clone())?;
    model.params = params;
    model.scaler = manifest.scaler.clone();
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnn::model::CellKind;

    #[test]
    fn reload_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut m = RnnModel::init(RnnArch::new(CellKind::Lstm, 3, 6, 5, 2), 4).unwrap();
        m.params[0] = f64::MIN_POSITIVE / 3.0;
        save_checkpoint(&path, &m, 4, serde_json::json!({"note": "x"}), None).unwrap();
        let (back, man) = load_checkpoint(&path).unwrap();
        assert_eq!(man.weights, "m.bin");
        assert_eq!(back.arch, m.arch);
        assert!(back
            .params
            .iter()
            .zip(&m.params)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = RnnModel::init(RnnArch::new(CellKind::Gru, 1, 2, 2, 1), 0).unwrap();
        save_checkpoint(&path, &m, 0, serde_json::Value::Null, None).unwrap();
        let blob = dir.path().join("m.bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
