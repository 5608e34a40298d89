//! The model container: a directory holding `weights.safetensors` (flat
//! name -> f32 tensor entries), `manifest.json` mapping canonical parameter
//! names to file entries, `config.json`, and the tokenizer interchange files
//! `vocab.json` + `merges.txt`. `tools/convert_hf.py` produces containers
//! from public checkpoints; this module only reads and writes them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use orion_core::model::{expected_shapes, Model, ModelConfig};
use orion_core::tensor::Tensor;
use orion_core::tokenizer::Vocabulary;

use crate::artifacts::write_atomic;
use crate::error::{LabError, Result};

pub const CONTAINER_VERSION: &str = "orion-container-1";
pub const WEIGHTS_FILE: &str = "weights.safetensors";

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    /// Provenance label, e.g. the upstream checkpoint id.
    pub source: String,
    /// canonical name -> entry name inside the weights file.
    pub tensors: BTreeMap<String, String>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => LabError::Container(format!(
            "{} not found; is this a model container directory?",
            path.display()
        )),
        _ => LabError::io(path, e),
    })
}

pub fn load_config(dir: &Path) -> Result<ModelConfig> {
    let path = dir.join("config.json");
    let cfg: ModelConfig =
        serde_json::from_str(&read_text(&path)?).map_err(|e| LabError::json(&path, e))?;
    Ok(cfg)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let manifest: Manifest =
        serde_json::from_str(&read_text(&path)?).map_err(|e| LabError::json(&path, e))?;
    if manifest.version != CONTAINER_VERSION {
        return Err(LabError::Container(format!(
            "{}: container version {:?}, this build reads {CONTAINER_VERSION:?}",
            path.display(),
            manifest.version
        )));
    }
    Ok(manifest)
}

pub fn load_vocabulary(dir: &Path) -> Result<Vocabulary> {
    let vocab_json = read_text(&dir.join("vocab.json"))?;
    let merges_txt = read_text(&dir.join("merges.txt"))?;
    Ok(Vocabulary::from_parts(&vocab_json, &merges_txt)?)
}

fn f32s_from_le(name: &str, view: &TensorView) -> Result<Vec<f32>> {
    if view.dtype() != Dtype::F32 {
        return Err(LabError::Container(format!(
            "tensor {name}: dtype {:?}, containers are f32-only",
            view.dtype()
        )));
    }
    Ok(view
        .data()
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn load_model(dir: &Path) -> Result<Model> {
    let cfg = load_config(dir)?;
    let manifest = load_manifest(dir)?;
    let weights_path = dir.join(WEIGHTS_FILE);
    let buffer = fs::read(&weights_path).map_err(|e| LabError::io(&weights_path, e))?;
    let st = SafeTensors::deserialize(&buffer)
        .map_err(|e| LabError::Container(format!("{}: {e}", weights_path.display())))?;

    let mut named = BTreeMap::new();
    for (canonical, shape) in expected_shapes(&cfg) {
        let entry = manifest.tensors.get(&canonical).ok_or_else(|| {
            LabError::Container(format!("manifest does not map tensor {canonical} (absent)"))
        })?;
        let view = st.tensor(entry).map_err(|_| {
            LabError::Container(format!(
                "weights file has no entry {entry:?} (manifest maps {canonical} to it)"
            ))
        })?;
        if view.shape() != shape {
            return Err(LabError::Container(format!(
                "tensor {canonical}: shape {:?} != expected {:?}",
                view.shape(),
                shape
            )));
        }
        let data = f32s_from_le(&canonical, &view)?;
        named.insert(canonical, Tensor { shape, data });
    }
    Ok(Model::from_named(cfg, named)?)
}

pub fn load_container(dir: &Path) -> Result<(Model, Vocabulary)> {
    Ok((load_model(dir)?, load_vocabulary(dir)?))
}

/// Write a complete container. Tensor entries keep their canonical names;
/// the manifest still carries the name map so readers never assume identity.
pub fn save_container(
    dir: &Path,
    model: &Model,
    vocab_json: &str,
    merges_txt: &str,
    source: &str,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let named = model.to_named();
    let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::with_capacity(named.len());
    for (name, tensor) in &named {
        let mut bytes = Vec::with_capacity(tensor.data.len() * 4);
        for x in &tensor.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        buffers.push((name.clone(), tensor.shape.clone(), bytes));
    }
    let views: Vec<(&str, TensorView)> = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            let view = TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map_err(|e| LabError::Container(format!("tensor {name}: {e}")))?;
            Ok((name.as_str(), view))
        })
        .collect::<Result<_>>()?;
    let bytes = safetensors::tensor::serialize(views, &None)
        .map_err(|e| LabError::Container(format!("serialize weights: {e}")))?;
    write_atomic(&dir.join(WEIGHTS_FILE), &bytes)?;

    let manifest = Manifest {
        version: CONTAINER_VERSION.to_string(),
        source: source.to_string(),
        tensors: named.iter().map(|(n, _)| (n.clone(), n.clone())).collect(),
    };
    let mut manifest_text =
        serde_json::to_string_pretty(&manifest).map_err(|e| LabError::json(dir, e))?;
    manifest_text.push('\n');
    write_atomic(&dir.join("manifest.json"), manifest_text.as_bytes())?;

    let mut config_text =
        serde_json::to_string_pretty(&model.cfg).map_err(|e| LabError::json(dir, e))?;
    config_text.push('\n');
    write_atomic(&dir.join("config.json"), config_text.as_bytes())?;
    write_atomic(&dir.join("vocab.json"), vocab_json.as_bytes())?;
    write_atomic(&dir.join("merges.txt"), merges_txt.as_bytes())?;
    Ok(())
}
