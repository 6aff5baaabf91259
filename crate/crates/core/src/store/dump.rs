use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ActivationDataset, LayerActivations, RecordMeta};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f32le";
const MANIFEST: &str = "manifest.json";
const META: &str = "meta.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model_tag: String,
    pub num_records: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub layer_indices: Vec<usize>,
    pub dtype: String,
    pub contrastive: bool,
    /// File name -> lowercase hex SHA-256 of its bytes.
    pub sha256: BTreeMap<String, String>,
}

fn layer_file(layer_index: usize) -> String {
    format!("layer_{layer_index}.f32")
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `dataset` as `manifest.json`, `meta.jsonl` and one
/// `layer_<k>.f32` per layer. Refuses datasets that fail validation.
pub fn write_dump(dataset: &ActivationDataset, dir: impl AsRef<Path>) -> Result<Manifest> {
    dataset.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut sha256 = BTreeMap::new();

    let mut meta = String::new();
    for r in &dataset.records {
        meta.push_str(&serde_json::to_string(r).map_err(|e| Error::json(META, e))?);
        meta.push('\n');
    }
    write_file(&dir.join(META), meta.as_bytes())?;
    sha256.insert(META.to_string(), sha256_hex(meta.as_bytes()));

    for layer in &dataset.layers {
        let bytes = f32_le_bytes(layer.as_slice().iter().copied());
        let name = layer_file(layer.layer_index);
        write_file(&dir.join(&name), &bytes)?;
        sha256.insert(name, sha256_hex(&bytes));
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model_tag: dataset.model_tag.clone(),
        num_records: dataset.num_records(),
        hidden_dim: dataset.hidden_dim(),
        num_layers: dataset.num_layers,
        layer_indices: dataset.layer_indices(),
        dtype: DTYPE.to_string(),
        contrastive: dataset.contrastive,
        sha256,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(MANIFEST, e))?;
    text.push('\n');
    write_file(&dir.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

pub(crate) fn f32_le_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub(crate) fn parse_f32_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_sha(manifest: &Manifest, name: &str, bytes: &[u8]) -> Result<()> {
    let expected = manifest
        .sha256
        .get(name)
        .ok_or_else(|| Error::Schema(format!("manifest has no sha256 entry for {name}")))?;
    let actual = sha256_hex(bytes);
    if !expected.eq_ignore_ascii_case(&actual) {
        return Err(Error::Checksum {
            file: name.to_string(),
            expected: expected.clone(),
            actual,
        });
    }
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let bytes = read_file(&path)?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::json(MANIFEST, e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::Schema(format!(
            "unsupported dtype {:?} (expected {DTYPE:?})",
            manifest.dtype
        )));
    }
    if manifest.hidden_dim == 0 {
        return Err(Error::Schema("hidden_dim must be positive".into()));
    }
    Ok(manifest)
}

/// Reads and validates a dump directory written by [`write_dump`] or by an
/// external extractor speaking the same format.
pub fn read_dump(dir: impl AsRef<Path>) -> Result<ActivationDataset> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;

    let meta_bytes = read_file(&dir.join(META))?;
    check_sha(&manifest, META, &meta_bytes)?;
    let meta_text = std::str::from_utf8(&meta_bytes)
        .map_err(|e| Error::Schema(format!("{META} is not UTF-8: {e}")))?;
    let mut records = Vec::with_capacity(manifest.num_records);
    for (lineno, line) in meta_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: RecordMeta = serde_json::from_str(line)
            .map_err(|e| Error::json(format!("{META} line {}", lineno + 1), e))?;
        records.push(r);
    }
    if records.len() != manifest.num_records {
        return Err(Error::ShapeMismatch(format!(
            "manifest num_records {} but {META} has {} records",
            manifest.num_records,
            records.len()
        )));
    }

    let n = manifest.num_records;
    let d = manifest.hidden_dim;
    let mut layers = Vec::with_capacity(manifest.layer_indices.len());
    for &k in &manifest.layer_indices {
        let name = layer_file(k);
        let bytes = read_file(&dir.join(&name))?;
        let expected = n * d * 4;
        if bytes.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{name}: {} bytes, expected {n} records x {d} dims x 4 = {expected}",
                bytes.len()
            )));
        }
        check_sha(&manifest, &name, &bytes)?;
        layers.push(LayerActivations::new(k, d, parse_f32_le(&bytes))?);
    }

    let ds = ActivationDataset {
        model_tag: manifest.model_tag,
        num_layers: manifest.num_layers,
        contrastive: manifest.contrastive,
        records,
        layers,
    };
    ds.validate()?;
    Ok(ds)
}
