//! Probe persistence: `probe.json` plus one f32le blob per array.
//!
//! Matrices are stored column-major. Weights come back at f32
//! precision; scalars (bias, C) stay f64 in the JSON.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::{LogisticProbe, ProbeModel, Projector};
use crate::projection::{PlsProjector, Standardizer};
use crate::store::dump::{f32_le_bytes, parse_f32_le, read_file, sha256_hex, write_file};

const PROBE_FILE: &str = "probe.json";
const PROBE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobRef {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFile {
    pub format_version: u32,
    /// `"standardize"` or `"pls"`.
    pub projector: String,
    pub input_dim: usize,
    pub output_dim: usize,
    pub layer_index: Option<usize>,
    pub bias: f64,
    pub c: f64,
    pub blobs: BTreeMap<String, BlobRef>,
}

struct Writer<'a> {
    dir: &'a Path,
    blobs: BTreeMap<String, BlobRef>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        let bytes = f32_le_bytes(m.iter().map(|&v| v as f32));
        let file = format!("{name}.f32");
        write_file(&self.dir.join(&file), &bytes)?;
        self.blobs.insert(
            name.to_string(),
            BlobRef {
                file,
                rows: m.nrows(),
                cols: m.ncols(),
                sha256: sha256_hex(&bytes),
            },
        );
        Ok(())
    }

    fn put_vec(&mut self, name: &str, v: &DVector<f64>) -> Result<()> {
        self.put(name, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
    }
}

pub fn save_probe(model: &ProbeModel, dir: impl AsRef<Path>) -> Result<ProbeFile> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = Writer {
        dir,
        blobs: BTreeMap::new(),
    };
    let s = model.projector.standardizer();
    w.put_vec("mean", &s.mean)?;
    w.put_vec("scale", &s.scale)?;
    let kind = match &model.projector {
        Projector::Standardize(_) => "standardize",
        Projector::Pls(p) => {
            w.put("x_weights", &p.x_weights)?;
            w.put("x_loadings", &p.x_loadings)?;
            w.put("rotation", &p.rotation)?;
            "pls"
        }
    };
    w.put_vec("weights", &model.probe.weights)?;
    let file = ProbeFile {
        format_version: PROBE_VERSION,
        projector: kind.into(),
        input_dim: model.input_dim(),
        output_dim: model.projector.output_dim(),
        layer_index: model.layer_index,
        bias: model.probe.bias,
        c: model.probe.c,
        blobs: w.blobs,
    };
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| Error::json(PROBE_FILE, e))?;
    text.push('\n');
    write_file(&dir.join(PROBE_FILE), text.as_bytes())?;
    Ok(file)
}

fn get(dir: &Path, file: &ProbeFile, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let b = file
        .blobs
        .get(name)
        .ok_or_else(|| Error::Schema(format!("{PROBE_FILE} has no blob '{name}'")))?;
    if (b.rows, b.cols) != (rows, cols) {
        return Err(Error::ShapeMismatch(format!(
            "blob '{name}' is {}x{}, expected {rows}x{cols}",
            b.rows, b.cols
        )));
    }
    let bytes = read_file(&dir.join(&b.file))?;
    let actual = sha256_hex(&bytes);
    if !b.sha256.eq_ignore_ascii_case(&actual) {
        return Err(Error::Checksum {
            file: b.file.clone(),
            expected: b.sha256.clone(),
            actual,
        });
    }
    if bytes.len() != rows * cols * 4 {
        return Err(Error::ShapeMismatch(format!(
            "{}: {} bytes for {rows}x{cols}",
            b.file,
            bytes.len()
        )));
    }
    let m = DMatrix::from_iterator(rows, cols, parse_f32_le(&bytes).into_iter().map(f64::from));
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Schema(format!("blob '{name}' has non-finite values")));
    }
    Ok(m)
}

pub fn load_probe(dir: impl AsRef<Path>) -> Result<ProbeModel> {
    let dir = dir.as_ref();
    let bytes = read_file(&dir.join(PROBE_FILE))?;
    let f: ProbeFile = serde_json::from_slice(&bytes).map_err(|e| Error::json(PROBE_FILE, e))?;
    if f.format_version != PROBE_VERSION {
        return Err(Error::Schema(format!("unsupported probe format_version {}", f.format_version)));
    }
    let (d, k) = (f.input_dim, f.output_dim);
    if d == 0 || k == 0 {
        return Err(Error::Schema("probe dimensions must be positive".into()));
    }
    let standardizer = Standardizer {
        mean: get(dir, &f, "mean", d, 1)?.column(0).into_owned(),
        scale: get(dir, &f, "scale", d, 1)?.column(0).into_owned(),
    };
    let projector = match f.projector.as_str() {
        "standardize" => {
            if k != d {
                return Err(Error::ShapeMismatch(format!("standardize projector with output_dim {k} != {d}")));
            }
            Projector::Standardize(standardizer)
        }
        "pls" => Projector::Pls(PlsProjector {
            standardizer,
            x_weights: get(dir, &f, "x_weights", d, k)?,
            x_loadings: get(dir, &f, "x_loadings", d, k)?,
            rotation: get(dir, &f, "rotation", d, k)?,
        }),
        other => return Err(Error::Schema(format!("unknown projector kind '{other}'"))),
    };
    let weights = get(dir, &f, "weights", k, 1)?.column(0).into_owned();
    Ok(ProbeModel {
        projector,
        probe: LogisticProbe {
            weights,
            bias: f.bias,
            c: f.c,
            iterations: 0,
            grad_norm: f64::NAN,
        },
        layer_index: f.layer_index,
    })
}
