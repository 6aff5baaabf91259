//! Activation datasets: record metadata, per-layer activation matrices,
//! validation, the on-disk dump format, and the synthetic generator.

pub(crate) mod dump;
pub mod presets;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dump::{read_dump, read_manifest, write_dump, Manifest, FORMAT_VERSION};
pub use synth::{
    gen_synthetic, CompressionSchedule, LayerSchedule, LengthModel, NoiseModel, ShortcutSpec,
    SynthConfig,
};

/// Correctness label of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Incorrect,
    Correct,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Incorrect => 0.0,
            Label::Correct => 1.0,
        }
    }

    pub fn is_correct(self) -> bool {
        self == Label::Correct
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Incorrect),
            1 => Ok(Label::Correct),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Incorrect => 0,
            Label::Correct => 1,
        }
    }
}

impl From<bool> for Label {
    fn from(correct: bool) -> Self {
        if correct {
            Label::Correct
        } else {
            Label::Incorrect
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub record_id: u64,
    /// Question identifier; all records of one question share it.
    pub group_id: u64,
    pub label: Label,
    /// 0 for the original answer, >0 for paraphrases.
    pub paraphrase_id: u32,
    pub dataset_tag: String,
    pub answer_length: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// Last-token hidden states of one layer, stored row-major as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    pub layer_index: usize,
    hidden_dim: usize,
    data: Vec<f32>,
}

impl LayerActivations {
    pub fn new(layer_index: usize, hidden_dim: usize, data: Vec<f32>) -> Result<Self> {
        if hidden_dim == 0 || data.len() % hidden_dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "layer {layer_index}: {} values is not a multiple of hidden_dim {hidden_dim}",
                data.len()
            )));
        }
        Ok(LayerActivations {
            layer_index,
            hidden_dim,
            data,
        })
    }

    pub fn from_matrix(layer_index: usize, x: &DMatrix<f64>) -> Self {
        let (n, d) = x.shape();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            data.extend(x.row(i).iter().map(|&v| v as f32));
        }
        LayerActivations {
            layer_index,
            hidden_dim: d,
            data,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn num_records(&self) -> usize {
        self.data.len() / self.hidden_dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.hidden_dim..(i + 1) * self.hidden_dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let d = self.hidden_dim;
        DMatrix::from_fn(self.num_records(), d, |i, j| self.data[i * d + j] as f64)
    }

    /// First row containing a NaN or infinity.
    pub fn first_non_finite_row(&self) -> Option<usize> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| p / self.hidden_dim)
    }

    /// Mean Euclidean norm of the rows.
    pub fn mean_row_norm(&self) -> f64 {
        let n = self.num_records();
        (0..n)
            .map(|i| {
                self.row(i)
                    .iter()
                    .map(|&v| (v as f64) * (v as f64))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    pub model_tag: String,
    /// Total layer count of the source model (not all need be extracted).
    pub num_layers: usize,
    /// Whether every group must hold both labels.
    pub contrastive: bool,
    pub records: Vec<RecordMeta>,
    pub layers: Vec<LayerActivations>,
}

impl ActivationDataset {
    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.hidden_dim())
    }

    pub fn layer_indices(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.layer_index).collect()
    }

    pub fn layer(&self, layer_index: usize) -> Result<&LayerActivations> {
        self.layers
            .iter()
            .find(|l| l.layer_index == layer_index)
            .ok_or_else(|| Error::OutOfRange {
                what: "layer",
                detail: format!(
                    "layer {layer_index} not in extracted layers {:?}",
                    self.layer_indices()
                ),
            })
    }

    pub fn last_layer_index(&self) -> Option<usize> {
        self.layers.last().map(|l| l.layer_index)
    }

    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.label.as_f64()).collect()
    }

    pub fn groups(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.group_id).collect()
    }

    /// Checks the structural invariants: unique record ids, consistent
    /// record counts and widths, strictly increasing layer indices, finite
    /// activations, and label pairing when the dataset is contrastive.
    pub fn validate(&self) -> Result<()> {
        let n = self.records.len();
        if n == 0 {
            return Err(Error::InvalidDataset("dataset has no records".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidDataset("dataset has no layers".into()));
        }
        let mut seen = HashSet::with_capacity(n);
        for r in &self.records {
            if !seen.insert(r.record_id) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate record_id {}",
                    r.record_id
                )));
            }
        }
        let d = self.layers[0].hidden_dim();
        let mut prev: Option<usize> = None;
        for layer in &self.layers {
            if layer.hidden_dim() != d {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} has hidden_dim {}, expected {d}",
                    layer.layer_index,
                    layer.hidden_dim()
                )));
            }
            if layer.num_records() != n {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} has {} rows, metadata has {n} records",
                    layer.layer_index,
                    layer.num_records()
                )));
            }
            if let Some(p) = prev {
                if layer.layer_index <= p {
                    return Err(Error::InvalidDataset(format!(
                        "layer indices must be strictly increasing ({p} then {})",
                        layer.layer_index
                    )));
                }
            }
            if layer.layer_index >= self.num_layers {
                return Err(Error::InvalidDataset(format!(
                    "layer index {} outside model depth {}",
                    layer.layer_index, self.num_layers
                )));
            }
            prev = Some(layer.layer_index);
            if let Some(row) = layer.first_non_finite_row() {
                return Err(Error::NonFinite {
                    layer: layer.layer_index,
                    row,
                });
            }
        }
        if self.contrastive {
            let bad = self.unpaired_groups();
            if !bad.is_empty() {
                return Err(Error::InvalidDataset(format!(
                    "contrastive dataset has groups without both labels: {bad:?}"
                )));
            }
        }
        Ok(())
    }

    /// Groups that lack one of the two labels.
    pub fn unpaired_groups(&self) -> Vec<u64> {
        let mut labels: BTreeMap<u64, (bool, bool)> = BTreeMap::new();
        for r in &self.records {
            let e = labels.entry(r.group_id).or_default();
            match r.label {
                Label::Correct => e.1 = true,
                Label::Incorrect => e.0 = true,
            }
        }
        labels
            .into_iter()
            .filter(|(_, (neg, pos))| !(*neg && *pos))
            .map(|(g, _)| g)
            .collect()
    }

    /// Restricts the dataset to the given record positions (in order).
    pub fn subset(&self, rows: &[usize]) -> ActivationDataset {
        let records = rows.iter().map(|&i| self.records[i].clone()).collect();
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let d = l.hidden_dim();
                let mut data = Vec::with_capacity(rows.len() * d);
                for &i in rows {
                    data.extend_from_slice(l.row(i));
                }
                LayerActivations {
                    layer_index: l.layer_index,
                    hidden_dim: d,
                    data,
                }
            })
            .collect();
        ActivationDataset {
            model_tag: self.model_tag.clone(),
            num_layers: self.num_layers,
            contrastive: self.contrastive,
            records,
            layers,
        }
    }

    pub fn summarize(&self) -> DatasetSummary {
        summarize(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub lo: u32,
    pub hi: u32,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub model_tag: String,
    pub num_records: usize,
    pub num_groups: usize,
    pub num_layers: usize,
    pub layer_indices: Vec<usize>,
    pub hidden_dim: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub paraphrased: usize,
    pub records_per_dataset_tag: BTreeMap<String, usize>,
    pub length_histogram: Vec<LengthBin>,
    pub warnings: Vec<String>,
}

const LENGTH_BINS: u32 = 10;

pub fn summarize(ds: &ActivationDataset) -> DatasetSummary {
    let correct = ds.records.iter().filter(|r| r.label.is_correct()).count();
    let groups: BTreeSet<u64> = ds.records.iter().map(|r| r.group_id).collect();
    let mut per_tag = BTreeMap::new();
    for r in &ds.records {
        *per_tag.entry(r.dataset_tag.clone()).or_insert(0) += 1;
    }

    let mut length_histogram = Vec::new();
    if let (Some(min), Some(max)) = (
        ds.records.iter().map(|r| r.answer_length).min(),
        ds.records.iter().map(|r| r.answer_length).max(),
    ) {
        let width = ((max - min) / LENGTH_BINS + 1).max(1);
        let mut lo = min;
        while lo <= max {
            let hi = lo + width - 1;
            let count = ds
                .records
                .iter()
                .filter(|r| r.answer_length >= lo && r.answer_length <= hi)
                .count();
            length_histogram.push(LengthBin { lo, hi, count });
            lo += width;
        }
    }

    let mut warnings = Vec::new();
    if ds.contrastive {
        let bad = ds.unpaired_groups();
        if !bad.is_empty() {
            warnings.push(format!(
                "contrastive dataset has {} group(s) without both labels: {bad:?}",
                bad.len()
            ));
        }
    }
    if correct == 0 || correct == ds.records.len() {
        warnings.push("dataset contains a single label".into());
    }

    DatasetSummary {
        model_tag: ds.model_tag.clone(),
        num_records: ds.records.len(),
        num_groups: groups.len(),
        num_layers: ds.num_layers,
        layer_indices: ds.layer_indices(),
        hidden_dim: ds.hidden_dim(),
        correct,
        incorrect: ds.records.len() - correct,
        paraphrased: ds.records.iter().filter(|r| r.paraphrase_id > 0).count(),
        records_per_dataset_tag: per_tag,
        length_histogram,
        warnings,
    }
}
