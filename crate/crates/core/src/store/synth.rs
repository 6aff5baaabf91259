//! Synthetic Gaussian mean-shift activations with known ground truth.
//!
//! Each group (question) holds `records_per_group` records, alternating
//! correct / incorrect; records sharing a (group, label) pair are paraphrases
//! of one answer. A layer-`l` activation is
//!
//! ```text
//! h = a_l * (±½ Σ_j δ_j u_j + shortcut) + group_offset + answer_noise + paraphrase_jitter
//! ```
//!
//! where `u_j` are orthonormal signal directions and `a_l` follows the layer
//! schedule (the last layer always carries the full shift). All randomness
//! comes from ChaCha streams keyed by the seed and the entity id, so the
//! output does not depend on how the work is split across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ActivationDataset, Label, LayerActivations, RecordMeta};
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::random_orthonormal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Isotropic {
        sigma: f64,
    },
    /// Isotropic noise plus extra variance along the signal directions
    /// (`signal_spikes[j]` on `u_j`) and along random nuisance directions
    /// orthogonal to the signal.
    Spiked {
        sigma: f64,
        #[serde(default)]
        signal_spikes: Vec<f64>,
        #[serde(default)]
        nuisance_spikes: Vec<f64>,
    },
}

impl NoiseModel {
    pub fn sigma(&self) -> f64 {
        match self {
            NoiseModel::Isotropic { sigma } | NoiseModel::Spiked { sigma, .. } => *sigma,
        }
    }

    fn signal_spikes(&self) -> &[f64] {
        match self {
            NoiseModel::Isotropic { .. } => &[],
            NoiseModel::Spiked { signal_spikes, .. } => signal_spikes,
        }
    }

    fn nuisance_spikes(&self) -> &[f64] {
        match self {
            NoiseModel::Isotropic { .. } => &[],
            NoiseModel::Spiked {
                nuisance_spikes, ..
            } => nuisance_spikes,
        }
    }
}

/// How the class mean shift scales with depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSchedule {
    /// 20% of the shift at layer 0 rising linearly to 100% at the last layer.
    Linear,
    /// Full shift at every layer.
    Flat,
}

/// Progressive noise compression: at depth fraction `t` only the first
/// `d - round(t * (d - final_active_dims))` coordinates keep full noise, the
/// rest are scaled by `residual_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionSchedule {
    pub final_active_dims: usize,
    pub residual_scale: f64,
}

/// A dataset-specific label shortcut: `count` directions orthogonal to the
/// signal whose variance is replaced by log-spaced values in
/// `[var_min, var_max]`, each carrying a class shift worth
/// `mahalanobis_per_direction` squared Mahalanobis units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShortcutSpec {
    pub count: usize,
    pub var_min: f64,
    pub var_max: f64,
    pub mahalanobis_per_direction: f64,
}

impl ShortcutSpec {
    fn variances(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.var_min];
        }
        let (lo, hi) = (self.var_min.ln(), self.var_max.ln());
        (0..self.count)
            .map(|k| (lo + (hi - lo) * k as f64 / (self.count - 1) as f64).exp())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthModel {
    /// Uniform integer length, independent of the label.
    Independent { min: u32, max: u32 },
    /// `length = label * factor`, a pure confound.
    LabelScaled { factor: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub hidden_dim: usize,
    pub signal_rank: usize,
    /// Class mean difference along each signal direction; a single value is
    /// applied to every direction.
    pub mean_shift: Vec<f64>,
    pub noise: NoiseModel,
    pub num_groups: usize,
    /// Even; half correct and half incorrect.
    pub records_per_group: usize,
    /// Std of the per-group offset shared by every record of the group.
    pub group_offset_scale: f64,
    /// Std of the per-record paraphrase noise.
    pub paraphrase_jitter: f64,
    pub num_layers: usize,
    pub layer_schedule: LayerSchedule,
    pub compression: Option<CompressionSchedule>,
    pub shortcut: Option<ShortcutSpec>,
    pub length: LengthModel,
    pub seed: u64,
    /// Seed for the signal directions; defaults to `seed`. Datasets sharing
    /// it share their correctness direction.
    pub signal_seed: Option<u64>,
    /// Seed for nuisance and shortcut directions; defaults to `seed`.
    pub nuisance_seed: Option<u64>,
    pub model_tag: String,
    pub dataset_tag: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            hidden_dim: 64,
            signal_rank: 1,
            mean_shift: vec![2.0],
            noise: NoiseModel::Isotropic { sigma: 1.0 },
            num_groups: 1000,
            records_per_group: 2,
            group_offset_scale: 0.0,
            paraphrase_jitter: 0.0,
            num_layers: 1,
            layer_schedule: LayerSchedule::Linear,
            compression: None,
            shortcut: None,
            length: LengthModel::Independent { min: 5, max: 60 },
            seed: 42,
            signal_seed: None,
            nuisance_seed: None,
            model_tag: "synthetic".into(),
            dataset_tag: "synthetic".into(),
        }
    }
}

const STREAM_GROUP: u64 = 0;
const STREAM_ANSWER: u64 = 1;
const STREAM_RECORD: u64 = 2;
const STREAM_BASIS: u64 = 3;

fn stream(seed: u64, kind: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id * 4 + kind);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

impl SynthConfig {
    pub fn num_records(&self) -> usize {
        self.num_groups * self.records_per_group
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let d = self.hidden_dim;
        if d == 0 {
            return bad("hidden_dim must be positive".into());
        }
        if self.signal_rank == 0 || self.signal_rank > d {
            return bad(format!("signal_rank must be in 1..={d}"));
        }
        if self.mean_shift.len() != 1 && self.mean_shift.len() != self.signal_rank {
            return bad(format!(
                "mean_shift has {} values; expected 1 or signal_rank ({})",
                self.mean_shift.len(),
                self.signal_rank
            ));
        }
        let sigma = self.noise.sigma();
        let scales = [sigma, self.group_offset_scale, self.paraphrase_jitter];
        if scales.iter().chain(&self.mean_shift).any(|s| !s.is_finite())
            || scales.iter().any(|&s| s < 0.0)
        {
            return bad("scales must be finite and non-negative".into());
        }
        let spikes = self.noise.signal_spikes();
        if spikes.len() > self.signal_rank {
            return bad("more signal spikes than signal directions".into());
        }
        if spikes
            .iter()
            .chain(self.noise.nuisance_spikes())
            .any(|s| !s.is_finite() || *s < 0.0)
        {
            return bad("spike variances must be finite and non-negative".into());
        }
        let extra = self.noise.nuisance_spikes().len() + self.shortcut.map_or(0, |s| s.count);
        if self.signal_rank + extra > d {
            return bad(format!(
                "signal_rank + nuisance directions ({}) exceed hidden_dim {d}",
                self.signal_rank + extra
            ));
        }
        if self.num_groups == 0 {
            return bad("num_groups must be positive".into());
        }
        if self.records_per_group < 2 || self.records_per_group % 2 != 0 {
            return bad("records_per_group must be an even number >= 2".into());
        }
        if self.num_layers == 0 {
            return bad("num_layers must be positive".into());
        }
        if let Some(c) = self.compression {
            if c.final_active_dims > d || !(0.0..=1.0).contains(&c.residual_scale) {
                return bad("compression needs final_active_dims <= d and residual_scale in [0,1]".into());
            }
        }
        if let Some(s) = self.shortcut {
            if s.count == 0
                || !(s.var_min > 0.0 && s.var_max >= s.var_min)
                || !(s.mahalanobis_per_direction >= 0.0)
            {
                return bad("shortcut needs count > 0, 0 < var_min <= var_max, non-negative shift".into());
            }
        }
        if let LengthModel::Independent { min, max } = self.length {
            if min > max {
                return bad("length min exceeds max".into());
            }
        }
        Ok(())
    }

    fn shift(&self, j: usize) -> f64 {
        if self.mean_shift.len() == 1 {
            self.mean_shift[0]
        } else {
            self.mean_shift[j]
        }
    }

    /// The planted orthonormal signal directions (`hidden_dim x signal_rank`).
    pub fn signal_basis(&self) -> DMatrix<f64> {
        let mut rng = stream(self.signal_seed.unwrap_or(self.seed), STREAM_BASIS, 0);
        random_orthonormal(self.hidden_dim, self.signal_rank, None, &mut rng)
    }

    /// Nuisance-spike directions followed by shortcut directions, all
    /// orthogonal to the signal basis.
    pub fn nuisance_basis(&self) -> DMatrix<f64> {
        let signal = self.signal_basis();
        let k = self.noise.nuisance_spikes().len() + self.shortcut.map_or(0, |s| s.count);
        let mut rng = stream(self.nuisance_seed.unwrap_or(self.seed), STREAM_BASIS, 1);
        random_orthonormal(self.hidden_dim, k, Some(&signal), &mut rng)
    }

    /// Fraction of the mean shift present at position `pos` of `num_layers`.
    pub fn signal_scale(&self, pos: usize) -> f64 {
        match self.layer_schedule {
            LayerSchedule::Flat => 1.0,
            LayerSchedule::Linear => 0.2 + 0.8 * depth_fraction(pos, self.num_layers),
        }
    }

    fn active_dims(&self, pos: usize) -> usize {
        match self.compression {
            None => self.hidden_dim,
            Some(c) => {
                let t = depth_fraction(pos, self.num_layers);
                let d = self.hidden_dim as f64;
                (d - (t * (d - c.final_active_dims as f64)).round()) as usize
            }
        }
    }
}

fn depth_fraction(pos: usize, num_layers: usize) -> f64 {
    if num_layers <= 1 {
        1.0
    } else {
        pos as f64 / (num_layers - 1) as f64
    }
}

struct Geometry {
    signal: DMatrix<f64>,
    nuisance: DMatrix<f64>,
    shortcut_var: Vec<f64>,
    /// Half the class difference, `½ Σ δ_j u_j` plus the shortcut shift.
    half_shift: DVector<f64>,
}

/// Generates a dataset from `config`. Pure function of the config.
pub fn gen_synthetic(config: &SynthConfig) -> Result<ActivationDataset> {
    config.validate()?;
    let d = config.hidden_dim;
    let signal = config.signal_basis();
    let nuisance = config.nuisance_basis();
    let n_spikes = config.noise.nuisance_spikes().len();
    let shortcut_var = config.shortcut.map(|s| s.variances()).unwrap_or_default();

    let mut half_shift = DVector::zeros(d);
    for j in 0..config.signal_rank {
        half_shift.axpy(0.5 * config.shift(j), &signal.column(j), 1.0);
    }
    if let Some(s) = config.shortcut {
        for (k, var) in shortcut_var.iter().enumerate() {
            let amount = 0.5 * (s.mahalanobis_per_direction * var).sqrt();
            half_shift.axpy(amount, &nuisance.column(n_spikes + k), 1.0);
        }
    }
    let geo = Geometry {
        signal,
        nuisance,
        shortcut_var,
        half_shift,
    };

    let per_group = exec::map_range(config.num_groups, |g| gen_group(config, &geo, g as u64));

    let n = config.num_records();
    let mut records = Vec::with_capacity(n);
    let mut layer_data: Vec<Vec<f32>> = (0..config.num_layers)
        .map(|_| Vec::with_capacity(n * d))
        .collect();
    for (metas, rows) in per_group {
        records.extend(metas);
        for (dst, src) in layer_data.iter_mut().zip(rows) {
            dst.extend(src);
        }
    }
    let layers = layer_data
        .into_iter()
        .enumerate()
        .map(|(l, data)| LayerActivations::new(l, d, data))
        .collect::<Result<Vec<_>>>()?;

    Ok(ActivationDataset {
        model_tag: config.model_tag.clone(),
        num_layers: config.num_layers,
        contrastive: true,
        records,
        layers,
    })
}

/// Records of one group and their activations, one row block per layer.
fn gen_group(cfg: &SynthConfig, geo: &Geometry, g: u64) -> (Vec<RecordMeta>, Vec<Vec<f32>>) {
    let d = cfg.hidden_dim;
    let rpg = cfg.records_per_group as u64;
    let sigma = cfg.noise.sigma();

    let mut offset_rng = stream(cfg.seed, STREAM_GROUP, g);
    let offset = DVector::from_fn(d, |_, _| cfg.group_offset_scale * normal(&mut offset_rng));

    // one answer-noise draw per (label, layer), shared by that answer's paraphrases
    let answer_noise: Vec<Vec<DVector<f64>>> = (0..2u64)
        .map(|label| {
            let mut rng = stream(cfg.seed, STREAM_ANSWER, g * 2 + label);
            (0..cfg.num_layers)
                .map(|pos| answer_noise(cfg, geo, pos, sigma, &mut rng))
                .collect()
        })
        .collect();

    let mut metas = Vec::with_capacity(rpg as usize);
    let mut rows: Vec<Vec<f32>> = (0..cfg.num_layers)
        .map(|_| Vec::with_capacity(rpg as usize * d))
        .collect();
    for i in 0..rpg {
        let record_id = g * rpg + i;
        let correct = i % 2 == 0;
        let label = Label::from(correct);
        let mut rng = stream(cfg.seed, STREAM_RECORD, record_id);
        let answer_length = match cfg.length {
            LengthModel::Independent { min, max } => rng.random_range(min..=max),
            LengthModel::LabelScaled { factor } => u8::from(label) as u32 * factor,
        };
        let sign = if correct { 1.0 } else { -1.0 };
        for (pos, out) in rows.iter_mut().enumerate() {
            let a = cfg.signal_scale(pos);
            let noise = &answer_noise[usize::from(correct)][pos];
            for j in 0..d {
                let jitter = cfg.paraphrase_jitter * normal(&mut rng);
                let v = a * sign * geo.half_shift[j] + offset[j] + noise[j] + jitter;
                out.push(v as f32);
            }
        }
        metas.push(RecordMeta {
            record_id,
            group_id: g,
            label,
            paraphrase_id: (i / 2) as u32,
            dataset_tag: cfg.dataset_tag.clone(),
            answer_length,
            text: None,
        });
    }
    (metas, rows)
}

fn answer_noise(
    cfg: &SynthConfig,
    geo: &Geometry,
    pos: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let d = cfg.hidden_dim;
    let active = cfg.active_dims(pos);
    let residual = cfg.compression.map_or(1.0, |c| c.residual_scale);
    let mut v = DVector::from_fn(d, |j, _| {
        let z = normal(rng);
        if j < active {
            sigma * z
        } else {
            sigma * residual * z
        }
    });
    for (j, var) in cfg.noise.signal_spikes().iter().enumerate() {
        v.axpy(var.sqrt() * normal(rng), &geo.signal.column(j), 1.0);
    }
    let n_spikes = cfg.noise.nuisance_spikes().len();
    for (k, var) in cfg.noise.nuisance_spikes().iter().enumerate() {
        v.axpy(var.sqrt() * normal(rng), &geo.nuisance.column(k), 1.0);
    }
    // shortcut directions: replace the isotropic component with the target variance
    for (k, var) in geo.shortcut_var.iter().enumerate() {
        let dir = geo.nuisance.column(n_spikes + k);
        let current = dir.dot(&v);
        v.axpy(var.sqrt() * normal(rng) - current, &dir, 1.0);
    }
    v
}
