//! Steering bundles (learned direction plus random and orthogonal
//! controls) and analysis of the error-rate curves measured by the
//! generation client.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::{spearman, welch_t, ProbeModel};
use crate::store::dump::{f32_le_bytes, parse_f32_le, read_file, sha256_hex, write_file};
use crate::store::LayerActivations;

pub const NUM_ALPHAS: usize = 20;
pub const ALPHA_MIN: f64 = -5.0;
pub const ALPHA_MAX: f64 = 5.0;
/// Steering scale as a fraction of the mean activation norm.
pub const SCALE_FRACTION: f64 = 0.05;
/// Tolerance for unit norms and orthogonality of imported (f32) blobs.
pub const IMPORT_TOL: f64 = 1e-6;

const MAX_REDRAWS: usize = 16;
const BUNDLE_FILE: &str = "bundle.json";
const BUNDLE_VERSION: u32 = 1;

pub const LEARNED: &str = "learned";
pub const RANDOM: &str = "random";
pub const ORTHOGONAL: &str = "orthogonal";
pub const BASELINE: &str = "baseline";
pub const DIRECTIONS: [&str; 3] = [LEARNED, RANDOM, ORTHOGONAL];

/// `NUM_ALPHAS` evenly spaced values from `ALPHA_MIN` to `ALPHA_MAX`
/// inclusive.
pub fn alpha_schedule() -> Vec<f64> {
    let step = (ALPHA_MAX - ALPHA_MIN) / (NUM_ALPHAS - 1) as f64;
    let mut a: Vec<f64> = (0..NUM_ALPHAS).map(|i| ALPHA_MIN + step * i as f64).collect();
    a[NUM_ALPHAS - 1] = ALPHA_MAX;
    a
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringBundle {
    pub layer_index: usize,
    /// Unit-norm probe direction in raw activation space.
    pub learned: DVector<f64>,
    /// Unit-norm Gaussian direction.
    pub random: DVector<f64>,
    /// The random draw with its component along `learned` removed.
    pub orthogonal: DVector<f64>,
    pub mean_activation_norm: f64,
    pub scale: f64,
    pub alpha_values: Vec<f64>,
    pub seed: u64,
}

/// Builds a bundle from a probe trained at `activations.layer_index`. A
/// probe trained behind PLS is mapped back to raw space first.
pub fn build_bundle(probe: &ProbeModel, activations: &LayerActivations, seed: u64) -> Result<SteeringBundle> {
    if let Some(l) = probe.layer_index {
        if l != activations.layer_index {
            return Err(Error::InvalidConfig(format!(
                "probe was trained at layer {l}; refusing to steer at layer {}",
                activations.layer_index
            )));
        }
    }
    let d = activations.hidden_dim();
    if probe.input_dim() != d {
        return Err(Error::DimMismatch {
            expected: d,
            actual: probe.input_dim(),
        });
    }
    let (u, _) = probe.raw_direction();
    let norm = u.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Degenerate("probe weights are zero".into()));
    }
    let learned = u / norm;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = 0;
    let (random, orthogonal) = loop {
        if draws == MAX_REDRAWS {
            return Err(Error::Degenerate(
                "random control stayed parallel to the learned direction".into(),
            ));
        }
        draws += 1;
        let r = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rn = r.norm();
        if !(rn > 0.0) {
            continue;
        }
        let r = r / rn;
        let mut o = &r - &learned * r.dot(&learned);
        // second pass removes what rounding left behind
        o -= &learned * o.dot(&learned);
        let on = o.norm();
        if on > 1e-6 {
            break (r, o / on);
        }
    };

    let mean_activation_norm = activations.mean_row_norm();
    Ok(SteeringBundle {
        layer_index: activations.layer_index,
        learned,
        random,
        orthogonal,
        mean_activation_norm,
        scale: SCALE_FRACTION * mean_activation_norm,
        alpha_values: alpha_schedule(),
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleManifest {
    format_version: u32,
    layer_index: usize,
    hidden_dim: usize,
    scale: f64,
    mean_activation_norm: f64,
    alpha_values: Vec<f64>,
    seed: u64,
    learned: String,
    random: String,
    orthogonal: String,
    sha256: BTreeMap<String, String>,
}

impl SteeringBundle {
    pub fn direction(&self, name: &str) -> Option<&DVector<f64>> {
        match name {
            LEARNED => Some(&self.learned),
            RANDOM => Some(&self.random),
            ORTHOGONAL => Some(&self.orthogonal),
            _ => None,
        }
    }

    /// Writes `bundle.json` plus `learned.f32`, `random.f32` and
    /// `orthogonal.f32` into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut sha256 = BTreeMap::new();
        for name in DIRECTIONS {
            let file = format!("{name}.f32");
            let v = self.direction(name).expect("known direction");
            let bytes = f32_le_bytes(v.iter().map(|&x| x as f32));
            write_file(&dir.join(&file), &bytes)?;
            sha256.insert(file, sha256_hex(&bytes));
        }
        let m = BundleManifest {
            format_version: BUNDLE_VERSION,
            layer_index: self.layer_index,
            hidden_dim: self.learned.len(),
            scale: self.scale,
            mean_activation_norm: self.mean_activation_norm,
            alpha_values: self.alpha_values.clone(),
            seed: self.seed,
            learned: format!("{LEARNED}.f32"),
            random: format!("{RANDOM}.f32"),
            orthogonal: format!("{ORTHOGONAL}.f32"),
            sha256,
        };
        let mut text = serde_json::to_string_pretty(&m).map_err(|e| Error::json(BUNDLE_FILE, e))?;
        text.push('\n');
        write_file(&dir.join(BUNDLE_FILE), text.as_bytes())
    }

    /// Reads a bundle and re-checks its invariants at f32 precision:
    /// unit norms, orthogonality of the control, and the scale rule.
    pub fn import(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let bytes = read_file(&dir.join(BUNDLE_FILE))?;
        let m: BundleManifest = serde_json::from_slice(&bytes).map_err(|e| Error::json(BUNDLE_FILE, e))?;
        if m.format_version != BUNDLE_VERSION {
            return Err(Error::Schema(format!("unsupported bundle format_version {}", m.format_version)));
        }
        let load = |file: &str| -> Result<DVector<f64>> {
            let b = read_file(&dir.join(file))?;
            if let Some(expected) = m.sha256.get(file) {
                let actual = sha256_hex(&b);
                if !expected.eq_ignore_ascii_case(&actual) {
                    return Err(Error::Checksum {
                        file: file.to_string(),
                        expected: expected.clone(),
                        actual,
                    });
                }
            }
            if b.len() != m.hidden_dim * 4 {
                return Err(Error::ShapeMismatch(format!(
                    "{file}: {} bytes for hidden_dim {}",
                    b.len(),
                    m.hidden_dim
                )));
            }
            let v = DVector::from_iterator(m.hidden_dim, parse_f32_le(&b).into_iter().map(f64::from));
            if (v.norm() - 1.0).abs() > IMPORT_TOL {
                return Err(Error::Schema(format!("{file} is not unit norm ({})", v.norm())));
            }
            Ok(v)
        };
        let learned = load(&m.learned)?;
        let random = load(&m.random)?;
        let orthogonal = load(&m.orthogonal)?;
        let dot = orthogonal.dot(&learned).abs();
        if dot >= IMPORT_TOL {
            return Err(Error::Schema(format!("orthogonal control has |dot| {dot:e} with learned")));
        }
        if !(m.mean_activation_norm > 0.0)
            || (m.scale / m.mean_activation_norm - SCALE_FRACTION).abs() > 1e-9
        {
            return Err(Error::Schema(format!(
                "scale {} is not {SCALE_FRACTION} x mean activation norm {}",
                m.scale, m.mean_activation_norm
            )));
        }
        Ok(SteeringBundle {
            layer_index: m.layer_index,
            learned,
            random,
            orthogonal,
            mean_activation_norm: m.mean_activation_norm,
            scale: m.scale,
            alpha_values: m.alpha_values,
            seed: m.seed,
        })
    }
}

/// One judged generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub item: u64,
    pub direction: String,
    pub alpha: f64,
    pub correct: u8,
}

/// Per-item correctness bits at each α for each direction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepOutcome {
    /// direction -> [(α, correctness bit per item, ordered by item)],
    /// α ascending.
    pub curves: BTreeMap<String, Vec<(f64, Vec<bool>)>>,
    /// Unsteered correctness bits, when present.
    pub baseline: Option<Vec<bool>>,
}

impl SweepOutcome {
    pub fn from_rows(rows: &[OutcomeRow]) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut tmp: BTreeMap<String, BTreeMap<u64, Vec<(u64, bool)>>> = BTreeMap::new();
        let mut baseline: Vec<(u64, bool)> = Vec::new();
        for (line, r) in rows.iter().enumerate() {
            if r.correct > 1 {
                return Err(Error::Schema(format!("row {}: correct must be 0 or 1", line + 1)));
            }
            if !r.alpha.is_finite() {
                return Err(Error::Schema(format!("row {}: alpha is not finite", line + 1)));
            }
            if !seen.insert((r.item, r.direction.clone(), r.alpha.to_bits())) {
                return Err(Error::Schema(format!(
                    "duplicate outcome for item {} direction {} alpha {}",
                    r.item, r.direction, r.alpha
                )));
            }
            if r.direction == BASELINE {
                baseline.push((r.item, r.correct == 1));
                continue;
            }
            if !DIRECTIONS.contains(&r.direction.as_str()) {
                return Err(Error::Schema(format!("unknown direction '{}'", r.direction)));
            }
            tmp.entry(r.direction.clone())
                .or_default()
                .entry(alpha_key(r.alpha))
                .or_default()
                .push((r.item, r.correct == 1));
        }
        for d in DIRECTIONS {
            if !tmp.contains_key(d) {
                return Err(Error::Schema(format!("outcome is missing direction '{d}'")));
            }
        }
        let curves = tmp
            .into_iter()
            .map(|(d, by_alpha)| {
                let mut pts: Vec<(f64, Vec<bool>)> = by_alpha
                    .into_iter()
                    .map(|(k, mut bits)| {
                        bits.sort_by_key(|b| b.0);
                        (alpha_from_key(k), bits.into_iter().map(|b| b.1).collect())
                    })
                    .collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                (d, pts)
            })
            .collect();
        baseline.sort_by_key(|b| b.0);
        Ok(SweepOutcome {
            curves,
            baseline: (!baseline.is_empty()).then(|| baseline.into_iter().map(|b| b.1).collect()),
        })
    }

    pub fn to_rows(&self, items: &[u64]) -> Vec<OutcomeRow> {
        let mut rows = Vec::new();
        for (d, pts) in &self.curves {
            for (alpha, bits) in pts {
                for (item, &b) in items.iter().zip(bits) {
                    rows.push(OutcomeRow {
                        item: *item,
                        direction: d.clone(),
                        alpha: *alpha,
                        correct: u8::from(b),
                    });
                }
            }
        }
        if let Some(bits) = &self.baseline {
            for (item, &b) in items.iter().zip(bits) {
                rows.push(OutcomeRow {
                    item: *item,
                    direction: BASELINE.into(),
                    alpha: 0.0,
                    correct: u8::from(b),
                });
            }
        }
        rows
    }
}

// order-preserving integer key for finite f64
fn alpha_key(a: f64) -> u64 {
    let b = a.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn alpha_from_key(k: u64) -> f64 {
    if k >> 63 == 1 {
        f64::from_bits(k & !(1 << 63))
    } else {
        f64::from_bits(!k)
    }
}

pub fn write_outcome(rows: &[OutcomeRow], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::json("outcome", e))?);
        text.push('\n');
    }
    write_file(path.as_ref(), text.as_bytes())
}

pub fn import_outcome(path: impl AsRef<Path>) -> Result<SweepOutcome> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Schema(format!("outcome is not UTF-8: {e}")))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: OutcomeRow = serde_json::from_str(line)
            .map_err(|e| Error::Schema(format!("outcome line {}: {e}", i + 1)))?;
        rows.push(r);
    }
    SweepOutcome::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionAnalysis {
    pub direction: String,
    pub alphas: Vec<f64>,
    pub error_rates: Vec<f64>,
    pub items: Vec<usize>,
    /// `(error(α_min) − error(α_max)) × 100`.
    pub total_effect_pp: f64,
    /// Spearman correlation of error rate with α; `None` for a flat curve.
    pub spearman_rho: Option<f64>,
    pub welch_t: f64,
    /// Two-sided Welch p-value comparing per-item error bits at the two
    /// endpoints.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteeringAnalysis {
    pub directions: Vec<DirectionAnalysis>,
    pub baseline_error: Option<f64>,
}

fn error_rate(bits: &[bool]) -> f64 {
    bits.iter().filter(|b| !**b).count() as f64 / bits.len() as f64
}

pub fn analyze_sweep(outcome: &SweepOutcome) -> Result<SteeringAnalysis> {
    let mut directions = Vec::new();
    for (name, pts) in &outcome.curves {
        if pts.len() < 2 {
            return Err(Error::Schema(format!(
                "direction '{name}' needs at least two alpha values for endpoints"
            )));
        }
        if pts.iter().any(|(_, b)| b.is_empty()) {
            return Err(Error::Schema(format!("direction '{name}' has an empty alpha")));
        }
        let alphas: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let error_rates: Vec<f64> = pts.iter().map(|p| error_rate(&p.1)).collect();
        let err_bits = |bits: &[bool]| -> Vec<f64> { bits.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect() };
        let lo = err_bits(&pts[0].1);
        let hi = err_bits(&pts[pts.len() - 1].1);
        let w = welch_t(&lo, &hi)?;
        directions.push(DirectionAnalysis {
            direction: name.clone(),
            total_effect_pp: 100.0 * (error_rates[0] - error_rates[error_rates.len() - 1]),
            spearman_rho: spearman(&alphas, &error_rates).ok(),
            items: pts.iter().map(|p| p.1.len()).collect(),
            alphas,
            error_rates,
            welch_t: w.t,
            p_value: w.p,
        });
    }
    Ok(SteeringAnalysis {
        directions,
        baseline_error: outcome.baseline.as_deref().map(error_rate),
    })
}

impl SteeringAnalysis {
    pub fn get(&self, direction: &str) -> Option<&DirectionAnalysis> {
        self.directions.iter().find(|d| d.direction == direction)
    }

    /// Plain-text summary, one line per direction.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for d in &self.directions {
            let _ = writeln!(
                s,
                "{:<10} effect {:+.2}pp  p = {:.3e}  rho = {}",
                d.direction,
                d.total_effect_pp,
                d.p_value,
                d.spearman_rho.map_or("n/a".into(), |r| format!("{r:.3}"))
            );
        }
        s
    }
}
