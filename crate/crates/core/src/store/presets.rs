//! Named generator configurations with known ground truth.

use super::synth::{NoiseModel, ShortcutSpec, SynthConfig};

pub const PRESETS: [&str; 9] = [
    "mean-shift",
    "few-shot",
    "rank3",
    "rank3-wide",
    "rank5",
    "grouped",
    "transfer-source",
    "transfer-target",
    "transfer-orthogonal",
];

/// One direction, shift 2, isotropic unit noise, 1000 pairs in 64-D.
/// The Bayes AUC of the layer is Φ(√2).
pub fn mean_shift(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        ..SynthConfig::default()
    }
}

/// The mean-shift layer in 32-D, for label-budget curves.
pub fn few_shot(seed: u64) -> SynthConfig {
    SynthConfig {
        hidden_dim: 32,
        seed,
        ..SynthConfig::default()
    }
}

/// Rank-3 signal with a variance spectrum along the signal directions, at
/// a sample size small enough that extra PLS components overfit.
pub fn rank3(seed: u64) -> SynthConfig {
    SynthConfig {
        hidden_dim: 64,
        signal_rank: 3,
        mean_shift: vec![2.0],
        noise: NoiseModel::Spiked {
            sigma: 1.0,
            signal_spikes: vec![0.0, 4.0, 16.0],
            nuisance_spikes: vec![],
        },
        num_groups: 40,
        seed,
        ..SynthConfig::default()
    }
}

/// Rank-3 signal in 768-D with 1000 pairs.
pub fn rank3_wide(seed: u64) -> SynthConfig {
    SynthConfig {
        hidden_dim: 768,
        signal_rank: 3,
        mean_shift: vec![2.0],
        noise: NoiseModel::Spiked {
            sigma: 1.0,
            signal_spikes: vec![0.0, 8.0, 40.0],
            nuisance_spikes: vec![],
        },
        num_groups: 1000,
        seed,
        ..SynthConfig::default()
    }
}

/// Rank-5 signal whose directions have widely spaced variances, each
/// carrying the same standardized shift.
pub fn rank5(seed: u64) -> SynthConfig {
    let spikes = vec![0.0, 9.0, 80.0, 700.0, 6000.0];
    SynthConfig {
        hidden_dim: 256,
        signal_rank: 5,
        mean_shift: spikes.iter().map(|l: &f64| 0.8 * (1.0 + l).sqrt()).collect(),
        noise: NoiseModel::Spiked {
            sigma: 1.0,
            signal_spikes: spikes,
            nuisance_spikes: vec![],
        },
        num_groups: 500,
        seed,
        ..SynthConfig::default()
    }
}

/// 20 groups of 100 records with a large shared offset per group.
pub fn grouped(seed: u64) -> SynthConfig {
    SynthConfig {
        num_groups: 20,
        records_per_group: 100,
        group_offset_scale: 5.0,
        seed,
        ..SynthConfig::default()
    }
}

fn transfer_base(seed: u64, signal_seed: u64, nuisance_seed: u64, tag: &str) -> SynthConfig {
    SynthConfig {
        hidden_dim: 256,
        mean_shift: vec![1.5],
        num_groups: 2000,
        shortcut: Some(ShortcutSpec {
            count: 200,
            var_min: 1e-4,
            var_max: 0.5,
            mahalanobis_per_direction: 0.02,
        }),
        seed,
        signal_seed: Some(signal_seed),
        nuisance_seed: Some(nuisance_seed),
        dataset_tag: tag.into(),
        ..SynthConfig::default()
    }
}

/// Source dataset: shared signal plus its own low-variance label shortcut.
pub fn transfer_source(seed: u64) -> SynthConfig {
    transfer_base(seed, 7, 1000 + seed, "source")
}

/// Same signal as [`transfer_source`], different shortcut.
pub fn transfer_target(seed: u64) -> SynthConfig {
    transfer_base(seed.wrapping_add(1), 7, 2000 + seed, "target")
}

/// A target sharing no signal direction with [`transfer_source`].
pub fn transfer_orthogonal(seed: u64) -> SynthConfig {
    transfer_base(seed.wrapping_add(2), 8, 3000 + seed, "orthogonal")
}

pub fn preset(name: &str, seed: u64) -> Option<SynthConfig> {
    Some(match name {
        "mean-shift" => mean_shift(seed),
        "few-shot" => few_shot(seed),
        "rank3" => rank3(seed),
        "rank3-wide" => rank3_wide(seed),
        "rank5" => rank5(seed),
        "grouped" => grouped(seed),
        "transfer-source" => transfer_source(seed),
        "transfer-target" => transfer_target(seed),
        "transfer-orthogonal" => transfer_orthogonal(seed),
        _ => return None,
    })
}
