//! Train/test splitters: grouped k-fold, stratified k-fold and a
//! stratified holdout. Every plan is a pure function of its inputs and seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::store::Label;

pub const DEFAULT_SEEDS: [u64; 3] = [42, 123, 456];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol {
    /// No group spans train and test.
    GroupKFold { folds: usize },
    /// Label proportions preserved per fold; groups ignored.
    StratifiedKFold { folds: usize },
    /// A single stratified split with this fraction held out.
    Holdout { test_fraction: f64 },
}

impl Protocol {
    pub const DEFAULT: Protocol = Protocol::GroupKFold { folds: 5 };

    pub fn num_splits(&self) -> usize {
        match *self {
            Protocol::GroupKFold { folds } | Protocol::StratifiedKFold { folds } => folds,
            Protocol::Holdout { .. } => 1,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::GroupKFold { folds } => write!(f, "group_kfold({folds})"),
            Protocol::StratifiedKFold { folds } => write!(f, "stratified_kfold({folds})"),
            Protocol::Holdout { test_fraction } => write!(f, "holdout({test_fraction})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    /// Row positions, ascending.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub protocol: Protocol,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// A group present on both sides of a split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeakViolation {
    pub fold: usize,
    pub group_id: u64,
}

impl FoldPlan {
    /// Groups appearing in both train and test of the same fold.
    pub fn group_leaks(&self, groups: &[u64]) -> Vec<LeakViolation> {
        let mut out = Vec::new();
        for (f, fold) in self.folds.iter().enumerate() {
            let train: BTreeSet<u64> = fold.train.iter().map(|&i| groups[i]).collect();
            let test: BTreeSet<u64> = fold.test.iter().map(|&i| groups[i]).collect();
            out.extend(
                train
                    .intersection(&test)
                    .map(|&group_id| LeakViolation { fold: f, group_id }),
            );
        }
        out
    }
}

fn folds_from_assignment(assign: &[usize], k: usize) -> Vec<Fold> {
    (0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..assign.len()).partition(|&i| assign[i] == f);
            Fold { train, test }
        })
        .collect()
}

pub fn make_folds(groups: &[u64], labels: &[Label], protocol: Protocol, seed: u64) -> Result<FoldPlan> {
    if groups.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} groups but {} labels",
            groups.len(),
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let folds = match protocol {
        Protocol::GroupKFold { folds: k } => group_kfold(groups, k, &mut rng)?,
        Protocol::StratifiedKFold { folds: k } => stratified_kfold(labels, k, &mut rng)?,
        Protocol::Holdout { test_fraction } => holdout(labels, test_fraction, &mut rng)?,
    };
    Ok(FoldPlan {
        protocol,
        seed,
        folds,
    })
}

fn group_kfold(groups: &[u64], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    let mut sizes: BTreeMap<u64, usize> = BTreeMap::new();
    for &g in groups {
        *sizes.entry(g).or_default() += 1;
    }
    if sizes.len() < k {
        return Err(Error::InvalidConfig(format!(
            "{} groups cannot fill {k} folds",
            sizes.len()
        )));
    }
    let mut order: Vec<(u64, usize)> = sizes.into_iter().collect();
    order.shuffle(rng);
    // largest groups first; the shuffle decides among equal sizes
    order.sort_by(|a, b| b.1.cmp(&a.1));
    let mut load = vec![0usize; k];
    let mut fold_of: BTreeMap<u64, usize> = BTreeMap::new();
    for (g, size) in order {
        let f = (0..k).min_by_key(|&f| (load[f], f)).expect("k > 0");
        load[f] += size;
        fold_of.insert(g, f);
    }
    let assign: Vec<usize> = groups.iter().map(|g| fold_of[g]).collect();
    Ok(folds_from_assignment(&assign, k))
}

fn class_rows(labels: &[Label], rng: &mut ChaCha8Rng) -> Result<[Vec<usize>; 2]> {
    let mut by_class: [Vec<usize>; 2] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class[usize::from(l.is_correct())].push(i);
    }
    if by_class.iter().any(|c| c.is_empty()) {
        return Err(Error::SingleClass);
    }
    for c in by_class.iter_mut() {
        c.shuffle(rng);
    }
    Ok(by_class)
}

fn stratified_kfold(labels: &[Label], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    let by_class = class_rows(labels, rng)?;
    if let Some(c) = by_class.iter().find(|c| c.len() < k) {
        return Err(Error::InvalidConfig(format!(
            "a class with {} records cannot fill {k} folds",
            c.len()
        )));
    }
    let mut assign = vec![0usize; labels.len()];
    for c in &by_class {
        for (pos, &i) in c.iter().enumerate() {
            assign[i] = pos % k;
        }
    }
    Ok(folds_from_assignment(&assign, k))
}

fn holdout(labels: &[Label], fraction: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Fold>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "holdout fraction must be in (0, 1), got {fraction}"
        )));
    }
    let by_class = class_rows(labels, rng)?;
    let mut assign = vec![1usize; labels.len()];
    for c in &by_class {
        let n_test = ((c.len() as f64 * fraction).round() as usize).clamp(1, c.len().saturating_sub(1).max(1));
        for &i in &c[..n_test] {
            assign[i] = 0;
        }
    }
    let folds = folds_from_assignment(&assign, 1);
    if folds[0].train.is_empty() {
        return Err(Error::InvalidConfig("holdout leaves no training rows".into()));
    }
    Ok(folds)
}
