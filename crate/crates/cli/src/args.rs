//! Command-line surface and the value types shared with config files.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use probegeom::classifiers::Method;
use probegeom::evaluation::{Budget, Protocol};

/// Comma-separated list, e.g. `42,123,456`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvList<T>(pub Vec<T>);

impl<T: FromStr> FromStr for CsvList<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let items: Result<Vec<T>, String> = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("'{p}': {e}")))
            .collect();
        let items = items?;
        if items.is_empty() {
            return Err("empty list".into());
        }
        Ok(CsvList(items))
    }
}

impl<T: fmt::Display> fmt::Display for CsvList<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// `all`, an inclusive range `a..b`, or a list `a,b,c`.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSel {
    All,
    Range(usize, usize),
    List(Vec<usize>),
}

impl FromStr for LayerSel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s == "all" {
            return Ok(LayerSel::All);
        }
        if let Some((a, b)) = s.split_once("..") {
            let a: usize = a.trim().parse().map_err(|e| format!("range start '{a}': {e}"))?;
            let b: usize = b.trim().parse().map_err(|e| format!("range end '{b}': {e}"))?;
            if a > b {
                return Err(format!("empty layer range {a}..{b}"));
            }
            return Ok(LayerSel::Range(a, b));
        }
        let CsvList(v) = s.parse::<CsvList<usize>>()?;
        Ok(LayerSel::List(v))
    }
}

impl fmt::Display for LayerSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSel::All => f.write_str("all"),
            LayerSel::Range(a, b) => write!(f, "{a}..{b}"),
            LayerSel::List(v) => CsvList(v.clone()).fmt(f),
        }
    }
}

impl LayerSel {
    /// Selected layers among `available`, in ascending order.
    pub fn resolve(&self, available: &[usize]) -> Result<Vec<usize>, String> {
        let want: Vec<usize> = match self {
            LayerSel::All => available.to_vec(),
            LayerSel::Range(a, b) => {
                let v: Vec<usize> = available.iter().copied().filter(|l| (a..=b).contains(&l)).collect();
                if v.is_empty() {
                    return Err(format!("no extracted layer in {a}..{b} (have {available:?})"));
                }
                v
            }
            LayerSel::List(v) => {
                if let Some(bad) = v.iter().find(|l| !available.contains(l)) {
                    return Err(format!("layer {bad} not in extracted layers {available:?}"));
                }
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        Ok(want)
    }
}

/// `group-kfold:K`, `stratified-kfold:K` or `holdout:F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolArg(pub Protocol);

impl FromStr for ProtocolArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, n) = s.split_once(':').unwrap_or((s, ""));
        let folds = || -> Result<usize, String> {
            if n.is_empty() {
                return Ok(5);
            }
            match n.parse::<usize>() {
                Ok(k) if k >= 2 => Ok(k),
                _ => Err(format!("fold count must be an integer >= 2, got '{n}'")),
            }
        };
        let p = match kind {
            "group-kfold" => Protocol::GroupKFold { folds: folds()? },
            "stratified-kfold" => Protocol::StratifiedKFold { folds: folds()? },
            "holdout" => {
                let f: f64 = if n.is_empty() { 0.2 } else { n.parse().map_err(|_| format!("bad fraction '{n}'"))? };
                if !(f > 0.0 && f < 1.0) {
                    return Err(format!("holdout fraction must be in (0, 1), got {f}"));
                }
                Protocol::Holdout { test_fraction: f }
            }
            _ => return Err(format!("unknown protocol '{kind}' (group-kfold, stratified-kfold, holdout)")),
        };
        Ok(ProtocolArg(p))
    }
}

impl fmt::Display for ProtocolArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Protocol::GroupKFold { folds } => write!(f, "group-kfold:{folds}"),
            Protocol::StratifiedKFold { folds } => write!(f, "stratified-kfold:{folds}"),
            Protocol::Holdout { test_fraction } => write!(f, "holdout:{test_fraction}"),
        }
    }
}

/// A per-class sample count or `full`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetArg(pub Budget);

impl FromStr for BudgetArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "full" {
            return Ok(BudgetArg(Budget::Full));
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(BudgetArg(Budget::PerClass(n))),
            _ => Err(format!("budget must be a positive integer or 'full', got '{s}'")),
        }
    }
}

impl fmt::Display for BudgetArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A classifier name as printed in the output tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodArg(pub Method);

impl FromStr for MethodArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.parse::<Method>().map(MethodArg).map_err(|e| e.to_string())
    }
}

impl fmt::Display for MethodArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Parser)]
#[command(name = "probegeom", version, about = "Linear-probe geometry experiments over activation dumps")]
pub struct Cli {
    /// JSON file whose keys mirror the long flags; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads (default: one per core).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic activation dump with known ground truth.
    GenSynth(GenSynthArgs),
    /// Check a dump's checksums and invariants and print a summary.
    Validate(ValidateArgs),
    /// AUC over layers x PLS dimensions (dim_sweep.csv).
    Sweep(SweepArgs),
    /// Compare classifiers in a shared PLS space (classifiers.csv).
    Classifiers(ClassifiersArgs),
    /// Label-free detection features (unsupervised.csv).
    Unsup(UnsupArgs),
    /// AUC against labeled-sample budget (fewshot.csv).
    Fewshot(FewshotArgs),
    /// Nested vs fixed-dimension cross-validation (nested_cv.csv).
    NestedCv(NestedCvArgs),
    /// Train on one dump, test zero-shot on others (transfer.csv).
    Transfer(TransferArgs),
    /// Length and surface-statistic controls (confounds.json).
    Confounds(ConfoundsArgs),
    /// Paraphrase variance decomposition (anova.json).
    Anova(AnovaArgs),
    /// Cross-layer direction similarity and intrinsic dimension.
    Geometry(GeometryArgs),
    /// Train a probe and export a steering bundle with control directions.
    SteerBundle(SteerBundleArgs),
    /// Analyze judged steering outcomes (steering.csv, steering.json).
    SteerAnalyze(SteerAnalyzeArgs),
    /// Summarize an output directory into report.md and report.svg.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenSynth(_) => "gen-synth",
            Command::Validate(_) => "validate",
            Command::Sweep(_) => "sweep",
            Command::Classifiers(_) => "classifiers",
            Command::Unsup(_) => "unsup",
            Command::Fewshot(_) => "fewshot",
            Command::NestedCv(_) => "nested-cv",
            Command::Transfer(_) => "transfer",
            Command::Confounds(_) => "confounds",
            Command::Anova(_) => "anova",
            Command::Geometry(_) => "geometry",
            Command::SteerBundle(_) => "steer-bundle",
            Command::SteerAnalyze(_) => "steer-analyze",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Start from a named configuration (see `--preset list`).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of planted signal directions.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Class mean shift; one value or one per signal direction.
    #[arg(long)]
    pub delta: Option<CsvList<f64>>,
    /// Isotropic noise std.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Number of questions.
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub records_per_group: Option<usize>,
    #[arg(long)]
    pub group_offset: Option<f64>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    /// `linear` or `flat`.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Make answer length equal label x FACTOR.
    #[arg(long, value_name = "FACTOR")]
    pub length_confound: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub model_tag: Option<String>,
    #[arg(long)]
    pub dataset_tag: Option<String>,
    /// Output dump directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Where to write summary.json and run.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Options shared by every analysis over one dump.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `all`, `a..b` (inclusive) or `a,b,c`.
    #[arg(long)]
    pub layers: Option<LayerSel>,
    #[arg(long)]
    pub seed_list: Option<CsvList<u64>>,
    /// `group-kfold:K`, `stratified-kfold:K` or `holdout:F`.
    #[arg(long)]
    pub protocol: Option<ProtocolArg>,
    /// Inverse L2 regularization strength of the probe.
    #[arg(long = "c")]
    pub c: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub dims: Option<CsvList<usize>>,
}

#[derive(Debug, Args)]
pub struct ClassifiersArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub methods: Option<CsvList<MethodArg>>,
    #[arg(long)]
    pub pls_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct UnsupArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// PLS size of the supervised centroid reference row.
    #[arg(long)]
    pub pls_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FewshotArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Per-class budgets, e.g. `5,25,100,full`.
    #[arg(long)]
    pub budgets: Option<CsvList<BudgetArg>>,
    #[arg(long)]
    pub methods: Option<CsvList<MethodArg>>,
    #[arg(long)]
    pub resamples: Option<usize>,
    #[arg(long)]
    pub pls_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct NestedCvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Candidate PLS dimensions for the inner loop.
    #[arg(long)]
    pub grid: Option<CsvList<usize>>,
    /// Dimension of the non-nested reference.
    #[arg(long)]
    pub fixed_dim: Option<usize>,
    #[arg(long)]
    pub outer_folds: Option<usize>,
    #[arg(long)]
    pub inner_folds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Test dump as NAME=DIR; repeat for several.
    #[arg(long = "test", value_name = "NAME=DIR")]
    pub tests: Vec<String>,
    #[arg(long)]
    pub pls_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ConfoundsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Probe behind PLS-K instead of the full standardized space.
    #[arg(long)]
    pub pls_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnovaArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Also train on originals and test on paraphrases of held-out groups.
    #[arg(long)]
    pub paraphrase_transfer: bool,
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Phase boundaries as depth fractions.
    #[arg(long)]
    pub boundaries: Option<CsvList<f64>>,
    /// Probe directions behind PLS-K instead of the standardized space.
    #[arg(long)]
    pub pls_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SteerBundleArgs {
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Layer to steer; must match the probe's training layer.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Use a saved probe directory instead of training one.
    #[arg(long)]
    pub probe: Option<PathBuf>,
    #[arg(long)]
    pub pls_dim: Option<usize>,
    /// Train on the first N groups only.
    #[arg(long)]
    pub train_groups: Option<usize>,
    #[arg(long = "c")]
    pub c: Option<f64>,
    /// Seed of the random control direction.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SteerAnalyzeArgs {
    /// outcome.jsonl with one judged bit per (item, direction, alpha).
    #[arg(long)]
    pub outcome: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding the artifacts of earlier commands.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
