//! One function per subcommand. Each resolves its settings, rejects unknown
//! config keys, and only then loads data and computes.

use std::collections::BTreeSet;
use std::path::PathBuf;

use probegeom::classifiers::Method;
use probegeom::evaluation::{
    classifier_comparison, confound_controls, fewshot_curve, layer_sweep, make_folds, nested_cv,
    paraphrase_anova, paraphrase_transfer, transfer_eval, unsupervised_eval, Aggregate, Budget,
    FewshotConfig, NestedCvConfig, Protocol, SweepConfig, DEFAULT_SEEDS,
};
use probegeom::geometry::{
    intrinsic_dim_mle, layer_similarity, phase_blocks, DEFAULT_K_MAX, DEFAULT_K_MIN, DEFAULT_PHASE_BOUNDARIES,
};
use probegeom::model_io::{load_probe, save_probe};
use probegeom::probe::{labels_to_f64, train_probe, Preprocess, Projector, DEFAULT_C};
use probegeom::steering::{analyze_sweep, build_bundle, import_outcome};
use probegeom::store::{presets, read_dump, write_dump, ActivationDataset, LayerSchedule, LengthModel, NoiseModel};
use probegeom::{evaluation, exec};
use serde_json::{json, Value};

use crate::args::*;
use crate::config::{CliError, CliResult, Resolver};
use crate::output::{num, num_list, Outputs};
use crate::plot::{heatmap_svg, line_svg, scatter3_svg, Axes, PlotError, Series};

pub const DEFAULT_OUT: &str = "probegeom-out";

/// Runs `f` on a pool of `jobs` workers.
fn par<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> CliResult<R> + Send) -> CliResult<R> {
    exec::with_jobs(jobs, f)?
}

fn path_opt(r: &mut Resolver, key: &str, flag: &Option<PathBuf>) -> CliResult<Option<PathBuf>> {
    let flag = flag.as_ref().map(|p| p.display().to_string());
    Ok(r.optional::<String>(key, flag)?.map(PathBuf::from))
}

fn path_req(r: &mut Resolver, key: &str, flag: &Option<PathBuf>) -> CliResult<PathBuf> {
    path_opt(r, key, flag)?.ok_or_else(|| CliError::invalid(format!("--{key} is required")))
}

fn out_dir(r: &mut Resolver, flag: &Option<PathBuf>) -> CliResult<PathBuf> {
    Ok(path_opt(r, "out", flag)?.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)))
}

/// Writes a plot, or logs why it was skipped. Plots are auxiliary, so a
/// plot that cannot be drawn never fails the command.
fn emit_plot(out: &mut Outputs, name: &str, svg: Result<String, PlotError>) -> CliResult<()> {
    match svg {
        Ok(s) => out.text(name, &s),
        Err(e) => {
            log::warn!("skipping {name}: {e}");
            Ok(())
        }
    }
}

/// Which shared options a command reads.
#[derive(Clone, Copy)]
struct Uses {
    protocol: bool,
    c: bool,
}

const ALL_SHARED: Uses = Uses {
    protocol: true,
    c: true,
};

#[derive(Debug)]
enum DefaultLayers {
    All,
    Last,
}

struct Settings {
    dump: PathBuf,
    out: PathBuf,
    layers: Option<LayerSel>,
    default_layers: DefaultLayers,
    seeds: Vec<u64>,
    protocol: Protocol,
    c: f64,
}

struct Loaded {
    ds: ActivationDataset,
    layers: Vec<usize>,
}

fn settings(a: &DataArgs, r: &mut Resolver, default_layers: DefaultLayers, uses: Uses) -> CliResult<Settings> {
    if !uses.protocol && a.protocol.is_some() {
        return Err(CliError::invalid("--protocol does not apply to this command"));
    }
    if !uses.c && a.c.is_some() {
        return Err(CliError::invalid("--c does not apply to this command"));
    }
    let dump = path_req(r, "dump", &a.dump)?;
    let out = out_dir(r, &a.out)?;
    let layers = r.optional("layers", a.layers.clone())?;
    if layers.is_none() {
        r.note("layers", json!(format!("{default_layers:?}").to_lowercase()));
    }
    let seeds = r.value("seed-list", a.seed_list.clone(), CsvList(DEFAULT_SEEDS.to_vec()))?.0;
    let protocol = if uses.protocol {
        r.value("protocol", a.protocol, ProtocolArg(Protocol::DEFAULT))?.0
    } else {
        Protocol::DEFAULT
    };
    let c = if uses.c { r.value("c", a.c, DEFAULT_C)? } else { DEFAULT_C };
    if !(c > 0.0 && c.is_finite()) {
        return Err(CliError::invalid(format!("--c must be positive, got {c}")));
    }
    Ok(Settings {
        dump,
        out,
        layers,
        default_layers,
        seeds,
        protocol,
        c,
    })
}

impl Settings {
    fn load(&self) -> CliResult<Loaded> {
        let ds = read_dump(&self.dump)?;
        let available = ds.layer_indices();
        let layers = match (&self.layers, &self.default_layers) {
            (Some(sel), _) => sel.resolve(&available).map_err(CliError::Validation)?,
            (None, DefaultLayers::All) => available,
            (None, DefaultLayers::Last) => vec![*available.last().expect("validated dataset has layers")],
        };
        Ok(Loaded { ds, layers })
    }
}

impl Loaded {
    fn check_pls_dim(&self, what: &str, k: usize) -> CliResult<()> {
        let max = self.ds.hidden_dim().min(self.ds.num_records().saturating_sub(1));
        if k == 0 || k > max {
            return Err(CliError::invalid(format!("{what} {k} outside 1..={max}")));
        }
        Ok(())
    }
}

fn agg_cells(a: &Aggregate) -> [String; 5] {
    [
        num(a.mean),
        num(a.std),
        a.values.len().to_string(),
        a.failed.to_string(),
        num_list(&a.values),
    ]
}

fn agg_json(a: &Aggregate) -> Value {
    json!({
        "mean": finite(a.mean),
        "std": finite(a.std),
        "cells": a.values.len(),
        "failed": a.failed,
    })
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn gen_synth(a: &GenSynthArgs, r: &mut Resolver) -> CliResult<Option<Outputs>> {
    let preset = r.optional::<String>("preset", a.preset.clone())?;
    if preset.as_deref() == Some("list") {
        for p in presets::PRESETS {
            println!("{p}");
        }
        return Ok(None);
    }
    let seed = r.value("seed", a.seed, 42u64)?;
    let mut cfg = match &preset {
        Some(name) => presets::preset(name, seed).ok_or_else(|| {
            CliError::invalid(format!("unknown preset '{name}' (available: {})", presets::PRESETS.join(", ")))
        })?,
        None => presets::mean_shift(seed),
    };
    if let Some(v) = r.optional("dim", a.dim)? {
        cfg.hidden_dim = v;
    }
    if let Some(v) = r.optional("rank", a.rank)? {
        cfg.signal_rank = v;
    }
    if let Some(v) = r.optional("delta", a.delta.clone())? {
        cfg.mean_shift = v.0;
    }
    if let Some(v) = r.optional("sigma", a.sigma)? {
        match &mut cfg.noise {
            NoiseModel::Isotropic { sigma } | NoiseModel::Spiked { sigma, .. } => *sigma = v,
        }
    }
    if let Some(v) = r.optional("groups", a.groups)? {
        cfg.num_groups = v;
    }
    if let Some(v) = r.optional("records-per-group", a.records_per_group)? {
        cfg.records_per_group = v;
    }
    if let Some(v) = r.optional("group-offset", a.group_offset)? {
        cfg.group_offset_scale = v;
    }
    if let Some(v) = r.optional("jitter", a.jitter)? {
        cfg.paraphrase_jitter = v;
    }
    if let Some(v) = r.optional("num-layers", a.num_layers)? {
        cfg.num_layers = v;
    }
    if let Some(v) = r.optional::<String>("schedule", a.schedule.clone())? {
        cfg.layer_schedule = match v.as_str() {
            "linear" => LayerSchedule::Linear,
            "flat" => LayerSchedule::Flat,
            other => return Err(CliError::invalid(format!("unknown schedule '{other}' (linear, flat)"))),
        };
    }
    if let Some(v) = r.optional("length-confound", a.length_confound)? {
        cfg.length = LengthModel::LabelScaled { factor: v };
    }
    if let Some(v) = r.optional::<String>("model-tag", a.model_tag.clone())? {
        cfg.model_tag = v;
    }
    if let Some(v) = r.optional::<String>("dataset-tag", a.dataset_tag.clone())? {
        cfg.dataset_tag = v;
    }
    let out = path_opt(r, "out", &a.out)?.unwrap_or_else(|| PathBuf::from("synth-dump"));
    r.finish()?;
    cfg.validate()?;
    r.note("synth", serde_json::to_value(&cfg).map_err(|e| CliError::Compute(e.to_string()))?);

    let ds = probegeom::store::gen_synthetic(&cfg)?;
    let manifest = write_dump(&ds, &out)?;
    let mut o = Outputs::create(&out)?;
    o.record("manifest.json");
    o.record("meta.jsonl");
    for l in &manifest.layer_indices {
        o.record(format!("layer_{l}.f32"));
    }
    o.json("synth_config.json", &cfg)?;
    println!(
        "wrote {} records x {} dims x {} layers to {}",
        manifest.num_records,
        manifest.hidden_dim,
        manifest.layer_indices.len(),
        out.display()
    );
    Ok(Some(o))
}

/// Name of the dump invariant an error violates.
fn invariant(e: &probegeom::Error) -> &'static str {
    use probegeom::Error as E;
    match e {
        E::MissingFile(_) => "required files",
        E::Io { .. } => "readable files",
        E::Json { .. } | E::Schema(_) => "schema",
        E::Checksum { .. } => "checksum",
        E::ShapeMismatch(_) | E::DimMismatch { .. } => "shape",
        E::NonFinite { .. } => "finite activations",
        E::InvalidDataset(_) => "dataset structure",
        _ => "dump integrity",
    }
}

pub fn validate(a: &ValidateArgs, r: &mut Resolver) -> CliResult<Option<Outputs>> {
    let dump = path_req(r, "dump", &a.dump)?;
    let out = path_opt(r, "out", &a.out)?;
    r.finish()?;
    let ds = read_dump(&dump).map_err(|e| {
        CliError::Validation(format!("{}: {} invariant violated: {e}", dump.display(), invariant(&e)))
    })?;
    let s = ds.summarize();
    println!(
        "ok: {} records ({} correct, {} incorrect), {} groups, {} layers {:?}, hidden_dim {}",
        s.num_records, s.correct, s.incorrect, s.num_groups, s.layer_indices.len(), s.layer_indices, s.hidden_dim
    );
    for w in &s.warnings {
        println!("warning: {w}");
    }
    match out {
        Some(dir) => {
            let mut o = Outputs::create(dir)?;
            o.json("summary.json", &s)?;
            Ok(Some(o))
        }
        None => Ok(None),
    }
}

pub fn sweep(a: &SweepArgs, r: &mut Resolver, jobs: Option<usize>) -> CliResult<Option<Outputs>> {
    let s = settings(&a.data, r, DefaultLayers::All, ALL_SHARED)?;
    let dims = r.value("dims", a.dims.clone(), CsvList(SweepConfig::default().dims))?.0;
    r.finish()?;
    let d = s.load()?;
    let cfg = SweepConfig {
        dims,
        seeds: s.seeds.clone(),
        protocol: s.protocol,
        c: s.c,
    };
    let res = par(jobs, || Ok(layer_sweep(&d.ds, &d.layers, &cfg)?))?;

    let mut out = Outputs::create(&s.out)?;
    let tag = &d.ds.model_tag;
    let rows: Vec<Vec<String>> = res
        .summary
        .iter()
        .map(|c| {
            let mut row = vec![tag.clone(), c.layer.to_string(), c.dim.to_string()];
            row.extend(agg_cells(&c.auc));
            row
        })
        .collect();
    out.csv(
        "dim_sweep.csv",
        &["model_tag", "layer", "dim", "mean_auc", "std_auc", "cells", "failed", "fold_aucs"],
        &rows,
    )?;
    let cells: Vec<Vec<String>> = res
        .cells
        .iter()
        .map(|c| {
            let (v, err) = match &c.auc {
                Ok(v) => (num(*v), String::new()),
                Err(e) => (String::new(), e.clone()),
            };
            vec![c.layer.to_string(), c.dim.to_string(), c.seed.to_string(), c.fold.to_string(), v, err]
        })
        .collect();
    out.csv("sweep_cells.csv", &["layer", "dim", "seed", "fold", "auc", "error"], &cells)?;

    let best = res.best().map(|b| {
        json!({"layer": b.layer, "dim": b.dim, "mean_auc": b.auc.mean, "std_auc": b.auc.std})
    });
    out.json(
        "sweep_best.json",
        &json!({
            "model_tag": tag,
            "protocol": ProtocolArg(s.protocol).to_string(),
            "seeds": s.seeds,
            "best": best,
        }),
    )?;

    let shown: Vec<usize> = if res.layers.len() <= 8 {
        res.layers.clone()
    } else {
        let n = res.layers.len();
        (0..8).map(|i| res.layers[i * (n - 1) / 7]).collect()
    };
    let series: Vec<Series> = shown
        .iter()
        .map(|&l| {
            let pts = res
                .summary
                .iter()
                .filter(|c| c.layer == l && c.auc.mean.is_finite())
                .map(|c| (c.dim as f64, c.auc.mean))
                .collect();
            Series::new(format!("layer {l}"), pts)
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    emit_plot(
        &mut out,
        "dim_sweep.svg",
        line_svg(&series, &Axes::new(&format!("{tag}: AUC by PLS dimension"), "PLS dimension", "mean AUC")),
    )?;
    if res.layers.len() > 1 {
        let pts: Vec<(f64, f64)> = res
            .layers
            .iter()
            .filter_map(|&l| {
                res.summary
                    .iter()
                    .filter(|c| c.layer == l && c.auc.mean.is_finite())
                    .map(|c| c.auc.mean)
                    .max_by(f64::total_cmp)
                    .map(|m| (l as f64, m))
            })
            .collect();
        emit_plot(
            &mut out,
            "layer_sweep.svg",
            line_svg(
                &[Series::new("best over dims", pts)],
                &Axes::new(&format!("{tag}: AUC by layer"), "layer", "best mean AUC"),
            ),
        )?;
    }
    if let Some(b) = res.best() {
        println!("best: layer {} dim {} AUC {:.4} ± {:.4}", b.layer, b.dim, b.auc.mean, b.auc.std);
    }
    Ok(Some(out))
}

fn method_rows(tag: &str, layer: usize, rows: &[evaluation::MethodRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|m| {
            let mut row = vec![tag.to_string(), layer.to_string(), m.name.clone()];
            row.extend(agg_cells(&m.auc));
            row
        })
        .collect()
}

pub fn classifiers(a: &ClassifiersArgs, r: &mut Resolver, jobs: Option<usize>) -> CliResult<Option<Outputs>> {
    let s = settings(&a.data, r, DefaultLayers::Last, Uses { protocol: true, c: false })?;
    let methods: Vec<Method> = r
        .value("methods", a.methods.clone(), CsvList(Method::ALL.map(MethodArg).to_vec()))?
        .0
        .into_iter()
        .map(|m| m.0)
        .collect();
    let pls_dim = r.value("pls-dim", a.pls_dim, 5usize)?;
    r.finish()?;
    let d = s.load()?;
    d.check_pls_dim("--pls-dim", pls_dim)?;
    let mut rows = Vec::new();
    for &l in &d.layers {
        let res = par(jobs, || Ok(classifier_comparison(&d.ds, l, &methods, pls_dim, s.protocol, &s.seeds)?))?;
        rows.extend(method_rows(&d.ds.model_tag, l, &res));
    }
    let mut out = Outputs::create(&s.out)?;
    out.csv(
        "classifiers.csv",
        &["model_tag", "layer", "method", "mean_auc", "std_auc", "cells", "failed", "fold_aucs"],
        &rows,
    )?;
    Ok(Some(out))
}

pub fn unsup(a: &UnsupArgs, r: &mut Resolver, jobs: Option<usize>) -> CliResult<Option<Outputs>> {
    let s = settings(&a.data, r, DefaultLayers::Last, Uses { protocol: true, c: false })?;
    let pls_dim = r.value("pls-dim", a.pls_dim, 5usize)?;
    r.finish()?;
    let d = s.load()?;
    d.check_pls_dim("--pls-dim", pls_dim)?;
    let mut rows = Vec::new();
    for &l in &d.layers {
        let res = par(jobs, || Ok(unsupervised_eval(&d.ds, l, pls_dim, s.protocol, &s.seeds)?))?;
        rows.extend(method_rows(&d.ds.model_tag, l, &res));
    }
    let mut out = Outputs::create(&s.out)?;
    out.csv(
        "unsupervised.csv",
        &["model_tag", "layer", "feature", "mean_auc", "std_auc", "cells", "failed", "fold_aucs"],
        &rows,
    )?;
    Ok(Some(out))
}

/// Smallest per-class count in any training fold of the plans.
fn smallest_class(ds: &ActivationDataset, protocol: Protocol, seeds: &[u64]) -> CliResult<usize> {
    let labels = ds.labels();
    let groups = ds.groups();
    let mut smallest = usize::MAX;
    for &seed in seeds {
        for f in make_folds(&groups, &labels, protocol, seed)?.folds {
            let pos = f.train.iter().filter(|&&i| labels[i].is_correct()).count();
            smallest = smallest.min(pos.min(f.train.len() - pos));
        }
    }
    Ok(smallest)
}

pub fn fewshot(a: &FewshotArgs, r: &mut Resolver, jobs: Option<usize>) -> CliResult<Option<Outputs>> {
    let s = settings(&a.data, r, DefaultLayers::Last, ALL_SHARED)?;
    let defaults = FewshotConfig::default();
    let explicit = r.optional("budgets", a.budgets.clone())?;
    let methods: Vec<Method> = r
        .value("methods", a.methods.clone(), CsvList(defaults.methods.iter().map(|&m| MethodArg(m)).collect()))?
        .0
        .into_iter()
        .map(|m| m.0)
        .collect();
    let resamples = r.value("resamples", a.resamples, defaults.resamples)?;
    let pls_dim = r.value("pls-dim", a.pls_dim, defaults.pls_dim)?;
    r.finish()?;
    if resamples == 0 {
        return Err(CliError::invalid("--resamples must be at least 1"));
    }
    let d = s.load()?;
    d.check_pls_dim("--pls-dim", pls_dim)?;
    let budgets: Vec<Budget> = match explicit {
        Some(b) => b.0.into_iter().map(|b| b.0).collect(),
        None => {
            // default budgets shrink to what the training folds can supply
            let cap = smallest_class(&d.ds, s.protocol, &s.seeds)?;
            let kept: Vec<Budget> = defaults
                .budgets
                .iter()
                .copied()
                .filter(|b| matches!(b, Budget::Full) || matches!(b, Budget::PerClass(n) if *n <= cap))
                .collect();
            if kept.len() < defaults.budgets.len() {
                log::warn!("dropping default budgets above {cap} per class");
            }
            r.note("budgets", json!(CsvList(kept.iter().map(|&b| BudgetArg(b)).collect()).to_string()));
            kept
        }
    };
    let cfg = FewshotConfig {
        budgets,
        methods,
        resamples,
        pls_dim,
        seeds: s.seeds.clone(),
        protocol: s.protocol,
        c: s.c,
    };
    let mut rows = Vec::new();
    let mut series = Vec::new();
    let full_x = {
        let k = s.protocol.num_splits().max(2) as f64;
        let train = match s.protocol {
            Protocol::Holdout { test_fraction } => d.ds.num_records() as f64 * (1.0 - test_fraction),
            _ => d.ds.num_records() as f64 * (k - 1.0) / k,
        };
        train / 2.0
    };
    for &l in &d.layers {
        let res = par(jobs, || Ok(fewshot_curve(&d.ds, l, &cfg)?))?;
        for row in &res {
            rows.push(vec![
                d.ds.model_tag.clone(),
                l.to_string(),
                row.budget.to_string(),
                row.method.to_string(),
                num(row.auc.mean),
                num(row.auc.std),
                row.auc.values.len().to_string(),
                row.failed_cells.to_string(),
            ]);
        }
        for &m in &cfg.methods {
            let pts: Vec<(f64, f64)> = res
                .iter()
                .filter(|row| row.method == m && row.auc.mean.is_finite())
                .map(|row| {
                    let x = match row.budget {
                        Budget::PerClass(n) => n as f64,
                        Budget::Full => full_x,
                    };
                    (x, row.auc.mean)
                })
                .collect();
            if !pts.is_empty() {
                let name = if d.layers.len() > 1 { format!("L{l} {m}") } else { m.to_string() };
                series.push(Series::new(name, pts));
            }
        }
    }
    let mut out = Outputs::create(&s.out)?;
    out.csv(
        "fewshot.csv",
        &["model_tag", "layer", "budget", "method", "mean_auc", "std_auc", "resamples", "failed_cells"],
        &rows,
    )?;
    emit_plot(
        &mut out,
        "fewshot.svg",
        line_svg(
            &series,
            &Axes::new(&format!("{}: AUC by label budget", d.ds.model_tag), "labels per class", "mean AUC"),
        ),
    )?;
    Ok(Some(out))
}

pub fn nested(a: &NestedCvArgs, r: &mut Resolver, jobs: Option<usize>) -> CliResult<Option<Outputs>> {
    let s = settings(&a.data, r, DefaultLayers::Last, Uses { protocol: false, c: true })?;
    let defaults = NestedCvConfig::default();
    let grid = r.value("grid", a.grid.clone(), CsvList(defaults.grid.clone()))?.0;
    let fixed_dim = r.value("fixed-dim", a.fixed_dim, defaults.fixed_dim)?;
    let outer_folds = r.value("outer-folds", a.outer_folds, defaults.outer_folds)?;
    let inner_folds = r.value("inner-folds", a.inner_folds, defaults.inner_folds)?;
    r.finish()?;
    if outer_folds < 2 || inner_folds < 2 {
        return Err(CliError::invalid("--outer-folds and --inner-folds must be at least 2"));
    }
    let d = s.load()?;
    for &k in grid.iter().chain([&fixed_dim]) {
        d.check_pls_dim("PLS dimension", k)?;
    }
    let cfg = NestedCvConfig {
        grid,
        fixed_dim,
        outer_folds,
        inner_folds,
        seeds: s.seeds.clone(),
        c: s.c,
    };
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &l in &d.layers {
        let res = par(jobs, || Ok(nested_cv(&d.ds, l, &cfg)?))?;
        for f in &res.folds {
            rows.push(vec![
                d.ds.model_tag.clone(),
                l.to_string(),
                f.seed.to_string(),
                f.fold.to_string(),
                f.chosen_dim.to_string(),
                num(f.nested_auc),
                num(f.standard_auc),
            ]);
        }
        summary.push(json!({
            "layer": l,
            "fixed_dim": fixed_dim,
            "nested": agg_json(&res.nested),
            "standard": agg_json(&res.standard),
            "bias": finite(res.bias),
        }));
        println!(
            "layer {l}: nested {:.4} ± {:.4}, fixed dim {fixed_dim} {:.4} ± {:.4}, bias {:+.4}",
            res.nested.mean, res.nested.std, res.standard.mean, res.standard.std, res.bias
        );
    }
    let mut out = Outputs::create(&s.out)?;
    out.csv(
        "nested_cv.csv",
        &["model_tag", "layer", "seed", "fold", "chosen_dim", "nested_auc", "standard_auc"],
        &rows,
    )?;
    out.json("nested_cv.json", &json!({"model_tag": d.ds.model_tag, "layers": summary}))?;
    Ok(Some(out))
}

fn parse_test(spec: &str) -> CliResult<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => Ok((name.to_string(), PathBuf::from(dir))),
        Some(_) => Err(CliError::invalid(format!("--test '{spec}' must be NAME=DIR"))),
        None => {
            let p = PathBuf::from(spec);
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .ok_or_else(|| CliError::invalid(format!("--test '{spec}' has no directory name")))?;
            Ok((name, p))
        }
    }
}

pub fn transfer(a: &TransferArgs, r: &mut Resolver, jobs: Option<usize>) -> CliResult<Option<Outputs>> {
    let s = settings(&a.data, r, DefaultLayers::Last, Uses { protocol: false, c: true })?;
    let tests = r.repeated("test", a.tests.clone())?;
    let pls_dim = r.value("pls-dim", a.pls_dim, 5usize)?;
    r.finish()?;
    if tests.is_empty() {
        return Err(CliError::invalid("transfer needs at least one --test NAME=DIR"));
    }
    let specs: Vec<(String, PathBuf)> = tests.iter().map(|t| parse_test(t)).collect::<CliResult<_>>()?;
    let names: BTreeSet<&String> = specs.iter().map(|s| &s.0).collect();
    if names.len() != specs.len() {
        return Err(CliError::invalid("--test names must be unique"));
    }
    let d = s.load()?;
    d.check_pls_dim("--pls-dim", pls_dim)?;
    let test_sets: Vec<(String, ActivationDataset)> = specs
        .into_iter()
        .map(|(n, p)| {
            read_dump(&p)
                .map(|ds| (n, ds))
                .map_err(|e| CliError::Validation(format!("test dump {}: {e}", p.display())))
        })
        .collect::<CliResult<_>>()?;
    let refs: Vec<(String, &ActivationDataset)> = test_sets.iter().map(|(n, ds)| (n.clone(), ds)).collect();
    let mut rows = Vec::new();
    for &l in &d.layers {
        let rep = par(jobs, || Ok(transfer_eval(&d.ds, &refs, l, pls_dim, s.c)?))?;
        for t in &rep.rows {
            rows.push(vec![
                d.ds.model_tag.clone(),
                t.dataset.clone(),
                l.to_string(),
                pls_dim.to_string(),
                num(t.full_auc),
                num(t.pls_auc),
            ]);
        }
        rows.push(vec![
            d.ds.model_tag.clone(),
            "cross".into(),
            l.to_string(),
            pls_dim.to_string(),
            num(rep.cross_full),
            num(rep.cross_pls),
        ]);
    }
    let mut out = Outputs::create(&s.out)?;
    out.csv("transfer.csv", &["train_tag", "test", "layer", "dim", "full_auc", "pls_auc"], &rows)?;
    Ok(Some(out))
}

fn preprocess(d: &Loaded, pls_dim: Option<usize>) -> CliResult<Preprocess> {
    match pls_dim {
        Some(k) => {
            d.check_pls_dim("--pls-dim", k)?;
            Ok(Preprocess::Pls(k))
        }
        None => Ok(Preprocess::Standardize),
    }
}

pub fn confounds(a: &ConfoundsArgs, r: &mut Resolver, jobs: Option<usize>) -> CliResult<Option<Outputs>> {
    let s = settings(&a.data, r, DefaultLayers::Last, ALL_SHARED)?;
    let pls_dim = r.optional("pls-dim", a.pls_dim)?;
    r.finish()?;
    let d = s.load()?;
    let pre = preprocess(&d, pls_dim)?;
    let mut layers = Vec::new();
    for &l in &d.layers {
        let rep = par(jobs, || Ok(confound_controls(&d.ds, l, pre, s.protocol, &s.seeds, s.c)?))?;
        layers.push(json!({
            "layer": l,
            "length_only": agg_json(&rep.length_only),
            "raw": agg_json(&rep.raw),
            "length_residualized": agg_json(&rep.length_residualized),
            "length_label_r": rep.length_label_r,
            "surface_r": rep.surface,
        }));
    }
    let mut out = Outputs::create(&s.out)?;
    out.json("confounds.json", &json!({"model_tag": d.ds.model_tag, "layers": layers}))?;
    Ok(Some(out))
}

pub fn anova(a: &AnovaArgs, r: &mut Resolver, jobs: Option<usize>) -> CliResult<Option<Outputs>> {
    let s = settings(&a.data, r, DefaultLayers::Last, ALL_SHARED)?;
    let transfer = r.switch("paraphrase-transfer", a.paraphrase_transfer)?;
    r.finish()?;
    let folds = match s.protocol {
        Protocol::GroupKFold { folds } => folds,
        _ => return Err(CliError::invalid("anova evaluates paraphrase transfer with group-kfold only")),
    };
    let d = s.load()?;
    let mut layers = Vec::new();
    for &l in &d.layers {
        let res = par(jobs, || Ok(paraphrase_anova(&d.ds, l)?))?;
        // AnovaResult writes an infinite ratio as "inf"
        let mut entry = serde_json::to_value(res).map_err(|e| CliError::Compute(e.to_string()))?;
        entry["layer"] = json!(l);
        if transfer {
            let agg = par(jobs, || {
                Ok(paraphrase_transfer(&d.ds, l, Preprocess::Standardize, folds, &s.seeds, s.c)?)
            })?;
            entry["paraphrase_transfer_auc"] = agg_json(&agg);
        }
        println!("layer {l}: f = {}", entry["f_ratio"]);
        layers.push(entry);
    }
    let mut out = Outputs::create(&s.out)?;
    out.json("anova.json", &json!({"model_tag": d.ds.model_tag, "layers": layers}))?;
    Ok(Some(out))
}

pub fn geometry(a: &GeometryArgs, r: &mut Resolver, jobs: Option<usize>) -> CliResult<Option<Outputs>> {
    let s = settings(&a.data, r, DefaultLayers::All, Uses { protocol: false, c: true })?;
    let k_min = r.value("k-min", a.k_min, DEFAULT_K_MIN)?;
    let k_max = r.value("k-max", a.k_max, DEFAULT_K_MAX)?;
    let boundaries = r
        .value("boundaries", a.boundaries.clone(), CsvList(DEFAULT_PHASE_BOUNDARIES.to_vec()))?
        .0;
    let pls_dim = r.optional("pls-dim", a.pls_dim)?;
    r.finish()?;
    let d = s.load()?;
    let pre = preprocess(&d, pls_dim)?;
    let tag = d.ds.model_tag.clone();

    let (sim, blocks, ids) = par(jobs, || {
        let dirs = probegeom::evaluation::layer_directions(&d.ds, &d.layers, pre, s.c)?;
        let sim = layer_similarity(&dirs)?;
        let blocks = phase_blocks(&sim, &boundaries)?;
        let mut ids = Vec::new();
        for &l in &d.layers {
            ids.push(intrinsic_dim_mle(&d.ds.layer(l)?.to_matrix(), k_min, k_max)?);
        }
        Ok((sim, blocks, ids))
    })?;

    let mut out = Outputs::create(&s.out)?;
    let mut header = vec!["layer".to_string()];
    header.extend(d.layers.iter().map(|l| l.to_string()));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = d
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut row = vec![l.to_string()];
            row.extend((0..d.layers.len()).map(|j| num(sim[(i, j)])));
            row
        })
        .collect();
    out.csv("similarity.csv", &header_refs, &rows)?;

    let phases: Vec<Value> = blocks
        .phases
        .iter()
        .map(|p| json!({"layers": d.layers[p.clone()].to_vec()}))
        .collect();
    let means: Vec<Vec<f64>> = (0..blocks.means.nrows())
        .map(|i| (0..blocks.means.ncols()).map(|j| blocks.means[(i, j)]).collect())
        .collect();
    out.json(
        "phase_blocks.json",
        &json!({"model_tag": tag, "boundaries": boundaries, "phases": phases, "mean_similarity": means}),
    )?;

    let id_rows: Vec<Vec<String>> = d
        .layers
        .iter()
        .zip(&ids)
        .map(|(l, e)| vec![l.to_string(), num(e.estimate), e.num_points.to_string(), e.skipped.to_string()])
        .collect();
    out.csv("intrinsic_dim.csv", &["layer", "id_mle", "points", "skipped"], &id_rows)?;

    let labels: Vec<String> = d.layers.iter().map(|l| l.to_string()).collect();
    let matrix: Vec<Vec<f64>> = (0..d.layers.len())
        .map(|i| (0..d.layers.len()).map(|j| sim[(i, j)]).collect())
        .collect();
    emit_plot(
        &mut out,
        "similarity.svg",
        heatmap_svg(&matrix, &labels, &labels, &Axes::new(&format!("{tag}: probe direction similarity"), "layer", "layer")),
    )?;
    let pts: Vec<(f64, f64)> = d
        .layers
        .iter()
        .zip(&ids)
        .filter(|(_, e)| e.estimate.is_finite())
        .map(|(&l, e)| (l as f64, e.estimate))
        .collect();
    emit_plot(
        &mut out,
        "intrinsic_dim.svg",
        line_svg(
            &[Series::new("ID-MLE", pts)],
            &Axes::new(&format!("{tag}: intrinsic dimension"), "layer", "estimate"),
        ),
    )?;

    let last = *d.layers.last().expect("at least one layer");
    let x = d.ds.layer(last)?.to_matrix();
    if d.ds.hidden_dim() >= 3 && d.ds.num_records() > 3 {
        let y = labels_to_f64(&d.ds.labels());
        let z = Projector::fit(&x, &y, Preprocess::Pls(3)).and_then(|p| p.transform(&x));
        match z {
            Ok(z) => {
                let points: Vec<[f64; 3]> = (0..z.nrows()).map(|i| [z[(i, 0)], z[(i, 1)], z[(i, 2)]]).collect();
                let groups: Vec<String> = d
                    .ds
                    .records
                    .iter()
                    .map(|r| if r.label.is_correct() { "correct".into() } else { "incorrect".into() })
                    .collect();
                let mut axes = Axes::new(&format!("{tag}: layer {last} PLS scores"), "PLS 1", "PLS 2");
                axes.z_label = "PLS 3".into();
                emit_plot(&mut out, "pls3_scatter.svg", scatter3_svg(&points, &groups, &axes))?;
            }
            Err(e) => log::warn!("skipping pls3_scatter.svg: {e}"),
        }
    }
    Ok(Some(out))
}

pub fn steer_bundle(a: &SteerBundleArgs, r: &mut Resolver) -> CliResult<Option<Outputs>> {
    let dump = path_req(r, "dump", &a.dump)?;
    let out = out_dir(r, &a.out)?;
    let layer = r.optional("layer", a.layer)?;
    let probe_dir = path_opt(r, "probe", &a.probe)?;
    let pls_dim = r.optional("pls-dim", a.pls_dim)?;
    let train_groups = r.optional("train-groups", a.train_groups)?;
    let c = r.value("c", a.c, DEFAULT_C)?;
    let seed = r.value("seed", a.seed, 0u64)?;
    r.finish()?;
    if probe_dir.is_some() && (pls_dim.is_some() || train_groups.is_some()) {
        return Err(CliError::invalid("--probe loads a trained probe; --pls-dim and --train-groups do not apply"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(CliError::invalid(format!("--c must be positive, got {c}")));
    }
    let ds = read_dump(&dump)?;
    let mut o = Outputs::create(&out)?;

    let probe = match &probe_dir {
        Some(p) => load_probe(p)?,
        None => {
            let l = layer.unwrap_or_else(|| ds.last_layer_index().expect("validated dataset has layers"));
            let rows: Vec<usize> = match train_groups {
                None => (0..ds.num_records()).collect(),
                Some(n) => {
                    let mut ids: Vec<u64> = ds.groups();
                    ids.sort_unstable();
                    ids.dedup();
                    if n == 0 || n > ids.len() {
                        return Err(CliError::invalid(format!("--train-groups {n} outside 1..={}", ids.len())));
                    }
                    let keep: BTreeSet<u64> = ids[..n].iter().copied().collect();
                    (0..ds.num_records()).filter(|&i| keep.contains(&ds.records[i].group_id)).collect()
                }
            };
            let sub = ds.subset(&rows);
            let pre = match pls_dim {
                Some(k) => Preprocess::Pls(k),
                None => Preprocess::Standardize,
            };
            let mut m = train_probe(&sub.layer(l)?.to_matrix(), &sub.labels(), pre, c)?;
            m.layer_index = Some(l);
            save_probe(&m, out.join("probe"))?;
            o.record("probe/probe.json");
            m
        }
    };
    let l = match (layer, probe.layer_index) {
        (Some(l), _) => l,
        (None, Some(p)) => p,
        (None, None) => return Err(CliError::invalid("the probe records no layer; pass --layer")),
    };
    let bundle = build_bundle(&probe, ds.layer(l)?, seed)?;
    bundle.export(out.join("bundle"))?;
    o.record("bundle/bundle.json");
    println!(
        "bundle: layer {}, scale {:.6} (mean activation norm {:.4}), {} alphas",
        bundle.layer_index,
        bundle.scale,
        bundle.mean_activation_norm,
        bundle.alpha_values.len()
    );
    Ok(Some(o))
}

pub fn steer_analyze(a: &SteerAnalyzeArgs, r: &mut Resolver) -> CliResult<Option<Outputs>> {
    let outcome = path_req(r, "outcome", &a.outcome)?;
    let out = out_dir(r, &a.out)?;
    r.finish()?;
    let sweep = import_outcome(&outcome)?;
    let analysis = analyze_sweep(&sweep)?;
    let mut o = Outputs::create(&out)?;
    let mut rows = Vec::new();
    for d in &analysis.directions {
        for ((alpha, err), n) in d.alphas.iter().zip(&d.error_rates).zip(&d.items) {
            rows.push(vec![d.direction.clone(), num(*alpha), num(*err), n.to_string()]);
        }
    }
    o.csv("steering.csv", &["direction", "alpha", "error_rate", "items"], &rows)?;
    o.json("steering.json", &analysis)?;
    let series: Vec<Series> = analysis
        .directions
        .iter()
        .map(|d| Series::new(d.direction.clone(), d.alphas.iter().copied().zip(d.error_rates.iter().copied()).collect()))
        .collect();
    let title = match analysis.baseline_error {
        Some(b) => format!("error rate by steering strength (baseline {:.3})", b),
        None => "error rate by steering strength".into(),
    };
    emit_plot(&mut o, "steering.svg", line_svg(&series, &Axes::new(&title, "alpha", "error rate")))?;
    print!("{}", analysis.summary());
    Ok(Some(o))
}
