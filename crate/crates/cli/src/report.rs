//! `report`: folds the artifacts found in an output directory into
//! `report.md` and a summary `report.svg`. The result depends only on the
//! artifact contents, so re-running it reproduces the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::config::{CliError, CliResult};
use crate::output::Outputs;
use crate::plot::{line_svg, Axes, Series};

pub const REPORT_MD: &str = "report.md";
pub const REPORT_SVG: &str = "report.svg";

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> CliResult<Option<Table>> {
        if !path.is_file() {
            return Ok(None);
        }
        let bad = |e: csv::Error| CliError::invalid(format!("{}: {e}", path.display()));
        let mut r = csv::Reader::from_path(path).map_err(bad)?;
        let header = r.headers().map_err(bad)?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec.map_err(bad)?.iter().map(str::to_string).collect());
        }
        Ok(Some(Table { header, rows }))
    }

    fn col(&self, name: &str) -> CliResult<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::invalid(format!("missing column '{name}'")))
    }

    fn f(&self, row: &[String], name: &str) -> CliResult<f64> {
        let v = &row[self.col(name)?];
        Ok(v.parse::<f64>().unwrap_or(f64::NAN))
    }

    fn s<'a>(&self, row: &'a [String], name: &str) -> CliResult<&'a str> {
        Ok(&row[self.col(name)?])
    }
}

fn read_json(path: &Path) -> CliResult<Option<Value>> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn pm(mean: f64, std: f64) -> String {
    if mean.is_finite() {
        format!("{mean:.4} ± {std:.4}")
    } else {
        "n/a".into()
    }
}

fn jf(v: &Value) -> String {
    match v {
        Value::Number(n) => n.as_f64().map_or_else(|| n.to_string(), |f| format!("{f:.4}")),
        Value::Null => "n/a".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn jpm(v: &Value) -> String {
    match (v["mean"].as_f64(), v["std"].as_f64()) {
        (Some(m), Some(s)) => pm(m, s),
        _ => "n/a".into(),
    }
}

fn md_table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}|", header.iter().map(|_| "---").collect::<Vec<_>>().join("|"));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

/// Rows of `model_tag,layer,<key>,mean_auc,std_auc,...,failed` tables.
fn auc_section(out: &mut String, title: &str, t: &Table, key: &str) -> CliResult<()> {
    let _ = writeln!(out, "## {title}\n");
    let mut rows = Vec::new();
    for r in &t.rows {
        rows.push(vec![
            t.s(r, "layer")?.to_string(),
            t.s(r, key)?.to_string(),
            pm(t.f(r, "mean_auc")?, t.f(r, "std_auc")?),
            t.s(r, "failed")?.to_string(),
        ]);
    }
    md_table(out, &["layer", key, "AUC", "failed cells"], &rows);
    Ok(())
}

pub fn build(dir: &Path) -> CliResult<Outputs> {
    if !dir.is_dir() {
        return Err(CliError::invalid(format!("{} is not a directory", dir.display())));
    }
    let mut md = String::from("# probegeom report\n\n");
    let mut found = Vec::new();
    let mut plot: Option<(Vec<Series>, Axes)> = None;

    if let Some(t) = Table::read(&dir.join("dim_sweep.csv"))? {
        found.push("dim_sweep.csv");
        let _ = writeln!(md, "## Dimension sweep\n");
        if let Some(best) = read_json(&dir.join("sweep_best.json"))? {
            let b = &best["best"];
            if b.is_object() {
                let _ = writeln!(
                    md,
                    "Best cell: layer {}, PLS dimension {}, AUC {}.\n",
                    b["layer"],
                    b["dim"],
                    pm(b["mean_auc"].as_f64().unwrap_or(f64::NAN), b["std_auc"].as_f64().unwrap_or(f64::NAN))
                );
            }
        }
        let mut per_layer: BTreeMap<u64, Vec<(f64, f64, f64)>> = BTreeMap::new();
        for r in &t.rows {
            let layer = t.s(r, "layer")?.parse::<u64>().unwrap_or(0);
            per_layer
                .entry(layer)
                .or_default()
                .push((t.f(r, "dim")?, t.f(r, "mean_auc")?, t.f(r, "std_auc")?));
        }
        let mut rows = Vec::new();
        for (layer, cells) in &per_layer {
            let best = cells
                .iter()
                .filter(|c| c.1.is_finite())
                .fold(None::<&(f64, f64, f64)>, |acc, c| match acc {
                    Some(a) if a.1 >= c.1 => Some(a),
                    _ => Some(c),
                });
            let last = cells.last().expect("non-empty");
            rows.push(vec![
                layer.to_string(),
                best.map_or("n/a".into(), |b| format!("{}", b.0)),
                best.map_or("n/a".into(), |b| pm(b.1, b.2)),
                format!("{}", last.0),
                pm(last.1, last.2),
            ]);
        }
        md_table(&mut md, &["layer", "best dim", "best AUC", "largest dim", "AUC at largest"], &rows);
        let series: Vec<Series> = per_layer
            .iter()
            .rev()
            .take(8)
            .rev()
            .map(|(l, cells)| {
                Series::new(
                    format!("layer {l}"),
                    cells.iter().filter(|c| c.1.is_finite()).map(|c| (c.0, c.1)).collect(),
                )
            })
            .filter(|s| !s.points.is_empty())
            .collect();
        if !series.is_empty() {
            plot = Some((series, Axes::new("AUC by PLS dimension", "PLS dimension", "mean AUC")));
        }
    }

    if let Some(t) = Table::read(&dir.join("classifiers.csv"))? {
        found.push("classifiers.csv");
        auc_section(&mut md, "Classifiers", &t, "method")?;
    }
    if let Some(t) = Table::read(&dir.join("unsupervised.csv"))? {
        found.push("unsupervised.csv");
        auc_section(&mut md, "Unsupervised features", &t, "feature")?;
    }

    if let Some(t) = Table::read(&dir.join("fewshot.csv"))? {
        found.push("fewshot.csv");
        let _ = writeln!(md, "## Few-shot\n");
        let mut rows = Vec::new();
        let mut curves: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for r in &t.rows {
            let budget = t.s(r, "budget")?;
            let method = t.s(r, "method")?;
            let mean = t.f(r, "mean_auc")?;
            rows.push(vec![
                t.s(r, "layer")?.to_string(),
                budget.to_string(),
                method.to_string(),
                pm(mean, t.f(r, "std_auc")?),
            ]);
            if let Ok(n) = budget.parse::<f64>() {
                if mean.is_finite() {
                    curves.entry(format!("L{} {method}", t.s(r, "layer")?)).or_default().push((n, mean));
                }
            }
        }
        md_table(&mut md, &["layer", "budget", "method", "AUC"], &rows);
        if plot.is_none() && !curves.is_empty() {
            let series = curves.into_iter().map(|(n, p)| Series::new(n, p)).collect();
            plot = Some((series, Axes::new("AUC by label budget", "labels per class", "mean AUC")));
        }
    }

    if let Some(v) = read_json(&dir.join("nested_cv.json"))? {
        found.push("nested_cv.json");
        let _ = writeln!(md, "## Nested cross-validation\n");
        let rows: Vec<Vec<String>> = v["layers"]
            .as_array()
            .into_iter()
            .flatten()
            .map(|l| {
                vec![
                    l["layer"].to_string(),
                    jpm(&l["nested"]),
                    format!("{} ({})", jpm(&l["standard"]), l["fixed_dim"]),
                    jf(&l["bias"]),
                ]
            })
            .collect();
        md_table(&mut md, &["layer", "nested AUC", "fixed-dim AUC (dim)", "optimism"], &rows);
    }

    if let Some(t) = Table::read(&dir.join("transfer.csv"))? {
        found.push("transfer.csv");
        let _ = writeln!(md, "## Transfer\n");
        let mut rows = Vec::new();
        for r in &t.rows {
            rows.push(vec![
                t.s(r, "train_tag")?.to_string(),
                t.s(r, "test")?.to_string(),
                t.s(r, "layer")?.to_string(),
                format!("{:.4}", t.f(r, "full_auc")?),
                format!("{:.4}", t.f(r, "pls_auc")?),
            ]);
        }
        let dim = t.rows.first().map(|r| t.s(r, "dim").map(str::to_string)).transpose()?.unwrap_or_default();
        md_table(&mut md, &["train", "test", "layer", "full AUC", &format!("PLS-{dim} AUC")], &rows);
    }

    if let Some(v) = read_json(&dir.join("confounds.json"))? {
        found.push("confounds.json");
        let _ = writeln!(md, "## Confound controls\n");
        let rows: Vec<Vec<String>> = v["layers"]
            .as_array()
            .into_iter()
            .flatten()
            .map(|l| {
                vec![
                    l["layer"].to_string(),
                    jpm(&l["length_only"]),
                    jpm(&l["raw"]),
                    jpm(&l["length_residualized"]),
                    jf(&l["length_label_r"]),
                ]
            })
            .collect();
        md_table(&mut md, &["layer", "length only", "raw", "length residualized", "r(length, label)"], &rows);
    }

    if let Some(v) = read_json(&dir.join("anova.json"))? {
        found.push("anova.json");
        let _ = writeln!(md, "## Paraphrase variance\n");
        let rows: Vec<Vec<String>> = v["layers"]
            .as_array()
            .into_iter()
            .flatten()
            .map(|l| {
                vec![
                    l["layer"].to_string(),
                    jf(&l["within_var"]),
                    jf(&l["between_var"]),
                    jf(&l["f_ratio"]),
                    l["num_answers"].to_string(),
                ]
            })
            .collect();
        md_table(&mut md, &["layer", "within", "between", "f", "answers"], &rows);
    }

    if let Some(t) = Table::read(&dir.join("intrinsic_dim.csv"))? {
        found.push("intrinsic_dim.csv");
        let _ = writeln!(md, "## Geometry\n");
        let mut rows = Vec::new();
        let mut pts = Vec::new();
        for r in &t.rows {
            let id = t.f(r, "id_mle")?;
            rows.push(vec![t.s(r, "layer")?.to_string(), format!("{id:.3}"), t.s(r, "skipped")?.to_string()]);
            if id.is_finite() {
                pts.push((t.f(r, "layer")?, id));
            }
        }
        md_table(&mut md, &["layer", "ID-MLE", "skipped points"], &rows);
        if let Some(v) = read_json(&dir.join("phase_blocks.json"))? {
            let phases: Vec<String> = v["phases"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|p| p["layers"].to_string())
                .collect();
            let _ = writeln!(md, "Phases: {}.\n", phases.join(", "));
        }
        if plot.is_none() && !pts.is_empty() {
            plot = Some((vec![Series::new("ID-MLE", pts)], Axes::new("intrinsic dimension", "layer", "estimate")));
        }
    }

    if let Some(v) = read_json(&dir.join("steering.json"))? {
        found.push("steering.json");
        let _ = writeln!(md, "## Steering\n");
        if let Some(b) = v["baseline_error"].as_f64() {
            let _ = writeln!(md, "Unsteered error rate {b:.4}.\n");
        }
        let mut rows = Vec::new();
        let mut series = Vec::new();
        for d in v["directions"].as_array().into_iter().flatten() {
            rows.push(vec![
                jf(&d["direction"]),
                format!("{:+.2}", d["total_effect_pp"].as_f64().unwrap_or(f64::NAN)),
                format!("{:.3e}", d["p_value"].as_f64().unwrap_or(f64::NAN)),
                jf(&d["spearman_rho"]),
            ]);
            let xs = d["alphas"].as_array().cloned().unwrap_or_default();
            let ys = d["error_rates"].as_array().cloned().unwrap_or_default();
            let pts: Vec<(f64, f64)> = xs
                .iter()
                .zip(&ys)
                .filter_map(|(x, y)| Some((x.as_f64()?, y.as_f64()?)))
                .collect();
            if !pts.is_empty() {
                series.push(Series::new(jf(&d["direction"]), pts));
            }
        }
        md_table(&mut md, &["direction", "effect (pp)", "p", "Spearman rho"], &rows);
        if plot.is_none() && !series.is_empty() {
            plot = Some((series, Axes::new("error rate by steering strength", "alpha", "error rate")));
        }
    }

    if found.is_empty() {
        return Err(CliError::invalid(format!("no analysis artifacts found in {}", dir.display())));
    }

    let mut svgs: Vec<String> = fs::read_dir(dir)
        .map_err(|e| CliError::invalid(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".svg") && n != REPORT_SVG)
        .collect();
    svgs.sort();

    let mut out = Outputs::create(dir)?;
    if let Some((series, axes)) = plot {
        match line_svg(&series, &axes) {
            Ok(svg) => {
                out.text(REPORT_SVG, &svg)?;
                let _ = writeln!(md, "## Figures\n\n![summary]({REPORT_SVG})\n");
            }
            Err(e) => log::warn!("skipping {REPORT_SVG}: {e}"),
        }
    }
    if !svgs.is_empty() {
        if !md.contains("## Figures") {
            md.push_str("## Figures\n\n");
        }
        for s in &svgs {
            let _ = writeln!(md, "- [{s}]({s})");
        }
        md.push('\n');
    }
    let _ = writeln!(md, "Sources: {}.", found.join(", "));
    out.text(REPORT_MD, &md)?;
    Ok(out)
}
