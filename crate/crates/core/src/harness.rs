//! Running condition × seed matrices, aggregating them, and writing result
//! files: one JSON record per run, summary tables, landscape SVGs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::experiment::{
    apply_overrides, check_override_scope, select_overrides, Condition, Domain, ExperimentReport,
    Overrides, RunOutput, RunSpec, RunStatus, Snapshot,
};
use crate::rrw::{run_rrw, RrwConfig};
use crate::toy::{run_toy, ToyConfig};

/// Checks a spec without running it: condition, override scope and every
/// override key and value.
pub fn validate_spec(spec: &RunSpec) -> Result<()> {
    spec.validate()?;
    check_override_scope(&spec.overrides, spec.domain)?;
    apply_overrides(&EngineConfig::default(), &select_overrides(&spec.overrides, None))?.validate()?;
    match spec.domain {
        Domain::Toy => {
            apply_overrides(&ToyConfig::default(), &select_overrides(&spec.overrides, Some("toy")))?.validate()?;
        }
        Domain::Rrw => {
            apply_overrides(&RrwConfig::default(), &select_overrides(&spec.overrides, Some("rrw")))?.validate()?;
        }
    }
    Ok(())
}

pub fn run_spec(spec: &RunSpec) -> Result<RunOutput> {
    match spec.domain {
        Domain::Toy => run_toy(spec),
        Domain::Rrw => run_rrw(spec),
    }
}

/// A finished run and its wall time. Wall time stays out of the report.
#[derive(Debug, Clone)]
pub struct TimedRun {
    pub output: RunOutput,
    pub wall_seconds: f64,
}

/// Runs one spec; errors and panics become a failed report.
pub fn run_guarded(spec: &RunSpec) -> TimedRun {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(|| run_spec(spec)));
    let output = match result {
        Ok(Ok(out)) => out,
        Ok(Err(e)) => RunOutput {
            report: ExperimentReport::failed(spec.clone(), e.to_string()),
            snapshots: Vec::new(),
        },
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "run panicked".into());
            RunOutput {
                report: ExperimentReport::failed(spec.clone(), format!("panic: {msg}")),
                snapshots: Vec::new(),
            }
        }
    };
    TimedRun {
        output,
        wall_seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every spec on a pool of `parallelism` threads. Output order follows
/// `specs`, whatever the completion order.
pub fn run_matrix(specs: &[RunSpec], parallelism: usize) -> Result<Vec<TimedRun>> {
    use rayon::prelude::*;
    if specs.is_empty() {
        return Err(Error::InvalidArgument("empty run matrix".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| specs.par_iter().map(run_guarded).collect()))
}

/// Specs for `seeds` consecutive seeds starting at `seed_base`.
pub fn seed_specs(
    domain: Domain,
    condition: Condition,
    seed_base: u64,
    seeds: u64,
    overrides: &Overrides,
    snapshots: bool,
) -> Vec<RunSpec> {
    (seed_base..seed_base + seeds)
        .map(|seed| RunSpec {
            overrides: overrides.clone(),
            snapshots,
            ..RunSpec::new(domain, condition, seed)
        })
        .collect()
}

/// Every condition of the domain over the same seeds.
pub fn ablation_specs(domain: Domain, seed_base: u64, seeds: u64, overrides: &Overrides) -> Vec<RunSpec> {
    domain
        .conditions()
        .iter()
        .flat_map(|&c| seed_specs(domain, c, seed_base, seeds, overrides, false))
        .collect()
}

/// Mean with sample standard deviation; `std` is `None` for a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        Some(Stat { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub domain: Domain,
    pub condition: Condition,
    pub runs: usize,
    pub failed: usize,
    pub acc_a_end: Option<Stat>,
    pub acc_a_final: Option<Stat>,
    pub bt_a: Option<Stat>,
    pub acc_last: Option<Stat>,
}

/// One row per (domain, condition) present, in the fixed condition order.
/// Failed runs are counted but contribute no metrics.
pub fn aggregate(reports: &[ExperimentReport]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Domain, usize), Vec<&ExperimentReport>> = BTreeMap::new();
    for r in reports {
        let order = r
            .spec
            .domain
            .conditions()
            .iter()
            .position(|c| *c == r.spec.condition)
            .unwrap_or(usize::MAX);
        groups.entry((r.spec.domain, order)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let ok: Vec<_> = rs.iter().filter_map(|r| r.metrics.as_ref()).collect();
            let col = |f: fn(&crate::experiment::Metrics) -> f64| Stat::of(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
            SummaryRow {
                domain: rs[0].spec.domain,
                condition: rs[0].spec.condition,
                runs: rs.len(),
                failed: rs.iter().filter(|r| r.status == RunStatus::Failed).count(),
                acc_a_end: col(|m| m.acc_a),
                acc_a_final: col(|m| m.acc_a_final),
                bt_a: col(|m| m.bt_a),
                acc_last: col(|m| m.acc_last),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::InvalidArgument(format!("unknown format '{other}'"))),
        }
    }
}

pub fn report_json(report: &ExperimentReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_report(text: &str) -> Result<ExperimentReport> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `<dir>/<domain>_<condition>_<seed>.json`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(format!("{}.json", report.spec.file_stem()));
    write_file(&path, &(report_json(report)? + "\n"))?;
    Ok(path)
}

/// Every run record in `dir`, sorted by file name. Other JSON files are skipped.
pub fn read_reports(dir: &Path) -> Result<Vec<ExperimentReport>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        if let Ok(r) = parse_report(&text) {
            out.push(r);
        }
    }
    Ok(out)
}

/// Header of the final-phase accuracy column.
fn last_label(domain: Domain) -> &'static str {
    match domain {
        Domain::Toy => "Acc_B",
        Domain::Rrw => "Acc_C",
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x:.3}")
}

fn fmt_signed(x: f64) -> String {
    format!("{x:+.3}")
}

fn fmt_stat(s: Option<Stat>, signed: bool) -> String {
    match s {
        None => "n/a".into(),
        Some(s) => {
            let m = if signed { fmt_signed(s.mean) } else { fmt_num(s.mean) };
            match s.std {
                Some(sd) => format!("{m} ± {}", fmt_num(sd)),
                None => format!("{m} ± n/a"),
            }
        }
    }
}

/// `Condition | Acc_A | BT_A | Acc_B/Acc_C`, one table per domain. `Acc_A`
/// is measured after the final phase.
pub fn summary_markdown(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let mut domains: Vec<Domain> = rows.iter().map(|r| r.domain).collect();
    domains.dedup();
    for (i, d) in domains.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "| Condition | Acc_A | BT_A | {} |", last_label(*d));
        out.push_str("|---|---|---|---|\n");
        for r in rows.iter().filter(|r| r.domain == *d) {
            let label = if r.failed > 0 {
                format!("{} ({} failed)", r.condition.label(), r.failed)
            } else {
                r.condition.label().to_string()
            };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                label,
                fmt_stat(r.acc_a_final, false),
                fmt_stat(r.bt_a, true),
                fmt_stat(r.acc_last, false)
            );
        }
    }
    out
}

/// One header line plus one line per row. Missing values are empty cells.
pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record([
        "domain",
        "condition",
        "runs",
        "failed",
        "acc_a_end_mean",
        "acc_a_end_std",
        "acc_a_final_mean",
        "acc_a_final_std",
        "bt_a_mean",
        "bt_a_std",
        "acc_last_mean",
        "acc_last_std",
    ])
    .map_err(csv_err)?;
    let cells = |s: Option<Stat>| -> [String; 2] {
        match s {
            None => [String::new(), String::new()],
            Some(s) => [format!("{:.6}", s.mean), s.std.map(|v| format!("{v:.6}")).unwrap_or_default()],
        }
    };
    for r in rows {
        let mut rec = vec![
            r.domain.name().to_string(),
            r.condition.name().to_string(),
            r.runs.to_string(),
            r.failed.to_string(),
        ];
        for s in [r.acc_a_end, r.acc_a_final, r.bt_a, r.acc_last] {
            rec.extend(cells(s));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn render_summary(rows: &[SummaryRow], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => summary_csv(rows),
        ReportFormat::Markdown => Ok(summary_markdown(rows)),
        ReportFormat::Json => serde_json::to_string_pretty(rows).map_err(|e| Error::Parse(e.to_string())),
    }
}

/// Writes `summary.csv` or `summary.md` (or `summary.json`) into `dir`.
pub fn write_summary(rows: &[SummaryRow], dir: &Path, format: ReportFormat) -> Result<PathBuf> {
    let name = match format {
        ReportFormat::Csv => "summary.csv",
        ReportFormat::Markdown => "summary.md",
        ReportFormat::Json => "summary.json",
    };
    let path = dir.join(name);
    write_file(&path, &render_summary(rows, format)?)?;
    Ok(path)
}

/// Appends `file_stem,wall_seconds` lines to `<dir>/timing.csv`.
pub fn write_timings(runs: &[TimedRun], dir: &Path) -> Result<PathBuf> {
    let path = dir.join("timing.csv");
    let mut text = String::from("run,wall_seconds\n");
    for r in runs {
        let _ = writeln!(text, "{},{:.3}", r.output.report.spec.file_stem(), r.wall_seconds);
    }
    write_file(&path, &text)?;
    Ok(path)
}

/// Blue (negative) to white (zero) to red (positive), with `t` in `[-1, 1]`.
fn diverging(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(-1.0, 1.0);
    let fade = |c: f64| (255.0 - (255.0 - c) * t.abs()).round() as u8;
    if t >= 0.0 {
        (fade(178.0), fade(24.0), fade(43.0))
    } else {
        (fade(33.0), fade(102.0), fade(172.0))
    }
}

pub const SVG_CELL: f64 = 8.0;
const LEGEND_HEIGHT: f64 = 40.0;

/// Pixel position of a landscape point, origin at the top-left corner.
pub fn svg_position(snapshot: &Snapshot, x: f64, y: f64) -> (f64, f64) {
    let size = snapshot.resolution as f64 * SVG_CELL;
    let e = snapshot.extent;
    ((x + e) / (2.0 * e) * size, (e - y) / (2.0 * e) * size)
}

/// Color-mapped preference field with particle markers: filled for
/// crystallized, open for transient, grey for gated off.
pub fn landscape_svg(snapshot: &Snapshot) -> Result<String> {
    let n = snapshot.resolution;
    if n == 0 || snapshot.values.len() != n * n {
        return Err(Error::InvalidArgument("snapshot grid is empty or not square".into()));
    }
    let size = n as f64 * SVG_CELL;
    let scale = snapshot.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" viewBox="0 0 {size} {}">"#,
        size + LEGEND_HEIGHT,
        size + LEGEND_HEIGHT
    );
    for (i, v) in snapshot.values.iter().enumerate() {
        let t = if scale > 0.0 { v / scale } else { 0.0 };
        let (r, g, b) = diverging(t);
        let _ = writeln!(
            s,
            r#"<rect class="cell" x="{}" y="{}" width="{SVG_CELL}" height="{SVG_CELL}" fill="rgb({r},{g},{b})"/>"#,
            (i % n) as f64 * SVG_CELL,
            (i / n) as f64 * SVG_CELL
        );
    }
    for p in &snapshot.particles {
        let (cx, cy) = svg_position(snapshot, p.x, p.y);
        let (fill, stroke) = if !p.readable {
            ("#999999", "#999999")
        } else if p.crystallized {
            ("#000000", "#000000")
        } else {
            ("none", "#000000")
        };
        let _ = writeln!(
            s,
            r#"<circle class="particle" cx="{cx:.2}" cy="{cy:.2}" r="4" fill="{fill}" stroke="{stroke}" stroke-width="1.5"/>"#
        );
    }
    let ly = size + 14.0;
    let _ = writeln!(
        s,
        r#"<g font-family="sans-serif" font-size="11"><text x="4" y="{ly}">phase {} epoch {}, field range ±{scale:.3}</text>"#,
        snapshot.phase, snapshot.epoch
    );
    let ly2 = size + 30.0;
    let _ = writeln!(
        s,
        r##"<circle cx="10" cy="{}" r="4" fill="#000000"/><text x="18" y="{ly2}">crystallized</text><circle cx="100" cy="{}" r="4" fill="none" stroke="#000000"/><text x="108" y="{ly2}">transient</text><circle cx="180" cy="{}" r="4" fill="#999999"/><text x="188" y="{ly2}">gated off</text></g>"##,
        ly2 - 4.0,
        ly2 - 4.0,
        ly2 - 4.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_landscape_svg(snapshot: &Snapshot, path: &Path) -> Result<()> {
    write_file(path, &landscape_svg(snapshot)?)
}

/// Writes every snapshot of a run under `<dir>/<stem>/`.
pub fn write_snapshots(output: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    let sub = dir.join(output.report.spec.file_stem());
    output
        .snapshots
        .iter()
        .map(|snap| {
            let p = sub.join(format!("phase{}_epoch{:02}.svg", snap.phase, snap.epoch + 1));
            write_landscape_svg(snap, &p)?;
            Ok(p)
        })
        .collect()
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Overrides) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out)?,
            other => {
                let json = serde_json::to_value(other).map_err(|e| Error::Parse(e.to_string()))?;
                out.insert(key, json);
            }
        }
    }
    Ok(())
}

/// Parses a flat `key = value` config file. Domain keys may be written as
/// `toy.kappa = 0.5` or under a `[toy]` table.
pub fn parse_config(text: &str) -> Result<Overrides> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    let mut out = Overrides::new();
    flatten("", &table, &mut out)?;
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<Overrides> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// File values first, then command-line assignments on top.
pub fn merge_overrides(file: Overrides, cli: Overrides) -> Overrides {
    let mut out = file;
    out.extend(cli);
    out
}
