//! Run reports, CSV tables and SVG charts.
//!
//! Everything written here is a pure function of the run results, so repeated
//! runs with the same config and seed produce byte-identical files. Wall-clock
//! time is kept out of `report.json` and written to `timing.json` instead.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::FusionCoefficients;
use crate::graph::write_labels;
use crate::metrics::ClusteringScores;
use crate::objectives::LossBreakdown;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub losses: LossBreakdown,
    /// Scores of the argmax labels at this epoch, when ground truth exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<ClusteringScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub n_nodes: usize,
    pub k: usize,
    /// `soft_assignment` (argmax of the fused Q) or `kmeans`.
    pub label_source: String,
    pub metrics: Option<ClusteringScores>,
    /// k-means on the fused embedding right after pre-training.
    pub pretrain_metrics: Option<ClusteringScores>,
    pub fusion: FusionCoefficients,
    pub config: BTreeMap<String, String>,
    pub pretrain_trace: Vec<EpochRecord>,
    pub train_trace: Vec<EpochRecord>,
    #[serde(skip)]
    pub labels: Vec<usize>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub const LOSS_CSV_HEADER: &str = "epoch,l_ae,l_f,l_s,l_pre,l_train,l_kl,total";

pub fn losses_csv(trace: &[EpochRecord]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in trace {
        let l = &r.losses;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.epoch, l.l_ae, l.l_f, l.l_s, l.l_pre, l.l_train, l.l_kl, l.total
        );
    }
    out
}

pub fn report_json(report: &RunReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

/// `report.json`, `losses.csv`, `pretrain_losses.csv`, `labels.txt` and `timing.json`.
pub fn write_run_outputs(dir: &Path, report: &RunReport) -> Result<()> {
    ensure_dir(dir)?;
    write(&dir.join("report.json"), &report_json(report)?)?;
    write(&dir.join("losses.csv"), &losses_csv(&report.train_trace))?;
    write(
        &dir.join("pretrain_losses.csv"),
        &losses_csv(&report.pretrain_trace),
    )?;
    write_labels(&dir.join("labels.txt"), &report.labels)?;
    let timing = serde_json::json!({ "wall_clock_secs": report.wall_clock_secs });
    write(
        &dir.join("timing.json"),
        &(serde_json::to_string_pretty(&timing)? + "\n"),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub alpha: f64,
    pub beta: f64,
    pub scores: ClusteringScores,
}

pub const SWEEP_CSV_HEADER: &str = "alpha,beta,acc,nmi,ari,f1";

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for c in cells {
        let s = &c.scores;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.alpha, c.beta, s.acc, s.nmi, s.ari, s.f1
        );
    }
    out
}

/// Which sweep axis runs along x.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    Beta,
}

/// One chart per axis: x is the swept weight, one line per value of the
/// other weight, y is accuracy.
pub fn sweep_svg(cells: &[SweepCell], axis: SweepAxis) -> String {
    let (swept, fixed): (fn(&SweepCell) -> f64, fn(&SweepCell) -> f64) = match axis {
        SweepAxis::Alpha => (|c| c.alpha, |c| c.beta),
        SweepAxis::Beta => (|c| c.beta, |c| c.alpha),
    };
    let (x_name, other) = match axis {
        SweepAxis::Alpha => ("alpha", "beta"),
        SweepAxis::Beta => ("beta", "alpha"),
    };
    let mut fixed_values: Vec<f64> = cells.iter().map(fixed).collect();
    fixed_values.sort_by(f64::total_cmp);
    fixed_values.dedup();

    let series: Vec<Series> = fixed_values
        .iter()
        .map(|&fv| {
            let mut pts: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| fixed(c) == fv)
                .map(|c| (swept(c), c.scores.acc))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                label: format!("{other}={fv}"),
                points: pts,
            }
        })
        .collect();
    line_chart(&format!("ACC vs {x_name}"), x_name, "ACC", &series)
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Minimal standalone SVG line chart, one `<polyline>` per series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 120.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 50.0;

    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (mut x_min, mut x_max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
        (a.min(x), b.max(x))
    });
    if !x_min.is_finite() {
        (x_min, x_max) = (0.0, 1.0);
    }
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    let (y_min, y_max) = (0.0, 1.0);
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| TOP + (1.0 - (y.clamp(y_min, y_max) - y_min) / (y_max - y_min)) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14" font-family="sans-serif">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<g stroke="black" stroke-width="1"><line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}"/></g>"#,
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h,
        TOP + plot_h
    );
    for i in 0..=4 {
        let y = y_min + (y_max - y_min) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10" font-family="sans-serif">{:.2}</text>"#,
            LEFT - 6.0,
            sy(y) + 3.0,
            y
        );
    }
    let mut ticks: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10" font-family="sans-serif">{}</text>"#,
            sx(x),
            TOP + plot_h + 15.0,
            x
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12" font-family="sans-serif">{}</text>"#,
        LEFT + plot_w / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" font-size="12" font-family="sans-serif" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{}</title></polyline>"#,
            pts.join(" "),
            escape(&s.label)
        );
        let ly = TOP + 14.0 * i as f64 + 6.0;
        let lx = LEFT + plot_w + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="10" font-family="sans-serif">{}</text>"#,
            lx + 16.0,
            lx + 20.0,
            ly + 3.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn write_sweep_outputs(dir: &Path, cells: &[SweepCell]) -> Result<()> {
    ensure_dir(dir)?;
    write(&dir.join("sweep.csv"), &sweep_csv(cells))?;
    write(
        &dir.join("sweep_alpha.svg"),
        &sweep_svg(cells, SweepAxis::Alpha),
    )?;
    write(
        &dir.join("sweep_beta.svg"),
        &sweep_svg(cells, SweepAxis::Beta),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub seed: u64,
    pub variant: String,
    pub enable_contrastive: bool,
    pub enable_multi_order: bool,
    pub report: RunReport,
}

pub const ABLATION_CSV_HEADER: &str =
    "seed,variant,enable_contrastive,enable_multi_order,acc,nmi,ari,f1,d_acc,d_nmi,d_ari,d_f1";

/// One line per (seed, variant); deltas are relative to the `base` row of the same seed.
pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut out = String::from(ABLATION_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let s = r
            .report
            .metrics
            .ok_or_else(|| Error::Config("ablation needs ground-truth labels".into()))?;
        let base = rows
            .iter()
            .find(|b| b.seed == r.seed && b.variant == "base")
            .and_then(|b| b.report.metrics)
            .unwrap_or(s);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.variant,
            r.enable_contrastive,
            r.enable_multi_order,
            s.acc,
            s.nmi,
            s.ari,
            s.f1,
            s.acc - base.acc,
            s.nmi - base.nmi,
            s.ari - base.ari,
            s.f1 - base.f1
        );
    }
    Ok(out)
}

/// Mean scores per variant, in first-appearance order.
pub fn ablation_means(rows: &[AblationRow]) -> Vec<(String, ClusteringScores)> {
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.variant) {
            order.push(r.variant.clone());
        }
    }
    order
        .into_iter()
        .map(|v| {
            let scores: Vec<ClusteringScores> = rows
                .iter()
                .filter(|r| r.variant == v)
                .filter_map(|r| r.report.metrics)
                .collect();
            let n = scores.len().max(1) as f64;
            let mean = ClusteringScores {
                acc: scores.iter().map(|s| s.acc).sum::<f64>() / n,
                nmi: scores.iter().map(|s| s.nmi).sum::<f64>() / n,
                ari: scores.iter().map(|s| s.ari).sum::<f64>() / n,
                f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
            };
            (v, mean)
        })
        .collect()
}

pub fn ablation_summary_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,mean_acc,mean_nmi,mean_ari,mean_f1\n");
    for (v, s) in ablation_means(rows) {
        let _ = writeln!(out, "{v},{},{},{},{}", s.acc, s.nmi, s.ari, s.f1);
    }
    out
}

pub fn write_ablation_outputs(dir: &Path, rows: &[AblationRow]) -> Result<()> {
    ensure_dir(dir)?;
    write(&dir.join("ablation.csv"), &ablation_csv(rows)?)?;
    write(
        &dir.join("ablation_summary.csv"),
        &ablation_summary_csv(rows),
    )?;
    let reports: Vec<&AblationRow> = rows.iter().collect();
    write(
        &dir.join("ablation_reports.json"),
        &(serde_json::to_string_pretty(&reports)? + "\n"),
    )
}
