use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Aggregates, AggregateRow, BenchConfig, BenchGrid, CellRecord, MetricKey, RankTable};
use crate::data::format_value;
use crate::error::{Error, Result};
use crate::registry::MethodId;

const NA: &str = "NA";

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format_value(x),
        _ => NA.to_string(),
    }
}

/// Raw cells, one row each. `time_s` is `NA` unless wall times are requested.
pub fn grid_csv(grid: &BenchGrid, record_wall_time: bool) -> String {
    let mut out = String::from("dataset,method,rate,replicate,nrmse,sinkhorn,mae,pev,mmd,time_s\n");
    for c in &grid.cells {
        let m = |k| opt(c.metric(k));
        let time = if record_wall_time && c.is_ok() {
            format_value(c.impute_s)
        } else {
            NA.to_string()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.dataset,
            c.method,
            format_value(c.rate),
            c.replicate,
            m(MetricKey::Nrmse),
            m(MetricKey::Sinkhorn),
            m(MetricKey::Mae),
            m(MetricKey::Pev),
            m(MetricKey::Mmd),
            time
        );
    }
    out
}

/// Wall times per cell; not reproducible across runs.
pub fn timing_csv(grid: &BenchGrid) -> String {
    let mut out = String::from("dataset,method,rate,replicate,status,impute_s,total_s\n");
    for c in &grid.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.dataset,
            c.method,
            format_value(c.rate),
            c.replicate,
            if c.is_ok() { "ok" } else { "failed" },
            format_value(c.impute_s),
            format_value(c.total_s)
        );
    }
    out
}

fn aggregate_line(out: &mut String, r: &AggregateRow) {
    let rate = r.rate.map(format_value).unwrap_or_else(|| "all".to_string());
    let m = &r.means;
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{}",
        r.dataset,
        r.method,
        rate,
        r.n_ok,
        r.n_failed,
        opt(m.nrmse),
        opt(m.sinkhorn),
        opt(m.mae),
        opt(m.pev),
        opt(m.mmd)
    );
}

/// Per-rate rows followed by the rate-averaged row (`rate = all`) for each
/// (dataset, method).
pub fn aggregate_csv(aggs: &Aggregates) -> String {
    let mut out = String::from("dataset,method,rate,n_ok,n_failed,nrmse,sinkhorn,mae,pev,mmd\n");
    for d in &aggs.per_dataset {
        for r in aggs
            .per_rate
            .iter()
            .filter(|r| r.dataset == d.dataset && r.method == d.method)
        {
            aggregate_line(&mut out, r);
        }
        aggregate_line(&mut out, d);
    }
    out
}

pub fn rank_csv(rank: &RankTable) -> String {
    let mut out = String::from("dataset,rate,rank,method,nrmse,sinkhorn,mae,pev,mmd\n");
    for e in &rank.entries {
        let m = &e.means;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.dataset,
            e.rate.map(format_value).unwrap_or_else(|| "all".to_string()),
            e.rank,
            e.method,
            opt(m.nrmse),
            opt(m.sinkhorn),
            opt(m.mae),
            opt(m.pev),
            opt(m.mmd)
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMetric {
    Mae,
    Mmd,
}

impl PlotMetric {
    fn key(self) -> MetricKey {
        match self {
            PlotMetric::Mae => MetricKey::Mae,
            PlotMetric::Mmd => MetricKey::Mmd,
        }
    }

    fn label(self) -> &'static str {
        match self {
            PlotMetric::Mae => "MAE",
            PlotMetric::Mmd => "MMD",
        }
    }
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#bcbd22", "#17becf", "#aec7e8",
];

fn series_style(method: MethodId, index: usize) -> (&'static str, f64) {
    match method {
        MethodId::Pain => ("#000000", 2.5),
        MethodId::MissForest => ("#808080", 1.8),
        _ => (PALETTE[index % PALETTE.len()], 1.5),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Metric-versus-rate line plot for one dataset: one polyline per method,
/// PAIN drawn last.
pub fn line_plot_svg(aggs: &Aggregates, dataset: &str, methods: &[MethodId], metric: PlotMetric) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let rows: Vec<&AggregateRow> = aggs.per_rate.iter().filter(|r| r.dataset == dataset).collect();
    let mut rates: Vec<f64> = rows.iter().filter_map(|r| r.rate).collect();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    let values: Vec<f64> = rows.iter().filter_map(|r| r.means.get(metric.key())).filter(|v| v.is_finite()).collect();
    let (x0, x1) = match (rates.first(), rates.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a - 0.05, a + 0.05),
        _ => (0.0, 1.0),
    };
    let y1 = values.iter().copied().fold(0.0, f64::max);
    let y1 = if y1 > 0.0 { y1 * 1.05 } else { 1.0 };
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - y / y1 * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{} vs missing rate: {}</text>"#,
        left + pw / 2.0,
        metric.label(),
        escape(dataset)
    );
    let _ = writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{left}" y1="{}" x2="{}" y2="{}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{}"/></g>"#,
        top + ph,
        left + pw,
        top + ph,
        top + ph
    );
    for &r in &rates {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}%</text>"#,
            sx(r),
            top + ph + 18.0,
            format_value((r * 1000.0).round() / 10.0)
        );
    }
    for i in 0..=5 {
        let v = y1 * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.3}</text><line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#dddddd"/>"##,
            left - 6.0,
            sy(v) + 4.0,
            v,
            sy(v),
            left + pw,
            sy(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">missing rate</text>"#,
        left + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        metric.label()
    );

    let mut order: Vec<(usize, MethodId)> = methods.iter().copied().enumerate().filter(|(_, m)| *m != MethodId::Pain).collect();
    if let Some(i) = methods.iter().position(|m| *m == MethodId::Pain) {
        order.push((i, MethodId::Pain));
    }
    for (slot, &(i, m)) in order.iter().enumerate() {
        let (color, width) = series_style(m, i);
        let mut pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.method == m)
            .filter_map(|r| Some((r.rate?, r.means.get(metric.key()).filter(|v| v.is_finite())?)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let points: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline data-method="{m}" fill="none" stroke="{color}" stroke-width="{width}" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 10.0 + 18.0 * slot as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="{width}"/><text x="{}" y="{}">{m}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedCell {
    pub dataset: String,
    pub method: MethodId,
    pub rate: f64,
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub toolkit_version: String,
    pub config_fingerprint: String,
    pub datasets: Vec<String>,
    pub methods: Vec<MethodId>,
    pub rates: Vec<f64>,
    pub n_reps: usize,
    pub n_cells: usize,
    pub n_failed: usize,
    pub failures: Vec<FailedCell>,
    pub rank_rule: String,
    pub rank: RankTable,
    pub aggregates: Aggregates,
}

impl Summary {
    pub fn new(grid: &BenchGrid, aggs: &Aggregates, rank: &RankTable) -> Self {
        let failures: Vec<FailedCell> = grid
            .failed()
            .map(|c: &CellRecord| FailedCell {
                dataset: c.dataset.clone(),
                method: c.method,
                rate: c.rate,
                replicate: c.replicate,
                error: c.error.clone().unwrap_or_default(),
            })
            .collect();
        Summary {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config_fingerprint: grid.config_fingerprint.clone(),
            datasets: grid.datasets.clone(),
            methods: grid.methods.clone(),
            rates: grid.rates.clone(),
            n_reps: grid.n_reps,
            n_cells: grid.cells.len(),
            n_failed: failures.len(),
            failures,
            rank_rule: rank.rule.clone(),
            rank: rank.clone(),
            aggregates: aggs.clone(),
        }
    }
}

fn write(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes grid, aggregate, rank and timing tables, the per-dataset plots
/// and `summary.json` into `out_dir`.
pub fn emit_report(
    grid: &BenchGrid,
    aggs: &Aggregates,
    rank: &RankTable,
    config: &BenchConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    write(out_dir, "grid.csv", &grid_csv(grid, config.record_wall_time), &mut written)?;
    write(out_dir, "aggregate.csv", &aggregate_csv(aggs), &mut written)?;
    write(out_dir, "rank.csv", &rank_csv(rank), &mut written)?;
    write(out_dir, "timing.csv", &timing_csv(grid), &mut written)?;
    for d in &grid.datasets {
        for (metric, prefix) in [(PlotMetric::Mae, "mae"), (PlotMetric::Mmd, "mmd")] {
            let svg = line_plot_svg(aggs, d, &grid.methods, metric);
            write(out_dir, &format!("{prefix}_{}.svg", file_stem(d)), &svg, &mut written)?;
        }
    }
    let summary = Summary::new(grid, aggs, rank);
    write(out_dir, "summary.json", &serde_json::to_string_pretty(&summary)?, &mut written)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::super::{aggregate, rank_best, RankRule};
    use super::*;
    use crate::metrics::{AggregateMetrics, MetricReport};

    fn grid() -> BenchGrid {
        let methods = vec![MethodId::Pain, MethodId::Mean, MethodId::MissForest];
        let mut cells = Vec::new();
        for (mi, &m) in methods.iter().enumerate() {
            for &r in &[0.1, 0.2] {
                for rep in 0..2 {
                    let v = 0.1 * (mi + 1) as f64 + r + 0.01 * rep as f64;
                    cells.push(CellRecord {
                        dataset: "d<1>".into(),
                        method: m,
                        rate: r,
                        replicate: rep,
                        seed: 1,
                        mask_seed: 2,
                        achieved_rate: Some(r),
                        report: Some(MetricReport {
                            per_column: vec![],
                            aggregate: AggregateMetrics {
                                nrmse: Some(v),
                                sinkhorn: Some(v),
                                mae: Some(v),
                                pev: None,
                                mmd: Some(v / 2.0),
                            },
                            wall_time_s: 0.5,
                            sinkhorn_unconverged: 0,
                            full_rows: None,
                            notes: vec![],
                        }),
                        error: None,
                        impute_s: 0.5,
                        total_s: 0.6,
                    });
                }
            }
        }
        BenchGrid {
            datasets: vec!["d<1>".into()],
            methods,
            rates: vec![0.1, 0.2],
            n_reps: 2,
            config_fingerprint: "f".into(),
            cells,
        }
    }

    #[test]
    fn grid_csv_shape() {
        let g = grid();
        let text = grid_csv(&g, false);
        assert_eq!(text.lines().count(), g.cells.len() + 1);
        assert!(text.lines().skip(1).all(|l| l.ends_with(",NA") && l.split(',').count() == 10));
        assert!(grid_csv(&g, true).lines().nth(1).unwrap().ends_with(",0.5"));
    }

    #[test]
    fn svg_series_count_and_order() {
        let g = grid();
        let a = aggregate(&g);
        let svg = line_plot_svg(&a, "d<1>", &g.methods, PlotMetric::Mae);
        assert_eq!(svg.matches("<polyline").count(), 3);
        let last = svg.rfind("<polyline").unwrap();
        assert!(svg[last..].starts_with(r##"<polyline data-method="pain" fill="none" stroke="#000000""##));
        assert!(svg.contains(r##"data-method="missforest" fill="none" stroke="#808080""##));
        assert!(svg.contains("d&lt;1&gt;"));
        assert_eq!(svg, line_plot_svg(&a, "d<1>", &g.methods, PlotMetric::Mae));
    }

    #[test]
    fn aggregate_and_rank_tables() {
        let g = grid();
        let a = aggregate(&g);
        let text = aggregate_csv(&a);
        assert_eq!(text.lines().count(), 1 + 3 * 3);
        let r = rank_best(&a, &RankRule::default());
        let rank = rank_csv(&r);
        let first: Vec<&str> = rank.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(&first[..4], &["d<1>", "all", "1", "pain"]);
    }

    #[test]
    fn emit_is_repeatable() {
        let g = grid();
        let a = aggregate(&g);
        let r = rank_best(&a, &RankRule::default());
        let cfg = BenchConfig::from_json(
            r#"{"datasets": [{"name": "x", "synthetic": {"generator": "correlated_gaussian", "rows": 20, "cols": 3}}], "methods": ["mean"]}"#,
            Path::new("."),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&g, &a, &r, &cfg, dir.path()).unwrap();
        assert!(files.iter().any(|p| p.ends_with("mae_d_1_.svg")));
        let first = fs::read(dir.path().join("grid.csv")).unwrap();
        emit_report(&g, &a, &r, &cfg, dir.path()).unwrap();
        assert_eq!(first, fs::read(dir.path().join("grid.csv")).unwrap());
        let blocked = dir.path().join("grid.csv").join("sub");
        assert!(emit_report(&g, &a, &r, &cfg, &blocked).is_err());
    }
}
