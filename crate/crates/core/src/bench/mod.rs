//! Benchmark grid over datasets, methods, missingness rates and replicates,
//! with aggregation, ranking and report emission.

mod report;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use report::{aggregate_csv, emit_report, grid_csv, line_plot_svg, rank_csv, timing_csv, PlotMetric, Summary};

use crate::amputation::{ampute, mask_seed, Mechanism, MissingMask, GRID_RATES};
use crate::data::{table_to_csv, DataTable, DatasetEntry, DatasetManifest};
use crate::error::{Error, Result};
use crate::imputation::ImputationResult;
use crate::metrics::{evaluate, EvalOptions, MetricReport};
use crate::registry::{run_method, MethodConfig, MethodId};
use crate::seed::SeedBuilder;

fn default_rates() -> Vec<f64> {
    GRID_RATES.to_vec()
}

fn default_reps() -> usize {
    5
}

fn default_mechanism() -> Mechanism {
    Mechanism::Mar
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKey {
    Nrmse,
    Sinkhorn,
    Mae,
    Pev,
    Mmd,
}

impl MetricKey {
    pub fn name(self) -> &'static str {
        match self {
            MetricKey::Nrmse => "nrmse",
            MetricKey::Sinkhorn => "sinkhorn",
            MetricKey::Mae => "mae",
            MetricKey::Pev => "pev",
            MetricKey::Mmd => "mmd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankRule {
    /// Compared in order; lower is better except for PEV.
    pub keys: Vec<MetricKey>,
    /// Rank each rate separately instead of the rate-averaged view.
    pub per_rate: bool,
}

impl Default for RankRule {
    fn default() -> Self {
        RankRule {
            keys: vec![MetricKey::Nrmse, MetricKey::Sinkhorn, MetricKey::Mmd],
            per_rate: false,
        }
    }
}

impl RankRule {
    pub fn describe(&self) -> String {
        let keys: Vec<&str> = self.keys.iter().map(|k| k.name()).collect();
        format!(
            "lexicographic ({}), lower is better (pev: higher), missing values last; ties by mae then method id; {}",
            keys.join(", "),
            if self.per_rate { "per rate" } else { "averaged over rates" }
        )
    }
}

/// Bench configuration, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Dataset manifest; relative paths resolve against the config file.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Datasets listed inline, appended after the manifest's.
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
    pub methods: Vec<MethodId>,
    #[serde(default = "default_rates")]
    pub rates: Vec<f64>,
    #[serde(default = "default_reps")]
    pub n_reps: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Worker threads; `None` uses every available core.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_mechanism")]
    pub mechanism: Mechanism,
    /// Method hyperparameter overrides keyed like `forest.n_trees`.
    #[serde(default)]
    pub overrides: BTreeMap<String, Value>,
    /// Write wall times into `grid.csv` (which then stops being reproducible).
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub rank: RankRule,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl BenchConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: BenchConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BenchConfig::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn method_config(&self) -> Result<MethodConfig> {
        MethodConfig::with_overrides(&self.overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.methods.is_empty() {
            return bad("`methods` is empty".into());
        }
        let mut seen = HashSet::new();
        for m in &self.methods {
            if !seen.insert(*m) {
                return bad(format!("method `{m}` listed twice"));
            }
        }
        if self.rates.is_empty() {
            return bad("`rates` is empty".into());
        }
        for &r in &self.rates {
            if !(r > 0.0 && r <= 0.5) {
                return bad(format!("rate {r} outside (0, 0.5]"));
            }
        }
        let mut sorted = self.rates.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() != self.rates.len() {
            return bad("`rates` contains duplicates".into());
        }
        if self.n_reps == 0 {
            return bad("`n_reps` must be >= 1".into());
        }
        if self.workers == Some(0) {
            return bad("`workers` must be >= 1".into());
        }
        if self.mechanism == Mechanism::External {
            return bad("`mechanism` must be mcar or mar".into());
        }
        if self.manifest.is_none() && self.datasets.is_empty() {
            return bad("no datasets: give `manifest` or `datasets`".into());
        }
        if self.rank.keys.is_empty() {
            return bad("`rank.keys` is empty".into());
        }
        self.eval.sinkhorn.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.method_config()?;
        Ok(())
    }

    /// Manifest datasets followed by inline ones, with paths resolved.
    pub fn resolve_datasets(&self) -> Result<Vec<DatasetEntry>> {
        let mut out = Vec::new();
        if let Some(m) = &self.manifest {
            let path = if m.is_relative() { self.base_dir.join(m) } else { m.clone() };
            out.extend(DatasetManifest::load(&path)?.datasets);
        }
        let mut inline = DatasetManifest {
            datasets: self.datasets.clone(),
        };
        inline.resolve_paths(&self.base_dir);
        out.extend(inline.datasets);
        let mut names = HashSet::new();
        for d in &out {
            if !names.insert(d.name.clone()) {
                return Err(Error::Config(format!("dataset `{}` listed twice", d.name)));
            }
        }
        Ok(out)
    }

    pub fn n_cells(&self, n_datasets: usize) -> usize {
        n_datasets * self.methods.len() * self.rates.len() * self.n_reps
    }

    fn worker_count(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
    }
}

/// Seed handed to the imputer of one grid cell.
pub fn method_seed(base_seed: u64, dataset: &str, rate: f64, replicate: usize, method: MethodId) -> u64 {
    SeedBuilder::new(base_seed)
        .str("method")
        .str(dataset)
        .f64(rate)
        .u64(replicate as u64)
        .str(method.id())
        .finish()
}

/// One planned cell. Masks depend on (dataset, rate, replicate) only, so
/// all methods in a cell group see the same holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPlan {
    pub dataset: String,
    pub method: MethodId,
    pub rate: f64,
    pub replicate: usize,
    pub mask_seed: u64,
    pub method_seed: u64,
}

pub fn plan_cells(config: &BenchConfig, datasets: &[String]) -> Vec<CellPlan> {
    let mut out = Vec::with_capacity(config.n_cells(datasets.len()));
    for d in datasets {
        for &method in &config.methods {
            for &rate in &config.rates {
                for rep in 0..config.n_reps {
                    out.push(CellPlan {
                        dataset: d.clone(),
                        method,
                        rate,
                        replicate: rep,
                        mask_seed: mask_seed(config.base_seed, d, rate, rep),
                        method_seed: method_seed(config.base_seed, d, rate, rep, method),
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub dataset: String,
    pub method: MethodId,
    pub rate: f64,
    pub replicate: usize,
    pub seed: u64,
    pub mask_seed: u64,
    pub achieved_rate: Option<f64>,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
    pub impute_s: f64,
    pub total_s: f64,
}

impl CellRecord {
    pub fn is_ok(&self) -> bool {
        self.report.is_some()
    }

    pub fn metric(&self, key: MetricKey) -> Option<f64> {
        let agg = &self.report.as_ref()?.aggregate;
        match key {
            MetricKey::Nrmse => agg.nrmse,
            MetricKey::Sinkhorn => agg.sinkhorn,
            MetricKey::Mae => agg.mae,
            MetricKey::Pev => agg.pev,
            MetricKey::Mmd => agg.mmd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchGrid {
    pub datasets: Vec<String>,
    pub methods: Vec<MethodId>,
    pub rates: Vec<f64>,
    pub n_reps: usize,
    pub config_fingerprint: String,
    pub cells: Vec<CellRecord>,
}

impl BenchGrid {
    pub fn failed(&self) -> impl Iterator<Item = &CellRecord> {
        self.cells.iter().filter(|c| !c.is_ok())
    }
}

/// Amputes, imputes and scores one cell.
pub fn run_cell(
    table: &DataTable,
    mask: &MissingMask,
    method: MethodId,
    config: &MethodConfig,
    seed: u64,
    eval: &EvalOptions,
) -> Result<(ImputationResult, MetricReport)> {
    let result = run_method(table, mask, method, config, seed)?;
    let report = evaluate(table, &result.completed, mask, result.wall_time_s, eval)?;
    Ok((result, report))
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

/// Runs one planned cell from scratch; never panics.
pub fn execute_plan(
    plan: &CellPlan,
    table: &DataTable,
    mechanism: Mechanism,
    config: &MethodConfig,
    eval: &EvalOptions,
) -> CellRecord {
    let started = Instant::now();
    let mut record = CellRecord {
        dataset: plan.dataset.clone(),
        method: plan.method,
        rate: plan.rate,
        replicate: plan.replicate,
        seed: plan.method_seed,
        mask_seed: plan.mask_seed,
        achieved_rate: None,
        report: None,
        error: None,
        impute_s: 0.0,
        total_s: 0.0,
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<(f64, ImputationResult, MetricReport)> {
        let mut mask = ampute(table, mechanism, plan.rate, plan.mask_seed)?;
        mask.replicate = plan.replicate;
        let (res, rep) = run_cell(table, &mask, plan.method, config, plan.method_seed, eval)?;
        Ok((mask.achieved_rate(), res, rep))
    }));
    match outcome {
        Ok(Ok((achieved, res, rep))) => {
            record.achieved_rate = Some(achieved);
            record.impute_s = res.wall_time_s;
            record.report = Some(rep);
        }
        Ok(Err(e)) => record.error = Some(e.to_string()),
        Err(p) => record.error = Some(format!("panic: {}", panic_message(p))),
    }
    record.total_s = started.elapsed().as_secs_f64();
    record
}

fn fingerprint(config: &BenchConfig, tables: &[DataTable]) -> Result<String> {
    let mut canonical = config.clone();
    canonical.workers = None;
    let mut h = Sha256::new();
    h.update(serde_json::to_string(&canonical)?.as_bytes());
    for t in tables {
        h.update(t.name().as_bytes());
        h.update(table_to_csv(t).as_bytes());
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn load_tables(config: &BenchConfig) -> Result<Vec<DataTable>> {
    config.resolve_datasets()?.iter().map(|d| d.load()).collect()
}

/// Runs the whole grid. Configuration and dataset errors abort; cell
/// failures are recorded in the returned grid.
pub fn run_grid(config: &BenchConfig) -> Result<BenchGrid> {
    run_grid_with(config, &|_, _, _| {})
}

/// As [`run_grid`], calling `progress(cell, done, total)` after each cell.
pub fn run_grid_with(
    config: &BenchConfig,
    progress: &(dyn Fn(&CellRecord, usize, usize) + Sync),
) -> Result<BenchGrid> {
    config.validate()?;
    let method_cfg = config.method_config()?;
    let tables = load_tables(config)?;
    let names: Vec<String> = tables.iter().map(|t| t.name().to_string()).collect();
    let by_name: HashMap<&str, &DataTable> = tables.iter().map(|t| (t.name(), t)).collect();
    let plans = plan_cells(config, &names);
    let total = plans.len();
    let done = AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.worker_count())
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let cells: Vec<CellRecord> = pool.install(|| {
        plans
            .par_iter()
            .map(|p| {
                let rec = execute_plan(p, by_name[p.dataset.as_str()], config.mechanism, &method_cfg, &config.eval);
                let n = done.fetch_add(1, Ordering::SeqCst) + 1;
                progress(&rec, n, total);
                rec
            })
            .collect()
    });
    Ok(BenchGrid {
        datasets: names,
        methods: config.methods.clone(),
        rates: config.rates.clone(),
        n_reps: config.n_reps,
        config_fingerprint: fingerprint(config, &tables)?,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricMeans {
    pub nrmse: Option<f64>,
    pub sinkhorn: Option<f64>,
    pub mae: Option<f64>,
    pub pev: Option<f64>,
    pub mmd: Option<f64>,
}

impl MetricMeans {
    pub fn get(&self, key: MetricKey) -> Option<f64> {
        match key {
            MetricKey::Nrmse => self.nrmse,
            MetricKey::Sinkhorn => self.sinkhorn,
            MetricKey::Mae => self.mae,
            MetricKey::Pev => self.pev,
            MetricKey::Mmd => self.mmd,
        }
    }

    fn set(&mut self, key: MetricKey, v: Option<f64>) {
        match key {
            MetricKey::Nrmse => self.nrmse = v,
            MetricKey::Sinkhorn => self.sinkhorn = v,
            MetricKey::Mae => self.mae = v,
            MetricKey::Pev => self.pev = v,
            MetricKey::Mmd => self.mmd = v,
        }
    }
}

pub const ALL_METRICS: [MetricKey; 5] = [
    MetricKey::Nrmse,
    MetricKey::Sinkhorn,
    MetricKey::Mae,
    MetricKey::Pev,
    MetricKey::Mmd,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub method: MethodId,
    /// `None` for the view averaged over rates.
    pub rate: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
    pub means: MetricMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    /// Mean over replicates per (dataset, method, rate).
    pub per_rate: Vec<AggregateRow>,
    /// Mean of the per-rate means per (dataset, method).
    pub per_dataset: Vec<AggregateRow>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Means over successful replicates; failed cells and undefined metrics
/// are excluded and counted.
pub fn aggregate(grid: &BenchGrid) -> Aggregates {
    let mut groups: HashMap<(&str, MethodId, u64), Vec<&CellRecord>> = HashMap::new();
    for c in &grid.cells {
        groups.entry((c.dataset.as_str(), c.method, c.rate.to_bits())).or_default().push(c);
    }
    for cells in groups.values_mut() {
        cells.sort_by_key(|c| c.replicate);
    }
    let mut per_rate = Vec::new();
    let mut per_dataset = Vec::new();
    for d in &grid.datasets {
        for &m in &grid.methods {
            let mut rate_rows = Vec::new();
            for &r in &grid.rates {
                let Some(cells) = groups.get(&(d.as_str(), m, r.to_bits())) else {
                    continue;
                };
                let mut means = MetricMeans::default();
                for k in ALL_METRICS {
                    means.set(k, mean_of(cells.iter().map(|c| c.metric(k))));
                }
                let n_ok = cells.iter().filter(|c| c.is_ok()).count();
                rate_rows.push(AggregateRow {
                    dataset: d.clone(),
                    method: m,
                    rate: Some(r),
                    n_ok,
                    n_failed: cells.len() - n_ok,
                    means,
                });
            }
            if rate_rows.is_empty() {
                continue;
            }
            let mut means = MetricMeans::default();
            for k in ALL_METRICS {
                means.set(k, mean_of(rate_rows.iter().map(|r| r.means.get(k))));
            }
            per_dataset.push(AggregateRow {
                dataset: d.clone(),
                method: m,
                rate: None,
                n_ok: rate_rows.iter().map(|r| r.n_ok).sum(),
                n_failed: rate_rows.iter().map(|r| r.n_failed).sum(),
                means,
            });
            per_rate.extend(rate_rows);
        }
    }
    Aggregates { per_rate, per_dataset }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub dataset: String,
    pub rate: Option<f64>,
    pub rank: usize,
    pub method: MethodId,
    pub means: MetricMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub rule: String,
    /// Full ordering per (dataset, rate) group; rank 1 is best.
    pub entries: Vec<RankEntry>,
}

impl RankTable {
    pub fn group(&self, dataset: &str, rate: Option<f64>) -> Vec<&RankEntry> {
        self.entries
            .iter()
            .filter(|e| e.dataset == dataset && e.rate.map(f64::to_bits) == rate.map(f64::to_bits))
            .collect()
    }

    pub fn best(&self, dataset: &str, rate: Option<f64>) -> Option<&RankEntry> {
        self.group(dataset, rate).into_iter().find(|e| e.rank == 1)
    }

    pub fn second(&self, dataset: &str, rate: Option<f64>) -> Option<&RankEntry> {
        self.group(dataset, rate).into_iter().find(|e| e.rank == 2)
    }
}

fn oriented(key: MetricKey, v: Option<f64>) -> f64 {
    match v {
        Some(x) if key == MetricKey::Pev => -x,
        Some(x) => x,
        None => f64::INFINITY,
    }
}

fn compare_rows(rule: &RankRule, a: &AggregateRow, b: &AggregateRow) -> std::cmp::Ordering {
    for &k in rule.keys.iter().chain(std::iter::once(&MetricKey::Mae)) {
        let ord = oriented(k, a.means.get(k)).total_cmp(&oriented(k, b.means.get(k)));
        if ord.is_ne() {
            return ord;
        }
    }
    a.method.id().cmp(b.method.id())
}

/// Orders methods per dataset (or per dataset and rate) under `rule`.
pub fn rank_best(aggregates: &Aggregates, rule: &RankRule) -> RankTable {
    let rows = if rule.per_rate {
        &aggregates.per_rate
    } else {
        &aggregates.per_dataset
    };
    let mut order: Vec<(String, Option<u64>)> = Vec::new();
    let mut groups: HashMap<(String, Option<u64>), Vec<&AggregateRow>> = HashMap::new();
    for r in rows {
        let key = (r.dataset.clone(), r.rate.map(f64::to_bits));
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let mut entries = Vec::new();
    for key in order {
        let mut g = groups.remove(&key).unwrap_or_default();
        g.sort_by(|a, b| compare_rows(rule, a, b));
        for (i, r) in g.into_iter().enumerate() {
            entries.push(RankEntry {
                dataset: r.dataset.clone(),
                rate: r.rate,
                rank: i + 1,
                method: r.method,
                means: r.means,
            });
        }
    }
    RankTable {
        rule: rule.describe(),
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::AggregateMetrics;
    use rand::seq::SliceRandom;

    fn cell(dataset: &str, method: MethodId, rate: f64, rep: usize, v: Option<[f64; 5]>) -> CellRecord {
        CellRecord {
            dataset: dataset.into(),
            method,
            rate,
            replicate: rep,
            seed: 0,
            mask_seed: 0,
            achieved_rate: v.map(|_| rate),
            report: v.map(|m| MetricReport {
                per_column: vec![],
                aggregate: AggregateMetrics {
                    nrmse: Some(m[0]),
                    sinkhorn: Some(m[1]),
                    mae: Some(m[2]),
                    pev: Some(m[3]),
                    mmd: Some(m[4]),
                },
                wall_time_s: 0.0,
                sinkhorn_unconverged: 0,
                full_rows: None,
                notes: vec![],
            }),
            error: v.is_none().then(|| "boom".to_string()),
            impute_s: 0.0,
            total_s: 0.0,
        }
    }

    fn grid(cells: Vec<CellRecord>, methods: Vec<MethodId>, rates: Vec<f64>) -> BenchGrid {
        let mut datasets: Vec<String> = Vec::new();
        for c in &cells {
            if !datasets.contains(&c.dataset) {
                datasets.push(c.dataset.clone());
            }
        }
        BenchGrid {
            datasets,
            methods,
            rates,
            n_reps: 2,
            config_fingerprint: String::new(),
            cells,
        }
    }

    fn inline_config(methods: &str) -> String {
        format!(
            r#"{{"datasets": [{{"name": "g", "synthetic": {{"generator": "correlated_gaussian", "rows": 40, "cols": 4}}}}],
                "methods": {methods}, "rates": [0.1, 0.2], "n_reps": 2, "base_seed": 3, "workers": 1}}"#
        )
    }

    #[test]
    fn single_cell_aggregate_is_the_cell() {
        let g = grid(
            vec![cell("a", MethodId::Mean, 0.1, 0, Some([0.5, 0.1, 0.2, 0.3, 0.4]))],
            vec![MethodId::Mean],
            vec![0.1],
        );
        let a = aggregate(&g);
        assert_eq!(a.per_rate.len(), 1);
        assert_eq!(a.per_dataset[0].means.nrmse, Some(0.5));
        assert_eq!(a.per_dataset[0].means.mmd, Some(0.4));
    }

    #[test]
    fn replicate_mean_and_failures() {
        let g = grid(
            vec![
                cell("a", MethodId::Mean, 0.1, 0, Some([0.1; 5])),
                cell("a", MethodId::Mean, 0.1, 1, Some([0.3; 5])),
                cell("a", MethodId::Mean, 0.1, 2, None),
            ],
            vec![MethodId::Mean],
            vec![0.1],
        );
        let a = aggregate(&g);
        assert!((a.per_rate[0].means.mae.unwrap() - 0.2).abs() < 1e-15);
        assert_eq!((a.per_rate[0].n_ok, a.per_rate[0].n_failed), (2, 1));
    }

    #[test]
    fn dominating_method_ranks_best() {
        let g = grid(
            vec![
                cell("a", MethodId::Mean, 0.1, 0, Some([0.9, 0.9, 0.9, 0.1, 0.9])),
                cell("a", MethodId::Pain, 0.1, 0, Some([0.1, 0.1, 0.1, 0.9, 0.1])),
            ],
            vec![MethodId::Mean, MethodId::Pain],
            vec![0.1],
        );
        let t = rank_best(&aggregate(&g), &RankRule::default());
        assert_eq!(t.best("a", None).unwrap().method, MethodId::Pain);
        assert_eq!(t.second("a", None).unwrap().method, MethodId::Mean);
    }

    #[test]
    fn ties_fall_back_to_mae_then_id() {
        let g = grid(
            vec![
                cell("a", MethodId::Mode, 0.1, 0, Some([0.5, 0.5, 0.3, 0.0, 0.5])),
                cell("a", MethodId::Mean, 0.1, 0, Some([0.5, 0.5, 0.3, 0.0, 0.5])),
                cell("a", MethodId::Knn, 0.1, 0, Some([0.5, 0.5, 0.2, 0.0, 0.5])),
            ],
            vec![MethodId::Mode, MethodId::Mean, MethodId::Knn],
            vec![0.1],
        );
        let t = rank_best(&aggregate(&g), &RankRule::default());
        let order: Vec<MethodId> = t.group("a", None).iter().map(|e| e.method).collect();
        assert_eq!(order, vec![MethodId::Knn, MethodId::Mean, MethodId::Mode]);
    }

    #[test]
    fn failed_method_ranks_last() {
        let g = grid(
            vec![
                cell("a", MethodId::Pain, 0.1, 0, None),
                cell("a", MethodId::Mean, 0.1, 0, Some([0.9; 5])),
            ],
            vec![MethodId::Pain, MethodId::Mean],
            vec![0.1],
        );
        let t = rank_best(&aggregate(&g), &RankRule::default());
        assert_eq!(t.best("a", None).unwrap().method, MethodId::Mean);
    }

    #[test]
    fn rank_ignores_cell_order() {
        let mut rng = crate::seed::rng(4);
        let methods = vec![MethodId::Mean, MethodId::Knn, MethodId::Mice, MethodId::Pain];
        let rates = vec![0.1, 0.2, 0.3];
        let mut cells = Vec::new();
        for d in ["a", "b"] {
            for &m in &methods {
                for &r in &rates {
                    for rep in 0..3 {
                        let v: [f64; 5] = std::array::from_fn(|_| rand::Rng::random::<f64>(&mut rng));
                        cells.push(cell(d, m, r, rep, Some(v)));
                    }
                }
            }
        }
        let base = grid(cells.clone(), methods.clone(), rates.clone());
        for per_rate in [false, true] {
            let rule = RankRule {
                per_rate,
                ..RankRule::default()
            };
            let want = rank_best(&aggregate(&base), &rule);
            for _ in 0..5 {
                let mut shuffled = base.clone();
                shuffled.cells.shuffle(&mut rng);
                assert_eq!(rank_best(&aggregate(&shuffled), &rule), want);
            }
        }
    }

    #[test]
    fn plan_size_and_shared_masks() {
        let cfg = BenchConfig::from_json(&inline_config(r#"["mean", "knn", "pain"]"#), Path::new(".")).unwrap();
        let plans = plan_cells(&cfg, &["x".into(), "y".into()]);
        assert_eq!(plans.len(), 2 * 3 * 2 * 2);
        let a: Vec<_> = plans.iter().filter(|p| p.method == MethodId::Mean).map(|p| p.mask_seed).collect();
        let b: Vec<_> = plans.iter().filter(|p| p.method == MethodId::Pain).map(|p| p.mask_seed).collect();
        assert_eq!(a, b);
        assert_ne!(plans[0].method_seed, plans[4].method_seed);
    }

    #[test]
    fn config_rejections() {
        let base = Path::new(".");
        assert!(BenchConfig::from_json(&inline_config(r#"["mean", "bogus"]"#), base).is_err());
        assert!(BenchConfig::from_json(&inline_config(r#"["mean", "mean"]"#), base).is_err());
        let bad_rate = inline_config(r#"["mean"]"#).replace("[0.1, 0.2]", "[0.6]");
        assert!(BenchConfig::from_json(&bad_rate, base).is_err());
        let unknown = inline_config(r#"["mean"]"#).replace("\"workers\"", "\"wrkers\"");
        assert!(BenchConfig::from_json(&unknown, base).is_err());
        let bad_override = inline_config(r#"["mean"]"#).replace("\"workers\": 1", "\"overrides\": {\"nope\": 1}");
        assert!(matches!(BenchConfig::from_json(&bad_override, base), Err(Error::Config(_))));
    }

    #[test]
    fn isolated_cell_matches_grid_cell() {
        let cfg = BenchConfig::from_json(&inline_config(r#"["mean", "knn"]"#), Path::new(".")).unwrap();
        let grid = run_grid(&cfg).unwrap();
        assert_eq!(grid.cells.len(), 8);
        assert_eq!(grid.failed().count(), 0);
        let tables = load_tables(&cfg).unwrap();
        let plan = plan_cells(&cfg, &grid.datasets)
            .into_iter()
            .find(|p| p.method == MethodId::Mean && p.rate == 0.1 && p.replicate == 1)
            .unwrap();
        let alone = execute_plan(&plan, &tables[0], cfg.mechanism, &cfg.method_config().unwrap(), &cfg.eval);
        let in_grid = grid
            .cells
            .iter()
            .find(|c| c.method == MethodId::Mean && c.rate == 0.1 && c.replicate == 1)
            .unwrap();
        assert_eq!(alone.report.as_ref().unwrap().aggregate, in_grid.report.as_ref().unwrap().aggregate);
        assert_eq!(alone.seed, in_grid.seed);
    }

    #[test]
    fn failing_cell_is_recorded() {
        let text = inline_config(r#"["mean", "autoencoder"]"#).replace("\"rows\": 40", "\"rows\": 8");
        let cfg = BenchConfig::from_json(&text, Path::new(".")).unwrap();
        let grid = run_grid(&cfg).unwrap();
        assert_eq!(grid.cells.len(), 8);
        for c in &grid.cells {
            assert_eq!(c.is_ok(), c.method == MethodId::Mean, "{c:?}");
            assert_eq!(c.error.is_some(), !c.is_ok());
        }
        let a = aggregate(&grid);
        let ae = a.per_dataset.iter().find(|r| r.method == MethodId::Autoencoder).unwrap();
        assert_eq!((ae.n_ok, ae.n_failed, ae.means.mae), (0, 4, None));
    }
}
