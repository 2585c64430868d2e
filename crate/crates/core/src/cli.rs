//! Command-line interface. Exit codes: 0 success, 1 run failure (including
//! partially failed bench grids), 2 usage or configuration error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::amputation::{ampute, Mechanism, MissingMask};
use crate::bench::{aggregate, emit_report, plan_cells, rank_best, run_grid_with, BenchConfig, RankTable};
use crate::data::{load_csv, write_csv, DatasetManifest, DatasetSource};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalOptions};
use crate::registry::{run_method, MethodConfig, MethodId};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tabimpute", version, about = "Tabular missing-data imputation and benchmarking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Remove values from a complete table under MCAR or MAR.
    Ampute(AmputeArgs),
    /// Fill the missing cells of a table with one method.
    Impute(ImputeArgs),
    /// Run a benchmark grid from a JSON config.
    Bench(BenchArgs),
    /// Inspect dataset manifests.
    Datasets {
        #[command(subcommand)]
        command: DatasetsCommand,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MechanismArg {
    Mcar,
    Mar,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Mcar => Mechanism::Mcar,
            MechanismArg::Mar => Mechanism::Mar,
        }
    }
}

fn parse_rate(s: &str) -> std::result::Result<f64, String> {
    let r: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if r > 0.0 && r <= 0.5 {
        Ok(r)
    } else {
        Err(format!("{r} is outside (0, 0.5]"))
    }
}

fn parse_method(s: &str) -> std::result::Result<MethodId, String> {
    s.parse::<MethodId>().map_err(|e| e.to_string())
}

fn parse_assignment(s: &str) -> std::result::Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("`{s}` is not key=value"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

#[derive(Debug, Args)]
pub struct AmputeArgs {
    /// Complete input CSV.
    pub input: PathBuf,
    /// Fraction of cells to remove, in (0, 0.5].
    #[arg(long, value_parser = parse_rate)]
    pub rate: f64,
    #[arg(long, value_enum, default_value = "mar")]
    pub mechanism: MechanismArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix; writes `<prefix>_amputed.csv`, `<prefix>_mask.csv` and
    /// `<prefix>_sidecar.json`. Defaults to the input path without extension.
    #[arg(long)]
    pub out_prefix: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    /// CSV with missing cells (empty or `NA`).
    pub input: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: MethodId,
    /// Mask CSV from `ampute`; cells missing in the input are always imputed.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// JSON file with `overrides`, `eval` and `seed`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one method setting, e.g. `--set forest.n_trees=50`.
    #[arg(long = "set", value_parser = parse_assignment)]
    pub set: Vec<(String, Value)>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Complete table used to score the imputation.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Output CSV; the report goes next to it as `<stem>.report.json`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "bench_out")]
    pub out: PathBuf,
    /// Print the cell plan without running it.
    #[arg(long)]
    pub dry_run: bool,
    /// Override the configured worker count.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Suppress per-cell progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum DatasetsCommand {
    /// Print the entries of a manifest.
    List {
        #[arg(long, default_value = "data/manifest.json")]
        manifest: PathBuf,
        /// Also load every dataset and check its expected shape.
        #[arg(long)]
        verify: bool,
    },
}

/// Provenance record written into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub toolkit_version: String,
    pub timestamp_unix: u64,
    pub args: Vec<String>,
}

pub const RUN_MANIFEST: &str = "run_manifest.json";

fn write_run_manifest(dir: &Path, command: &str, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let m = RunManifest {
        command: command.to_string(),
        config_path: config.map(Path::to_path_buf),
        seed,
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        args: std::env::args().collect(),
    };
    let path = dir.join(RUN_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&path, e))
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_dir(d: &Path) -> Result<()> {
    fs::create_dir_all(d).map_err(|e| Error::io(d, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_ampute(a: &AmputeArgs) -> Result<i32> {
    let table = load_csv(&a.input, None)?;
    let mask = ampute(&table, a.mechanism.into(), a.rate, a.seed)?;
    let prefix = a.out_prefix.clone().unwrap_or_else(|| a.input.with_extension(""));
    let dir = parent_dir(&prefix);
    ensure_dir(&dir)?;
    let holed = table.with_removed(|i, j| mask.is_masked(i, j));
    write_csv(&holed, &with_suffix(&prefix, "_amputed.csv"))?;
    write_text(&with_suffix(&prefix, "_mask.csv"), &mask.to_csv(&table.column_names()))?;
    write_text(
        &with_suffix(&prefix, "_sidecar.json"),
        &serde_json::to_string_pretty(&mask.sidecar())?,
    )?;
    write_run_manifest(&dir, "ampute", None, Some(a.seed))?;
    println!(
        "removed {} of {} cells (achieved rate {:.4}) -> {}_*",
        mask.masked_count(),
        table.n_rows() * table.n_cols(),
        mask.achieved_rate(),
        prefix.display()
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ImputeConfig {
    overrides: BTreeMap<String, Value>,
    eval: EvalOptions,
    seed: Option<u64>,
}

fn cmd_impute(a: &ImputeArgs) -> Result<i32> {
    let file_cfg: ImputeConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => ImputeConfig::default(),
    };
    let mut overrides = file_cfg.overrides.clone();
    overrides.extend(a.set.iter().cloned());
    let method_cfg = MethodConfig::with_overrides(&overrides)?;
    let seed = a.seed.or(file_cfg.seed).unwrap_or(0);

    let table = load_csv(&a.input, None)?;
    let mask = match &a.mask {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let m = MissingMask::from_csv(&text)?;
            if (m.rows(), m.cols()) != (table.n_rows(), table.n_cols()) {
                return Err(Error::Schema(format!(
                    "mask is {}x{} but the table is {}x{}",
                    m.rows(),
                    m.cols(),
                    table.n_rows(),
                    table.n_cols()
                )));
            }
            m.union_missing(&table)
        }
        None => MissingMask::from_missing(&table),
    };
    let result = run_method(&table, &mask, a.method, &method_cfg, seed)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| with_suffix(&a.input.with_extension(""), &format!("_{}.csv", a.method)));
    let dir = parent_dir(&out);
    ensure_dir(&dir)?;
    let completed = table.with_values(&result.completed);
    write_csv(&completed, &out)?;

    let mut report = json!({
        "method": result.method,
        "seed": seed,
        "imputed_cells": mask.masked_count(),
        "wall_time_s": result.wall_time_s,
        "params": result.params,
    });
    if let Some(tp) = &a.truth {
        let truth = load_csv(tp, None)?;
        if (truth.n_rows(), truth.n_cols()) != (table.n_rows(), table.n_cols()) {
            return Err(Error::Schema("truth table shape differs from the input".into()));
        }
        let metrics = evaluate(&truth, &result.completed, &mask, result.wall_time_s, &file_cfg.eval)?;
        report["metrics"] = serde_json::to_value(&metrics)?;
        let agg = &metrics.aggregate;
        println!(
            "nrmse {}  mae {}  pev {}  mmd {}  sinkhorn {}",
            show(agg.nrmse),
            show(agg.mae),
            show(agg.pev),
            show(agg.mmd),
            show(agg.sinkhorn)
        );
    }
    let report_path = with_suffix(&out.with_extension(""), ".report.json");
    write_text(&report_path, &serde_json::to_string_pretty(&report)?)?;
    write_run_manifest(&dir, "impute", a.config.as_deref(), Some(seed))?;
    println!(
        "{}: filled {} cells in {:.3}s -> {}",
        a.method,
        mask.masked_count(),
        result.wall_time_s,
        out.display()
    );
    Ok(EXIT_OK)
}

fn show(v: Option<f64>) -> String {
    // Tiny negatives would print as -0.000000.
    v.map(|x| format!("{:.6}", if x.abs() < 5e-7 { 0.0 } else { x }))
        .unwrap_or_else(|| "NA".into())
}

fn print_rank(rank: &RankTable) {
    println!("ranking: {}", rank.rule);
    println!("{:<20} {:>6} {:>4} {:<15} {:>10} {:>10} {:>10} {:>10} {:>10}", "dataset", "rate", "rank", "method", "nrmse", "sinkhorn", "mae", "pev", "mmd");
    for e in &rank.entries {
        let m = &e.means;
        println!(
            "{:<20} {:>6} {:>4} {:<15} {:>10} {:>10} {:>10} {:>10} {:>10}",
            e.dataset,
            e.rate.map(|r| r.to_string()).unwrap_or_else(|| "all".into()),
            e.rank,
            e.method.id(),
            show(m.nrmse),
            show(m.sinkhorn),
            show(m.mae),
            show(m.pev),
            show(m.mmd)
        );
    }
}

fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let mut config = BenchConfig::load(&a.config)?;
    if let Some(w) = a.workers {
        if w == 0 {
            return Err(Error::Config("--workers must be >= 1".into()));
        }
        config.workers = Some(w);
    }
    if a.dry_run {
        let names: Vec<String> = config.resolve_datasets()?.into_iter().map(|d| d.name).collect();
        let plans = plan_cells(&config, &names);
        println!("{} cells", plans.len());
        println!("dataset,method,rate,replicate,mask_seed,method_seed");
        for p in &plans {
            println!("{},{},{},{},{},{}", p.dataset, p.method, p.rate, p.replicate, p.mask_seed, p.method_seed);
        }
        return Ok(EXIT_OK);
    }
    ensure_dir(&a.out)?;
    let quiet = a.quiet;
    let grid = run_grid_with(&config, &|c, done, total| {
        if !quiet {
            let status = if c.is_ok() { "ok" } else { "FAILED" };
            eprintln!(
                "[{done}/{total}] {} {} rate={} rep={} {status} ({:.2}s)",
                c.dataset, c.method, c.rate, c.replicate, c.total_s
            );
        }
    })?;
    let aggs = aggregate(&grid);
    let rank = rank_best(&aggs, &config.rank);
    emit_report(&grid, &aggs, &rank, &config, &a.out)?;
    write_run_manifest(&a.out, "bench", Some(&a.config), Some(config.base_seed))?;
    print_rank(&rank);
    let failed: Vec<_> = grid.failed().collect();
    if failed.is_empty() {
        return Ok(EXIT_OK);
    }
    eprintln!("{} of {} cells failed:", failed.len(), grid.cells.len());
    for c in failed {
        eprintln!(
            "  {} {} rate={} rep={}: {}",
            c.dataset,
            c.method,
            c.rate,
            c.replicate,
            c.error.as_deref().unwrap_or("")
        );
    }
    Ok(EXIT_FAILURE)
}

fn cmd_datasets_list(manifest: &Path, verify: bool) -> Result<i32> {
    let m = DatasetManifest::load(manifest)?;
    let mut code = EXIT_OK;
    for d in &m.datasets {
        let source = match &d.source {
            DatasetSource::Csv { path } => format!("csv {}", path.display()),
            DatasetSource::Synthetic { synthetic } => format!(
                "synthetic {:?} {}x{} seed {}",
                synthetic.generator, synthetic.rows, synthetic.cols, synthetic.seed
            ),
        };
        let shape = d
            .expected
            .as_ref()
            .map(|e| format!("{}x{}", e.rows, e.cols))
            .unwrap_or_else(|| "?".into());
        let mut line = format!("{:<20} {:<10} {source}", d.name, shape);
        if verify {
            match d.load() {
                Ok(t) => {
                    let discrete = t.columns().iter().filter(|c| c.is_discrete()).count();
                    line.push_str(&format!("  ok ({} discrete columns)", discrete));
                }
                Err(e) => {
                    line.push_str(&format!("  ERROR {e}"));
                    code = EXIT_FAILURE;
                }
            }
        }
        println!("{line}");
    }
    Ok(code)
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Numeric { .. } | Error::Diverged { .. } => EXIT_FAILURE,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match &cli.command {
        Command::Ampute(a) => cmd_ampute(a),
        Command::Impute(a) => cmd_impute(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Datasets {
            command: DatasetsCommand::List { manifest, verify },
        } => cmd_datasets_list(manifest, *verify),
    };
    let _ = std::io::stdout().flush();
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
