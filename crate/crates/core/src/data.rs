//! Tabular data model: typed columns, optional cells, CSV ingestion and
//! per-column summary statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats;

/// Integer-valued columns with at most this many distinct values are discrete.
pub const MAX_DISCRETE_CARDINALITY: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Discrete,
}

impl std::str::FromStr for ColumnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "continuous" => Ok(ColumnKind::Continuous),
            "discrete" => Ok(ColumnKind::Discrete),
            other => Err(Error::Schema(format!("unknown column kind `{other}`"))),
        }
    }
}

/// Column-kind overrides keyed by column name.
pub type Schema = BTreeMap<String, ColumnKind>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatBundle {
    pub mean: f64,
    pub median: f64,
    pub mode: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub q05: f64,
    pub q25: f64,
    pub q75: f64,
    pub q95: f64,
    pub missing_ratio: f64,
}

impl StatBundle {
    /// Statistics over `observed`; `n_rows` is the full column length.
    pub fn from_observed(observed: &[f64], n_rows: usize) -> Option<Self> {
        if observed.is_empty() {
            return None;
        }
        let s = stats::sorted(observed);
        Some(StatBundle {
            mean: stats::mean(observed),
            median: stats::median_sorted(&s),
            mode: stats::mode(observed),
            std: stats::std_dev(observed),
            min: s[0],
            max: s[s.len() - 1],
            q05: stats::quantile_sorted(&s, 0.05),
            q25: stats::quantile_sorted(&s, 0.25),
            q75: stats::quantile_sorted(&s, 0.75),
            q95: stats::quantile_sorted(&s, 0.95),
            missing_ratio: (n_rows - observed.len()) as f64 / n_rows as f64,
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    /// Sorted category values; empty for continuous columns.
    pub categories: Vec<i64>,
    pub stats: Option<StatBundle>,
}

impl ColumnMeta {
    pub fn is_discrete(&self) -> bool {
        self.kind == ColumnKind::Discrete
    }

    pub fn category_values(&self) -> Vec<f64> {
        self.categories.iter().map(|&c| c as f64).collect()
    }

    /// Snaps `v` to the nearest category for discrete columns; identity otherwise.
    pub fn snap(&self, v: f64) -> f64 {
        if self.is_discrete() && !self.categories.is_empty() {
            stats::nearest_category(&self.category_values(), v)
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    name: String,
    columns: Vec<ColumnMeta>,
    cells: Vec<Option<f64>>,
    n_rows: usize,
    n_cols: usize,
}

fn is_integral(v: f64) -> bool {
    v.fract() == 0.0 && v.abs() < 9.0e15
}

fn infer_kind(observed: &[f64]) -> ColumnKind {
    if observed.is_empty() || !observed.iter().all(|&v| is_integral(v)) {
        return ColumnKind::Continuous;
    }
    let distinct: BTreeSet<i64> = observed.iter().map(|&v| v as i64).collect();
    if distinct.len() <= MAX_DISCRETE_CARDINALITY {
        ColumnKind::Discrete
    } else {
        ColumnKind::Continuous
    }
}

impl DataTable {
    /// Builds a table from row-major optional cells, inferring column kinds
    /// unless `kinds` is given (or overridden by `schema`).
    pub fn new(
        name: impl Into<String>,
        names: Vec<String>,
        cells: Vec<Option<f64>>,
        kinds: Option<&[ColumnKind]>,
        schema: Option<&Schema>,
    ) -> Result<Self> {
        let n_cols = names.len();
        if n_cols < 2 {
            return Err(Error::Schema(format!(
                "a table needs at least 2 columns, found {n_cols}"
            )));
        }
        if cells.len() % n_cols != 0 {
            return Err(Error::Schema("ragged cell data".into()));
        }
        let n_rows = cells.len() / n_cols;
        if n_rows == 0 {
            return Err(Error::Schema("a table needs at least 1 row".into()));
        }
        if let Some(k) = kinds {
            if k.len() != n_cols {
                return Err(Error::Schema("kind list length differs from column count".into()));
            }
        }
        if let Some(schema) = schema {
            for key in schema.keys() {
                if !names.contains(key) {
                    return Err(Error::Schema(format!("schema names unknown column `{key}`")));
                }
            }
        }
        let mut table = DataTable {
            name: name.into(),
            columns: Vec::with_capacity(n_cols),
            cells,
            n_rows,
            n_cols,
        };
        for (j, col_name) in names.into_iter().enumerate() {
            let observed = table.observed_values(j);
            let mut kind = kinds.map_or_else(|| infer_kind(&observed), |k| k[j]);
            if let Some(&k) = schema.and_then(|s| s.get(&col_name)) {
                kind = k;
            }
            table.columns.push(ColumnMeta {
                name: col_name,
                kind,
                categories: Vec::new(),
                stats: None,
            });
            table.refresh_column(j)?;
        }
        Ok(table)
    }

    pub fn from_matrix(
        name: impl Into<String>,
        names: Vec<String>,
        values: &Matrix,
        kinds: Option<&[ColumnKind]>,
    ) -> Result<Self> {
        let cells = values
            .as_slice()
            .iter()
            .map(|&v| if v.is_nan() { None } else { Some(v) })
            .collect();
        Self::new(name, names, cells, kinds, None)
    }

    fn refresh_column(&mut self, j: usize) -> Result<()> {
        let observed = self.observed_values(j);
        let meta = &mut self.columns[j];
        if meta.kind == ColumnKind::Discrete {
            if let Some(bad) = observed.iter().find(|&&v| !is_integral(v)) {
                return Err(Error::Schema(format!(
                    "discrete column `{}` holds non-integer value {bad}",
                    meta.name
                )));
            }
            let set: BTreeSet<i64> = observed.iter().map(|&v| v as i64).collect();
            meta.categories = set.into_iter().collect();
        } else {
            meta.categories.clear();
        }
        meta.stats = StatBundle::from_observed(&observed, self.n_rows);
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &ColumnMeta {
        &self.columns[j]
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn kinds(&self) -> Vec<ColumnKind> {
        self.columns.iter().map(|c| c.kind).collect()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i * self.n_cols + j]
    }

    pub fn observed_values(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).filter_map(|i| self.get(i, j)).collect()
    }

    pub fn missing_count(&self, j: usize) -> usize {
        (0..self.n_rows).filter(|&i| self.get(i, j).is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(Option::is_some)
    }

    /// All cells as a dense matrix, missing cells as NaN.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.n_rows,
            self.n_cols(),
            self.cells.iter().map(|c| c.unwrap_or(f64::NAN)).collect(),
        )
    }

    /// Copy of this table with `remove(i, j) == true` cells set missing.
    /// Column kinds and category sets are kept from the source table.
    pub fn with_removed(&self, remove: impl Fn(usize, usize) -> bool) -> DataTable {
        let d = self.n_cols();
        let cells = self
            .cells
            .iter()
            .enumerate()
            .map(|(idx, &c)| if remove(idx / d, idx % d) { None } else { c })
            .collect();
        let mut out = DataTable {
            name: self.name.clone(),
            columns: self.columns.clone(),
            cells,
            n_rows: self.n_rows,
            n_cols: self.n_cols,
        };
        for j in 0..d {
            let observed = out.observed_values(j);
            out.columns[j].stats = StatBundle::from_observed(&observed, out.n_rows);
        }
        out
    }

    /// Replaces the cell values with a complete matrix, keeping column metadata.
    pub fn with_values(&self, values: &Matrix) -> DataTable {
        assert_eq!(values.rows(), self.n_rows);
        assert_eq!(values.cols(), self.n_cols());
        let mut out = DataTable {
            name: self.name.clone(),
            columns: self.columns.clone(),
            cells: values.as_slice().iter().map(|&v| Some(v)).collect(),
            n_rows: self.n_rows,
            n_cols: self.n_cols,
        };
        for j in 0..out.n_cols() {
            let observed = out.observed_values(j);
            out.columns[j].stats = StatBundle::from_observed(&observed, out.n_rows);
        }
        out
    }
}

/// Per-column summary statistics over observed cells.
pub fn column_stats(table: &DataTable, col: usize) -> Result<StatBundle> {
    let observed = table.observed_values(col);
    StatBundle::from_observed(&observed, table.n_rows()).ok_or_else(|| Error::NoObserved {
        column: table.column(col).name.clone(),
    })
}

fn parse_cell(token: &str) -> Option<Option<f64>> {
    let t = token.trim();
    if t.is_empty() || t == "NA" {
        return Some(None);
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some)
}

/// Parses CSV text (header row required; empty field or `NA` is missing).
pub fn parse_csv(name: &str, text: &str, schema: Option<&Schema>) -> Result<DataTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if names.len() < 2 {
        return Err(Error::Schema(format!(
            "a table needs at least 2 columns, found {}",
            names.len()
        )));
    }
    let mut cells = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != names.len() {
            return Err(Error::Schema(format!(
                "data row {} has {} fields, header has {}",
                row + 1,
                record.len(),
                names.len()
            )));
        }
        for (j, token) in record.iter().enumerate() {
            let cell = parse_cell(token).ok_or_else(|| Error::Parse {
                row: row + 1,
                column: names[j].clone(),
                token: token.to_string(),
            })?;
            cells.push(cell);
        }
    }
    DataTable::new(name, names, cells, None, schema)
}

pub fn load_csv(path: &Path, schema: Option<&Schema>) -> Result<DataTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "table".to_string());
    parse_csv(&name, &text, schema)
}

/// Formats a float with the shortest representation that parses back exactly.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

pub fn table_to_csv(table: &DataTable) -> String {
    let mut out = table.column_names().join(",");
    out.push('\n');
    for i in 0..table.n_rows() {
        let row: Vec<String> = (0..table.n_cols())
            .map(|j| table.get(i, j).map(format_value).unwrap_or_default())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(table: &DataTable, path: &Path) -> Result<()> {
    fs::write(path, table_to_csv(table)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    pub std: f64,
}

impl Scaling {
    /// Scaling from observed values; zero spread maps to the identity.
    pub fn from_observed(observed: &[f64]) -> Self {
        let std = stats::std_dev(observed);
        if observed.len() < 2 || !(std > 0.0) {
            Scaling { mean: 0.0, std: 1.0 }
        } else {
            Scaling {
                mean: stats::mean(observed),
                std,
            }
        }
    }

    #[inline]
    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    #[inline]
    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Per-column z-scoring with the sample standard deviation.
pub fn standardize(table: &DataTable) -> Result<(DataTable, Vec<Scaling>)> {
    let mut scalings = Vec::with_capacity(table.n_cols());
    for j in 0..table.n_cols() {
        let observed = table.observed_values(j);
        if observed.len() < 2 {
            return Err(Error::Param(format!(
                "standardize needs at least 2 observed values in column `{}`",
                table.column(j).name
            )));
        }
        scalings.push(Scaling::from_observed(&observed));
    }
    Ok((map_cells(table, |j, v| scalings[j].forward(v)), scalings))
}

pub fn destandardize(table: &DataTable, scalings: &[Scaling]) -> DataTable {
    map_cells(table, |j, v| scalings[j].inverse(v))
}

fn map_cells(table: &DataTable, f: impl Fn(usize, f64) -> f64) -> DataTable {
    let d = table.n_cols();
    let cells: Vec<Option<f64>> = table
        .cells
        .iter()
        .enumerate()
        .map(|(idx, c)| c.map(|v| f(idx % d, v)))
        .collect();
    let mut out = DataTable {
        name: table.name.clone(),
        columns: table.columns.clone(),
        cells,
        n_rows: table.n_rows,
        n_cols: table.n_cols,
    };
    for j in 0..d {
        let observed = out.observed_values(j);
        out.columns[j].stats = StatBundle::from_observed(&observed, out.n_rows);
    }
    out
}

/// Expected shape of a manifest dataset, checked after loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedShape {
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub kinds: Option<Vec<ColumnKind>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSource {
    Csv { path: PathBuf },
    Synthetic { synthetic: crate::synthetic::SyntheticSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    #[serde(flatten)]
    pub source: DatasetSource,
    #[serde(default)]
    pub expected: Option<ExpectedShape>,
    #[serde(default)]
    pub schema: Option<Schema>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub datasets: Vec<DatasetEntry>,
}

impl DatasetManifest {
    /// Reads a manifest; relative CSV paths resolve against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(manifest)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for entry in &mut self.datasets {
            if let DatasetSource::Csv { path } = &mut entry.source {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }
}

impl DatasetEntry {
    pub fn load(&self) -> Result<DataTable> {
        let mut table = match &self.source {
            DatasetSource::Csv { path } => load_csv(path, self.schema.as_ref())?,
            DatasetSource::Synthetic { synthetic } => synthetic.generate(&self.name)?,
        };
        table.set_name(self.name.clone());
        if let Some(exp) = &self.expected {
            if table.n_rows() != exp.rows || table.n_cols() != exp.cols {
                return Err(Error::Schema(format!(
                    "dataset `{}` has shape {}x{}, manifest expects {}x{}",
                    self.name,
                    table.n_rows(),
                    table.n_cols(),
                    exp.rows,
                    exp.cols
                )));
            }
            if let Some(kinds) = &exp.kinds {
                if &table.kinds() != kinds {
                    return Err(Error::Schema(format!(
                        "dataset `{}` column kinds differ from the manifest",
                        self.name
                    )));
                }
            }
        }
        Ok(table)
    }
}
