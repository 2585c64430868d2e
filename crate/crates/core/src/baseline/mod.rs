//! Comparison imputers: statistical fills, KNN, MICE/SICE and the two
//! combined MICE/KNN variants.

mod knn;
mod mice;

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use knn::{default_k, impute_knn, knn_fill, KnnFill};
pub use mice::{impute_mice, impute_sice, mice_fill, MiceConfig, MiceFill, MiceInit};

use crate::amputation::MissingMask;
use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::imputation::{ImputationResult, Params, Working};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    Mean,
    Median,
    Mode,
}

impl StatKind {
    pub fn id(self) -> &'static str {
        match self {
            StatKind::Mean => "mean",
            StatKind::Median => "median",
            StatKind::Mode => "mode",
        }
    }
}

/// Fills every masked cell with a per-column statistic of the observed
/// cells. Mean and median land on the nearest category for discrete columns.
pub fn impute_statistical(table: &DataTable, mask: &MissingMask, kind: StatKind) -> Result<ImputationResult> {
    let started = Instant::now();
    let w = Working::new(table, mask)?;
    w.require_observed()?;
    let mut filled = w.values.clone();
    for j in 0..w.n_cols() {
        let obs = w.observed_column(j);
        let value = match kind {
            StatKind::Mean => stats::mean(&obs),
            StatKind::Median => stats::median_sorted(&stats::sorted(&obs)),
            StatKind::Mode => stats::mode(&obs),
        };
        let value = w.snap(j, value);
        for i in w.missing_rows(j) {
            filled.set(i, j, value);
        }
    }
    w.finalize(&filled, kind.id(), started, Params::new())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinedVariant {
    /// Continuous: mean of MICE and KNN; discrete: KNN.
    MiceKnnAverage,
    /// Discrete: KNN; continuous: MICE.
    TypedSplit,
}

impl CombinedVariant {
    pub fn id(self) -> &'static str {
        match self {
            CombinedVariant::MiceKnnAverage => "combined_avg",
            CombinedVariant::TypedSplit => "combined_typed",
        }
    }
}

impl FromStr for CombinedVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mice_knn_average" | "combined_avg" => Ok(CombinedVariant::MiceKnnAverage),
            "typed_split" | "combined_typed" => Ok(CombinedVariant::TypedSplit),
            other => Err(Error::Param(format!("unknown combined variant `{other}`"))),
        }
    }
}

pub fn impute_combined(
    table: &DataTable,
    mask: &MissingMask,
    variant: CombinedVariant,
    k: Option<usize>,
    mice_cfg: &MiceConfig,
) -> Result<ImputationResult> {
    let started = Instant::now();
    let w = Working::new(table, mask)?;
    w.require_observed()?;
    let knn = knn_fill(&w, k.unwrap_or_else(|| default_k(table.n_rows())));
    let has_continuous = (0..w.n_cols()).any(|j| !w.meta(j).is_discrete());
    let mice = if has_continuous {
        Some(mice_fill(&w, mice_cfg, MiceInit::Center)?)
    } else {
        None
    };
    let mut out = knn.filled.clone();
    if let Some(mice) = &mice {
        for j in (0..w.n_cols()).filter(|&j| !w.meta(j).is_discrete()) {
            for i in w.missing_rows(j) {
                let m = mice.filled.get(i, j);
                let v = match variant {
                    CombinedVariant::MiceKnnAverage => (m + knn.filled.get(i, j)) / 2.0,
                    CombinedVariant::TypedSplit => m,
                };
                out.set(i, j, v);
            }
        }
    }
    let mut params = Params::new();
    params.insert("variant".into(), json!(variant));
    params.insert("k".into(), json!(knn.k));
    params.insert("knn_fallbacks".into(), json!(knn.fallbacks));
    w.finalize(&out, variant.id(), started, params)
}
