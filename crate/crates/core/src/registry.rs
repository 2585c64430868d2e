//! Stable method ids and the configuration record shared by the CLI and
//! the bench harness.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::amputation::MissingMask;
use crate::autoencoder::{build_architecture, impute_autoencoder, Activation, AeArchitecture, TrainSchedule};
use crate::baseline::{
    impute_combined, impute_knn, impute_mice, impute_sice, impute_statistical, CombinedVariant, MiceConfig, StatKind,
};
use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::forest::{impute_missforest, ForestConfig};
use crate::imputation::ImputationResult;
use crate::pain::{impute_pain, PainConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodId {
    Mean,
    Median,
    Mode,
    Knn,
    Mice,
    Sice,
    CombinedAvg,
    CombinedTyped,
    MissForest,
    Autoencoder,
    Pain,
}

impl MethodId {
    pub const ALL: [MethodId; 11] = [
        MethodId::Mean,
        MethodId::Median,
        MethodId::Mode,
        MethodId::Knn,
        MethodId::Mice,
        MethodId::Sice,
        MethodId::CombinedAvg,
        MethodId::CombinedTyped,
        MethodId::MissForest,
        MethodId::Autoencoder,
        MethodId::Pain,
    ];

    pub fn id(self) -> &'static str {
        match self {
            MethodId::Mean => "mean",
            MethodId::Median => "median",
            MethodId::Mode => "mode",
            MethodId::Knn => "knn",
            MethodId::Mice => "mice",
            MethodId::Sice => "sice",
            MethodId::CombinedAvg => "combined_avg",
            MethodId::CombinedTyped => "combined_typed",
            MethodId::MissForest => "missforest",
            MethodId::Autoencoder => "autoencoder",
            MethodId::Pain => "pain",
        }
    }

    /// Whether the method consumes its seed.
    pub fn is_stochastic(self) -> bool {
        matches!(self, MethodId::Sice | MethodId::MissForest | MethodId::Autoencoder | MethodId::Pain)
    }

    pub fn valid_ids() -> String {
        MethodId::ALL.iter().map(|m| m.id()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .iter()
            .copied()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::UnknownMethod {
                id: s.to_string(),
                valid: MethodId::valid_ids(),
            })
    }
}

impl Serialize for MethodId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for MethodId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Autoencoder settings that do not depend on the table width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeSettings {
    pub dropout: f64,
    pub hidden_dropout: f64,
    pub batchnorm: bool,
    pub activation: Activation,
    pub schedule: TrainSchedule,
}

impl Default for AeSettings {
    fn default() -> Self {
        let arch = build_architecture(8).expect("width 8 is valid");
        AeSettings {
            dropout: arch.dropout_p,
            hidden_dropout: arch.hidden_dropout,
            batchnorm: arch.use_batchnorm,
            activation: arch.activation,
            schedule: TrainSchedule::default(),
        }
    }
}

impl AeSettings {
    pub fn architecture_for(&self, d: usize) -> Result<AeArchitecture> {
        let mut arch = build_architecture(d)?;
        arch.dropout_p = self.dropout;
        arch.hidden_dropout = self.hidden_dropout;
        arch.use_batchnorm = self.batchnorm;
        arch.activation = self.activation;
        Ok(arch)
    }
}

/// Hyperparameters of every method. PAIN's layer 2 reuses the `forest.*`
/// and `ae.*` settings; its own knobs live under `pain.*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    pub knn_k: Option<usize>,
    pub mice: MiceConfig,
    pub sice_runs: usize,
    pub forest: ForestConfig,
    pub missforest_max_iter: usize,
    pub ae: AeSettings,
    pub pain: PainConfig,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            knn_k: None,
            mice: MiceConfig::default(),
            sice_runs: 5,
            forest: ForestConfig::default(),
            missforest_max_iter: 10,
            ae: AeSettings::default(),
            pain: PainConfig::default(),
        }
    }
}

/// Override keys accepted by [`MethodConfig::set`].
pub const OVERRIDE_KEYS: &[&str] = &[
    "knn.k",
    "mice.n_iter",
    "mice.ridge",
    "mice.tolerance",
    "sice.n_runs",
    "forest.n_trees",
    "forest.max_depth",
    "forest.min_samples_leaf",
    "forest.mtry",
    "missforest.max_iter",
    "ae.epochs",
    "ae.patience",
    "ae.batch_size",
    "ae.learning_rate",
    "ae.validation_fraction",
    "ae.dropout",
    "ae.hidden_dropout",
    "ae.batchnorm",
    "ae.activation",
    "pain.per_column",
    "pain.knn_k",
    "pain.ae_weight",
    "pain.use_autoencoder",
    "pain.iqr_factor",
    "pain.winsor_lo",
    "pain.winsor_hi",
    "pain.recalibrate",
    "pain.mmd_threshold",
    "pain.frequency_threshold",
];

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Config(format!("`{key}` expects a number, got {v}")))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::Config(format!("`{key}` expects a non-negative integer, got {v}")))
}

fn as_opt_usize(key: &str, v: &Value) -> Result<Option<usize>> {
    if v.is_null() {
        Ok(None)
    } else {
        as_usize(key, v).map(Some)
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| Error::Config(format!("`{key}` expects true or false, got {v}")))
}

impl MethodConfig {
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let pain = &mut self.pain;
        match key {
            "knn.k" => self.knn_k = as_opt_usize(key, v)?,
            "mice.n_iter" => self.mice.n_iter = as_usize(key, v)?,
            "mice.ridge" => self.mice.ridge = as_f64(key, v)?,
            "mice.tolerance" => self.mice.tolerance = as_f64(key, v)?,
            "sice.n_runs" => self.sice_runs = as_usize(key, v)?,
            "forest.n_trees" => self.forest.n_trees = as_usize(key, v)?,
            "forest.max_depth" => self.forest.max_depth = as_usize(key, v)?,
            "forest.min_samples_leaf" => self.forest.min_samples_leaf = as_usize(key, v)?,
            "forest.mtry" => self.forest.mtry = as_opt_usize(key, v)?,
            "missforest.max_iter" => self.missforest_max_iter = as_usize(key, v)?,
            "ae.epochs" => self.ae.schedule.epochs = as_usize(key, v)?,
            "ae.patience" => self.ae.schedule.patience = as_usize(key, v)?,
            "ae.batch_size" => self.ae.schedule.batch_size = as_opt_usize(key, v)?,
            "ae.learning_rate" => self.ae.schedule.learning_rate = as_f64(key, v)?,
            "ae.validation_fraction" => self.ae.schedule.validation_fraction = as_f64(key, v)?,
            "ae.dropout" => self.ae.dropout = as_f64(key, v)?,
            "ae.hidden_dropout" => self.ae.hidden_dropout = as_f64(key, v)?,
            "ae.batchnorm" => self.ae.batchnorm = as_bool(key, v)?,
            "ae.activation" => {
                self.ae.activation = serde_json::from_value(v.clone())
                    .map_err(|_| Error::Config(format!("`{key}` expects \"relu\" or \"identity\", got {v}")))?
            }
            "pain.per_column" => pain.layer1.per_column = as_bool(key, v)?,
            "pain.knn_k" => pain.layer1.knn_k = as_opt_usize(key, v)?,
            "pain.ae_weight" => pain.layer2.ae_weight = as_f64(key, v)?,
            "pain.use_autoencoder" => pain.layer2.use_autoencoder = as_bool(key, v)?,
            "pain.iqr_factor" => pain.refinement.iqr_factor = as_f64(key, v)?,
            "pain.winsor_lo" => pain.refinement.winsor_lo = as_f64(key, v)?,
            "pain.winsor_hi" => pain.refinement.winsor_hi = as_f64(key, v)?,
            "pain.recalibrate" => pain.refinement.recalibrate = as_bool(key, v)?,
            "pain.mmd_threshold" => pain.refinement.mmd_threshold = as_f64(key, v)?,
            "pain.frequency_threshold" => pain.refinement.frequency_threshold = as_f64(key, v)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown override key `{other}` (known keys: {})",
                    OVERRIDE_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn with_overrides(overrides: &BTreeMap<String, Value>) -> Result<Self> {
        let mut cfg = MethodConfig::default();
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.knn_k == Some(0) || self.pain.layer1.knn_k == Some(0) {
            return bad("knn k must be >= 1");
        }
        if self.sice_runs == 0 {
            return bad("sice.n_runs must be >= 1");
        }
        if !(self.mice.ridge >= 0.0 && self.mice.tolerance >= 0.0) {
            return bad("mice.ridge and mice.tolerance must be >= 0");
        }
        self.forest.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.missforest_max_iter == 0 {
            return bad("missforest.max_iter must be >= 1");
        }
        let s = &self.ae.schedule;
        if s.epochs == 0 || s.batch_size == Some(0) || !(s.learning_rate > 0.0) {
            return bad("ae.epochs, ae.batch_size and ae.learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&s.validation_fraction) {
            return bad("ae.validation_fraction must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.ae.dropout) || !(0.0..1.0).contains(&self.ae.hidden_dropout) {
            return bad("ae dropout rates must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.pain.layer2.ae_weight) {
            return bad("pain.ae_weight must lie in [0, 1]");
        }
        self.pain.refinement.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Runs one method. Every stochastic component draws from `seed`.
pub fn run_method(
    table: &DataTable,
    mask: &MissingMask,
    method: MethodId,
    config: &MethodConfig,
    seed: u64,
) -> Result<ImputationResult> {
    match method {
        MethodId::Mean => impute_statistical(table, mask, StatKind::Mean),
        MethodId::Median => impute_statistical(table, mask, StatKind::Median),
        MethodId::Mode => impute_statistical(table, mask, StatKind::Mode),
        MethodId::Knn => impute_knn(table, mask, config.knn_k),
        MethodId::Mice => impute_mice(table, mask, &config.mice),
        MethodId::Sice => impute_sice(table, mask, &config.mice, config.sice_runs, seed::derive(seed, "sice")),
        MethodId::CombinedAvg => {
            impute_combined(table, mask, CombinedVariant::MiceKnnAverage, config.knn_k, &config.mice)
        }
        MethodId::CombinedTyped => impute_combined(table, mask, CombinedVariant::TypedSplit, config.knn_k, &config.mice),
        MethodId::MissForest => {
            let forest = ForestConfig {
                seed: seed::derive(seed, "missforest"),
                ..config.forest.clone()
            };
            impute_missforest(table, mask, &forest, config.missforest_max_iter)
        }
        MethodId::Autoencoder => {
            let arch = config.ae.architecture_for(table.n_cols())?;
            let schedule = TrainSchedule {
                seed: seed::derive(seed, "autoencoder"),
                ..config.ae.schedule.clone()
            };
            impute_autoencoder(table, mask, Some(&arch), &schedule)
        }
        MethodId::Pain => {
            let mut pain = config.pain.clone();
            pain.seed = seed::derive(seed, "pain");
            pain.layer2.forest = config.forest.clone();
            pain.layer2.schedule = config.ae.schedule.clone();
            if table.n_cols() >= 2 {
                pain.layer2.architecture = Some(config.ae.architecture_for(table.n_cols())?);
            }
            impute_pain(table, mask, &pain)
        }
    }
}
