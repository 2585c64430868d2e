//! The three-layer composite imputer: a missingness-weighted blend of
//! statistical and KNN fills, a forest + autoencoder refit, and a
//! statistical refinement pass over the imputed cells.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::amputation::MissingMask;
use crate::autoencoder::{self, AeArchitecture, TrainSchedule};
use crate::baseline::{default_k, knn_fill};
use crate::data::{DataTable, Scaling, StatBundle};
use crate::error::{Error, Result};
use crate::forest::{missforest_pass, ForestConfig};
use crate::imputation::{ImputationResult, Params, Working};
use crate::matrix::Matrix;
use crate::metrics::mmd_1d;
use crate::seed;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub w_mean: f64,
    pub w_median: f64,
    pub w_knn: f64,
    pub normalized: bool,
}

/// Mean and median weights shrink with the missingness ratio while the KNN
/// weight grows; the three are rescaled to sum to one.
pub fn layer1_weights(missingness_ratio: f64) -> Result<LayerWeights> {
    let m = missingness_ratio;
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Param(format!("missingness ratio {m} outside [0, 1]")));
    }
    let (w1, w2, w3) = (0.3 * (1.0 - m), 0.3 * (1.0 - m), 0.4 * m);
    let total = w1 + w2 + w3;
    Ok(LayerWeights {
        w_mean: w1 / total,
        w_median: w2 / total,
        w_knn: w3 / total,
        normalized: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Layer1Config {
    /// Weights from each column's own missingness (otherwise the table's).
    pub per_column: bool,
    /// KNN neighbours; `None` means `round(sqrt(n))`.
    pub knn_k: Option<usize>,
}

impl Default for Layer1Config {
    fn default() -> Self {
        Layer1Config {
            per_column: true,
            knn_k: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer1Fill {
    pub filled: Matrix,
    pub weights: Vec<LayerWeights>,
    pub knn_fallbacks: usize,
}

pub(crate) fn layer1(w: &Working, cfg: &Layer1Config) -> Result<Layer1Fill> {
    w.require_observed()?;
    let knn = knn_fill(w, cfg.knn_k.unwrap_or_else(|| default_k(w.n_rows())));
    let global = w.total_missing() as f64 / (w.n_rows() * w.n_cols()) as f64;
    let mut filled = w.values.clone();
    let mut weights = Vec::with_capacity(w.n_cols());
    for j in 0..w.n_cols() {
        let lw = layer1_weights(if cfg.per_column { w.missing_ratio(j) } else { global })?;
        weights.push(lw);
        let obs = w.observed_column(j);
        if w.meta(j).is_discrete() {
            let mode = stats::mode(&obs);
            for i in w.missing_rows(j) {
                let vote = knn.filled.get(i, j);
                let v = if vote != mode && lw.w_knn > lw.w_mean + lw.w_median {
                    vote
                } else {
                    mode
                };
                filled.set(i, j, v);
            }
        } else {
            let mean = stats::mean(&obs);
            let median = stats::median_sorted(&stats::sorted(&obs));
            for i in w.missing_rows(j) {
                let v = lw.w_mean * mean + lw.w_median * median + lw.w_knn * knn.filled.get(i, j);
                filled.set(i, j, v);
            }
        }
    }
    Ok(Layer1Fill {
        filled,
        weights,
        knn_fallbacks: knn.fallbacks,
    })
}

/// Layer 1 alone: masked cells from the weighted mean/median/KNN blend
/// (a mode-vs-KNN vote on discrete columns).
pub fn layer1_impute(table: &DataTable, mask: &MissingMask, cfg: &Layer1Config) -> Result<Layer1Fill> {
    layer1(&Working::new(table, mask)?, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Layer2Config {
    pub forest: ForestConfig,
    /// `None` derives the symmetric bottleneck from the column count.
    pub architecture: Option<AeArchitecture>,
    pub schedule: TrainSchedule,
    /// Share of the autoencoder branch in continuous cells.
    pub ae_weight: f64,
    pub use_autoencoder: bool,
}

impl Default for Layer2Config {
    fn default() -> Self {
        Layer2Config {
            forest: ForestConfig::default(),
            architecture: None,
            schedule: TrainSchedule::default(),
            ae_weight: 0.5,
            use_autoencoder: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Disagreement {
    pub cells: usize,
    /// Mean and max |forest - autoencoder| in observed-standard-deviation units.
    pub mean_abs: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone)]
pub struct Layer2Fill {
    pub filled: Matrix,
    pub forest_fill: Matrix,
    pub ae_fill: Option<Matrix>,
    pub disagreement: Disagreement,
    pub ae_epochs: usize,
    pub warnings: Vec<String>,
}

pub(crate) fn layer2(w: &Working, start: &Matrix, cfg: &Layer2Config, seed: u64) -> Result<Layer2Fill> {
    if !(0.0..=1.0).contains(&cfg.ae_weight) {
        return Err(Error::Param("pain.ae_weight must lie in [0, 1]".into()));
    }
    cfg.forest.validate()?;
    if start.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Param("layer 2 needs a complete starting fill".into()));
    }
    let mut forest_fill = start.clone();
    missforest_pass(w, &mut forest_fill, &cfg.forest, seed::derive(seed, "pain-forest"), 0)?;
    let mut warnings = Vec::new();
    let mut ae_epochs = 0;
    let ae_fill = if cfg.use_autoencoder && cfg.ae_weight > 0.0 && w.total_missing() > 0 {
        let built;
        let arch = match &cfg.architecture {
            Some(a) => a,
            None => {
                built = autoencoder::build_architecture(w.n_cols())?;
                &built
            }
        };
        let schedule = TrainSchedule {
            seed: seed::derive(seed, "pain-ae"),
            ..cfg.schedule.clone()
        };
        match autoencoder::reconstruct_fill(w, start, arch, &schedule) {
            Ok((recon, model)) => {
                ae_epochs = model.epochs_run();
                Some(recon)
            }
            Err(e) => {
                warnings.push(format!("autoencoder branch dropped: {e}"));
                None
            }
        }
    } else {
        None
    };
    let scalings = w.scalings();
    let mut filled = forest_fill.clone();
    let mut dis = Disagreement::default();
    let mut sum = 0.0;
    if let Some(ae) = &ae_fill {
        for j in (0..w.n_cols()).filter(|&j| !w.meta(j).is_discrete()) {
            for i in w.missing_rows(j) {
                let (f, a) = (forest_fill.get(i, j), ae.get(i, j));
                filled.set(i, j, (1.0 - cfg.ae_weight) * f + cfg.ae_weight * a);
                let gap = (f - a).abs() / scalings[j].std;
                sum += gap;
                dis.max_abs = dis.max_abs.max(gap);
                dis.cells += 1;
            }
        }
    }
    if dis.cells > 0 {
        dis.mean_abs = sum / dis.cells as f64;
    }
    Ok(Layer2Fill {
        filled,
        forest_fill,
        ae_fill,
        disagreement: dis,
        ae_epochs,
        warnings,
    })
}

/// Layer 2 alone, starting from a complete `layer1_fill`.
pub fn layer2_impute(
    table: &DataTable,
    mask: &MissingMask,
    layer1_fill: &Matrix,
    cfg: &Layer2Config,
    seed: u64,
) -> Result<Layer2Fill> {
    layer2(&Working::new(table, mask)?, layer1_fill, cfg, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    pub iqr_factor: f64,
    /// Winsorization percentiles in [0, 100].
    pub winsor_lo: f64,
    pub winsor_hi: f64,
    /// Shift continuous imputations so their mean matches the observed mean.
    pub recalibrate: bool,
    pub mmd_threshold: f64,
    /// Largest allowed excess (as a fraction) of a category's imputed share
    /// over its observed share.
    pub frequency_threshold: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            iqr_factor: 1.5,
            winsor_lo: 5.0,
            winsor_hi: 95.0,
            recalibrate: false,
            mmd_threshold: 0.1,
            frequency_threshold: 0.20,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iqr_factor > 0.0) {
            return Err(Error::Param("iqr_factor must be positive".into()));
        }
        if !(0.0 <= self.winsor_lo && self.winsor_lo < self.winsor_hi && self.winsor_hi <= 100.0) {
            return Err(Error::Param("need 0 <= winsor_lo < winsor_hi <= 100".into()));
        }
        if !(0.0..=1.0).contains(&self.frequency_threshold) {
            return Err(Error::Param("frequency_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRefinement {
    pub column: String,
    pub fence_clamped: usize,
    pub winsorized: usize,
    pub reassigned: usize,
    pub shift: f64,
    pub mmd: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct Refined {
    pub filled: Matrix,
    pub columns: Vec<ColumnRefinement>,
}

/// Moves cells of an over-represented category to their second-nearest
/// category, provided that category still has room under the threshold.
fn rebalance(values: &mut [f64], raw: &[f64], cats: &[f64], observed: &[f64], threshold: f64) -> usize {
    let n_imp = values.len();
    if n_imp == 0 || cats.len() < 2 {
        return 0;
    }
    let share = |c: f64| observed.iter().filter(|&&v| v == c).count() as f64 / observed.len() as f64;
    let allowance = |c: f64| ((share(c) + threshold) * n_imp as f64 + 1e-9).floor() as usize;
    let count = |vals: &[f64], c: f64| vals.iter().filter(|&&v| v == c).count();
    let mut moved = 0;
    for &c in cats {
        let held = count(values, c);
        let allowed = allowance(c);
        if held <= allowed {
            continue;
        }
        let second = |x: f64| {
            let others: Vec<f64> = cats.iter().copied().filter(|&o| o != c).collect();
            stats::nearest_category(&others, x)
        };
        // Cells closest to their alternative move first.
        let mut idx: Vec<usize> = (0..n_imp).filter(|&k| values[k] == c).collect();
        idx.sort_by(|&a, &b| {
            let da = (raw[a] - second(raw[a])).abs();
            let db = (raw[b] - second(raw[b])).abs();
            da.total_cmp(&db).then(a.cmp(&b))
        });
        let mut excess = held - allowed;
        for k in idx {
            if excess == 0 {
                break;
            }
            let target = second(raw[k]);
            if count(values, target) < allowance(target) {
                values[k] = target;
                excess -= 1;
                moved += 1;
            }
        }
    }
    moved
}

pub(crate) fn layer3(w: &Working, fill: &Matrix, cfg: &RefinementConfig) -> Result<Refined> {
    cfg.validate()?;
    let mut out = fill.clone();
    let mut columns = Vec::with_capacity(w.n_cols());
    for j in 0..w.n_cols() {
        let obs = w.observed_column(j);
        let rows = w.missing_rows(j);
        let mut report = ColumnRefinement {
            column: w.meta(j).name.clone(),
            fence_clamped: 0,
            winsorized: 0,
            reassigned: 0,
            shift: 0.0,
            mmd: None,
            flagged: false,
        };
        let Some(st) = StatBundle::from_observed(&obs, w.n_rows()) else {
            columns.push(report);
            continue;
        };
        if rows.is_empty() {
            columns.push(report);
            continue;
        }
        let sorted = stats::sorted(&obs);
        let (lo_fence, hi_fence) = (st.q25 - cfg.iqr_factor * st.iqr(), st.q75 + cfg.iqr_factor * st.iqr());
        let mut vals: Vec<f64> = rows.iter().map(|&i| fill.get(i, j)).collect();
        for v in vals.iter_mut() {
            if *v < lo_fence || *v > hi_fence {
                *v = v.clamp(lo_fence, hi_fence);
                report.fence_clamped += 1;
            }
        }
        if w.meta(j).is_discrete() {
            let cats = w.categories(j);
            let raw = vals.clone();
            for v in vals.iter_mut() {
                *v = stats::nearest_category(&cats, *v);
            }
            report.reassigned = rebalance(&mut vals, &raw, &cats, &obs, cfg.frequency_threshold);
        } else {
            let lo = stats::quantile_sorted(&sorted, cfg.winsor_lo / 100.0);
            let hi = stats::quantile_sorted(&sorted, cfg.winsor_hi / 100.0);
            for v in vals.iter_mut() {
                if *v < lo || *v > hi {
                    *v = v.clamp(lo, hi);
                    report.winsorized += 1;
                }
            }
            if cfg.recalibrate {
                report.shift = st.mean - stats::mean(&vals);
                for v in vals.iter_mut() {
                    *v = (*v + report.shift).clamp(st.min, st.max);
                }
            }
        }
        let sc = Scaling::from_observed(&obs);
        let z_obs: Vec<f64> = obs.iter().map(|&v| sc.forward(v)).collect();
        let z_imp: Vec<f64> = vals.iter().map(|&v| sc.forward(v)).collect();
        let m = mmd_1d(&z_obs, &z_imp);
        report.mmd = Some(m);
        report.flagged = m > cfg.mmd_threshold;
        for (&i, &v) in rows.iter().zip(&vals) {
            out.set(i, j, v);
        }
        columns.push(report);
    }
    Ok(Refined { filled: out, columns })
}

/// Layer 3 alone: refinement of a complete layer-2 fill.
pub fn layer3_refine(
    table: &DataTable,
    mask: &MissingMask,
    layer2_fill: &Matrix,
    cfg: &RefinementConfig,
) -> Result<ImputationResult> {
    let started = Instant::now();
    let w = Working::new(table, mask)?;
    let refined = layer3(&w, layer2_fill, cfg)?;
    let mut params = Params::new();
    params.insert("refinement".into(), json!(refined.columns));
    w.finalize(&refined.filled, "pain_layer3", started, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PainConfig {
    pub seed: u64,
    pub layer1: Layer1Config,
    pub layer2: Layer2Config,
    pub refinement: RefinementConfig,
}

impl Default for PainConfig {
    fn default() -> Self {
        PainConfig {
            seed: 0,
            layer1: Layer1Config::default(),
            layer2: Layer2Config::default(),
            refinement: RefinementConfig::default(),
        }
    }
}

pub fn impute_pain(table: &DataTable, mask: &MissingMask, cfg: &PainConfig) -> Result<ImputationResult> {
    let started = Instant::now();
    cfg.refinement.validate()?;
    let w = Working::new(table, mask)?;
    w.require_observed()?;
    let mut params = Params::new();
    if w.total_missing() == 0 {
        params.insert("layer_seconds".into(), json!([0.0, 0.0, 0.0]));
        return w.finalize(&w.values, "pain", started, params);
    }
    let t1 = Instant::now();
    let l1 = layer1(&w, &cfg.layer1)?;
    let s1 = t1.elapsed().as_secs_f64();
    let t2 = Instant::now();
    let l2 = layer2(&w, &l1.filled, &cfg.layer2, cfg.seed)?;
    let s2 = t2.elapsed().as_secs_f64();
    let t3 = Instant::now();
    let l3 = layer3(&w, &l2.filled, &cfg.refinement)?;
    let s3 = t3.elapsed().as_secs_f64();
    params.insert("layer_seconds".into(), json!([s1, s2, s3]));
    params.insert("layer1_weights".into(), json!(l1.weights));
    params.insert("knn_fallbacks".into(), json!(l1.knn_fallbacks));
    params.insert("layer2_disagreement".into(), json!(l2.disagreement));
    params.insert("ae_epochs".into(), json!(l2.ae_epochs));
    params.insert("warnings".into(), json!(l2.warnings));
    let flagged: Vec<&str> = l3.columns.iter().filter(|c| c.flagged).map(|c| c.column.as_str()).collect();
    params.insert("mmd_flagged_columns".into(), json!(flagged));
    params.insert("refinement".into(), json!(l3.columns));
    w.finalize(&l3.filled, "pain", started, params)
}
