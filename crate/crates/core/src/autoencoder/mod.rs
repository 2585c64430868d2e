//! Symmetric bottleneck autoencoder trained with a masked reconstruction
//! loss, usable standalone as an imputer and as a branch of the composite
//! imputer.

mod network;

use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use network::{masked_mse, Activation, Adam, ForwardPass, Network};

use crate::amputation::MissingMask;
use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::imputation::{ImputationResult, Params, Working};
use crate::matrix::{BoolMatrix, Matrix};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeArchitecture {
    pub widths: Vec<usize>,
    /// Input dropout: during training each input cell is blanked to its
    /// column mean with this probability, and the loss still scores it.
    pub dropout_p: f64,
    /// Inverted dropout after each hidden activation.
    #[serde(default)]
    pub hidden_dropout: f64,
    pub use_batchnorm: bool,
    pub activation: Activation,
}

/// `[d, d/2, d/4, d/8, d/4, d/2, d]` with floor division, hidden widths
/// clamped to at least 2.
pub fn build_architecture(d: usize) -> Result<AeArchitecture> {
    if d < 2 {
        return Err(Error::Param(format!("autoencoder needs d >= 2, got {d}")));
    }
    let w = |div: usize| (d / div).max(2);
    Ok(AeArchitecture {
        widths: vec![d, w(2), w(4), w(8), w(4), w(2), d],
        dropout_p: 0.2,
        hidden_dropout: 0.0,
        use_batchnorm: true,
        activation: Activation::Relu,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub patience: usize,
    /// `None` means `min(32, floor(n / 10))`, at least 1.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 100,
            patience: 10,
            batch_size: None,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn batch_size_for(&self, n: usize) -> usize {
        self.batch_size.unwrap_or_else(|| (n / 10).min(32)).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedAe {
    pub network: Network,
    pub history: Vec<EpochLoss>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
}

impl TrainedAe {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }

    pub fn reconstruct(&mut self, x: &Matrix) -> Matrix {
        self.network.reconstruct(x)
    }

    /// Loss history as CSV (`epoch,train_loss,validation_loss`).
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,validation_loss\n");
        for e in &self.history {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train, e.validation));
        }
        out
    }
}

fn gather(m: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), m.cols());
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}

fn gather_mask(m: &BoolMatrix, rows: &[usize]) -> BoolMatrix {
    let mut out = BoolMatrix::new(rows.len(), m.cols(), false);
    for (r, &i) in rows.iter().enumerate() {
        for c in 0..m.cols() {
            out.set(r, c, m.get(i, c));
        }
    }
    out
}

fn validate_architecture(arch: &AeArchitecture, d: usize) -> Result<()> {
    let w = &arch.widths;
    if w.len() < 2 || w[0] != d || w[w.len() - 1] != d || w.contains(&0) {
        return Err(Error::Param(format!(
            "architecture widths {w:?} do not match {d} columns"
        )));
    }
    if !(0.0..1.0).contains(&arch.dropout_p) || !(0.0..1.0).contains(&arch.hidden_dropout) {
        return Err(Error::Param("dropout must lie in [0, 1)".into()));
    }
    Ok(())
}

/// Trains on a complete, standardized matrix. The loss only counts cells
/// flagged in `observed`; a seeded 10% row split drives early stopping and
/// the best-validation weights are restored at the end.
pub fn train_autoencoder(
    x: &Matrix,
    observed: &BoolMatrix,
    arch: &AeArchitecture,
    schedule: &TrainSchedule,
) -> Result<TrainedAe> {
    let (n, d) = (x.rows(), x.cols());
    if n < 10 {
        return Err(Error::Param(format!("autoencoder training needs n >= 10, got {n}")));
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Param("autoencoder input must be complete and finite".into()));
    }
    validate_architecture(arch, d)?;
    if schedule.patience > schedule.epochs {
        return Err(Error::Param("patience must not exceed epochs".into()));
    }
    let mut rng = seed::rng(seed::derive(schedule.seed, "ae"));
    let mut network = Network::new(arch, &mut rng);
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    let n_val = ((n as f64 * schedule.validation_fraction).round() as usize).clamp(1, n - 1);
    let (val_rows, train_rows) = rows.split_at(n_val);
    let mut train_rows = train_rows.to_vec();
    let x_val = gather(x, val_rows);
    let obs_val = gather_mask(observed, val_rows);
    let batch = schedule.batch_size_for(n);
    let mut opt = Adam::new(
        network.n_params(),
        schedule.learning_rate,
        schedule.beta1,
        schedule.beta2,
        schedule.adam_eps,
    );
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, network.params.clone(), network.running_stats());
    for epoch in 1..=schedule.epochs {
        train_rows.shuffle(&mut rng);
        let mut chunks: Vec<&[usize]> = train_rows.chunks(batch).collect();
        // A single-row batch has no batch statistics; fold it into its neighbour.
        if arch.use_batchnorm && chunks.len() > 1 && chunks[chunks.len() - 1].len() == 1 {
            chunks.pop();
        }
        let mut covered = 0;
        let (mut loss_sum, mut cells) = (0.0, 0usize);
        for (ci, chunk) in chunks.iter().enumerate() {
            let idx = if ci + 1 == chunks.len() {
                &train_rows[covered..]
            } else {
                *chunk
            };
            covered += chunk.len();
            let xb = gather(x, idx);
            let ob = gather_mask(observed, idx);
            let mut input = xb.clone();
            if arch.dropout_p > 0.0 {
                for v in input.as_mut_slice() {
                    if rng.random::<f64>() < arch.dropout_p {
                        *v = 0.0;
                    }
                }
            }
            let pass = network.forward(&input, true, true, Some(&mut rng));
            let (loss, d_out) = masked_mse(&pass.output, &xb, &ob);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let grad = network.backward(&pass, &d_out);
            opt.step(&mut network.params, &grad);
            let k = ob.count();
            loss_sum += loss * k as f64;
            cells += k;
        }
        let train = if cells > 0 { loss_sum / cells as f64 } else { 0.0 };
        let out_val = network.reconstruct(&x_val);
        let (validation, _) = masked_mse(&out_val, &x_val, &obs_val);
        if !validation.is_finite() || !train.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(EpochLoss {
            epoch,
            train,
            validation,
        });
        if validation < best.0 {
            best = (validation, epoch, network.params.clone(), network.running_stats());
        } else if epoch - best.1 >= schedule.patience {
            break;
        }
    }
    network.params = best.2;
    network.set_running_stats(best.3);
    Ok(TrainedAe {
        network,
        history,
        best_epoch: best.1,
    })
}

/// Trains on `fill` (complete, raw units) and returns the reconstruction of
/// every cell in raw units together with the trained model.
pub(crate) fn reconstruct_fill(
    w: &Working,
    fill: &Matrix,
    arch: &AeArchitecture,
    schedule: &TrainSchedule,
) -> Result<(Matrix, TrainedAe)> {
    let scalings = w.scalings();
    let (n, d) = (w.n_rows(), w.n_cols());
    let mut z = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            z.set(i, j, scalings[j].forward(fill.get(i, j)));
        }
    }
    let mut model = train_autoencoder(&z, &w.observed, arch, schedule)?;
    let mut out = model.reconstruct(&z);
    for i in 0..n {
        for j in 0..d {
            out.set(i, j, scalings[j].inverse(out.get(i, j)));
        }
    }
    Ok((out, model))
}

pub fn impute_autoencoder(
    table: &DataTable,
    mask: &MissingMask,
    arch: Option<&AeArchitecture>,
    schedule: &TrainSchedule,
) -> Result<ImputationResult> {
    let started = Instant::now();
    let w = Working::new(table, mask)?;
    w.require_observed()?;
    let built;
    let arch = match arch {
        Some(a) => a,
        None => {
            built = build_architecture(table.n_cols())?;
            &built
        }
    };
    let mut params = Params::new();
    params.insert("widths".into(), json!(arch.widths));
    if w.total_missing() == 0 {
        params.insert("epochs_run".into(), json!(0));
        return w.finalize(&w.values, "autoencoder", started, params);
    }
    let mut fill = w.values.clone();
    for j in 0..w.n_cols() {
        let mean = crate::stats::mean(&w.observed_column(j));
        for i in w.missing_rows(j) {
            fill.set(i, j, mean);
        }
    }
    let (recon, model) = reconstruct_fill(&w, &fill, arch, schedule)?;
    for j in 0..w.n_cols() {
        for i in w.missing_rows(j) {
            fill.set(i, j, recon.get(i, j));
        }
    }
    params.insert("epochs_run".into(), json!(model.epochs_run()));
    params.insert("best_epoch".into(), json!(model.best_epoch));
    params.insert(
        "best_validation_loss".into(),
        json!(model.history[model.best_epoch - 1].validation),
    );
    w.finalize(&fill, "autoencoder", started, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub probes: usize,
    /// Probes skipped because the finite difference crossed a ReLU kink.
    pub skipped: usize,
}

pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

/// Compares backpropagated gradients of the masked loss with central finite
/// differences on up to `max_probes` randomly chosen parameters, at a
/// random parameter point and random data drawn from `seed`. Dropout is
/// switched off; batch normalization must be disabled.
pub fn gradient_check(arch: &AeArchitecture, seed: u64, max_probes: usize) -> Result<GradientCheck> {
    if arch.use_batchnorm {
        return Err(Error::Param("gradient check requires batch normalization disabled".into()));
    }
    let arch = AeArchitecture {
        dropout_p: 0.0,
        hidden_dropout: 0.0,
        ..arch.clone()
    };
    let mut rng = seed::rng(seed::derive(seed, "gradcheck"));
    let net = Network::new(&arch, &mut rng);
    check_network(net, seed, max_probes, false)
}

pub(crate) fn check_network(mut net: Network, seed: u64, max_probes: usize, training: bool) -> Result<GradientCheck> {
    use rand_distr::StandardNormal;
    let mut rng = seed::rng(seed::derive(seed, "gradcheck-data"));
    let d = net.arch.widths[0];
    let rows = 16;
    let mut x = Matrix::zeros(rows, d);
    let mut target = Matrix::zeros(rows, net.arch.widths[net.arch.widths.len() - 1]);
    let mut obs = BoolMatrix::new(rows, target.cols(), false);
    for i in 0..rows {
        for j in 0..d {
            x.set(i, j, rng.sample(StandardNormal));
        }
        for j in 0..target.cols() {
            target.set(i, j, rng.sample(StandardNormal));
            obs.set(i, j, rng.random::<f64>() < 0.8);
        }
    }
    let loss_at = |net: &mut Network| {
        let pass = net.forward(&x, training, false, None);
        let pattern = pass.activation_pattern();
        (masked_mse(&pass.output, &target, &obs).0, pattern)
    };
    let pass = net.forward(&x, training, false, None);
    let base_pattern = pass.activation_pattern();
    let (_, d_out) = masked_mse(&pass.output, &target, &obs);
    let grad = net.backward(&pass, &d_out);
    let n = net.n_params();
    let picks = index::sample(&mut rng, n, max_probes.min(n));
    let h = GRADIENT_CHECK_STEP;
    let mut worst: f64 = 0.0;
    let (mut probes, mut skipped) = (0, 0);
    for p in picks.iter() {
        let orig = net.params[p];
        net.params[p] = orig + h;
        let (plus, pat_plus) = loss_at(&mut net);
        net.params[p] = orig - h;
        let (minus, pat_minus) = loss_at(&mut net);
        net.params[p] = orig;
        if pat_plus != base_pattern || pat_minus != base_pattern {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let denom = (grad[p].abs() + numeric.abs()).max(1e-6);
        worst = worst.max((grad[p] - numeric).abs() / denom);
        probes += 1;
    }
    Ok(GradientCheck {
        max_relative_error: worst,
        probes,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_widths() {
        assert_eq!(build_architecture(8).unwrap().widths, vec![8, 4, 2, 2, 2, 4, 8]);
        assert_eq!(build_architecture(20).unwrap().widths, vec![20, 10, 5, 2, 5, 10, 20]);
        assert_eq!(build_architecture(9).unwrap().widths, vec![9, 4, 2, 2, 2, 4, 9]);
        assert!(build_architecture(1).is_err());
        for d in 2..40 {
            let w = build_architecture(d).unwrap().widths;
            let mut r = w.clone();
            r.reverse();
            assert_eq!(w, r);
            assert!(w.iter().all(|&x| x >= 2));
        }
    }

    #[test]
    fn batch_size_rule() {
        let s = TrainSchedule::default();
        assert_eq!(s.batch_size_for(1000), 32);
        assert_eq!(s.batch_size_for(200), 20);
        assert_eq!(s.batch_size_for(10), 1);
    }

    #[test]
    fn linear_single_layer_gradients_are_exact() {
        let arch = AeArchitecture {
            widths: vec![6, 6],
            dropout_p: 0.0,
            hidden_dropout: 0.0,
            use_batchnorm: false,
            activation: Activation::Identity,
        };
        let g = gradient_check(&arch, 3, 1000).unwrap();
        assert!(g.max_relative_error < 1e-7, "{g:?}");
        assert_eq!(g.probes, 42);
    }

    #[test]
    fn relu_stack_gradients_match() {
        let arch = AeArchitecture {
            use_batchnorm: false,
            ..build_architecture(8).unwrap()
        };
        let g = gradient_check(&arch, 11, 1000).unwrap();
        assert!(g.max_relative_error < 1e-4, "{g:?}");
        assert!(g.probes > 0);
        assert_eq!(g, gradient_check(&arch, 11, 1000).unwrap());
    }

    #[test]
    fn batchnorm_training_gradients_match() {
        let arch = AeArchitecture {
            dropout_p: 0.0,
            hidden_dropout: 0.0,
            ..build_architecture(8).unwrap()
        };
        let mut rng = seed::rng(5);
        let net = Network::new(&arch, &mut rng);
        let g = check_network(net, 5, 500, true).unwrap();
        assert!(g.max_relative_error < 1e-4, "{g:?}");
    }

    #[test]
    fn gradient_check_rejects_batchnorm() {
        assert!(gradient_check(&build_architecture(8).unwrap(), 1, 10).is_err());
    }

    #[test]
    fn masked_cells_get_zero_output_gradient() {
        let arch = build_architecture(4).unwrap();
        let mut net = Network::new(&arch, &mut seed::rng(1));
        let x = Matrix::from_rows(&[vec![0.1, 0.2, 0.3, 0.4], vec![1.0, -1.0, 0.5, 0.0], vec![0.3, 0.3, -0.2, 0.9]]);
        let mut obs = BoolMatrix::new(3, 4, true);
        obs.set(1, 2, false);
        let pass = net.forward(&x, false, false, None);
        let (_, g) = masked_mse(&pass.output, &x, &obs);
        assert_eq!(g.get(1, 2), 0.0);
    }

    fn rank_one(n: usize, d: usize, seed: u64) -> Matrix {
        use rand_distr::StandardNormal;
        let mut rng = seed::rng(seed);
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut x = Matrix::zeros(n, d);
        for i in 0..n {
            let u: f64 = rng.sample(StandardNormal);
            for j in 0..d {
                x.set(i, j, u * v[j]);
            }
        }
        x
    }

    fn standardized(x: &Matrix) -> Matrix {
        let mut z = x.clone();
        for j in 0..x.cols() {
            let sc = crate::data::Scaling::from_observed(&x.column(j));
            for i in 0..x.rows() {
                z.set(i, j, sc.forward(x.get(i, j)));
            }
        }
        z
    }

    fn rank_one_mse(seed: u64, schedule: &TrainSchedule) -> (f64, TrainedAe) {
        let z = standardized(&rank_one(200, 8, seed));
        let obs = BoolMatrix::new(200, 8, true);
        let mut model = train_autoencoder(&z, &obs, &build_architecture(8).unwrap(), schedule).unwrap();
        let out = model.reconstruct(&z);
        (masked_mse(&out, &z, &obs).0, model)
    }

    #[test]
    fn default_schedule_learns_rank_one_structure() {
        let mut total = 0.0;
        for s in 0..5 {
            let (mse, model) = rank_one_mse(s, &TrainSchedule { seed: s, ..TrainSchedule::default() });
            total += mse;
            let best = model.history[model.best_epoch - 1].validation;
            assert!(best <= model.history[0].validation);
            assert!(model.epochs_run() <= 100 && model.epochs_run() - model.best_epoch <= 10);
        }
        assert!(total / 5.0 < 0.3, "mean mse {}", total / 5.0);
    }

    #[test]
    fn longer_schedule_fits_rank_one_closely() {
        for s in 0..5 {
            let sched = TrainSchedule {
                epochs: 800,
                patience: 800,
                seed: s,
                ..TrainSchedule::default()
            };
            let (mse, _) = rank_one_mse(s, &sched);
            assert!(mse < 0.05, "seed {s}: {mse}");
        }
    }

    #[test]
    fn early_training_loss_does_not_rise() {
        let mut avg = [0.0; 5];
        for s in 0..5 {
            let z = standardized(&rank_one(200, 8, 10 + s));
            let obs = BoolMatrix::new(200, 8, true);
            let sched = TrainSchedule { epochs: 5, patience: 5, seed: s, ..TrainSchedule::default() };
            let model = train_autoencoder(&z, &obs, &build_architecture(8).unwrap(), &sched).unwrap();
            for (k, e) in model.history.iter().enumerate() {
                avg[k] += e.train / 5.0;
            }
        }
        for k in 1..5 {
            assert!(avg[k] <= avg[k - 1], "{avg:?}");
        }
    }

    #[test]
    fn beats_mean_on_rank_one_mcar() {
        use crate::amputation::ampute_mcar;
        use crate::baseline::{impute_statistical, StatKind};
        for s in 0..5 {
            let x = rank_one(200, 8, 20 + s);
            let names = (0..8).map(|j| format!("x{j}")).collect();
            let kinds = vec![crate::data::ColumnKind::Continuous; 8];
            let t = DataTable::from_matrix("r1", names, &x, Some(&kinds)).unwrap();
            let m = ampute_mcar(&t, 0.2, s).unwrap();
            let sched = TrainSchedule { seed: s, ..TrainSchedule::default() };
            let ae = impute_autoencoder(&t, &m, None, &sched).unwrap();
            let mean = impute_statistical(&t, &m, StatKind::Mean).unwrap();
            let err = |c: &Matrix| {
                let (mut e, mut k) = (0.0, 0);
                for i in 0..200 {
                    for j in 0..8 {
                        if m.is_masked(i, j) {
                            e += (c.get(i, j) - x.get(i, j)).abs();
                            k += 1;
                        }
                    }
                }
                e / k as f64
            };
            assert!(err(&ae.completed) < err(&mean.completed), "seed {s}");
            let again = impute_autoencoder(&t, &m, None, &sched).unwrap();
            assert_eq!(again.completed, ae.completed);
        }
    }

    #[test]
    fn nothing_masked_is_identity() {
        let x = rank_one(30, 4, 1);
        let names = (0..4).map(|j| format!("x{j}")).collect();
        let t = DataTable::from_matrix("r1", names, &x, None).unwrap();
        let r = impute_autoencoder(&t, &MissingMask::none(30, 4), None, &TrainSchedule::default()).unwrap();
        assert_eq!(r.completed, x);
    }
}
