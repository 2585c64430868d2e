//! Dense feed-forward network with optional batch normalization, ReLU and
//! inverted dropout, plus its backward pass. Parameters live in one flat
//! vector so the optimizer and the gradient checker can treat them uniformly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AeArchitecture;
use crate::matrix::{BoolMatrix, Matrix};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layout {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
    /// (gamma, beta) offsets when batch normalization follows this layer.
    bn: Option<(usize, usize)>,
    hidden: bool,
    /// ReLU after this layer; the code (middle) layer stays linear.
    relu: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: AeArchitecture,
    layout: Vec<Layout>,
    pub params: Vec<f64>,
    running_mean: Vec<Vec<f64>>,
    running_var: Vec<Vec<f64>>,
}

#[derive(Default)]
struct LayerCache {
    input: Matrix,
    /// Post-normalization, pre-activation values (hidden layers).
    pre_act: Matrix,
    xhat: Option<Matrix>,
    inv_std: Option<Vec<f64>>,
    dropout: Option<Vec<f64>>,
}

pub struct ForwardPass {
    pub output: Matrix,
    caches: Vec<LayerCache>,
    training: bool,
}

impl ForwardPass {
    /// ReLU on/off pattern of every hidden unit, used to detect kinks.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.caches
            .iter()
            .flat_map(|c| c.pre_act.as_slice().iter().map(|&v| v > 0.0))
            .collect()
    }
}

impl Network {
    /// He-uniform weights into ReLU layers, Glorot-uniform into linear ones,
    /// zero biases, unit BN scale.
    pub fn new(arch: &AeArchitecture, rng: &mut ChaCha8Rng) -> Self {
        let mut layout = Vec::new();
        let mut offset = 0;
        let n_layers = arch.widths.len() - 1;
        let code = arch.widths.len() / 2;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (arch.widths[l], arch.widths[l + 1]);
            let hidden = l + 1 < n_layers;
            let w = offset;
            offset += fan_in * fan_out;
            let b = offset;
            offset += fan_out;
            let bn = if hidden && arch.use_batchnorm {
                let g = offset;
                offset += 2 * fan_out;
                Some((g, g + fan_out))
            } else {
                None
            };
            layout.push(Layout {
                fan_in,
                fan_out,
                w,
                b,
                bn,
                hidden,
                relu: hidden && arch.activation == Activation::Relu && (l + 1 != code || n_layers < 3),
            });
        }
        let mut params = vec![0.0; offset];
        for lay in &layout {
            let bound = if lay.relu {
                (6.0 / lay.fan_in as f64).sqrt()
            } else {
                (6.0 / (lay.fan_in + lay.fan_out) as f64).sqrt()
            };
            for p in &mut params[lay.w..lay.w + lay.fan_in * lay.fan_out] {
                *p = rng.random_range(-bound..bound);
            }
            if let Some((g, _)) = lay.bn {
                params[g..g + lay.fan_out].iter_mut().for_each(|p| *p = 1.0);
            }
        }
        let running_mean = layout.iter().map(|l| vec![0.0; l.fan_out]).collect();
        let running_var = layout.iter().map(|l| vec![1.0; l.fan_out]).collect();
        Network {
            arch: arch.clone(),
            layout,
            params,
            running_mean,
            running_var,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Forward pass. In training mode batch statistics are used (and the
    /// running averages updated when `update_running` is set) and dropout is
    /// sampled from `rng`; in inference mode both are deterministic.
    pub fn forward(
        &mut self,
        x: &Matrix,
        training: bool,
        update_running: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> ForwardPass {
        let b = x.rows();
        let mut a = x.clone();
        let mut caches = Vec::with_capacity(self.layout.len());
        for (l, lay) in self.layout.iter().enumerate() {
            let mut z = Matrix::zeros(b, lay.fan_out);
            let w = &self.params[lay.w..lay.w + lay.fan_in * lay.fan_out];
            let bias = &self.params[lay.b..lay.b + lay.fan_out];
            for r in 0..b {
                let ar = a.row(r);
                let zr = z.row_mut(r);
                for o in 0..lay.fan_out {
                    let wo = &w[o * lay.fan_in..(o + 1) * lay.fan_in];
                    zr[o] = bias[o] + wo.iter().zip(ar).map(|(p, q)| p * q).sum::<f64>();
                }
            }
            let mut cache = LayerCache {
                input: a,
                ..LayerCache::default()
            };
            if !lay.hidden {
                caches.push(cache);
                a = z;
                continue;
            }
            if let Some((g, be)) = lay.bn {
                let mut xhat = Matrix::zeros(b, lay.fan_out);
                let mut inv_std = vec![0.0; lay.fan_out];
                for o in 0..lay.fan_out {
                    let (mu, var) = if training {
                        let mu = (0..b).map(|r| z.get(r, o)).sum::<f64>() / b as f64;
                        let var = (0..b).map(|r| (z.get(r, o) - mu).powi(2)).sum::<f64>() / b as f64;
                        if update_running {
                            let unbiased = if b > 1 { var * b as f64 / (b - 1) as f64 } else { var };
                            self.running_mean[l][o] = (1.0 - BN_MOMENTUM) * self.running_mean[l][o] + BN_MOMENTUM * mu;
                            self.running_var[l][o] = (1.0 - BN_MOMENTUM) * self.running_var[l][o] + BN_MOMENTUM * unbiased;
                        }
                        (mu, var)
                    } else {
                        (self.running_mean[l][o], self.running_var[l][o])
                    };
                    let is = 1.0 / (var + BN_EPS).sqrt();
                    inv_std[o] = is;
                    let (gamma, beta) = (self.params[g + o], self.params[be + o]);
                    for r in 0..b {
                        let xh = (z.get(r, o) - mu) * is;
                        xhat.set(r, o, xh);
                        z.set(r, o, gamma * xh + beta);
                    }
                }
                cache.xhat = Some(xhat);
                cache.inv_std = Some(inv_std);
            }
            let mut h = z.clone();
            if lay.relu {
                h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let p = self.arch.hidden_dropout;
            if training && p > 0.0 {
                let rng = rng.as_deref_mut().expect("dropout needs an rng");
                let keep = 1.0 / (1.0 - p);
                let m: Vec<f64> = (0..b * lay.fan_out)
                    .map(|_| if rng.random::<f64>() >= p { keep } else { 0.0 })
                    .collect();
                h.as_mut_slice().iter_mut().zip(&m).for_each(|(v, s)| *v *= s);
                cache.dropout = Some(m);
            }
            cache.pre_act = z;
            caches.push(cache);
            a = h;
        }
        ForwardPass {
            output: a,
            caches,
            training,
        }
    }

    /// Inference-mode reconstruction.
    pub fn reconstruct(&mut self, x: &Matrix) -> Matrix {
        self.forward(x, false, false, None).output
    }

    /// Gradient of the loss w.r.t. all parameters given `d_out = dL/d(output)`.
    pub fn backward(&self, pass: &ForwardPass, d_out: &Matrix) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = d_out.clone();
        for (lay, cache) in self.layout.iter().zip(&pass.caches).rev() {
            let b = delta.rows();
            if lay.hidden {
                if let Some(m) = &cache.dropout {
                    delta.as_mut_slice().iter_mut().zip(m).for_each(|(d, s)| *d *= s);
                }
                if lay.relu {
                    for (d, &z) in delta.as_mut_slice().iter_mut().zip(cache.pre_act.as_slice()) {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                if let Some((g, be)) = lay.bn {
                    let xhat = cache.xhat.as_ref().expect("bn cache");
                    let inv_std = cache.inv_std.as_ref().expect("bn cache");
                    for o in 0..lay.fan_out {
                        let gamma = self.params[g + o];
                        let (mut dgamma, mut dbeta) = (0.0, 0.0);
                        for r in 0..b {
                            dgamma += delta.get(r, o) * xhat.get(r, o);
                            dbeta += delta.get(r, o);
                        }
                        grad[g + o] += dgamma;
                        grad[be + o] += dbeta;
                        if pass.training {
                            // dxhat = delta * gamma; dz = inv_std/b * (b dxhat - sum dxhat - xhat sum(dxhat xhat))
                            let sum_dx = dbeta * gamma;
                            let sum_dx_xhat = dgamma * gamma;
                            for r in 0..b {
                                let dxh = delta.get(r, o) * gamma;
                                let dz = inv_std[o] / b as f64
                                    * (b as f64 * dxh - sum_dx - xhat.get(r, o) * sum_dx_xhat);
                                delta.set(r, o, dz);
                            }
                        } else {
                            for r in 0..b {
                                delta.set(r, o, delta.get(r, o) * gamma * inv_std[o]);
                            }
                        }
                    }
                }
            }
            let w = &self.params[lay.w..lay.w + lay.fan_in * lay.fan_out];
            let mut d_in = Matrix::zeros(b, lay.fan_in);
            for r in 0..b {
                let dr = delta.row(r);
                let ar = cache.input.row(r);
                for o in 0..lay.fan_out {
                    let d = dr[o];
                    if d == 0.0 {
                        continue;
                    }
                    grad[lay.b + o] += d;
                    let gw = &mut grad[lay.w + o * lay.fan_in..lay.w + (o + 1) * lay.fan_in];
                    for (gi, &ai) in gw.iter_mut().zip(ar) {
                        *gi += d * ai;
                    }
                    let wo = &w[o * lay.fan_in..(o + 1) * lay.fan_in];
                    for (di, &wi) in d_in.row_mut(r).iter_mut().zip(wo) {
                        *di += d * wi;
                    }
                }
            }
            delta = d_in;
        }
        grad
    }

    pub(crate) fn running_stats(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (self.running_mean.clone(), self.running_var.clone())
    }

    pub(crate) fn set_running_stats(&mut self, stats: (Vec<Vec<f64>>, Vec<Vec<f64>>)) {
        self.running_mean = stats.0;
        self.running_var = stats.1;
    }
}

/// Mean squared error over observed cells only, and its gradient w.r.t. the
/// output. Unobserved cells contribute nothing to either.
pub fn masked_mse(output: &Matrix, target: &Matrix, observed: &BoolMatrix) -> (f64, Matrix) {
    let n_obs = observed.count();
    let mut grad = Matrix::zeros(output.rows(), output.cols());
    if n_obs == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / n_obs as f64;
    let mut loss = 0.0;
    for r in 0..output.rows() {
        for c in 0..output.cols() {
            if observed.get(r, c) {
                let e = output.get(r, c) - target.get(r, c);
                loss += e * e;
                grad.set(r, c, 2.0 * e * scale);
            }
        }
    }
    (loss * scale, grad)
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
