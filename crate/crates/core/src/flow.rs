//! Conditional real-NVP density model.
//!
//! A stack of affine coupling layers maps a normalized return vector to a
//! standard-normal latent. Each layer keeps the masked components and
//! applies `x * exp(s) + t` to the others, where `s` and `t` are small tanh
//! networks of the masked components and a one-hot encoding of the local
//! joint action. Gradients of the negative log-likelihood are computed by
//! hand-written reverse mode through this fixed architecture.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distribution::ReturnDistribution;
use crate::error::{Error, Result};
use crate::seed;

pub const CHECKPOINT_VERSION: u32 = 1;
const LOG_2PI: f64 = 1.837_877_066_409_345_5;
const SCALE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dim: usize,
    pub cond_dim: usize,
    /// Number of coupling layers.
    pub flows: usize,
    pub hidden_units: usize,
    pub hidden_layers: usize,
}

impl FlowConfig {
    pub fn new(dim: usize, cond_dim: usize) -> Self {
        Self {
            dim,
            cond_dim,
            flows: 8,
            hidden_units: 30,
            hidden_layers: 1,
        }
    }
}

/// One-hot encoding of a local joint action among `size` alternatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionEncoding {
    pub index: usize,
    pub size: usize,
}

impl ActionEncoding {
    pub fn new(index: usize, size: usize) -> Result<Self> {
        if index >= size {
            return Err(Error::Flow(format!(
                "action index {index} outside encoding of size {size}"
            )));
        }
        Ok(Self { index, size })
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.size];
        v[self.index] = 1.0;
        v
    }
}

/// Per-objective affine normalization `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((x, m), s)| x * s + m)
            .collect()
    }

    /// Log-Jacobian of `apply`.
    fn log_det(&self) -> f64 {
        -self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// Fully connected layer, weights stored row-major `(n_out, n_in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    fn glorot(n_in: usize, n_out: usize, rng: &mut seed::Rng) -> Self {
        let std = (2.0 / (n_in + n_out) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let mut d = Self::zeros(n_in, n_out);
        d.w.iter_mut().for_each(|w| *w = normal.sample(rng));
        d
    }
}

/// Tanh network whose input is a dense vector followed by a one-hot block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    dense_in: usize,
}

impl Mlp {
    fn new(
        dense_in: usize,
        cond_dim: usize,
        hidden: usize,
        depth: usize,
        n_out: usize,
        rng: &mut seed::Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut n_in = dense_in + cond_dim;
        for _ in 0..depth {
            layers.push(Dense::glorot(n_in, hidden, rng));
            n_in = hidden;
        }
        // zero output layer: the flow starts as the identity map
        layers.push(Dense::zeros(n_in, n_out));
        Self { layers, dense_in }
    }

    /// Returns the output and the post-activation of every hidden layer.
    fn forward(&self, x: &[f64], hot: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        let mut out = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut pre = layer.b.clone();
            for (o, p) in pre.iter_mut().enumerate() {
                let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                if k == 0 {
                    *p += row[..self.dense_in]
                        .iter()
                        .zip(x)
                        .map(|(w, x)| w * x)
                        .sum::<f64>();
                    *p += row[self.dense_in + hot];
                } else {
                    *p += row
                        .iter()
                        .zip(&acts[k - 1])
                        .map(|(w, x)| w * x)
                        .sum::<f64>();
                }
            }
            if k == last {
                out = pre;
            } else {
                pre.iter_mut().for_each(|p| *p = p.tanh());
                acts.push(pre);
            }
        }
        (out, acts)
    }

    /// Accumulate parameter gradients into `grad` and return the gradient
    /// with respect to the dense input.
    fn backward(
        &self,
        x: &[f64],
        hot: usize,
        acts: &[Vec<f64>],
        g_out: &[f64],
        grad: &mut Mlp,
    ) -> Vec<f64> {
        let mut g = g_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let gl = &mut grad.layers[k];
            let mut g_in = vec![0.0; if k == 0 { self.dense_in } else { layer.n_in }];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                gl.b[o] += go;
                let row = o * layer.n_in;
                if k == 0 {
                    for (j, &xj) in x.iter().enumerate() {
                        gl.w[row + j] += go * xj;
                        g_in[j] += go * layer.w[row + j];
                    }
                    gl.w[row + self.dense_in + hot] += go;
                } else {
                    for (j, &hj) in acts[k - 1].iter().enumerate() {
                        gl.w[row + j] += go * hj;
                        g_in[j] += go * layer.w[row + j];
                    }
                }
            }
            if k > 0 {
                // through tanh of hidden layer k-1
                for (gi, h) in g_in.iter_mut().zip(&acts[k - 1]) {
                    *gi *= 1.0 - h * h;
                }
            }
            g = g_in;
        }
        g
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.n_in, l.n_out))
                .collect(),
            dense_in: self.dense_in,
        }
    }
}

/// Affine coupling layer. `mask[j] = true` marks a pass-through component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    pub mask: Vec<bool>,
    pub s_net: Mlp,
    pub t_net: Mlp,
    /// Bound on the log-scale: `s = s_scale * tanh(raw)`.
    pub s_scale: f64,
}

struct LayerTrace {
    input: Vec<f64>,
    masked: Vec<f64>,
    s_acts: Vec<Vec<f64>>,
    t_acts: Vec<Vec<f64>>,
    s_tanh: Vec<f64>,
    s: Vec<f64>,
}

impl CouplingLayer {
    fn masked(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mask)
            .map(|(x, &m)| if m { *x } else { 0.0 })
            .collect()
    }

    /// Shift and the scale trace for input `x`; only its pass-through
    /// components are read.
    fn scale_shift(&self, x: &[f64], hot: usize) -> (Vec<f64>, LayerTrace) {
        let masked = self.masked(x);
        let (raw_s, s_acts) = self.s_net.forward(&masked, hot);
        let (t, t_acts) = self.t_net.forward(&masked, hot);
        let s_tanh: Vec<f64> = raw_s.iter().map(|r| r.tanh()).collect();
        let s: Vec<f64> = s_tanh
            .iter()
            .zip(&self.mask)
            .map(|(th, &m)| if m { 0.0 } else { self.s_scale * th })
            .collect();
        let trace = LayerTrace {
            input: x.to_vec(),
            masked,
            s_acts,
            t_acts,
            s_tanh,
            s,
        };
        (t, trace)
    }

    fn forward(&self, x: &[f64], hot: usize) -> (Vec<f64>, f64, LayerTrace) {
        let (t, trace) = self.scale_shift(x, hot);
        let s = &trace.s;
        let mut y = x.to_vec();
        let mut ld = 0.0;
        for j in 0..x.len() {
            if !self.mask[j] {
                y[j] = x[j] * s[j].exp() + t[j];
                ld += s[j];
            }
        }
        (y, ld, trace)
    }

    fn inverse(&self, y: &[f64], hot: usize) -> Vec<f64> {
        let (t, trace) = self.scale_shift(y, hot);
        y.iter()
            .enumerate()
            .map(|(j, &yj)| {
                if self.mask[j] {
                    yj
                } else {
                    (yj - t[j]) * (-trace.s[j]).exp()
                }
            })
            .collect()
    }

    /// Back-propagate `g_y = dL/dy` and `g_ld = dL/dlog_det` through the layer.
    fn backward(
        &self,
        tr: &LayerTrace,
        hot: usize,
        g_y: &[f64],
        g_ld: f64,
        grad: &mut CouplingLayer,
    ) -> Vec<f64> {
        let d = g_y.len();
        let mut g_x = vec![0.0; d];
        let mut g_raw_s = vec![0.0; d];
        let mut g_t = vec![0.0; d];
        for j in 0..d {
            if self.mask[j] {
                g_x[j] = g_y[j];
            } else {
                let e = tr.s[j].exp();
                g_x[j] = g_y[j] * e;
                let g_s = g_y[j] * tr.input[j] * e + g_ld;
                g_t[j] = g_y[j];
                let th = tr.s_tanh[j];
                grad.s_scale += g_s * th;
                g_raw_s[j] = g_s * self.s_scale * (1.0 - th * th);
            }
        }
        let g_ms = self
            .s_net
            .backward(&tr.masked, hot, &tr.s_acts, &g_raw_s, &mut grad.s_net);
        let g_mt = self
            .t_net
            .backward(&tr.masked, hot, &tr.t_acts, &g_t, &mut grad.t_net);
        for j in 0..d {
            if self.mask[j] {
                g_x[j] += g_ms[j] + g_mt[j];
            }
        }
        g_x
    }

    fn zeros_like(&self) -> Self {
        Self {
            mask: self.mask.clone(),
            s_net: self.s_net.zeros_like(),
            t_net: self.t_net.zeros_like(),
            s_scale: 0.0,
        }
    }
}

/// Adam optimizer state over the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub version: u32,
    pub config: FlowConfig,
    pub layers: Vec<CouplingLayer>,
    pub norm: Normalization,
}

impl FlowModel {
    pub fn new(config: FlowConfig, seed: u64) -> Result<Self> {
        if config.dim < 2 {
            return Err(Error::Flow(
                "coupling layers need at least two objectives".into(),
            ));
        }
        if config.flows == 0 || config.cond_dim == 0 || config.hidden_units == 0 {
            return Err(Error::Flow(
                "flows, cond_dim and hidden_units must be positive".into(),
            ));
        }
        let mut rng = seed::rng(seed);
        let d = config.dim;
        let layers = (0..config.flows)
            .map(|k| CouplingLayer {
                mask: (0..d).map(|j| j % 2 == k % 2).collect(),
                s_net: Mlp::new(
                    d,
                    config.cond_dim,
                    config.hidden_units,
                    config.hidden_layers,
                    d,
                    &mut rng,
                ),
                t_net: Mlp::new(
                    d,
                    config.cond_dim,
                    config.hidden_units,
                    config.hidden_layers,
                    d,
                    &mut rng,
                ),
                s_scale: 1.0,
            })
            .collect();
        Ok(Self {
            version: CHECKPOINT_VERSION,
            norm: Normalization::identity(d),
            config,
            layers,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    fn check(&self, x: &[f64], a: &ActionEncoding) -> Result<()> {
        if x.len() != self.config.dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim,
                got: x.len(),
            });
        }
        if a.size != self.config.cond_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.cond_dim,
                got: a.size,
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow input"));
        }
        Ok(())
    }

    /// Map a raw return vector to the latent space. The log-determinant is
    /// that of the coupling stack only, excluding the normalization.
    pub fn forward(&self, x: &[f64], a: &ActionEncoding) -> Result<(Vec<f64>, f64)> {
        self.check(x, a)?;
        let mut z = self.norm.apply(x);
        let mut ld = 0.0;
        for layer in &self.layers {
            let (y, l, _) = layer.forward(&z, a.index);
            z = y;
            ld += l;
        }
        if z.iter().any(|v| !v.is_finite()) || !ld.is_finite() {
            return Err(Error::NonFinite("flow activations"));
        }
        Ok((z, ld))
    }

    /// Map a latent vector back to (denormalized) return space.
    pub fn inverse(&self, z: &[f64], a: &ActionEncoding) -> Result<Vec<f64>> {
        self.check(z, a)?;
        let mut x = z.to_vec();
        for layer in self.layers.iter().rev() {
            x = layer.inverse(&x, a.index);
        }
        let x = self.norm.invert(&x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow inverse"));
        }
        Ok(x)
    }

    pub fn log_prob(&self, x: &[f64], a: &ActionEncoding) -> Result<f64> {
        let (z, ld) = self.forward(x, a)?;
        Ok(std_normal_log_density(&z) + ld + self.norm.log_det())
    }

    /// Draw `n` samples for action `a`.
    pub fn sample(&self, a: &ActionEncoding, n: usize, seed: u64) -> Result<ReturnDistribution> {
        if n == 0 {
            return Err(Error::EmptyDistribution);
        }
        let mut rng = seed::rng(seed);
        let d = self.config.dim;
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            out.extend(self.inverse(&z, a)?);
        }
        ReturnDistribution::from_samples(d, out)
    }

    /// Fit mean/std normalization from raw samples.
    pub fn fit_normalization(&mut self, samples: &[Vec<f64>]) -> Result<Normalization> {
        let norm = fit_normalization(samples, self.config.dim)?;
        self.norm = norm.clone();
        Ok(norm)
    }

    /// Mean negative log-likelihood over the batch and its gradient with
    /// respect to [`FlowModel::params`].
    pub fn loss_and_grad(&self, batch: &[(Vec<f64>, ActionEncoding)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Flow("empty training batch".into()));
        }
        let mut grad = self.zeros_like();
        let mut total = 0.0;
        let n = batch.len() as f64;
        for (x, a) in batch {
            self.check(x, a)?;
            let mut z = self.norm.apply(x);
            let mut ld = 0.0;
            let mut traces = Vec::with_capacity(self.layers.len());
            for layer in &self.layers {
                let (y, l, tr) = layer.forward(&z, a.index);
                z = y;
                ld += l;
                traces.push(tr);
            }
            total += -(std_normal_log_density(&z) + ld + self.norm.log_det());
            // d(-log p)/dz = z, d(-log p)/d(log_det) = -1, both scaled by 1/n
            let mut g: Vec<f64> = z.iter().map(|v| v / n).collect();
            let g_ld = -1.0 / n;
            for ((layer, tr), gl) in self
                .layers
                .iter()
                .zip(&traces)
                .zip(grad.layers.iter_mut())
                .rev()
            {
                g = layer.backward(tr, a.index, &g, g_ld, gl);
            }
        }
        let loss = total / n;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss,
                detail: format!(
                    "batch of {} with s_scales {:?}",
                    batch.len(),
                    self.s_scales()
                ),
            });
        }
        Ok((loss, grad.params()))
    }

    /// One Adam step on the mean negative log-likelihood; returns the loss
    /// before the update.
    pub fn train_step(
        &mut self,
        batch: &[(Vec<f64>, ActionEncoding)],
        opt: &mut Adam,
    ) -> Result<f64> {
        let (loss, grad) = self.loss_and_grad(batch)?;
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                loss,
                detail: format!("gradient component {k} is not finite"),
            });
        }
        let mut p = self.params();
        opt.step(&mut p, &grad);
        self.set_params(&p);
        Ok(loss)
    }

    pub fn new_optimizer(&self, lr: f64) -> Adam {
        Adam::new(self.n_params(), lr)
    }

    fn s_scales(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.s_scale).collect()
    }

    fn zeros_like(&self) -> Self {
        Self {
            version: self.version,
            config: self.config.clone(),
            layers: self.layers.iter().map(CouplingLayer::zeros_like).collect(),
            norm: self.norm.clone(),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(f64)) {
        for l in &self.layers {
            for net in [&l.s_net, &l.t_net] {
                for d in &net.layers {
                    d.w.iter().chain(&d.b).for_each(|&x| f(x));
                }
            }
            f(l.s_scale);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut f64)) {
        for l in &mut self.layers {
            for net in [&mut l.s_net, &mut l.t_net] {
                for d in &mut net.layers {
                    d.w.iter_mut().chain(d.b.iter_mut()).for_each(&mut *f);
                }
            }
            f(&mut l.s_scale);
        }
    }

    /// All trainable parameters in a fixed order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |x| out.push(x));
        out
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut it = p.iter();
        self.visit_mut(&mut |x| *x = *it.next().expect("parameter count"));
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::parse(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if m.version != CHECKPOINT_VERSION {
            return Err(Error::parse(
                path,
                format!("unsupported checkpoint version {}", m.version),
            ));
        }
        Ok(m)
    }
}

pub fn std_normal_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * LOG_2PI
}

/// Per-objective mean and population standard deviation, with the scale
/// floored at `1e-8`.
pub fn fit_normalization(samples: &[Vec<f64>], dim: usize) -> Result<Normalization> {
    if samples.len() < 2 {
        return Err(Error::Flow(format!(
            "normalization needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mut shift = vec![0.0; dim];
    for s in samples {
        if s.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.len(),
            });
        }
        shift.iter_mut().zip(s).for_each(|(m, x)| *m += x);
    }
    shift.iter_mut().for_each(|m| *m /= n);
    let mut scale = vec![0.0; dim];
    for s in samples {
        scale
            .iter_mut()
            .zip(s.iter().zip(&shift))
            .for_each(|(v, (x, m))| *v += (x - m) * (x - m));
    }
    for (j, v) in scale.iter_mut().enumerate() {
        *v = (*v / n).sqrt();
        if *v < SCALE_FLOOR {
            log::warn!(
                "objective {j} is constant in the training data; normalization scale floored"
            );
            *v = SCALE_FLOOR;
        }
    }
    Ok(Normalization { shift, scale })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(i: usize, n: usize) -> ActionEncoding {
        ActionEncoding::new(i, n).unwrap()
    }

    /// Model with every network weight random, so that no path is inert.
    fn randomized(cfg: FlowConfig, seed_: u64, spread: f64) -> FlowModel {
        let mut m = FlowModel::new(cfg, seed_).unwrap();
        let mut rng = seed::rng(seed_ ^ 0xABCD);
        let mut p = m.params();
        p.iter_mut()
            .for_each(|x| *x = rng.random_range(-spread..spread));
        m.set_params(&p);
        m
    }

    #[test]
    fn identity_flow() {
        let mut m = FlowModel::new(FlowConfig::new(2, 3), 1).unwrap();
        let zeros = vec![0.0; m.n_params()];
        m.set_params(&zeros);
        let (z, ld) = m.forward(&[0.3, -1.2], &enc(1, 3)).unwrap();
        assert_eq!(z, vec![0.3, -1.2]);
        assert_eq!(ld, 0.0);
        assert_eq!(m.inverse(&[0.5, 2.0], &enc(0, 3)).unwrap(), vec![0.5, 2.0]);
        let lp = m.log_prob(&[0.0, 0.0], &enc(0, 3)).unwrap();
        assert!((lp + 1.8379).abs() < 1e-4);
    }

    #[test]
    fn fresh_model_is_identity() {
        let m = FlowModel::new(FlowConfig::new(2, 4), 9).unwrap();
        let (z, ld) = m.forward(&[1.5, -0.5], &enc(2, 4)).unwrap();
        assert_eq!(z, vec![1.5, -0.5]);
        assert_eq!(ld, 0.0);
    }

    /// One layer whose s and t are the constants `atanh(c / s_scale)` and `b`.
    fn constant_layer(c: f64, b: f64) -> FlowModel {
        let cfg = FlowConfig {
            flows: 1,
            ..FlowConfig::new(2, 1)
        };
        let mut m = FlowModel::new(cfg, 0).unwrap();
        let zeros = vec![0.0; m.n_params()];
        m.set_params(&zeros);
        let l = &mut m.layers[0];
        assert_eq!(l.mask, vec![true, false]);
        l.s_scale = 1.0;
        let out_s = l.s_net.layers.last_mut().unwrap();
        out_s.b[1] = c.atanh();
        let out_t = l.t_net.layers.last_mut().unwrap();
        out_t.b[1] = b;
        m
    }

    #[test]
    fn constant_coefficient_layer() {
        let (c, b) = (0.4, -0.7);
        let m = constant_layer(c, b);
        let a = enc(0, 1);
        let (z, ld) = m.forward(&[2.0, 3.0], &a).unwrap();
        assert_eq!(z[0], 2.0);
        assert!((z[1] - (3.0 * c.exp() + b)).abs() < 1e-12);
        assert!((ld - c).abs() < 1e-12);
        let x = m.inverse(&[2.0, 5.0], &a).unwrap();
        assert!((x[1] - (5.0 - b) * (-c).exp()).abs() < 1e-12);
        // x2 ~ N((-b) e^{-c}, e^{-2c}) independent of x1 ~ N(0, 1)
        let (x1, x2) = (0.3, -1.1);
        let mu = -b * (-c).exp();
        let sd = (-c).exp();
        let expect = -0.5 * x1 * x1 - 0.5 * ((x2 - mu) / sd).powi(2) - LOG_2PI - sd.ln();
        assert!((m.log_prob(&[x1, x2], &a).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn round_trip_is_exact() {
        let m = randomized(FlowConfig::new(2, 5), 3, 0.8);
        let mut rng = seed::rng(12);
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let x = vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let a = enc(rng.random_range(0..5), 5);
            let (z, _) = m.forward(&x, &a).unwrap();
            let back = m.inverse(&z, &a).unwrap();
            worst = worst.max(
                x.iter()
                    .zip(&back)
                    .map(|(p, q)| (p - q).abs())
                    .fold(0.0, f64::max),
            );
        }
        assert!(worst < 1e-6, "max round-trip error {worst}");
    }

    #[test]
    fn masked_components_pass_through() {
        let m = randomized(FlowConfig::new(2, 2), 5, 0.5);
        for layer in &m.layers {
            let (y, _, _) = layer.forward(&[0.7, -0.2], 1);
            for j in 0..2 {
                if layer.mask[j] {
                    assert_eq!(y[j], [0.7, -0.2][j]);
                }
            }
        }
        // every component is transformed by some layer
        for j in 0..2 {
            assert!(m.layers.iter().any(|l| !l.mask[j]));
        }
        for w in m.layers.windows(2) {
            assert_ne!(w[0].mask, w[1].mask);
        }
    }

    #[test]
    fn log_det_matches_numerical_jacobian() {
        let m = randomized(FlowConfig::new(2, 3), 8, 0.6);
        let a = enc(2, 3);
        let h = 1e-5;
        for x in [[0.1, 0.4], [-1.3, 2.2], [0.9, -0.6]] {
            let (_, ld) = m.forward(&x, &a).unwrap();
            let mut jac = [[0.0; 2]; 2];
            for j in 0..2 {
                let (mut xp, mut xm) = (x, x);
                xp[j] += h;
                xm[j] -= h;
                let (zp, _) = m.forward(&xp, &a).unwrap();
                let (zm, _) = m.forward(&xm, &a).unwrap();
                for i in 0..2 {
                    jac[i][j] = (zp[i] - zm[i]) / (2.0 * h);
                }
            }
            let num = (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]).abs().ln();
            let rel = (ld - num).abs() / num.abs().max(1e-8);
            assert!(rel < 1e-4, "log_det {ld} vs numerical {num}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = FlowConfig {
            flows: 2,
            hidden_units: 5,
            ..FlowConfig::new(2, 3)
        };
        let mut m = randomized(cfg, 21, 0.7);
        m.norm = Normalization {
            shift: vec![0.5, -1.0],
            scale: vec![2.0, 0.5],
        };
        let mut rng = seed::rng(2);
        let batch: Vec<(Vec<f64>, ActionEncoding)> = (0..6)
            .map(|_| {
                (
                    vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                    enc(rng.random_range(0..3), 3),
                )
            })
            .collect();
        let (_, grad) = m.loss_and_grad(&batch).unwrap();
        let p0 = m.params();
        let h = 1e-5;
        for k in 0..p0.len() {
            let mut p = p0.clone();
            p[k] += h;
            m.set_params(&p);
            let lp = m.loss_and_grad(&batch).unwrap().0;
            p[k] -= 2.0 * h;
            m.set_params(&p);
            let lm = m.loss_and_grad(&batch).unwrap().0;
            let num = (lp - lm) / (2.0 * h);
            let rel = (num - grad[k]).abs() / (num.abs() + grad[k].abs()).max(1e-8);
            assert!(rel < 1e-3, "param {k}: analytic {} numeric {num}", grad[k]);
        }
        m.set_params(&p0);
    }

    #[test]
    fn zero_gradients_leave_weights_alone() {
        let mut m = FlowModel::new(FlowConfig::new(2, 2), 4).unwrap();
        let before = m.params();
        let batch = vec![(vec![0.5, 1.5], enc(0, 2)), (vec![-0.5, 0.2], enc(0, 2))];
        let (_, grad) = m.loss_and_grad(&batch).unwrap();
        let mut opt = m.new_optimizer(1e-3);
        m.train_step(&batch, &mut opt).unwrap();
        let after = m.params();
        for k in 0..before.len() {
            if grad[k] == 0.0 {
                assert_eq!(before[k], after[k]);
            } else {
                assert_ne!(before[k], after[k]);
            }
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let m = randomized(FlowConfig::new(2, 2), 14, 0.3);
        let (lo, hi, n) = (-12.0, 12.0, 400);
        let h = (hi - lo) / n as f64;
        for a in [enc(0, 2), enc(1, 2)] {
            let mut mass = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let x = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
                    mass += m.log_prob(&x, &a).unwrap().exp() * h * h;
                }
            }
            assert!((mass - 1.0).abs() < 1e-2, "mass {mass}");
        }
    }

    #[test]
    fn identity_samples_are_standard_normal() {
        let m = FlowModel::new(FlowConfig::new(2, 1), 0).unwrap();
        let n = 4000;
        let s = m.sample(&enc(0, 1), n, 77).unwrap();
        let mean = s.expected_value();
        for j in 0..2 {
            assert!(mean[j].abs() < 3.0 / (n as f64).sqrt());
        }
        assert_eq!(s, m.sample(&enc(0, 1), n, 77).unwrap());
        assert!(m.sample(&enc(0, 1), 0, 1).is_err());
    }

    #[test]
    fn normalization_fitting() {
        let id = fit_normalization(&[vec![-1.0, 1.0], vec![1.0, -1.0]], 2).unwrap();
        assert_eq!(id, Normalization::identity(2));
        let c = fit_normalization(&[vec![3.0, 1.0], vec![3.0, 2.0]], 2).unwrap();
        assert_eq!(c.scale[0], SCALE_FLOOR);
        assert!(fit_normalization(&[vec![1.0, 1.0]], 2).is_err());

        let mut rng = seed::rng(6);
        let samples: Vec<Vec<f64>> = (0..1000)
            .map(|_| vec![rng.random_range(-1.0..0.0), rng.random_range(0.0..2e7)])
            .collect();
        let norm = fit_normalization(&samples, 2).unwrap();
        let z: Vec<Vec<f64>> = samples.iter().map(|s| norm.apply(s)).collect();
        for j in 0..2 {
            let mean = z.iter().map(|r| r[j]).sum::<f64>() / 1000.0;
            let var = z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 1000.0;
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn normalization_enters_log_prob() {
        let mut m = FlowModel::new(FlowConfig::new(2, 1), 0).unwrap();
        m.norm = Normalization {
            shift: vec![1.0, 2.0],
            scale: vec![2.0, 4.0],
        };
        let lp = m.log_prob(&[1.0, 2.0], &enc(0, 1)).unwrap();
        assert!((lp - (-LOG_2PI - 8f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let m = randomized(FlowConfig::new(2, 4), 30, 0.9);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        let back = FlowModel::load(&p).unwrap();
        assert_eq!(back, m);
        let mut rng = seed::rng(1);
        for _ in 0..100 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let a = enc(rng.random_range(0..4), 4);
            assert_eq!(
                m.log_prob(&x, &a).unwrap().to_bits(),
                back.log_prob(&x, &a).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = FlowModel::new(FlowConfig::new(2, 2), 0).unwrap();
        assert!(m.forward(&[f64::NAN, 0.0], &enc(0, 2)).is_err());
        assert!(m.forward(&[0.0], &enc(0, 2)).is_err());
        assert!(m
            .forward(&[0.0, 0.0], &ActionEncoding { index: 0, size: 3 })
            .is_err());
        assert!(ActionEncoding::new(3, 3).is_err());
        assert!(FlowModel::new(FlowConfig::new(1, 2), 0).is_err());
    }
}
