//! Recurrent action-value network (fully connected, GRU, linear head) with
//! hand-written backpropagation through time, the additive team TD loss,
//! RMSprop, and a versioned binary checkpoint format.
//!
//! The GRU follows the usual gate order and equations:
//! `r = σ(W_ir x + b_ir + W_hr h + b_hr)`, `z = σ(W_iz x + b_iz + W_hz h + b_hz)`,
//! `n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))`, `h' = (1 − z) ⊙ n + z ⊙ h`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"UWQN";
const VERSION: u32 = 1;

/// Layer widths of the Q-network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_width: usize,
    pub hidden_width: usize,
    pub recurrent_width: usize,
    pub output_width: usize,
}

impl NetworkSpec {
    /// 64 hidden and 64 recurrent units.
    pub fn standard(input_width: usize, output_width: usize) -> Self {
        Self { input_width, hidden_width: 64, recurrent_width: 64, output_width }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.hidden_width == 0 || self.recurrent_width == 0 || self.output_width == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let l = Layout::new(self);
        l.b2 + self.output_width
    }
}

/// Offsets of each parameter block in the flat vector.
#[derive(Clone, Copy, Debug)]
struct Layout {
    w1: usize,
    b1: usize,
    wi: usize,
    bi: usize,
    wh: usize,
    bh: usize,
    w2: usize,
    b2: usize,
}

impl Layout {
    fn new(s: &NetworkSpec) -> Self {
        let (i, h, r, a) = (s.input_width, s.hidden_width, s.recurrent_width, s.output_width);
        let w1 = 0;
        let b1 = w1 + h * i;
        let wi = b1 + h;
        let bi = wi + 3 * r * h;
        let wh = bi + 3 * r;
        let bh = wh + 3 * r * r;
        let w2 = bh + 3 * r;
        let b2 = w2 + a * r;
        Self { w1, b1, wi, bi, wh, bh, w2, b2 }
    }
}

/// Dot product with four independent accumulators.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `out = W x + b` with `W` row-major `rows × x.len()`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let c = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = b[r] + dot(&w[r * c..(r + 1) * c], x);
    }
}

/// `gw += dy ⊗ x`, `gb += dy`, `dx += Wᵀ dy`.
fn affine_back(w: &[f64], x: &[f64], dy: &[f64], gw: &mut [f64], gb: &mut [f64], dx: Option<&mut [f64]>) {
    let c = x.len();
    for (r, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        gb[r] += d;
        for (g, &xv) in gw[r * c..(r + 1) * c].iter_mut().zip(x) {
            *g += d * xv;
        }
    }
    if let Some(dx) = dx {
        for (r, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (o, &wv) in dx.iter_mut().zip(&w[r * c..(r + 1) * c]) {
                *o += d * wv;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediate values of one forward step, kept for backpropagation.
#[derive(Clone, Debug)]
struct StepCache {
    a1: Vec<f64>,
    x1: Vec<f64>,
    h_prev: Vec<f64>,
    gh_n: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    h: Vec<f64>,
}

/// Parameters of the shared Q-network.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    spec: NetworkSpec,
    params: Vec<f64>,
}

impl QNetwork {
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, params: vec![0.0; spec.param_count()] })
    }

    /// Uniform `±1/√fan_in` per layer; recurrent biases zero.
    pub fn random<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let l = Layout::new(&spec);
        let blocks = [
            (l.w1, l.b1, spec.input_width),
            (l.b1, l.wi, spec.input_width),
            (l.wi, l.bi, spec.hidden_width),
            (l.wh, l.bh, spec.recurrent_width),
            (l.w2, l.b2, spec.recurrent_width),
            (l.b2, spec.param_count(), spec.recurrent_width),
        ];
        for (start, end, fan_in) in blocks {
            let k = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[start..end] {
                *p = rng.random_range(-k..=k);
            }
        }
        Ok(net)
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Shape { expected: spec.param_count(), actual: params.len() });
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.spec.recurrent_width]
    }

    fn check(&self, obs: &[f64], hidden: &[f64]) -> Result<()> {
        if obs.len() != self.spec.input_width {
            return Err(Error::Shape { expected: self.spec.input_width, actual: obs.len() });
        }
        if hidden.len() != self.spec.recurrent_width {
            return Err(Error::Shape { expected: self.spec.recurrent_width, actual: hidden.len() });
        }
        Ok(())
    }

    fn step(&self, obs: &[f64], hidden: &[f64]) -> (Vec<f64>, StepCache) {
        let s = &self.spec;
        let l = Layout::new(s);
        let p = &self.params;
        let (h_w, r_w) = (s.hidden_width, s.recurrent_width);
        let mut a1 = vec![0.0; h_w];
        affine(&p[l.w1..l.b1], &p[l.b1..l.wi], obs, &mut a1);
        let x1: Vec<f64> = a1.iter().map(|&v| v.max(0.0)).collect();
        let mut gi = vec![0.0; 3 * r_w];
        affine(&p[l.wi..l.bi], &p[l.bi..l.wh], &x1, &mut gi);
        let mut gh = vec![0.0; 3 * r_w];
        affine(&p[l.wh..l.bh], &p[l.bh..l.w2], hidden, &mut gh);
        let mut r = vec![0.0; r_w];
        let mut z = vec![0.0; r_w];
        let mut n = vec![0.0; r_w];
        let mut h = vec![0.0; r_w];
        for k in 0..r_w {
            r[k] = sigmoid(gi[k] + gh[k]);
            z[k] = sigmoid(gi[r_w + k] + gh[r_w + k]);
            n[k] = (gi[2 * r_w + k] + r[k] * gh[2 * r_w + k]).tanh();
            h[k] = (1.0 - z[k]) * n[k] + z[k] * hidden[k];
        }
        let mut q = vec![0.0; s.output_width];
        affine(&p[l.w2..l.b2], &p[l.b2..], &h, &mut q);
        let gh_n = gh[2 * r_w..].to_vec();
        (q, StepCache { a1, x1, h_prev: hidden.to_vec(), gh_n, r, z, n, h })
    }

    /// Q-values for every action and the next recurrent state.
    pub fn forward(&self, obs: &[f64], hidden: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(obs, hidden)?;
        let (q, cache) = self.step(obs, hidden);
        Ok((q, cache.h))
    }

    /// Runs a sequence from `h0`, returning Q-values per step and the caches.
    fn unroll(&self, h0: &[f64], obs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<StepCache>) {
        let mut h = h0.to_vec();
        let mut qs = Vec::with_capacity(obs.len());
        let mut caches = Vec::with_capacity(obs.len());
        for o in obs {
            let (q, c) = self.step(o, &h);
            h.clone_from(&c.h);
            qs.push(q);
            caches.push(c);
        }
        (qs, caches)
    }

    /// Accumulates into `grad` the gradient of `Σ_t dq[t]·q_t` over a sequence.
    fn backward(&self, obs: &[Vec<f64>], caches: &[StepCache], dq: &[Vec<f64>], grad: &mut [f64]) {
        let s = &self.spec;
        let l = Layout::new(s);
        let p = &self.params;
        let r_w = s.recurrent_width;
        let (g_w1, rest) = grad.split_at_mut(l.b1);
        let (g_b1, rest) = rest.split_at_mut(l.wi - l.b1);
        let (g_wi, rest) = rest.split_at_mut(l.bi - l.wi);
        let (g_bi, rest) = rest.split_at_mut(l.wh - l.bi);
        let (g_wh, rest) = rest.split_at_mut(l.bh - l.wh);
        let (g_bh, rest) = rest.split_at_mut(l.w2 - l.bh);
        let (g_w2, g_b2) = rest.split_at_mut(l.b2 - l.w2);

        let mut dh_next = vec![0.0; r_w];
        let mut dgi = vec![0.0; 3 * r_w];
        let mut dgh = vec![0.0; 3 * r_w];
        for t in (0..caches.len()).rev() {
            let c = &caches[t];
            let mut dh = dh_next.clone();
            affine_back(&p[l.w2..l.b2], &c.h, &dq[t], g_w2, g_b2, Some(&mut dh));
            let mut dh_prev = vec![0.0; r_w];
            for k in 0..r_w {
                let dn = dh[k] * (1.0 - c.z[k]);
                let dz = dh[k] * (c.h_prev[k] - c.n[k]);
                dh_prev[k] = dh[k] * c.z[k];
                let dn_pre = dn * (1.0 - c.n[k] * c.n[k]);
                let dr = dn_pre * c.gh_n[k];
                let dr_pre = dr * c.r[k] * (1.0 - c.r[k]);
                let dz_pre = dz * c.z[k] * (1.0 - c.z[k]);
                dgi[k] = dr_pre;
                dgi[r_w + k] = dz_pre;
                dgi[2 * r_w + k] = dn_pre;
                dgh[k] = dr_pre;
                dgh[r_w + k] = dz_pre;
                dgh[2 * r_w + k] = dn_pre * c.r[k];
            }
            affine_back(&p[l.wh..l.bh], &c.h_prev, &dgh, g_wh, g_bh, Some(&mut dh_prev));
            let mut dx1 = vec![0.0; s.hidden_width];
            affine_back(&p[l.wi..l.bi], &c.x1, &dgi, g_wi, g_bi, Some(&mut dx1));
            for (d, &a) in dx1.iter_mut().zip(&c.a1) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            affine_back(&p[l.w1..l.b1], &obs[t], &dx1, g_w1, g_b1, None);
            dh_next = dh_prev;
        }
    }

    /// Overwrites this network's parameters with `source`'s.
    pub fn copy_from(&mut self, source: &QNetwork) -> Result<()> {
        if source.spec != self.spec {
            return Err(Error::Shape { expected: self.params.len(), actual: source.params.len() });
        }
        self.params.copy_from_slice(&source.params);
        Ok(())
    }

    /// Writes the binary checkpoint: magic, version, four widths, parameter
    /// count, then little-endian `f64` parameters.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        for w in [self.spec.input_width, self.spec.hidden_width, self.spec.recurrent_width, self.spec.output_width] {
            out.write_all(&(w as u32).to_le_bytes())?;
        }
        out.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(40 + 8 * self.params.len());
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R, path: &Path) -> Result<Self> {
        let bad = |detail: String| Error::Format { what: "checkpoint", path: path.to_owned(), detail };
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic != MAGIC {
            return Err(bad("bad magic bytes".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |input: &mut R| -> Result<u32> {
            input.read_exact(&mut u32buf).map_err(|e| bad(e.to_string()))?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(&mut input)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut widths = [0usize; 4];
        for w in &mut widths {
            *w = read_u32(&mut input)? as usize;
        }
        let spec = NetworkSpec {
            input_width: widths[0],
            hidden_width: widths[1],
            recurrent_width: widths[2],
            output_width: widths[3],
        };
        spec.validate().map_err(|e| bad(e.to_string()))?;
        let mut u64buf = [0u8; 8];
        input.read_exact(&mut u64buf).map_err(|e| bad(e.to_string()))?;
        let count = u64::from_le_bytes(u64buf) as usize;
        if count != spec.param_count() {
            return Err(bad(format!("{count} parameters stored, spec needs {}", spec.param_count())));
        }
        let mut params = vec![0.0; count];
        for p in &mut params {
            input.read_exact(&mut u64buf).map_err(|e| bad(e.to_string()))?;
            *p = f64::from_le_bytes(u64buf);
        }
        let mut extra = [0u8; 1];
        if input.read(&mut extra).map_err(|e| bad(e.to_string()))? != 0 {
            return Err(bad("trailing bytes".into()));
        }
        Self::from_params(spec, params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_owned()));
        }
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice(), path)
    }
}

/// One agent's slice of a replayed window of `L` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentWindow {
    /// Stored recurrent state before `obs[0]`.
    pub h_start: Vec<f64>,
    /// Stored recurrent state before `obs[1]`.
    pub h_next: Vec<f64>,
    /// `L + 1` encoded observations.
    pub obs: Vec<Vec<f64>>,
    /// `L` action indices.
    pub actions: Vec<usize>,
}

/// A window of joint experience: one [`AgentWindow`] per agent plus `L` team rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub agents: Vec<AgentWindow>,
    pub rewards: Vec<f64>,
}

impl SequenceSample {
    fn len(&self) -> usize {
        self.rewards.len()
    }

    fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let l = self.len();
        if l == 0 || self.agents.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for a in &self.agents {
            if a.obs.len() != l + 1 {
                return Err(Error::Shape { expected: l + 1, actual: a.obs.len() });
            }
            if a.actions.len() != l {
                return Err(Error::Shape { expected: l, actual: a.actions.len() });
            }
            for o in &a.obs {
                if o.len() != spec.input_width {
                    return Err(Error::Shape { expected: spec.input_width, actual: o.len() });
                }
            }
            for h in [&a.h_start, &a.h_next] {
                if h.len() != spec.recurrent_width {
                    return Err(Error::Shape { expected: spec.recurrent_width, actual: h.len() });
                }
            }
            if let Some(&bad) = a.actions.iter().find(|&&k| k >= spec.output_width) {
                return Err(Error::ActionOutOfRange { index: bad, size: spec.output_width });
            }
        }
        Ok(())
    }
}

/// Per-sample TD errors `Σ_i Q_i(o_t, a_t) − (r_t + γ Σ_i max_a Q⁻_i(o_{t+1}))`.
fn sample_loss_grad(
    net: &QNetwork,
    target: &QNetwork,
    sample: &SequenceSample,
    gamma: f64,
    scale: f64,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let l = sample.len();
    let mut team_q = vec![0.0; l];
    let mut team_next = vec![0.0; l];
    let mut runs = Vec::with_capacity(sample.agents.len());
    for a in &sample.agents {
        let (qs, caches) = net.unroll(&a.h_start, &a.obs[..l]);
        for t in 0..l {
            team_q[t] += qs[t][a.actions[t]];
        }
        let (qn, _) = target.unroll(&a.h_next, &a.obs[1..]);
        for t in 0..l {
            team_next[t] += qn[t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        runs.push(caches);
    }
    let delta: Vec<f64> = (0..l).map(|t| team_q[t] - (sample.rewards[t] + gamma * team_next[t])).collect();
    let loss = delta.iter().map(|d| d * d).sum::<f64>() * scale;
    if !want_grad {
        return (loss, None);
    }
    let mut grad = vec![0.0; net.params.len()];
    for (a, caches) in sample.agents.iter().zip(&runs) {
        let dq: Vec<Vec<f64>> = (0..l)
            .map(|t| {
                let mut d = vec![0.0; net.spec.output_width];
                d[a.actions[t]] = 2.0 * delta[t] * scale;
                d
            })
            .collect();
        net.backward(&a.obs[..l], caches, &dq, &mut grad);
    }
    (loss, Some(grad))
}

/// Mean squared team TD error over every step of every sample, and its
/// gradient with respect to `net` (the target network is held fixed).
pub fn loss_and_grad(
    net: &QNetwork,
    target: &QNetwork,
    batch: &[SequenceSample],
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if net.spec != target.spec {
        return Err(Error::Shape { expected: net.params.len(), actual: target.params.len() });
    }
    for s in batch {
        s.validate(&net.spec)?;
    }
    let steps: usize = batch.iter().map(SequenceSample::len).sum();
    let scale = 1.0 / steps as f64;
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|s| {
            let (l, g) = sample_loss_grad(net, target, s, gamma, scale, true);
            (l, g.expect("gradient requested"))
        })
        .collect();
    let mut grad = vec![0.0; net.params.len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// Loss only, for finite-difference checks and monitoring.
pub fn loss(net: &QNetwork, target: &QNetwork, batch: &[SequenceSample], gamma: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for s in batch {
        s.validate(&net.spec)?;
    }
    let steps: usize = batch.iter().map(SequenceSample::len).sum();
    let scale = 1.0 / steps as f64;
    Ok(batch.iter().map(|s| sample_loss_grad(net, target, s, gamma, scale, false).0).sum())
}

/// RMSprop with optional global gradient-norm clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub alpha: f64,
    pub eps: f64,
    pub max_grad_norm: Option<f64>,
    square_avg: Vec<f64>,
}

impl RmsProp {
    pub fn new(param_count: usize, learning_rate: f64, max_grad_norm: Option<f64>) -> Self {
        Self { learning_rate, alpha: 0.99, eps: 1e-8, max_grad_norm, square_avg: vec![0.0; param_count] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.square_avg.len() || grad.len() != params.len() {
            return Err(Error::Shape { expected: self.square_avg.len(), actual: grad.len() });
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let clip = match self.max_grad_norm {
            Some(m) if norm > m => m / norm,
            _ => 1.0,
        };
        for ((p, &g), v) in params.iter_mut().zip(grad).zip(self.square_avg.iter_mut()) {
            let g = g * clip;
            *v = self.alpha * *v + (1.0 - self.alpha) * g * g;
            *p -= self.learning_rate * g / (v.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// One gradient step on the team TD loss; returns the pre-update loss.
pub fn td_update(
    net: &mut QNetwork,
    target: &QNetwork,
    optimizer: &mut RmsProp,
    batch: &[SequenceSample],
    gamma: f64,
) -> Result<f64> {
    let (l, grad) = loss_and_grad(net, target, batch, gamma)?;
    if l.is_finite() {
        optimizer.step(&mut net.params, &grad)?;
    }
    Ok(l)
}

/// `target := params`.
pub fn sync_target(net: &QNetwork, target: &mut QNetwork) -> Result<()> {
    target.copy_from(net)
}

/// Largest relative difference between the analytic gradient and central
/// finite differences, with denominators floored at `1e-6`.
pub fn gradient_check(net: &QNetwork, target: &QNetwork, batch: &[SequenceSample], gamma: f64, h: f64) -> Result<f64> {
    let (_, analytic) = loss_and_grad(net, target, batch, gamma)?;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = probe.params[k];
        probe.params[k] = orig + h;
        let up = loss(&probe, target, batch, gamma)?;
        probe.params[k] = orig - h;
        let down = loss(&probe, target, batch, gamma)?;
        probe.params[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
