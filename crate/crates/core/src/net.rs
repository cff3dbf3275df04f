//! Convolutional policy/value network with hand-written backpropagation.
//!
//! Layout, per stock and with kernels shared across stocks:
//!
//! ```text
//! x[C, L] --conv 1xK1, k1 filters--> tanh --conv 1xK2, k2 filters--> tanh
//!         => features[k2 * (L - K1 - K2 + 2)]
//! ```
//!
//! The features of all stocks are concatenated with the previous portfolio
//! vector and fed to one tanh dense layer, followed by two linear heads: `m + 1`
//! action scores and a scalar state value.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::observation::Observation;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    InvalidConfig(&'static str),
    #[error("observation shape {found:?} does not match the network {expected:?}")]
    ShapeMismatch { expected: (usize, usize, usize), found: (usize, usize, usize) },
    #[error("parameter vector has {found} entries, expected {expected}")]
    ParamCount { expected: usize, found: usize },
    #[error("output gradient has {found} entries, expected {expected}")]
    GradientLength { expected: usize, found: usize },
    #[error("trace was produced by snapshot {trace} ({trace_digest}), not {snapshot} ({snapshot_digest})")]
    StaleTrace { trace: u64, snapshot: u64, trace_digest: String, snapshot_digest: String },
    #[error("cannot parse network digest {0:?}")]
    BadDigest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub assets: usize,
    pub channels: usize,
    pub window: usize,
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv2_channels: usize,
    pub conv2_kernel: usize,
    pub hidden: usize,
}

impl NetConfig {
    /// Defaults for everything but the data-dependent shape.
    pub fn new(assets: usize, channels: usize, window: usize) -> Self {
        Self {
            assets,
            channels,
            window,
            conv1_channels: 2,
            conv1_kernel: 6,
            conv2_channels: 20,
            conv2_kernel: 5,
            hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let widths = [
            self.assets,
            self.channels,
            self.conv1_channels,
            self.conv1_kernel,
            self.conv2_channels,
            self.conv2_kernel,
            self.hidden,
        ];
        if widths.contains(&0) {
            return Err(NetError::InvalidConfig("all widths must be at least 1"));
        }
        if self.window + 2 <= self.conv1_kernel + self.conv2_kernel {
            return Err(NetError::InvalidConfig("window too short for the two convolutions"));
        }
        Ok(())
    }

    /// Temporal length after the first convolution.
    pub fn conv1_len(&self) -> usize {
        self.window - self.conv1_kernel + 1
    }

    /// Temporal length after the second convolution.
    pub fn conv2_len(&self) -> usize {
        self.conv1_len() - self.conv2_kernel + 1
    }

    pub fn features_per_stock(&self) -> usize {
        self.conv2_channels * self.conv2_len()
    }

    /// Width of the dense layer input: all stock features plus the previous
    /// weights.
    pub fn dense_inputs(&self) -> usize {
        self.assets * self.features_per_stock() + self.assets + 1
    }

    pub fn outputs(&self) -> usize {
        self.assets + 1
    }

    /// Canonical text form, stored in checkpoints and compared on load.
    pub fn digest(&self) -> String {
        format!(
            "assets={};channels={};window={};conv1={}x{};conv2={}x{};hidden={}",
            self.assets,
            self.channels,
            self.window,
            self.conv1_channels,
            self.conv1_kernel,
            self.conv2_channels,
            self.conv2_kernel,
            self.hidden
        )
    }

    pub fn from_digest(digest: &str) -> Result<Self, NetError> {
        let bad = || NetError::BadDigest(String::from(digest));
        let mut fields = [None::<&str>; 7];
        let keys = ["assets", "channels", "window", "conv1", "conv2", "hidden"];
        for part in digest.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            let idx = keys.iter().position(|key| *key == k).ok_or_else(bad)?;
            if fields[idx].replace(v).is_some() {
                return Err(bad());
            }
        }
        let num = |s: Option<&str>| s.ok_or_else(bad)?.parse::<usize>().map_err(|_| bad());
        let pair = |s: Option<&str>| -> Result<(usize, usize), NetError> {
            let (a, b) = s.ok_or_else(bad)?.split_once('x').ok_or_else(bad)?;
            Ok((num(Some(a))?, num(Some(b))?))
        };
        let (conv1_channels, conv1_kernel) = pair(fields[3])?;
        let (conv2_channels, conv2_kernel) = pair(fields[4])?;
        let cfg = Self {
            assets: num(fields[0])?,
            channels: num(fields[1])?,
            window: num(fields[2])?,
            conv1_channels,
            conv1_kernel,
            conv2_channels,
            conv2_kernel,
            hidden: num(fields[5])?,
        };
        cfg.validate()?;
        if cfg.digest() != digest {
            return Err(bad());
        }
        Ok(cfg)
    }

    /// Named parameter groups in storage order. The convolution kernels
    /// appear once: every stock uses the same filters.
    pub fn layout(&self) -> Vec<ParamGroup> {
        let (c, k1, kw1, k2, kw2, h) = (
            self.channels,
            self.conv1_channels,
            self.conv1_kernel,
            self.conv2_channels,
            self.conv2_kernel,
            self.hidden,
        );
        let (d, o) = (self.dense_inputs(), self.outputs());
        let shapes: [(&'static str, Vec<usize>); 10] = [
            ("conv1.weight", alloc::vec![k1, c, kw1]),
            ("conv1.bias", alloc::vec![k1]),
            ("conv2.weight", alloc::vec![k2, k1, kw2]),
            ("conv2.bias", alloc::vec![k2]),
            ("dense.weight", alloc::vec![h, d]),
            ("dense.bias", alloc::vec![h]),
            ("policy.weight", alloc::vec![o, h]),
            ("policy.bias", alloc::vec![o]),
            ("value.weight", alloc::vec![1, h]),
            ("value.bias", alloc::vec![1]),
        ];
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, shape)| {
                let len = shape.iter().product();
                let group = ParamGroup { name, shape, offset, len };
                offset += len;
                group
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|g| g.len).sum()
    }

    fn offsets(&self) -> Offsets {
        let l = self.layout();
        Offsets {
            conv1_w: l[0].offset,
            conv1_b: l[1].offset,
            conv2_w: l[2].offset,
            conv2_b: l[3].offset,
            dense_w: l[4].offset,
            dense_b: l[5].offset,
            policy_w: l[6].offset,
            policy_b: l[7].offset,
            value_w: l[8].offset,
            value_b: l[9].offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    conv1_w: usize,
    conv1_b: usize,
    conv2_w: usize,
    conv2_b: usize,
    dense_w: usize,
    dense_b: usize,
    policy_w: usize,
    policy_b: usize,
    value_w: usize,
    value_b: usize,
}

/// Immutable, versioned parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    version: u64,
    config: NetConfig,
    params: Vec<f64>,
}

impl PolicySnapshot {
    pub fn new(config: NetConfig, version: u64, params: Vec<f64>) -> Result<Self, NetError> {
        config.validate()?;
        let expected = config.param_count();
        if params.len() != expected {
            return Err(NetError::ParamCount { expected, found: params.len() });
        }
        Ok(Self { version, config, params })
    }

    /// All parameters zero.
    pub fn zeros(config: NetConfig) -> Result<Self, NetError> {
        let n = config.param_count();
        Self::new(config, 0, alloc::vec![0.0; n])
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn group(&self, name: &str) -> Option<&[f64]> {
        self.config
            .layout()
            .into_iter()
            .find(|g| g.name == name)
            .map(|g| &self.params[g.offset..g.offset + g.len])
    }

    /// Successor snapshot carrying updated parameters.
    pub fn successor(&self, params: Vec<f64>) -> Result<Self, NetError> {
        Self::new(self.config, self.version + 1, params)
    }
}

/// Fan-in scaled uniform initialization, deterministic per seed. The policy
/// head starts a hundred times smaller so the initial portfolio is close to
/// uniform.
pub fn init_parameters(config: NetConfig, seed: u64) -> Result<PolicySnapshot, NetError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fan_in = |name: &str| -> f64 {
        match name {
            n if n.starts_with("conv1") => (config.channels * config.conv1_kernel) as f64,
            n if n.starts_with("conv2") => (config.conv1_channels * config.conv2_kernel) as f64,
            n if n.starts_with("dense") => config.dense_inputs() as f64,
            _ => config.hidden as f64,
        }
    };
    let mut params = Vec::with_capacity(config.param_count());
    for group in config.layout() {
        let mut bound = 1.0 / libm::sqrt(fan_in(group.name));
        if group.name.starts_with("policy") {
            bound *= 0.01;
        }
        params.extend((0..group.len).map(|_| rng.random_range(-bound..=bound)));
    }
    PolicySnapshot::new(config, 0, params)
}

/// Activations cached by [`forward`] for an exact backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    version: u64,
    digest: String,
    input: Observation,
    /// tanh outputs of the first convolution, `[stock][k1][l1]`.
    conv1: Vec<f64>,
    /// Dense layer input: tanh outputs of the second convolution for every
    /// stock followed by the previous weights.
    dense_input: Vec<f64>,
    hidden: Vec<f64>,
    scores: Vec<f64>,
    value: f64,
}

impl ForwardTrace {
    pub fn input(&self) -> &Observation {
        &self.input
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Per-stock features fed to the dense layer.
    pub fn stock_features(&self, stock: usize, config: &NetConfig) -> &[f64] {
        let n = config.features_per_stock();
        &self.dense_input[stock * n..(stock + 1) * n]
    }
}

/// Network outputs for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub scores: Vec<f64>,
    pub value: f64,
    pub trace: ForwardTrace,
}

/// Valid 1-D convolution over `[in_ch][len]` rows, then tanh.
fn conv_tanh(
    input: &[f64],
    in_ch: usize,
    len: usize,
    weight: &[f64],
    bias: &[f64],
    kernel: usize,
    out: &mut [f64],
) {
    let out_len = len - kernel + 1;
    let out_ch = bias.len();
    for o in 0..out_ch {
        let row = &mut out[o * out_len..(o + 1) * out_len];
        row.fill(bias[o]);
        for c in 0..in_ch {
            let x = &input[c * len..(c + 1) * len];
            let w = &weight[(o * in_ch + c) * kernel..(o * in_ch + c + 1) * kernel];
            for (k, &wk) in w.iter().enumerate() {
                for (r, xv) in row.iter_mut().zip(&x[k..k + out_len]) {
                    *r += wk * xv;
                }
            }
        }
        for r in row.iter_mut() {
            *r = libm::tanh(*r);
        }
    }
}

pub fn forward(snapshot: &PolicySnapshot, obs: &Observation) -> Result<Forward, NetError> {
    let cfg = &snapshot.config;
    let expected = (cfg.assets, cfg.channels, cfg.window);
    if obs.shape() != expected {
        return Err(NetError::ShapeMismatch { expected, found: obs.shape() });
    }
    let p = &snapshot.params;
    let off = cfg.offsets();
    let (m, c, l) = expected;
    let (k1, kw1, k2, kw2, h) = (cfg.conv1_channels, cfg.conv1_kernel, cfg.conv2_channels, cfg.conv2_kernel, cfg.hidden);
    let l1 = cfg.conv1_len();
    let feat = cfg.features_per_stock();
    let d = cfg.dense_inputs();

    let w1 = &p[off.conv1_w..off.conv1_w + k1 * c * kw1];
    let b1 = &p[off.conv1_b..off.conv1_b + k1];
    let w2 = &p[off.conv2_w..off.conv2_w + k2 * k1 * kw2];
    let b2 = &p[off.conv2_b..off.conv2_b + k2];

    let mut conv1 = alloc::vec![0.0; m * k1 * l1];
    let mut dense_input = alloc::vec![0.0; d];
    for s in 0..m {
        let h1 = &mut conv1[s * k1 * l1..(s + 1) * k1 * l1];
        conv_tanh(obs.stock(s), c, l, w1, b1, kw1, h1);
        conv_tanh(h1, k1, l1, w2, b2, kw2, &mut dense_input[s * feat..(s + 1) * feat]);
    }
    dense_input[m * feat..].copy_from_slice(obs.prev_weights.as_slice());

    let wd = &p[off.dense_w..off.dense_w + h * d];
    let bd = &p[off.dense_b..off.dense_b + h];
    let hidden: Vec<f64> = (0..h)
        .map(|j| {
            let row = &wd[j * d..(j + 1) * d];
            let z: f64 = row.iter().zip(&dense_input).map(|(w, u)| w * u).sum::<f64>() + bd[j];
            libm::tanh(z)
        })
        .collect();

    let o = cfg.outputs();
    let wp = &p[off.policy_w..off.policy_w + o * h];
    let bp = &p[off.policy_b..off.policy_b + o];
    let scores: Vec<f64> = (0..o)
        .map(|i| wp[i * h..(i + 1) * h].iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>() + bp[i])
        .collect();
    let wv = &p[off.value_w..off.value_w + h];
    let value = wv.iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>() + p[off.value_b];

    let trace = ForwardTrace {
        version: snapshot.version,
        digest: cfg.digest(),
        input: obs.clone(),
        conv1,
        dense_input,
        hidden,
        scores: scores.clone(),
        value,
    };
    Ok(Forward { scores, value, trace })
}

/// Parameter gradients in the same layout as [`PolicySnapshot::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros(config: &NetConfig) -> Self {
        Self(alloc::vec![0.0; config.param_count()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn add(&mut self, other: &Gradients) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a += b);
    }
}

/// Gradients of a scalar loss whose derivatives with respect to the action
/// scores and the value are `grad_scores` and `grad_value`.
pub fn backward(
    snapshot: &PolicySnapshot,
    trace: &ForwardTrace,
    grad_scores: &[f64],
    grad_value: f64,
) -> Result<Gradients, NetError> {
    let mut grads = Gradients::zeros(&snapshot.config);
    backward_accumulate(snapshot, trace, grad_scores, grad_value, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`] but adds into an existing gradient buffer.
pub fn backward_accumulate(
    snapshot: &PolicySnapshot,
    trace: &ForwardTrace,
    grad_scores: &[f64],
    grad_value: f64,
    grads: &mut Gradients,
) -> Result<(), NetError> {
    let cfg = &snapshot.config;
    let digest = cfg.digest();
    if trace.version != snapshot.version || trace.digest != digest {
        return Err(NetError::StaleTrace {
            trace: trace.version,
            snapshot: snapshot.version,
            trace_digest: trace.digest.clone(),
            snapshot_digest: digest,
        });
    }
    let o = cfg.outputs();
    if grad_scores.len() != o {
        return Err(NetError::GradientLength { expected: o, found: grad_scores.len() });
    }
    if grads.0.len() != snapshot.params.len() {
        return Err(NetError::ParamCount { expected: snapshot.params.len(), found: grads.0.len() });
    }

    let p = &snapshot.params;
    let g = &mut grads.0;
    let off = cfg.offsets();
    let (m, c, l) = (cfg.assets, cfg.channels, cfg.window);
    let (k1, kw1, k2, kw2, h) = (cfg.conv1_channels, cfg.conv1_kernel, cfg.conv2_channels, cfg.conv2_kernel, cfg.hidden);
    let (l1, l2) = (cfg.conv1_len(), cfg.conv2_len());
    let feat = cfg.features_per_stock();
    let d = cfg.dense_inputs();

    // heads
    let mut g_hidden = alloc::vec![0.0; h];
    for i in 0..o {
        let gs = grad_scores[i];
        if gs == 0.0 {
            continue;
        }
        let w = &p[off.policy_w + i * h..off.policy_w + (i + 1) * h];
        let gw = &mut g[off.policy_w + i * h..off.policy_w + (i + 1) * h];
        for j in 0..h {
            gw[j] += gs * trace.hidden[j];
            g_hidden[j] += gs * w[j];
        }
        g[off.policy_b + i] += gs;
    }
    if grad_value != 0.0 {
        for j in 0..h {
            g[off.value_w + j] += grad_value * trace.hidden[j];
            g_hidden[j] += grad_value * p[off.value_w + j];
        }
        g[off.value_b] += grad_value;
    }

    // dense layer
    let g_z: Vec<f64> = g_hidden.iter().zip(&trace.hidden).map(|(gh, hv)| gh * (1.0 - hv * hv)).collect();
    let conv_part = m * feat;
    let mut g_u = alloc::vec![0.0; conv_part];
    for j in 0..h {
        let gz = g_z[j];
        if gz == 0.0 {
            continue;
        }
        let gw = &mut g[off.dense_w + j * d..off.dense_w + (j + 1) * d];
        for (gwk, u) in gw.iter_mut().zip(&trace.dense_input) {
            *gwk += gz * u;
        }
        let w = &p[off.dense_w + j * d..off.dense_w + j * d + conv_part];
        for (gu, wk) in g_u.iter_mut().zip(w) {
            *gu += gz * wk;
        }
        g[off.dense_b + j] += gz;
    }

    // convolutions, per stock with shared kernels
    let mut g_a1 = alloc::vec![0.0; k1 * l1];
    for s in 0..m {
        let h2 = &trace.dense_input[s * feat..(s + 1) * feat];
        let g_a2: Vec<f64> = g_u[s * feat..(s + 1) * feat]
            .iter()
            .zip(h2)
            .map(|(gv, hv)| gv * (1.0 - hv * hv))
            .collect();
        let h1 = &trace.conv1[s * k1 * l1..(s + 1) * k1 * l1];
        g_a1.fill(0.0);
        for oc in 0..k2 {
            let ga = &g_a2[oc * l2..(oc + 1) * l2];
            g[off.conv2_b + oc] += ga.iter().sum::<f64>();
            for ic in 0..k1 {
                let x = &h1[ic * l1..(ic + 1) * l1];
                let base = (oc * k1 + ic) * kw2;
                for k in 0..kw2 {
                    let mut acc = 0.0;
                    let w = p[off.conv2_w + base + k];
                    let gx = &mut g_a1[ic * l1 + k..ic * l1 + k + l2];
                    for j in 0..l2 {
                        acc += ga[j] * x[j + k];
                        gx[j] += w * ga[j];
                    }
                    g[off.conv2_w + base + k] += acc;
                }
            }
        }
        for (ga, hv) in g_a1.iter_mut().zip(h1) {
            *ga *= 1.0 - hv * hv;
        }
        let input = trace.input.stock(s);
        for oc in 0..k1 {
            let ga = &g_a1[oc * l1..(oc + 1) * l1];
            g[off.conv1_b + oc] += ga.iter().sum::<f64>();
            for ic in 0..c {
                let x = &input[ic * l..(ic + 1) * l];
                let base = (oc * c + ic) * kw1;
                for k in 0..kw1 {
                    let acc: f64 = ga.iter().zip(&x[k..k + l1]).map(|(a, b)| a * b).sum();
                    g[off.conv1_w + base + k] += acc;
                }
            }
        }
    }
    Ok(())
}
