//! Shared-trunk policy/value network with hand-written backprop and RMSProp.
//!
//! Trunk: stacked `ELU(W x + b)` layers. Policy head: one linear layer to
//! `2 n_a` raw outputs `z`, mapped to `alpha = 1 + softplus(z[..n_a])`,
//! `beta = 1 + softplus(z[n_a..])`. Value head: one unsquashed linear output.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::Observation;
use crate::policy_dist::BetaPolicyParams;

pub const DEFAULT_HIDDEN: [usize; 3] = [128, 128, 128];

const CHECKPOINT_MAGIC: &str = "A0C-CHECKPOINT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid network shape: {0}")]
    Shape(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("non-finite parameter in {0} after update")]
    NonFiniteParameter(String),
    #[error("non-finite network output")]
    NonFiniteOutput,
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(out, in)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || {
            rng.random_range(-limit..=limit)
        });
        Self {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }

    /// `x W^T + b` for a batch of rows.
    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

/// Network parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub trunk: Vec<Linear>,
    pub policy_head: Linear,
    pub value_head: Linear,
}

pub type Gradients = NetworkParams;

/// Outputs for a single observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub policy: BetaPolicyParams,
    pub value: f64,
}

/// Batched forward pass, with everything backward needs.
#[derive(Debug, Clone)]
pub struct ForwardBatch {
    /// Input followed by each trunk layer's activation.
    activations: Vec<Array2<f64>>,
    /// Pre-activation of each trunk layer.
    pre_activations: Vec<Array2<f64>>,
    pub policy_raw: Array2<f64>,
    pub value: Array1<f64>,
}

impl ForwardBatch {
    pub fn batch_size(&self) -> usize {
        self.value.len()
    }

    pub fn policy(&self, row: usize) -> BetaPolicyParams {
        beta_params_from_raw(self.policy_raw.row(row).as_slice().expect("contiguous"))
    }

    pub fn output(&self, row: usize) -> ForwardOutput {
        ForwardOutput {
            policy: self.policy(row),
            value: self.value[row],
        }
    }

    pub fn outputs(&self) -> Vec<ForwardOutput> {
        (0..self.batch_size()).map(|r| self.output(r)).collect()
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps raw head outputs `[z_alpha; z_beta]` to Beta parameters `>= 1`.
pub fn beta_params_from_raw(z: &[f64]) -> BetaPolicyParams {
    let n_a = z.len() / 2;
    let alpha = z[..n_a].iter().map(|&v| 1.0 + softplus(v)).collect();
    let beta = z[n_a..].iter().map(|&v| 1.0 + softplus(v)).collect();
    BetaPolicyParams::new(alpha, beta).expect("1 + softplus is finite and >= 1")
}

impl NetworkParams {
    /// Default architecture: three hidden layers of 128 units.
    pub fn init(seed: u64, obs_dim: usize, n_a: usize) -> Self {
        Self::init_with(seed, obs_dim, &DEFAULT_HIDDEN, n_a).expect("default shape is valid")
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_with(
        seed: u64,
        obs_dim: usize,
        hidden: &[usize],
        n_a: usize,
    ) -> Result<Self, NetError> {
        if obs_dim == 0 || n_a == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(NetError::Shape(format!(
                "obs_dim = {obs_dim}, hidden = {hidden:?}, n_a = {n_a}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut fan_in = obs_dim;
        for &h in hidden {
            trunk.push(Linear::glorot(fan_in, h, &mut rng));
            fan_in = h;
        }
        Ok(Self {
            trunk,
            policy_head: Linear::glorot(fan_in, 2 * n_a, &mut rng),
            value_head: Linear::glorot(fan_in, 1, &mut rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            trunk: self
                .trunk
                .iter()
                .map(|l| Linear::zeros(l.fan_in(), l.fan_out()))
                .collect(),
            policy_head: Linear::zeros(self.policy_head.fan_in(), self.policy_head.fan_out()),
            value_head: Linear::zeros(self.value_head.fan_in(), 1),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk[0].fan_in()
    }

    pub fn n_a(&self) -> usize {
        self.policy_head.fan_out() / 2
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.trunk.iter().map(Linear::fan_out).collect()
    }

    fn layers(&self) -> impl Iterator<Item = (String, &Linear)> {
        self.trunk
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("trunk.{i}"), l))
            .chain([
                ("policy".to_string(), &self.policy_head),
                ("value".to_string(), &self.value_head),
            ])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        self.trunk
            .iter_mut()
            .chain([&mut self.policy_head, &mut self.value_head])
    }

    /// Every parameter array as a named flat slice, in a fixed order.
    pub fn named_slices(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (name, l) in self.layers() {
            out.push((format!("{name}.weight"), l.weight.as_slice().expect("standard layout")));
            out.push((format!("{name}.bias"), l.bias.as_slice().expect("standard layout")));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in self.layers_mut() {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_slices().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.named_slices()
            .into_iter()
            .flat_map(|(_, s)| s.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
    }

    /// Name of the first array holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.named_slices()
            .into_iter()
            .find(|(_, s)| s.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n)
    }

    pub fn forward(&self, obs: ArrayView2<f64>) -> Result<ForwardBatch, NetError> {
        if obs.ncols() != self.obs_dim() {
            return Err(NetError::Dimension {
                expected: self.obs_dim(),
                got: obs.ncols(),
            });
        }
        let mut activations = Vec::with_capacity(self.trunk.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.trunk.len());
        activations.push(obs.to_owned());
        for layer in &self.trunk {
            let z = layer.apply(&activations.last().expect("input").view());
            activations.push(z.mapv(elu));
            pre_activations.push(z);
        }
        let top = activations.last().expect("trunk").view();
        let policy_raw = self.policy_head.apply(&top);
        let value = self.value_head.apply(&top).column(0).to_owned();
        if !policy_raw.iter().chain(&value).all(|v| v.is_finite()) {
            return Err(NetError::NonFiniteOutput);
        }
        Ok(ForwardBatch {
            activations,
            pre_activations,
            policy_raw,
            value,
        })
    }

    pub fn forward_one(&self, obs: &Observation) -> Result<ForwardOutput, NetError> {
        let x = ArrayView2::from_shape((1, obs.dim()), obs.values())
            .map_err(|e| NetError::Shape(e.to_string()))?;
        Ok(self.forward(x)?.output(0))
    }

    /// Reverse-mode gradient of a scalar loss, given its partials with
    /// respect to the raw policy-head outputs and the value outputs.
    pub fn backward(
        &self,
        fwd: &ForwardBatch,
        d_policy_raw: &Array2<f64>,
        d_value: &Array1<f64>,
    ) -> Gradients {
        let top = fwd.activations.last().expect("trunk");
        let d_value_col = d_value.view().insert_axis(Axis(1));

        let policy_head = Linear {
            weight: d_policy_raw.t().dot(top),
            bias: d_policy_raw.sum_axis(Axis(0)),
        };
        let value_head = Linear {
            weight: d_value_col.t().dot(top),
            bias: d_value_col.sum_axis(Axis(0)),
        };

        let mut d_h = d_policy_raw.dot(&self.policy_head.weight)
            + d_value_col.dot(&self.value_head.weight);
        let mut trunk = Vec::with_capacity(self.trunk.len());
        for (l, layer) in self.trunk.iter().enumerate().rev() {
            let z = &fwd.pre_activations[l];
            let h = &fwd.activations[l + 1];
            // elu'(z) = 1 for z > 0, exp(z) = elu(z) + 1 otherwise.
            ndarray::Zip::from(&mut d_h)
                .and(z)
                .and(h)
                .for_each(|d, &z, &h| {
                    if z <= 0.0 {
                        *d *= h + 1.0;
                    }
                });
            let input = &fwd.activations[l];
            trunk.push(Linear {
                weight: d_h.t().dot(input),
                bias: d_h.sum_axis(Axis(0)),
            });
            if l > 0 {
                d_h = d_h.dot(&layer.weight);
            }
        }
        trunk.reverse();
        Gradients {
            trunk,
            policy_head,
            value_head,
        }
    }

    /// Text checkpoint: a versioned header, then one `name rows cols` line
    /// per array followed by its values in shortest round-trip decimal form.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), NetError> {
        writeln!(w, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        for (name, l) in self.layers() {
            for (suffix, rows, cols, data) in [
                ("weight", l.fan_out(), l.fan_in(), l.weight.as_slice().expect("layout")),
                ("bias", 1, l.fan_out(), l.bias.as_slice().expect("layout")),
            ] {
                writeln!(w, "{name}.{suffix} {rows} {cols}")?;
                let mut line = String::with_capacity(data.len() * 24);
                for (i, v) in data.iter().enumerate() {
                    if i > 0 {
                        line.push(' ');
                    }
                    write!(line, "{v:?}").expect("write to string");
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self, NetError> {
        let bad = |m: String| NetError::Checkpoint(m);
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
        match header.split_whitespace().collect::<Vec<_>>()[..] {
            [CHECKPOINT_MAGIC, v] if v == CHECKPOINT_VERSION.to_string() => {}
            _ => return Err(bad(format!("unsupported header {header:?}"))),
        }

        let mut arrays: Vec<(String, usize, usize, Vec<f64>)> = Vec::new();
        while let Some(meta) = lines.next() {
            let meta = meta?;
            if meta.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = meta.split_whitespace().collect();
            let [name, rows, cols] = parts[..] else {
                return Err(bad(format!("bad array header {meta:?}")));
            };
            let rows: usize = rows.parse().map_err(|_| bad(format!("bad rows in {meta:?}")))?;
            let cols: usize = cols.parse().map_err(|_| bad(format!("bad cols in {meta:?}")))?;
            let data_line = lines
                .next()
                .ok_or_else(|| bad(format!("missing data for {name}")))??;
            let data = data_line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("{name}: {e}")))?;
            if data.len() != rows * cols {
                return Err(bad(format!(
                    "{name}: expected {} values, found {}",
                    rows * cols,
                    data.len()
                )));
            }
            arrays.push((name.to_string(), rows, cols, data));
        }

        if arrays.len() < 6 || !arrays.len().is_multiple_of(2) {
            return Err(bad(format!("unexpected array count {}", arrays.len())));
        }
        let mut layers = Vec::new();
        for pair in arrays.chunks(2) {
            let (wn, rows, cols, w) = &pair[0];
            let (bn, _, bcols, b) = &pair[1];
            let prefix = wn
                .strip_suffix(".weight")
                .ok_or_else(|| bad(format!("expected weight, found {wn}")))?;
            if bn.strip_suffix(".bias") != Some(prefix) || bcols != rows {
                return Err(bad(format!("bias {bn} does not match {wn}")));
            }
            let weight = Array2::from_shape_vec((*rows, *cols), w.clone())
                .map_err(|e| bad(e.to_string()))?;
            layers.push((prefix.to_string(), Linear {
                weight,
                bias: Array1::from(b.clone()),
            }));
        }
        let (value_name, value_head) = layers.pop().expect("len >= 3");
        let (policy_name, policy_head) = layers.pop().expect("len >= 3");
        if value_name != "value" || policy_name != "policy" {
            return Err(bad("missing policy/value heads".into()));
        }
        let mut trunk = Vec::new();
        for (i, (name, l)) in layers.into_iter().enumerate() {
            if name != format!("trunk.{i}") {
                return Err(bad(format!("unexpected layer {name}")));
            }
            trunk.push(l);
        }
        let params = Self {
            trunk,
            policy_head,
            value_head,
        };
        params.check_shapes()?;
        Ok(params)
    }

    fn check_shapes(&self) -> Result<(), NetError> {
        let mut fan_in = self.obs_dim();
        for l in &self.trunk {
            if l.fan_in() != fan_in {
                return Err(NetError::Shape(format!(
                    "trunk layer expects {} inputs, previous layer gives {fan_in}",
                    l.fan_in()
                )));
            }
            fan_in = l.fan_out();
        }
        let heads_ok = self.policy_head.fan_in() == fan_in
            && self.value_head.fan_in() == fan_in
            && self.value_head.fan_out() == 1
            && self.policy_head.fan_out().is_multiple_of(2)
            && self.policy_head.fan_out() > 0;
        if heads_ok {
            Ok(())
        } else {
            Err(NetError::Shape("head shapes inconsistent with trunk".into()))
        }
    }
}

/// RMSProp: `v <- rho v + (1 - rho) g^2`, `theta <- theta - lr g / (sqrt(v) + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    square_avg: NetworkParams,
}

impl RmsProp {
    pub fn new(params: &NetworkParams, lr: f64, decay: f64, eps: f64) -> Self {
        Self {
            lr,
            decay,
            eps,
            square_avg: params.zeros_like(),
        }
    }

    pub fn with_defaults(params: &NetworkParams) -> Self {
        Self::new(params, 1e-4, 0.9, 1e-8)
    }

    pub fn square_avg(&self) -> &NetworkParams {
        &self.square_avg
    }

    /// Applies one update. A non-finite gradient aborts before anything is
    /// modified.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &Gradients) -> Result<(), NetError> {
        if let Some(name) = grads.first_non_finite() {
            return Err(NetError::NonFiniteGradient(name));
        }
        let (lr, rho, eps) = (self.lr, self.decay, self.eps);
        let grad_slices = grads.named_slices();
        for ((p, v), (_, g)) in params
            .slices_mut()
            .into_iter()
            .zip(self.square_avg.slices_mut())
            .zip(grad_slices)
        {
            for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = rho * *v + (1.0 - rho) * g * g;
                *p -= lr * g / (v.sqrt() + eps);
            }
        }
        match params.first_non_finite() {
            Some(name) => Err(NetError::NonFiniteParameter(name)),
            None => Ok(()),
        }
    }
}
