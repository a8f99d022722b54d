//! Input-convex neural networks.
//!
//! Layer `i` maps `z_i ↦ z_{i+1} = g(W_i^z z_i + W_i^x x + b_i)` with `z_0 = 0`.
//! Hidden layers use Softplus (or ReLU for hand-built networks), the output
//! layer is linear and one unit wide. Convexity in `x` holds whenever every
//! `W^z` entry is non-negative; constraining `W^x` as well makes the network
//! non-decreasing in the constrained inputs.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Threshold above which Softplus switches to `t + ln(1 + e^{-t})`.
pub const SOFTPLUS_GUARD: f64 = 30.0;

#[inline]
pub fn softplus(t: f64) -> f64 {
    if t > SOFTPLUS_GUARD {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Softplus,
    Relu,
}

impl Activation {
    /// Value, first and second derivative.
    #[inline]
    fn eval(self, t: f64) -> (f64, f64, f64) {
        match self {
            Activation::Softplus => {
                let s = sigmoid(t);
                (softplus(t), s, s * (1.0 - s))
            }
            Activation::Relu => {
                if t > 0.0 {
                    (t, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
        }
    }
}

/// Network shape written as `a-h1-…-1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub input_size: usize,
    pub hidden: Vec<usize>,
}

impl Architecture {
    pub fn new(input_size: usize, hidden: Vec<usize>) -> Result<Self> {
        if input_size == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArchitecture(format!(
                "layer widths must be positive: {input_size}-{hidden:?}"
            )));
        }
        Ok(Self { input_size, hidden })
    }

    /// Widths of every layer including the single output unit.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = self.hidden.clone();
        w.push(1);
        w
    }

    /// The eight hidden-layer configurations of the standard sweep.
    pub fn standard_sweep(input_size: usize) -> Vec<Architecture> {
        [
            vec![4],
            vec![8],
            vec![12],
            vec![4, 2],
            vec![8, 4],
            vec![12, 8],
            vec![8, 4, 4],
            vec![12, 8, 4],
        ]
        .into_iter()
        .map(|hidden| Architecture { input_size, hidden })
        .collect()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.input_size)?;
        for h in &self.hidden {
            write!(f, "-{h}")?;
        }
        write!(f, "-1")
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .trim()
            .split('-')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::InvalidArchitecture(s.to_string()))?;
        if parts.len() < 2 || *parts.last().unwrap() != 1 {
            return Err(Error::InvalidArchitecture(s.to_string()));
        }
        Architecture::new(parts[0], parts[1..parts.len() - 1].to_vec())
    }
}

/// Sign constraints attached to a parameter set.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Constraints {
    /// Non-negative `W^x` (monotone networks).
    pub constrain_wx: bool,
    /// Input columns of `W^x` left unbounded even when `constrain_wx` is set.
    pub wx_exempt_columns: Vec<usize>,
    /// The output layer's `W^x` is fixed to zero and not trained.
    pub zero_last_wx: bool,
}

impl Constraints {
    pub fn wx_bounded(&self, column: usize) -> bool {
        self.constrain_wx && !self.wx_exempt_columns.contains(&column)
    }
}

/// One layer; matrices stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    /// `rows × input_size`
    pub wx: Vec<f64>,
    /// `rows × previous width`, empty for the first layer
    pub wz: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn z_cols(&self) -> usize {
        if self.rows == 0 {
            0
        } else {
            self.wz.len() / self.rows
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcnnParams {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
    pub constraints: Constraints,
    pub activation: Activation,
}

/// Flat trainable parameters with per-entry lower bounds (0 or −∞).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub lower: Vec<f64>,
}

impl IcnnParams {
    /// All-zero parameters of the given shape.
    pub fn zeros(arch: Architecture, constraints: Constraints) -> Self {
        let widths = arch.layer_widths();
        let mut prev = 0;
        let layers = widths
            .iter()
            .map(|&rows| {
                let layer = Layer {
                    rows,
                    wx: vec![0.0; rows * arch.input_size],
                    wz: vec![0.0; rows * prev],
                    b: vec![0.0; rows],
                };
                prev = rows;
                layer
            })
            .collect();
        Self {
            arch,
            layers,
            constraints,
            activation: Activation::Softplus,
        }
    }

    /// Glorot-uniform weights (absolute value where constrained), biases
    /// uniform in (−0.1, 0.1). Deterministic per seed.
    pub fn init(arch: &Architecture, constraints: &Constraints, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(arch.clone(), constraints.clone());
        let a = arch.input_size;
        let mut prev = 0;
        for layer in params.layers.iter_mut() {
            let sx = (6.0 / (a + layer.rows) as f64).sqrt();
            for w in layer.wx.iter_mut() {
                *w = rng.gen_range(-sx..sx);
            }
            if prev > 0 {
                let sz = (6.0 / (prev + layer.rows) as f64).sqrt();
                for w in layer.wz.iter_mut() {
                    *w = rng.gen_range(-sz..sz).abs();
                }
            }
            for b in layer.b.iter_mut() {
                *b = rng.gen_range(-0.1..0.1);
            }
            for (idx, w) in layer.wx.iter_mut().enumerate() {
                if constraints.wx_bounded(idx % a) {
                    *w = w.abs();
                }
            }
            prev = layer.rows;
        }
        if constraints.zero_last_wx {
            params.layers.last_mut().unwrap().wx.fill(0.0);
        }
        params
    }

    pub fn input_size(&self) -> usize {
        self.arch.input_size
    }

    fn last_wx_trainable(&self) -> bool {
        !self.constraints.zero_last_wx
    }

    /// Clamps every constrained entry to `[0, ∞)`; idempotent.
    pub fn project(&mut self) {
        let a = self.arch.input_size;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for w in layer.wz.iter_mut() {
                *w = w.max(0.0);
            }
            for (idx, w) in layer.wx.iter_mut().enumerate() {
                if self.constraints.wx_bounded(idx % a) {
                    *w = w.max(0.0);
                }
            }
            if i + 1 == n && self.constraints.zero_last_wx {
                layer.wx.fill(0.0);
            }
        }
    }

    pub fn projected(mut self) -> Self {
        self.project();
        self
    }

    /// Whether every constraint invariant holds.
    pub fn satisfies_constraints(&self) -> bool {
        let a = self.arch.input_size;
        let n = self.layers.len();
        self.layers.iter().enumerate().all(|(i, layer)| {
            layer.wz.iter().all(|w| *w >= 0.0)
                && layer
                    .wx
                    .iter()
                    .enumerate()
                    .all(|(idx, w)| !self.constraints.wx_bounded(idx % a) || *w >= 0.0)
                && !(i + 1 == n && self.constraints.zero_last_wx && layer.wx.iter().any(|w| *w != 0.0))
        })
    }

    pub fn num_trainable(&self) -> usize {
        let n = self.layers.len();
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let wx = if i + 1 == n && !self.last_wx_trainable() { 0 } else { l.wx.len() };
                wx + l.wz.len() + l.b.len()
            })
            .sum()
    }

    /// Flattens in layer order: `W^x` (unless fixed), `W^z`, `b`.
    pub fn to_vector(&self) -> ParamVector {
        let a = self.arch.input_size;
        let n = self.layers.len();
        let mut values = Vec::with_capacity(self.num_trainable());
        let mut lower = Vec::with_capacity(self.num_trainable());
        for (i, layer) in self.layers.iter().enumerate() {
            if i + 1 < n || self.last_wx_trainable() {
                for (idx, w) in layer.wx.iter().enumerate() {
                    values.push(*w);
                    lower.push(if self.constraints.wx_bounded(idx % a) {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    });
                }
            }
            values.extend_from_slice(&layer.wz);
            lower.extend(std::iter::repeat_n(0.0, layer.wz.len()));
            values.extend_from_slice(&layer.b);
            lower.extend(std::iter::repeat_n(f64::NEG_INFINITY, layer.b.len()));
        }
        ParamVector { values, lower }
    }

    /// Inverse of [`to_vector`](Self::to_vector) for the same shape.
    pub fn set_from_slice(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_trainable() {
            return Err(Error::ShapeMismatch {
                expected: self.num_trainable(),
                got: values.len(),
            });
        }
        let n = self.layers.len();
        let last_wx = self.last_wx_trainable();
        let mut it = values.iter().copied();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if i + 1 < n || last_wx {
                layer.wx.iter_mut().for_each(|w| *w = it.next().unwrap());
            } else {
                layer.wx.fill(0.0);
            }
            layer.wz.iter_mut().for_each(|w| *w = it.next().unwrap());
            layer.b.iter_mut().for_each(|w| *w = it.next().unwrap());
        }
        Ok(())
    }

    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.set_from_slice(values)?;
        Ok(out)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_size {
            return Err(Error::ShapeMismatch {
                expected: self.arch.input_size,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut tape = Tape::new(self);
        Ok(tape.record(self, x))
    }

    /// `∂NN/∂x` by backpropagation.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut tape = Tape::new(self);
        tape.record(self, x);
        let mut grad = vec![0.0; x.len()];
        tape.input_gradient(self, &mut grad);
        Ok(grad)
    }
}

/// Offsets of each layer's blocks inside the flat trainable vector.
#[derive(Debug, Clone)]
struct LayerOffsets {
    wx: Option<usize>,
    wz: usize,
    b: usize,
}

/// Reverse-mode record of one forward pass.
///
/// Besides the primal activations it keeps `g'` and `g''` of every hidden
/// unit so that the directional input derivative `∇ₓNN · v` can itself be
/// differentiated with respect to the parameters, which is what a loss on
/// stresses (derivatives of the energy) needs.
#[derive(Debug, Clone)]
pub struct Tape {
    x: Vec<f64>,
    /// `z[i]` is the input to layer `i` (`z[0]` empty).
    z: Vec<Vec<f64>>,
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
    // scratch for the reverse sweeps
    tangent_z: Vec<Vec<f64>>,
    tangent_a: Vec<Vec<f64>>,
    adj_z: Vec<f64>,
    adj_tz: Vec<f64>,
    adj_next_z: Vec<f64>,
    adj_next_tz: Vec<f64>,
    offsets: Vec<LayerOffsets>,
    output: f64,
}

impl Tape {
    pub fn new(params: &IcnnParams) -> Self {
        let n = params.layers.len();
        let mut offsets = Vec::with_capacity(n);
        let mut pos = 0;
        for (i, l) in params.layers.iter().enumerate() {
            let wx = if i + 1 < n || params.last_wx_trainable() {
                let o = pos;
                pos += l.wx.len();
                Some(o)
            } else {
                None
            };
            let wz = pos;
            pos += l.wz.len();
            let b = pos;
            pos += l.b.len();
            offsets.push(LayerOffsets { wx, wz, b });
        }
        let max_w = params.layers.iter().map(|l| l.rows).max().unwrap_or(1);
        Self {
            x: vec![0.0; params.arch.input_size],
            z: params.layers.iter().map(|l| vec![0.0; l.z_cols()]).collect(),
            d1: params.layers.iter().map(|l| vec![0.0; l.rows]).collect(),
            d2: params.layers.iter().map(|l| vec![0.0; l.rows]).collect(),
            tangent_z: params.layers.iter().map(|l| vec![0.0; l.z_cols()]).collect(),
            tangent_a: params.layers.iter().map(|l| vec![0.0; l.rows]).collect(),
            adj_z: vec![0.0; max_w],
            adj_tz: vec![0.0; max_w],
            adj_next_z: vec![0.0; max_w],
            adj_next_tz: vec![0.0; max_w],
            offsets,
            output: 0.0,
        }
    }

    pub fn output(&self) -> f64 {
        self.output
    }

    /// Runs the forward pass, recording everything the reverse sweeps need.
    pub fn record(&mut self, params: &IcnnParams, x: &[f64]) -> f64 {
        let a = params.arch.input_size;
        self.x.copy_from_slice(x);
        let n = params.layers.len();
        for (i, layer) in params.layers.iter().enumerate() {
            let last = i + 1 == n;
            let zc = layer.z_cols();
            let (head, tail) = self.z.split_at_mut(i + 1);
            let z_in = &head[i];
            for r in 0..layer.rows {
                let mut pre = layer.b[r];
                let wx = &layer.wx[r * a..(r + 1) * a];
                for (w, xv) in wx.iter().zip(x) {
                    pre += w * xv;
                }
                if zc > 0 {
                    let wz = &layer.wz[r * zc..(r + 1) * zc];
                    for (w, zv) in wz.iter().zip(z_in) {
                        pre += w * zv;
                    }
                }
                if last {
                    self.output = pre;
                    self.d1[i][r] = 1.0;
                    self.d2[i][r] = 0.0;
                } else {
                    let (g, g1, g2) = params.activation.eval(pre);
                    tail[0][r] = g;
                    self.d1[i][r] = g1;
                    self.d2[i][r] = g2;
                }
            }
        }
        self.output
    }

    /// Adds `∂NN/∂x` of the recorded pass into `grad`.
    pub fn input_gradient(&mut self, params: &IcnnParams, grad: &mut [f64]) {
        let a = params.arch.input_size;
        let n = params.layers.len();
        // adjoint of the pre-activation of layer i
        self.adj_z[..1].copy_from_slice(&[1.0]);
        for i in (0..n).rev() {
            let layer = &params.layers[i];
            let zc = layer.z_cols();
            for r in 0..layer.rows {
                self.adj_z[r] *= self.d1[i][r];
            }
            for r in 0..layer.rows {
                let adj = self.adj_z[r];
                if adj == 0.0 {
                    continue;
                }
                for (g, w) in grad.iter_mut().zip(&layer.wx[r * a..(r + 1) * a]) {
                    *g += adj * w;
                }
            }
            if zc > 0 {
                self.adj_next_z[..zc].fill(0.0);
                for r in 0..layer.rows {
                    let adj = self.adj_z[r];
                    for (c, w) in layer.wz[r * zc..(r + 1) * zc].iter().enumerate() {
                        self.adj_next_z[c] += adj * w;
                    }
                }
                std::mem::swap(&mut self.adj_z, &mut self.adj_next_z);
            }
        }
    }

    /// Adds `weight · ∂(∇ₓNN · v)/∂θ` into `grad` (flat trainable ordering).
    pub fn accumulate_directional_param_gradient(
        &mut self,
        params: &IcnnParams,
        v: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) {
        let a = params.arch.input_size;
        let n = params.layers.len();

        // forward tangent along v
        for i in 0..n {
            let layer = &params.layers[i];
            let zc = layer.z_cols();
            for r in 0..layer.rows {
                let mut t = 0.0;
                for (w, vv) in layer.wx[r * a..(r + 1) * a].iter().zip(v) {
                    t += w * vv;
                }
                if zc > 0 {
                    for (w, tz) in layer.wz[r * zc..(r + 1) * zc].iter().zip(&self.tangent_z[i]) {
                        t += w * tz;
                    }
                }
                self.tangent_a[i][r] = t;
            }
            if i + 1 < n {
                for r in 0..layer.rows {
                    self.tangent_z[i + 1][r] = self.d1[i][r] * self.tangent_a[i][r];
                }
            }
        }

        // reverse over (primal, tangent); output layer depends only on its tangent
        let out = n - 1;
        self.adj_z[..1].fill(0.0); // primal pre-activation adjoint
        self.adj_tz[..1].copy_from_slice(&[weight]); // tangent pre-activation adjoint
        for i in (0..n).rev() {
            let layer = &params.layers[i];
            let zc = layer.z_cols();
            if i != out {
                for r in 0..layer.rows {
                    let adj_tz_next = self.adj_tz[r];
                    let adj_z_next = self.adj_z[r];
                    self.adj_tz[r] = adj_tz_next * self.d1[i][r];
                    self.adj_z[r] = adj_z_next * self.d1[i][r]
                        + adj_tz_next * self.d2[i][r] * self.tangent_a[i][r];
                }
            }
            let off = &self.offsets[i];
            for r in 0..layer.rows {
                let ap = self.adj_z[r];
                let at = self.adj_tz[r];
                if let Some(ox) = off.wx {
                    let row = &mut grad[ox + r * a..ox + (r + 1) * a];
                    for ((g, xv), vv) in row.iter_mut().zip(&self.x).zip(v) {
                        *g += ap * xv + at * vv;
                    }
                }
                if zc > 0 {
                    let row = &mut grad[off.wz + r * zc..off.wz + (r + 1) * zc];
                    for ((g, zv), tz) in row.iter_mut().zip(&self.z[i]).zip(&self.tangent_z[i]) {
                        *g += ap * zv + at * tz;
                    }
                }
                grad[off.b + r] += ap;
            }
            if zc > 0 {
                self.adj_next_z[..zc].fill(0.0);
                self.adj_next_tz[..zc].fill(0.0);
                for r in 0..layer.rows {
                    let ap = self.adj_z[r];
                    let at = self.adj_tz[r];
                    for (c, w) in layer.wz[r * zc..(r + 1) * zc].iter().enumerate() {
                        self.adj_next_z[c] += ap * w;
                        self.adj_next_tz[c] += at * w;
                    }
                }
                std::mem::swap(&mut self.adj_z, &mut self.adj_next_z);
                std::mem::swap(&mut self.adj_tz, &mut self.adj_next_tz);
            }
        }
    }

    /// Adds `weight · ∂NN/∂θ` of the recorded pass into `grad`.
    pub fn accumulate_param_gradient(&mut self, params: &IcnnParams, weight: f64, grad: &mut [f64]) {
        let a = params.arch.input_size;
        let n = params.layers.len();
        self.adj_z[..1].copy_from_slice(&[weight]);
        for i in (0..n).rev() {
            let layer = &params.layers[i];
            let zc = layer.z_cols();
            for r in 0..layer.rows {
                self.adj_z[r] *= self.d1[i][r];
            }
            let off = &self.offsets[i];
            for r in 0..layer.rows {
                let ap = self.adj_z[r];
                if let Some(ox) = off.wx {
                    for (g, xv) in grad[ox + r * a..ox + (r + 1) * a].iter_mut().zip(&self.x) {
                        *g += ap * xv;
                    }
                }
                if zc > 0 {
                    for (g, zv) in grad[off.wz + r * zc..off.wz + (r + 1) * zc]
                        .iter_mut()
                        .zip(&self.z[i])
                    {
                        *g += ap * zv;
                    }
                }
                grad[off.b + r] += ap;
            }
            if zc > 0 {
                self.adj_next_z[..zc].fill(0.0);
                for r in 0..layer.rows {
                    let ap = self.adj_z[r];
                    for (c, w) in layer.wz[r * zc..(r + 1) * zc].iter().enumerate() {
                        self.adj_next_z[c] += ap * w;
                    }
                }
                std::mem::swap(&mut self.adj_z, &mut self.adj_next_z);
            }
        }
    }
}
