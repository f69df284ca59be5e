//! Layers with explicit forward and backward passes.
//!
//! Point features use the `[batch, channels, points]` layout; global
//! features use `[batch, features]`. Every layer caches what its backward
//! pass needs during `forward`, so a backward call always refers to the most
//! recent forward call.

use std::hash::Hasher;

use rand::Rng;

use super::param::Parameter;
use super::tensor::{gemm, Real, Tensor};
use super::{record_pattern, NnError, Result};

/// Mutable access to a piece of persistent module state.
pub enum StateMut<'a> {
    Param(&'a mut Parameter),
    Buffer(&'a mut Vec<Real>),
}

pub trait Module {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor>;

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor>;

    /// Appends every parameter and buffer under dotted names.
    fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, StateMut<'a>)>);

    fn set_training(&mut self, _training: bool) {}

    fn parameters(&mut self) -> Vec<&mut Parameter> {
        let mut state = Vec::new();
        self.collect_state("", &mut state);
        state
            .into_iter()
            .filter_map(|(_, s)| match s {
                StateMut::Param(p) => Some(p),
                StateMut::Buffer(_) => None,
            })
            .collect()
    }

    fn zero_grad(&mut self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }
}

fn missing_cache(layer: &str) -> NnError {
    NnError::NoForwardCache(layer.to_string())
}

fn expect_shape(got: &[usize], want: &[usize], what: &str) -> Result<()> {
    if got != want {
        return Err(NnError::Shape(format!("{what}: expected {want:?}, got {got:?}")));
    }
    Ok(())
}

/// Kernel-size-one 1D convolution: the same affine map applied to every point.
#[derive(Debug, Clone)]
pub struct SharedLinear {
    pub weight: Parameter,
    pub bias: Parameter,
    input: Option<Tensor>,
}

impl SharedLinear {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        Self::from_parameters(
            Parameter::kaiming_uniform(&[out_channels, in_channels], in_channels, rng),
            Parameter::zeros(&[out_channels]),
        )
    }

    pub fn from_parameters(weight: Parameter, bias: Parameter) -> Self {
        Self { weight, bias, input: None }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    /// Backward pass that skips the input gradient (first layers).
    pub fn backward_params(&mut self, grad_output: &Tensor) -> Result<()> {
        let input = self.input.as_ref().ok_or_else(|| missing_cache("shared_linear"))?;
        let (b, c_in, n) = input.dims3()?;
        let c_out = self.out_channels();
        expect_shape(grad_output.shape(), &[b, c_out, n], "shared_linear grad")?;
        let g = grad_output.data();
        let x = input.data();
        for bi in 0..b {
            let gb = &g[bi * c_out * n..(bi + 1) * c_out * n];
            let xb = &x[bi * c_in * n..(bi + 1) * c_in * n];
            gemm(false, true, c_out, n, c_in, 1.0, gb, xb, 1.0, self.weight.grad.data_mut());
            for (o, db) in self.bias.grad.data_mut().iter_mut().enumerate() {
                *db += gb[o * n..(o + 1) * n].iter().sum::<Real>();
            }
        }
        Ok(())
    }
}

impl Module for SharedLinear {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (b, c_in, n) = input.dims3()?;
        if c_in != self.in_channels() {
            return Err(NnError::Shape(format!(
                "shared_linear expects {} input channels, got {c_in}",
                self.in_channels()
            )));
        }
        let c_out = self.out_channels();
        let mut out = Tensor::zeros(&[b, c_out, n]);
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        for bi in 0..b {
            let ob = &mut out.data_mut()[bi * c_out * n..(bi + 1) * c_out * n];
            for (o, row) in ob.chunks_exact_mut(n).enumerate() {
                row.fill(bias[o]);
            }
            gemm(false, false, c_out, c_in, n, 1.0, w, &input.data()[bi * c_in * n..], 1.0, ob);
        }
        self.input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        self.backward_params(grad_output)?;
        let (b, c_in, n) = self.input.as_ref().expect("cached by backward_params").dims3()?;
        let c_out = self.out_channels();
        let mut gin = Tensor::zeros(&[b, c_in, n]);
        let w = self.weight.value.data();
        for bi in 0..b {
            gemm(
                true,
                false,
                c_in,
                c_out,
                n,
                1.0,
                w,
                &grad_output.data()[bi * c_out * n..],
                0.0,
                &mut gin.data_mut()[bi * c_in * n..(bi + 1) * c_in * n],
            );
        }
        Ok(gin)
    }

    fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, StateMut<'a>)>) {
        out.push((format!("{prefix}weight"), StateMut::Param(&mut self.weight)));
        out.push((format!("{prefix}bias"), StateMut::Param(&mut self.bias)));
    }
}

/// Dense layer on `[batch, features]`.
#[derive(Debug, Clone)]
pub struct FullyConnected {
    pub weight: Parameter,
    pub bias: Parameter,
    input: Option<Tensor>,
}

impl FullyConnected {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Self::from_parameters(
            Parameter::kaiming_uniform(&[out_features, in_features], in_features, rng),
            Parameter::zeros(&[out_features]),
        )
    }

    pub fn from_parameters(weight: Parameter, bias: Parameter) -> Self {
        Self { weight, bias, input: None }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl Module for FullyConnected {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (b, d_in) = input.dims2()?;
        if d_in != self.in_features() {
            return Err(NnError::Shape(format!(
                "fully_connected expects {} features, got {d_in}",
                self.in_features()
            )));
        }
        let d_out = self.out_features();
        let mut out = Tensor::zeros(&[b, d_out]);
        for row in out.data_mut().chunks_exact_mut(d_out) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(false, true, b, d_in, d_out, 1.0, input.data(), self.weight.value.data(), 1.0, out.data_mut());
        self.input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let input = self.input.as_ref().ok_or_else(|| missing_cache("fully_connected"))?;
        let (b, d_in) = input.dims2()?;
        let d_out = self.out_features();
        expect_shape(grad_output.shape(), &[b, d_out], "fully_connected grad")?;
        let g = grad_output.data();
        gemm(true, false, d_out, b, d_in, 1.0, g, input.data(), 1.0, self.weight.grad.data_mut());
        for row in g.chunks_exact(d_out) {
            for (db, gv) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *db += gv;
            }
        }
        let mut gin = Tensor::zeros(&[b, d_in]);
        gemm(false, false, b, d_out, d_in, 1.0, g, self.weight.value.data(), 0.0, gin.data_mut());
        Ok(gin)
    }

    fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, StateMut<'a>)>) {
        out.push((format!("{prefix}weight"), StateMut::Param(&mut self.weight)));
        out.push((format!("{prefix}bias"), StateMut::Param(&mut self.bias)));
    }
}

/// Per-channel batch normalization over batch and points.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Vec<Real>,
    pub running_var: Vec<Real>,
    pub momentum: Real,
    pub eps: Real,
    pub training: bool,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<Real>,
    training: bool,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: Real = 0.1;
    pub const DEFAULT_EPS: Real = 1e-5;

    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Parameter::filled(&[channels], 1.0),
            beta: Parameter::zeros(&[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
            training: true,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// `(batch, channels, points)`, treating rank-2 input as one point.
    fn dims(&self, input: &Tensor) -> Result<(usize, usize, usize)> {
        let (b, c, n) = match input.shape() {
            [b, c] => (*b, *c, 1),
            [b, c, n] => (*b, *c, *n),
            s => return Err(NnError::Shape(format!("batch_norm expects rank 2 or 3, got {s:?}"))),
        };
        if c != self.channels() {
            return Err(NnError::Shape(format!(
                "batch_norm expects {} channels, got {c}",
                self.channels()
            )));
        }
        Ok((b, c, n))
    }
}

impl Module for BatchNorm {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (b, c, n) = self.dims(input)?;
        let count = b * n;
        if self.training && count < 2 {
            return Err(NnError::InvalidArgument(format!(
                "batch_norm in training mode needs at least 2 values per channel, got {count}"
            )));
        }
        let x = input.data();
        let mut xhat = Tensor::zeros(input.shape());
        let mut out = Tensor::zeros(input.shape());
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let rows = || (0..b).map(move |bi| (bi * c + ch) * n..(bi * c + ch + 1) * n);
            let (mean, var) = if self.training {
                let sum: Real = rows().map(|r| x[r].iter().sum::<Real>()).sum();
                let mean = sum / count as Real;
                let sq: Real = rows().map(|r| x[r].iter().map(|v| (v - mean) * (v - mean)).sum::<Real>()).sum();
                let var = sq / count as Real;
                let m = self.momentum;
                self.running_mean[ch] = (1.0 - m) * self.running_mean[ch] + m * mean;
                let unbiased = var * count as Real / (count - 1) as Real;
                self.running_var[ch] = (1.0 - m) * self.running_var[ch] + m * unbiased;
                (mean, var)
            } else {
                (self.running_mean[ch], self.running_var[ch])
            };
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = is;
            let (g, be) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
            for r in rows() {
                let (xs, hs) = (&x[r.clone()], &mut xhat.data_mut()[r.clone()]);
                for (h, &v) in hs.iter_mut().zip(xs) {
                    *h = (v - mean) * is;
                }
                for (o, &h) in out.data_mut()[r.clone()].iter_mut().zip(&xhat.data()[r]) {
                    *o = g * h + be;
                }
            }
        }
        self.cache = Some(BnCache { xhat, inv_std, training: self.training });
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache("batch_norm"))?;
        expect_shape(grad_output.shape(), cache.xhat.shape(), "batch_norm grad")?;
        let (b, c, n) = self.dims(&cache.xhat)?;
        let count = (b * n) as Real;
        let g = grad_output.data();
        let xh = cache.xhat.data();
        let mut gin = Tensor::zeros(cache.xhat.shape());
        for ch in 0..c {
            let rows = || (0..b).map(move |bi| (bi * c + ch) * n..(bi * c + ch + 1) * n);
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for r in rows() {
                for (&gk, &hk) in g[r.clone()].iter().zip(&xh[r]) {
                    sum_g += gk;
                    sum_gx += gk * hk;
                }
            }
            self.gamma.grad.data_mut()[ch] += sum_gx;
            self.beta.grad.data_mut()[ch] += sum_g;
            let gamma = self.gamma.value.data()[ch];
            let is = cache.inv_std[ch];
            for r in rows() {
                let dst = &mut gin.data_mut()[r.clone()];
                if cache.training {
                    let (scale, mg, mgx) = (gamma * is / count, sum_g, sum_gx);
                    for ((d, &gk), &hk) in dst.iter_mut().zip(&g[r.clone()]).zip(&xh[r]) {
                        *d = scale * (count * gk - mg - hk * mgx);
                    }
                } else {
                    for (d, &gk) in dst.iter_mut().zip(&g[r]) {
                        *d = gamma * is * gk;
                    }
                }
            }
        }
        Ok(gin)
    }

    fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, StateMut<'a>)>) {
        out.push((format!("{prefix}gamma"), StateMut::Param(&mut self.gamma)));
        out.push((format!("{prefix}beta"), StateMut::Param(&mut self.beta)));
        out.push((format!("{prefix}running_mean"), StateMut::Buffer(&mut self.running_mean)));
        out.push((format!("{prefix}running_var"), StateMut::Buffer(&mut self.running_var)));
    }

    fn set_training(&mut self, training: bool) {
        self.training = training;
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    output: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for Relu {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut out = input.clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        record_pattern(|h| out.data().iter().for_each(|v| h.write_u8(u8::from(*v > 0.0))));
        self.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let out = self.output.as_ref().ok_or_else(|| missing_cache("relu"))?;
        expect_shape(grad_output.shape(), out.shape(), "relu grad")?;
        let mut gin = grad_output.clone();
        for (g, &y) in gin.data_mut().iter_mut().zip(out.data()) {
            if y <= 0.0 {
                *g = 0.0;
            }
        }
        Ok(gin)
    }

    fn collect_state<'a>(&'a mut self, _prefix: &str, _out: &mut Vec<(String, StateMut<'a>)>) {}
}

#[derive(Debug, Clone, Default)]
pub struct Tanh {
    output: Option<Tensor>,
}

impl Tanh {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for Tanh {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut out = input.clone();
        for v in out.data_mut() {
            *v = v.tanh();
        }
        self.output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let out = self.output.as_ref().ok_or_else(|| missing_cache("tanh"))?;
        expect_shape(grad_output.shape(), out.shape(), "tanh grad")?;
        let mut gin = grad_output.clone();
        for (g, &y) in gin.data_mut().iter_mut().zip(out.data()) {
            *g *= 1.0 - y * y;
        }
        Ok(gin)
    }

    fn collect_state<'a>(&'a mut self, _prefix: &str, _out: &mut Vec<(String, StateMut<'a>)>) {}
}

/// Channel-wise maximum over points: `[B, C, N] -> [B, C]`.
#[derive(Debug, Clone, Default)]
pub struct MaxPoolPoints {
    argmax: Vec<usize>,
    input_shape: Vec<usize>,
}

impl MaxPoolPoints {
    pub fn new() -> Self {
        Self::default()
    }

    /// Point index chosen for every (batch, channel) by the last forward.
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

impl Module for MaxPoolPoints {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (b, c, n) = input.dims3()?;
        if n == 0 {
            return Err(NnError::Shape("max_pool over zero points".into()));
        }
        let mut out = Tensor::zeros(&[b, c]);
        self.argmax = Vec::with_capacity(b * c);
        for (row, o) in input.data().chunks_exact(n).zip(out.data_mut()) {
            // first index wins ties
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            *o = row[best];
            self.argmax.push(best);
        }
        record_pattern(|h| self.argmax.iter().for_each(|&i| h.write_usize(i)));
        self.input_shape = input.shape().to_vec();
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        if self.input_shape.is_empty() {
            return Err(missing_cache("max_pool"));
        }
        let (b, c, n) = (self.input_shape[0], self.input_shape[1], self.input_shape[2]);
        expect_shape(grad_output.shape(), &[b, c], "max_pool grad")?;
        let mut gin = Tensor::zeros(&self.input_shape);
        for (row, (&i, &g)) in self.argmax.iter().zip(grad_output.data()).enumerate() {
            gin.data_mut()[row * n + i] = g;
        }
        Ok(gin)
    }

    fn collect_state<'a>(&'a mut self, _prefix: &str, _out: &mut Vec<(String, StateMut<'a>)>) {}
}

/// Modules applied in order.
#[derive(Default)]
pub struct Sequential {
    pub layers: Vec<Box<dyn Module>>,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Module>>) -> Self {
        Self { layers }
    }
}

impl Module for Sequential {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let Some((first, rest)) = self.layers.split_first_mut() else {
            return Ok(input.clone());
        };
        let mut x = first.forward(input)?;
        for l in rest {
            x = l.forward(&x)?;
        }
        Ok(x)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let Some((last, rest)) = self.layers.split_last_mut() else {
            return Ok(grad_output.clone());
        };
        let mut g = last.backward(grad_output)?;
        for l in rest.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, StateMut<'a>)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect_state(&format!("{prefix}{i}."), out);
        }
    }

    fn set_training(&mut self, training: bool) {
        for l in &mut self.layers {
            l.set_training(training);
        }
    }
}

/// Shared linear layer over per-point features concatenated with a global
/// vector broadcast to every point. The global half of the product is
/// computed once per batch element instead of once per point.
#[derive(Debug, Clone)]
pub struct BroadcastLinear {
    /// Weights acting on the per-point channels, `[out, local]`.
    pub local_weight: Parameter,
    /// Weights acting on the broadcast global channels, `[out, global]`.
    pub global_weight: Parameter,
    pub bias: Parameter,
    cache: Option<(Tensor, Tensor)>,
}

impl BroadcastLinear {
    pub fn new<R: Rng>(local: usize, global: usize, out_channels: usize, rng: &mut R) -> Self {
        let fan_in = local + global;
        Self {
            local_weight: Parameter::kaiming_uniform(&[out_channels, local], fan_in, rng),
            global_weight: Parameter::kaiming_uniform(&[out_channels, global], fan_in, rng),
            bias: Parameter::zeros(&[out_channels]),
            cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.bias.len()
    }

    /// `local: [B, L, N]`, `global: [B, G]` -> `[B, out, N]`.
    pub fn forward(&mut self, local: &Tensor, global: &Tensor) -> Result<Tensor> {
        let (b, l, n) = local.dims3()?;
        let (bg, g) = global.dims2()?;
        let c_out = self.out_channels();
        if bg != b || l != self.local_weight.value.shape()[1] || g != self.global_weight.value.shape()[1] {
            return Err(NnError::Shape(format!(
                "broadcast_linear: local {:?}, global {:?} do not fit weights {:?} / {:?}",
                local.shape(),
                global.shape(),
                self.local_weight.value.shape(),
                self.global_weight.value.shape()
            )));
        }
        // per-batch offsets: W_g * g + bias
        let mut offset = Tensor::zeros(&[b, c_out]);
        for row in offset.data_mut().chunks_exact_mut(c_out) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(false, true, b, g, c_out, 1.0, global.data(), self.global_weight.value.data(), 1.0, offset.data_mut());
        let mut out = Tensor::zeros(&[b, c_out, n]);
        for bi in 0..b {
            let ob = &mut out.data_mut()[bi * c_out * n..(bi + 1) * c_out * n];
            for (o, row) in ob.chunks_exact_mut(n).enumerate() {
                row.fill(offset.data()[bi * c_out + o]);
            }
            gemm(false, false, c_out, l, n, 1.0, self.local_weight.value.data(), &local.data()[bi * l * n..], 1.0, ob);
        }
        self.cache = Some((local.clone(), global.clone()));
        Ok(out)
    }

    /// Returns the gradients of the local and global inputs.
    pub fn backward(&mut self, grad_output: &Tensor) -> Result<(Tensor, Tensor)> {
        let (local, global) = self.cache.as_ref().ok_or_else(|| missing_cache("broadcast_linear"))?;
        let (b, l, n) = local.dims3()?;
        let (_, g) = global.dims2()?;
        let c_out = self.out_channels();
        expect_shape(grad_output.shape(), &[b, c_out, n], "broadcast_linear grad")?;
        let go = grad_output.data();
        let mut summed = Tensor::zeros(&[b, c_out]);
        for (s, row) in summed.data_mut().iter_mut().zip(go.chunks_exact(n)) {
            *s = row.iter().sum();
        }
        for row in summed.data().chunks_exact(c_out) {
            for (db, s) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *db += s;
            }
        }
        gemm(true, false, c_out, b, g, 1.0, summed.data(), global.data(), 1.0, self.global_weight.grad.data_mut());
        let mut g_global = Tensor::zeros(&[b, g]);
        gemm(false, false, b, c_out, g, 1.0, summed.data(), self.global_weight.value.data(), 0.0, g_global.data_mut());
        let mut g_local = Tensor::zeros(&[b, l, n]);
        for bi in 0..b {
            let gb = &go[bi * c_out * n..(bi + 1) * c_out * n];
            gemm(false, true, c_out, n, l, 1.0, gb, &local.data()[bi * l * n..], 1.0, self.local_weight.grad.data_mut());
            gemm(true, false, l, c_out, n, 1.0, self.local_weight.value.data(), gb, 0.0, &mut g_local.data_mut()[bi * l * n..(bi + 1) * l * n]);
        }
        Ok((g_local, g_global))
    }

    pub fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, StateMut<'a>)>) {
        out.push((format!("{prefix}local_weight"), StateMut::Param(&mut self.local_weight)));
        out.push((format!("{prefix}global_weight"), StateMut::Param(&mut self.global_weight)));
        out.push((format!("{prefix}bias"), StateMut::Param(&mut self.bias)));
    }
}

/// Repeats `[B, C]` along a new point axis: `[B, C, n]`.
pub fn broadcast_points(global: &Tensor, n: usize) -> Result<Tensor> {
    let (b, c) = global.dims2()?;
    let mut out = Tensor::zeros(&[b, c, n]);
    for (row, &v) in out.data_mut().chunks_exact_mut(n).zip(global.data()) {
        row.fill(v);
    }
    Ok(out)
}

/// Stacks `[B, C1, N]` and `[B, C2, N]` into `[B, C1 + C2, N]`.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ba, ca, na) = a.dims3()?;
    let (bb, cb, nb) = b.dims3()?;
    if ba != bb || na != nb {
        return Err(NnError::Shape(format!("concat {:?} with {:?}", a.shape(), b.shape())));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for bi in 0..ba {
        data.extend_from_slice(&a.data()[bi * ca * na..(bi + 1) * ca * na]);
        data.extend_from_slice(&b.data()[bi * cb * nb..(bi + 1) * cb * nb]);
    }
    Tensor::from_vec(&[ba, ca + cb, na], data)
}
