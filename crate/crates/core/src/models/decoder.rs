use rand::Rng;

use crate::nn::{
    BatchNorm, BroadcastLinear, FullyConnected, Module, NnError, Real, Relu, Result, Sequential, SharedLinear,
    StateMut, Tanh, Tensor,
};
use crate::seed;

/// Fully connected decoder: hidden layers with ReLU, then `M * 3` outputs
/// read as `M` points.
pub struct MlpDecoder {
    net: Sequential,
    points: usize,
}

impl MlpDecoder {
    pub fn new<R: Rng>(feature_dim: usize, hidden: &[usize], points: usize, rng: &mut R) -> Self {
        let mut layers: Vec<Box<dyn Module>> = Vec::new();
        let mut d = feature_dim;
        for &h in hidden {
            layers.push(Box::new(FullyConnected::new(d, h, rng)));
            layers.push(Box::new(Relu::new()));
            d = h;
        }
        layers.push(Box::new(FullyConnected::new(d, points * 3, rng)));
        Self { net: Sequential::new(layers), points }
    }

    /// `[B, F] -> [B, 3, M]`.
    pub fn forward(&mut self, feature: &Tensor) -> Result<Tensor> {
        let flat = self.net.forward(feature)?;
        let (b, _) = flat.dims2()?;
        let m = self.points;
        let mut out = Tensor::zeros(&[b, 3, m]);
        for bi in 0..b {
            for i in 0..m {
                for k in 0..3 {
                    out.data_mut()[(bi * 3 + k) * m + i] = flat.data()[bi * m * 3 + i * 3 + k];
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (b, _, m) = grad.dims3()?;
        let mut flat = Tensor::zeros(&[b, m * 3]);
        for bi in 0..b {
            for i in 0..m {
                for k in 0..3 {
                    flat.data_mut()[bi * m * 3 + i * 3 + k] = grad.data()[(bi * 3 + k) * m + i];
                }
            }
        }
        self.net.backward(&flat)
    }

    pub fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, StateMut<'a>)>) {
        self.net.collect_state(prefix, out);
    }
}

/// One surface patch: unit-square samples plus the broadcast feature go
/// through shared layers ending in `tanh`.
struct MorphNet {
    input: BroadcastLinear,
    rest: Sequential,
}

impl MorphNet {
    fn new<R: Rng>(feature_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let input = BroadcastLinear::new(2, feature_dim, hidden[0], rng);
        let mut layers: Vec<Box<dyn Module>> = Vec::new();
        for (i, &w) in hidden.iter().enumerate() {
            layers.push(Box::new(BatchNorm::new(w)));
            layers.push(Box::new(Relu::new()));
            let next = hidden.get(i + 1).copied().unwrap_or(3);
            layers.push(Box::new(SharedLinear::new(w, next, rng)));
        }
        layers.push(Box::new(Tanh::new()));
        Self { input, rest: Sequential::new(layers) }
    }
}

/// Morphing decoder: `K` networks each deform `M / K` fresh unit-square
/// samples into a patch of the missing region.
pub struct MorphingDecoder {
    nets: Vec<MorphNet>,
    points: usize,
}

impl MorphingDecoder {
    pub fn new<R: Rng>(feature_dim: usize, hidden: &[usize], points: usize, networks: usize, rng: &mut R) -> Result<Self> {
        if networks == 0 || points % networks != 0 {
            return Err(NnError::InvalidArgument(format!(
                "{points} points cannot be split evenly across {networks} morphing networks"
            )));
        }
        if hidden.is_empty() {
            return Err(NnError::InvalidArgument("morphing networks need at least one hidden layer".into()));
        }
        let nets = (0..networks).map(|_| MorphNet::new(feature_dim, hidden, rng)).collect();
        Ok(Self { nets, points })
    }

    pub fn networks(&self) -> usize {
        self.nets.len()
    }

    pub fn points_per_network(&self) -> usize {
        self.points / self.nets.len()
    }

    /// Unit-square samples `[B, 2, M / K]` for every network, drawn from `seed`.
    pub fn unit_square_samples(&self, batch: usize, seed: u64) -> Vec<Tensor> {
        let p = self.points_per_network();
        let mut rng = seed::rng(seed);
        (0..self.nets.len())
            .map(|_| {
                let mut t = Tensor::zeros(&[batch, 2, p]);
                for v in t.data_mut() {
                    *v = rng.gen::<f64>() as Real;
                }
                t
            })
            .collect()
    }

    /// `[B, F] -> [B, 3, M]`, network `k` filling points `k * M/K ..`.
    pub fn forward(&mut self, feature: &Tensor, seed: u64) -> Result<Tensor> {
        let (b, _) = feature.dims2()?;
        let p = self.points_per_network();
        let grids = self.unit_square_samples(b, seed);
        let m = self.points;
        let mut out = Tensor::zeros(&[b, 3, m]);
        for (k, (net, grid)) in self.nets.iter_mut().zip(&grids).enumerate() {
            let h = net.input.forward(grid, feature)?;
            let patch = net.rest.forward(&h)?;
            for bi in 0..b {
                for c in 0..3 {
                    let src = &patch.data()[(bi * 3 + c) * p..(bi * 3 + c + 1) * p];
                    out.data_mut()[(bi * 3 + c) * m + k * p..][..p].copy_from_slice(src);
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (b, _, m) = grad.dims3()?;
        let p = self.points_per_network();
        let mut g_feature: Option<Tensor> = None;
        for (k, net) in self.nets.iter_mut().enumerate() {
            let mut g_patch = Tensor::zeros(&[b, 3, p]);
            for bi in 0..b {
                for c in 0..3 {
                    let src = &grad.data()[(bi * 3 + c) * m + k * p..][..p];
                    g_patch.data_mut()[(bi * 3 + c) * p..(bi * 3 + c + 1) * p].copy_from_slice(src);
                }
            }
            let g = net.rest.backward(&g_patch)?;
            let (_, gf) = net.input.backward(&g)?;
            match &mut g_feature {
                Some(acc) => acc.add_assign(&gf)?,
                None => g_feature = Some(gf),
            }
        }
        g_feature.ok_or_else(|| NnError::InvalidArgument("no morphing networks".into()))
    }

    pub fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, StateMut<'a>)>) {
        for (k, net) in self.nets.iter_mut().enumerate() {
            net.input.collect_state(&format!("{prefix}{k}.input."), out);
            net.rest.collect_state(&format!("{prefix}{k}.rest."), out);
        }
    }

    pub fn set_training(&mut self, training: bool) {
        for net in &mut self.nets {
            net.rest.set_training(training);
        }
    }
}

pub enum Decoder {
    Mlp(MlpDecoder),
    Morphing(MorphingDecoder),
}

impl Decoder {
    /// `[B, F] -> [B, 3, M]`; `seed` drives the morphing samples.
    pub fn forward(&mut self, feature: &Tensor, seed: u64) -> Result<Tensor> {
        match self {
            Decoder::Mlp(d) => d.forward(feature),
            Decoder::Morphing(d) => d.forward(feature, seed),
        }
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            Decoder::Mlp(d) => d.backward(grad),
            Decoder::Morphing(d) => d.backward(grad),
        }
    }

    pub fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, StateMut<'a>)>) {
        match self {
            Decoder::Mlp(d) => d.collect_state(prefix, out),
            Decoder::Morphing(d) => d.collect_state(prefix, out),
        }
    }

    pub fn set_training(&mut self, training: bool) {
        if let Decoder::Morphing(d) = self {
            d.set_training(training);
        }
    }
}
