use rand::Rng;

use crate::nn::{
    BatchNorm, FullyConnected, MaxPoolPoints, Module, Relu, Result, Sequential, SharedLinear, StateMut, Tensor,
};

/// Per-point blocks `3 -> widths...` with batch norm (ReLU on all but the
/// last), max-pool over points, then one linear layer without activation.
pub struct Encoder {
    points: Sequential,
    pool: MaxPoolPoints,
    fc: FullyConnected,
}

impl Encoder {
    pub fn new<R: Rng>(widths: &[usize], feature_dim: usize, rng: &mut R) -> Self {
        let mut layers: Vec<Box<dyn Module>> = Vec::new();
        let mut c = 3;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Box::new(SharedLinear::new(c, w, rng)));
            layers.push(Box::new(BatchNorm::new(w)));
            if i + 1 < widths.len() {
                layers.push(Box::new(Relu::new()));
            }
            c = w;
        }
        Self { points: Sequential::new(layers), pool: MaxPoolPoints::new(), fc: FullyConnected::new(c, feature_dim, rng) }
    }
}

impl Module for Encoder {
    /// `[B, 3, N] -> [B, feature_dim]`.
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let x = self.points.forward(input)?;
        let x = self.pool.forward(&x)?;
        self.fc.forward(&x)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let g = self.fc.backward(grad_output)?;
        let g = self.pool.backward(&g)?;
        self.points.backward(&g)
    }

    fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, StateMut<'a>)>) {
        self.points.collect_state(&format!("{prefix}points."), out);
        self.fc.collect_state(&format!("{prefix}fc."), out);
    }

    fn set_training(&mut self, training: bool) {
        self.points.set_training(training);
    }
}
