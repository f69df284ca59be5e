use rand::Rng;

use crate::nn::{
    BatchNorm, BroadcastLinear, MaxPoolPoints, Module, NnError, Relu, Result, Sequential, SharedLinear, StateMut,
    Tanh, Tensor,
};

/// Point refiner: predicts a displacement in `[-1, 1]^3` for every point of
/// a labeled cloud `[B, 4, N]` (xyz plus origin label).
///
/// The first block's per-point features are concatenated with the pooled
/// global feature before the output head.
pub struct PointRefiner {
    l1: Sequential,
    l2: Sequential,
    l3: Sequential,
    pool: MaxPoolPoints,
    l5: BroadcastLinear,
    head: Sequential,
}

fn block<R: Rng>(c_in: usize, c_out: usize, relu: bool, rng: &mut R) -> Sequential {
    let mut layers: Vec<Box<dyn Module>> =
        vec![Box::new(SharedLinear::new(c_in, c_out, rng)), Box::new(BatchNorm::new(c_out))];
    if relu {
        layers.push(Box::new(Relu::new()));
    }
    Sequential::new(layers)
}

impl PointRefiner {
    /// `widths = [l1, l2, l3]`, `head = [l5, l6, l7]`.
    pub fn new<R: Rng>(widths: &[usize], head: &[usize], rng: &mut R) -> Result<Self> {
        let [w1, w2, w3] = widths else {
            return Err(NnError::InvalidArgument(format!("refiner needs 3 feature widths, got {widths:?}")));
        };
        if head.is_empty() {
            return Err(NnError::InvalidArgument("refiner head needs at least one layer".into()));
        }
        let l5 = BroadcastLinear::new(*w1, *w3, head[0], rng);
        let mut layers: Vec<Box<dyn Module>> = Vec::new();
        for (i, &w) in head.iter().enumerate() {
            layers.push(Box::new(BatchNorm::new(w)));
            layers.push(Box::new(Relu::new()));
            let next = head.get(i + 1).copied().unwrap_or(3);
            layers.push(Box::new(SharedLinear::new(w, next, rng)));
        }
        layers.push(Box::new(Tanh::new()));
        Ok(Self {
            l1: block(4, *w1, true, rng),
            l2: block(*w1, *w2, true, rng),
            l3: block(*w2, *w3, false, rng),
            pool: MaxPoolPoints::new(),
            l5,
            head: Sequential::new(layers),
        })
    }

    /// Width of the concatenated global and per-point feature.
    pub fn concat_width(&self) -> usize {
        self.l5.local_weight.value.shape()[1] + self.l5.global_weight.value.shape()[1]
    }

    /// Zeroes the final linear layer so the displacement is exactly zero.
    pub fn zero_output_layer(&mut self) {
        let mut state = Vec::new();
        self.head.collect_state("", &mut state);
        let params: Vec<_> = state
            .into_iter()
            .filter_map(|(_, s)| match s {
                StateMut::Param(p) => Some(p),
                StateMut::Buffer(_) => None,
            })
            .collect();
        // the last linear layer contributes the final weight and bias
        for p in params.into_iter().rev().take(2) {
            p.value.fill(0.0);
        }
    }
}

impl Module for PointRefiner {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (_, c, _) = input.dims3()?;
        if c != 4 {
            return Err(NnError::Shape(format!("refiner expects 4 input channels (xyz + label), got {c}")));
        }
        let a1 = self.l1.forward(input)?;
        let a2 = self.l2.forward(&a1)?;
        let a3 = self.l3.forward(&a2)?;
        let global = self.pool.forward(&a3)?;
        let h = self.l5.forward(&a1, &global)?;
        self.head.forward(&h)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let g = self.head.backward(grad_output)?;
        let (mut g_local, g_global) = self.l5.backward(&g)?;
        let g = self.pool.backward(&g_global)?;
        let g = self.l3.backward(&g)?;
        let g = self.l2.backward(&g)?;
        g_local.add_assign(&g)?;
        self.l1.backward(&g_local)
    }

    fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, StateMut<'a>)>) {
        self.l1.collect_state(&format!("{prefix}l1."), out);
        self.l2.collect_state(&format!("{prefix}l2."), out);
        self.l3.collect_state(&format!("{prefix}l3."), out);
        self.l5.collect_state(&format!("{prefix}l5."), out);
        self.head.collect_state(&format!("{prefix}head."), out);
    }

    fn set_training(&mut self, training: bool) {
        self.l1.set_training(training);
        self.l2.set_training(training);
        self.l3.set_training(training);
        self.head.set_training(training);
    }
}
