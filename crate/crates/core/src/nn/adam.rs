use super::param::Parameter;
use super::tensor::Real;

/// ADAM with bias correction. Moments and step counts live on each
/// [`Parameter`] so they travel with checkpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    pub fn new(lr: Real) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn step<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter>) {
        for p in params {
            self.update(p);
        }
    }

    pub fn update(&self, p: &mut Parameter) {
        p.step += 1;
        let t = p.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        let grad = p.grad.data();
        let m = p.m.data_mut();
        for (mi, g) in m.iter_mut().zip(grad) {
            *mi = b1 * *mi + (1.0 - b1) * g;
        }
        let v = p.v.data_mut();
        for (vi, g) in v.iter_mut().zip(grad) {
            *vi = b2 * *vi + (1.0 - b2) * g * g;
        }
        let (m, v) = (p.m.data(), p.v.data());
        for ((w, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            *w -= self.lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Parameter], max_norm: Real) -> Real {
    let norm = params
        .iter()
        .flat_map(|p| p.grad.data().iter())
        .map(|g| g * g)
        .sum::<Real>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            for g in p.grad.data_mut() {
                *g *= s;
            }
        }
    }
    norm
}
