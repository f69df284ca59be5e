//! Central-difference gradient checks.

use std::cell::RefCell;
use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::seq::index::sample;
use rand::Rng;

use super::layers::Module;
use super::tensor::{Real, Tensor};
use super::Result;
use crate::seed;

/// Finite-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so that entries whose true
/// gradient is zero are compared on an absolute scale. Round-off in the
/// composed losses, divided by the step, is around 1e-8.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

thread_local! {
    static PATTERN: RefCell<Option<DefaultHasher>> = const { RefCell::new(None) };
}

/// Feeds the on/off state of a piecewise linear layer into the active
/// [`activation_pattern`] recording. Does nothing outside one.
pub(crate) fn record_pattern(f: impl FnOnce(&mut DefaultHasher)) {
    PATTERN.with(|p| {
        if let Some(h) = p.borrow_mut().as_mut() {
            f(h)
        }
    })
}

/// Runs `f` and hashes every relu mask and max-pool winner it produced.
/// Two evaluations with the same hash lie on the same linear piece.
pub fn activation_pattern<T>(f: impl FnOnce() -> T) -> (T, u64) {
    PATTERN.with(|p| *p.borrow_mut() = Some(DefaultHasher::new()));
    let out = f();
    let hash = PATTERN.with(|p| p.borrow_mut().take()).map_or(0, |h| h.finish());
    (out, hash)
}

/// Derivative of `f` at zero: central differences with steps `h` and `h/2`
/// ([`GRADCHECK_STEP`]), Richardson-extrapolated so the `h^2` term cancels.
/// `None` when any probe leaves the activation pattern `base`, since the
/// difference then straddles a kink and says nothing about the derivative.
pub(crate) fn central_difference<E>(
    base: u64,
    mut f: impl FnMut(Real) -> std::result::Result<f64, E>,
) -> std::result::Result<Option<f64>, E> {
    let h = GRADCHECK_STEP;
    let mut values = [0.0; 4];
    for (v, d) in values.iter_mut().zip([h, -h, h / 2.0, -h / 2.0]) {
        let (value, pattern) = activation_pattern(|| f(d as Real));
        if pattern != base {
            return Ok(None);
        }
        *v = value?;
    }
    let wide = (values[0] - values[1]) / (2.0 * h);
    let narrow = (values[2] - values[3]) / h;
    Ok(Some((4.0 * narrow - wide) / 3.0))
}

/// Worst relative error seen over all checked entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    /// Human-readable location of the worst entry.
    pub worst: String,
    pub checked: usize,
    /// Probes that crossed a kink and were not compared.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), max_rel_error: 0.0, worst: String::new(), checked: 0, skipped: 0 }
    }

    pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
    }

    pub fn record(&mut self, analytic: f64, numeric: f64, location: impl FnOnce() -> String) {
        let rel = Self::relative_error(analytic, numeric);
        self.checked += 1;
        if rel > self.max_rel_error || rel.is_nan() {
            self.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", location());
        }
    }

    /// Compares `numeric` when there is one, otherwise counts a skip.
    pub fn record_probe(&mut self, analytic: f64, numeric: Option<f64>, location: impl FnOnce() -> String) {
        match numeric {
            Some(n) => self.record(analytic, n, location),
            None => self.skipped += 1,
        }
    }

    /// Within tolerance, and at most one probe in twenty skipped.
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance && self.skipped * 20 <= self.checked + self.skipped
    }
}

/// Indices to probe in a tensor of `len` entries, all of them when
/// `limit` allows.
pub(crate) fn probe_indices<R: Rng>(len: usize, limit: Option<usize>, rng: &mut R) -> Vec<usize> {
    match limit {
        Some(l) if l < len => {
            let mut v = sample(rng, len, l).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

/// Random loss weights: the checked scalar is `sum(w * output)`.
pub(crate) fn loss_weights(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = seed::rng(seed);
    let mut w = Tensor::zeros(shape);
    for v in w.data_mut() {
        *v = rng.gen_range(-1.0..1.0) as Real;
    }
    w
}

pub(crate) fn weighted_sum(w: &Tensor, y: &Tensor) -> f64 {
    w.data().iter().zip(y.data()).map(|(a, b)| *a as f64 * *b as f64).sum()
}

/// Compares the backward pass of `module` with central differences of
/// `sum(w * forward(x))` for random `w`, over the input and every parameter.
/// At most `limit` entries per tensor are probed.
pub fn grad_check(
    name: &str,
    module: &mut dyn Module,
    input: &Tensor,
    seed: u64,
    limit: Option<usize>,
) -> Result<GradCheckReport> {
    let mut rng = seed::rng(seed);
    let (out, base) = activation_pattern(|| module.forward(input));
    let out = out?;
    let w = loss_weights(out.shape(), seed ^ 0x9e37_79b9);
    module.zero_grad();
    let g_input = module.backward(&w)?;
    let g_params: Vec<Vec<Real>> = module.parameters().iter().map(|p| p.grad.data().to_vec()).collect();

    let mut report = GradCheckReport::new(name);
    let mut x = input.clone();
    for i in probe_indices(x.len(), limit, &mut rng) {
        let orig = x.data()[i];
        let numeric = central_difference(base, |d| {
            x.data_mut()[i] = orig + d;
            let v = module.forward(&x).map(|y| weighted_sum(&w, &y));
            x.data_mut()[i] = orig;
            v
        })?;
        report.record_probe(g_input.data()[i] as f64, numeric, || format!("input[{i}]"));
    }

    let names: Vec<String> = {
        let mut state = Vec::new();
        module.collect_state("", &mut state);
        state
            .into_iter()
            .filter(|(_, s)| matches!(s, super::StateMut::Param(_)))
            .map(|(n, _)| n)
            .collect()
    };
    for (pi, grads) in g_params.iter().enumerate() {
        for i in probe_indices(grads.len(), limit, &mut rng) {
            let orig = module.parameters()[pi].value.data()[i];
            let numeric = central_difference(base, |d| {
                module.parameters()[pi].value.data_mut()[i] = orig + d;
                let v = module.forward(input).map(|y| weighted_sum(&w, &y));
                module.parameters()[pi].value.data_mut()[i] = orig;
                v
            })?;
            report.record_probe(grads[i] as f64, numeric, || format!("{}[{i}]", names[pi]));
        }
    }
    Ok(report)
}
