//! Finite-difference checks of every layer, each network and the full
//! pipeline at toy sizes.

use rand::Rng;

use super::{CompletionModel, Decoder, DecoderKind, MlpDecoder, ModelConfig, MorphingDecoder, PointRefiner, Result};
use crate::geometry::{PointCloud, SamplingMethod};
use crate::metrics::{emd_exact, emd_gradient, Matching};
use crate::nn::{
    activation_pattern, central_difference, grad_check, loss_weights, probe_indices, BatchNorm, FullyConnected,
    GradCheckReport, MaxPoolPoints, Module, Real, Relu, Sequential, SharedLinear, StateMut, Tanh, Tensor,
};
use crate::seed;

/// Tolerance for single layers.
pub const LAYER_TOLERANCE: f64 = 1e-5;
/// Tolerance for composed networks and the end-to-end pipeline.
pub const NETWORK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passed(self.tolerance)
    }
}

fn random(shape: &[usize], s: u64) -> Tensor {
    loss_weights(shape, s)
}

/// Values bounded away from zero, so no ReLU input sits on its kink.
fn away_from_zero(shape: &[usize], s: u64) -> Tensor {
    let mut t = random(shape, s);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

/// Decoder with a fixed sample seed, viewed as a plain module.
struct FixedSeedDecoder(Decoder, u64);

impl Module for FixedSeedDecoder {
    fn forward(&mut self, input: &Tensor) -> crate::nn::Result<Tensor> {
        self.0.forward(input, self.1)
    }
    fn backward(&mut self, grad_output: &Tensor) -> crate::nn::Result<Tensor> {
        self.0.backward(grad_output)
    }
    fn collect_state<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, StateMut<'a>)>) {
        self.0.collect_state(prefix, out)
    }
}

/// Random toy cloud with coordinates in `[-1, 1]`.
fn toy_cloud(n: usize, s: u64) -> PointCloud {
    let mut rng = seed::rng(s);
    PointCloud::new((0..n).map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0))).collect())
}

fn layer_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = seed::rng(seed);
    let s = |k: u64| seed::derive_seed(seed, &[k]);
    let layer = |r: GradCheckReport| CheckResult { report: r, tolerance: LAYER_TOLERANCE };
    let mut bn = BatchNorm::new(4);
    let mut bn_eval = BatchNorm::new(4);
    bn_eval.running_mean = vec![0.1, -0.2, 0.3, 0.0];
    bn_eval.running_var = vec![0.5, 1.5, 2.0, 0.7];
    bn_eval.set_training(false);
    Ok(vec![
        layer(grad_check("shared_linear", &mut SharedLinear::new(3, 4, &mut rng), &random(&[2, 3, 5], s(1)), s(2), None)?),
        layer(grad_check("fully_connected", &mut FullyConnected::new(4, 2, &mut rng), &random(&[3, 4], s(3)), s(4), None)?),
        layer(grad_check("batch_norm_train", &mut bn, &random(&[2, 4, 6], s(5)), s(6), None)?),
        layer(grad_check("batch_norm_eval", &mut bn_eval, &random(&[2, 4, 6], s(7)), s(8), None)?),
        layer(grad_check("relu", &mut Relu::new(), &away_from_zero(&[2, 3, 4], s(9)), s(10), None)?),
        layer(grad_check("tanh", &mut Tanh::new(), &random(&[2, 3, 4], s(11)), s(12), None)?),
        layer(grad_check("max_pool", &mut MaxPoolPoints::new(), &random(&[2, 3, 7], s(13)), s(14), None)?),
        layer(grad_check(
            "linear_bn_relu",
            &mut Sequential::new(vec![
                Box::new(SharedLinear::new(3, 5, &mut rng)),
                Box::new(BatchNorm::new(5)),
                Box::new(Relu::new()),
            ]),
            &random(&[2, 3, 6], s(15)),
            s(16),
            None,
        )?),
    ])
}

fn network_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let s = |k: u64| seed::derive_seed(seed, &[100 + k]);
    let net = |r: GradCheckReport| CheckResult { report: r, tolerance: NETWORK_TOLERANCE };
    let c = ModelConfig::tiny(DecoderKind::Mbd);
    let mut rng = seed::rng(s(0));
    let mut encoder = super::Encoder::new(&c.encoder_widths, c.feature_dim, &mut rng);
    let mut mlp = FixedSeedDecoder(
        Decoder::Mlp(MlpDecoder::new(c.feature_dim, &c.mlp_hidden, 4, &mut rng)),
        0,
    );
    let mut mbd = FixedSeedDecoder(
        Decoder::Morphing(MorphingDecoder::new(c.feature_dim, &c.morph_hidden, 8, 2, &mut rng)?),
        s(1),
    );
    let mut refiner = PointRefiner::new(&c.refiner_widths, &c.refiner_head, &mut rng)?;
    let mut labeled = random(&[2, 4, 8], s(2));
    for (i, v) in labeled.data_mut().iter_mut().enumerate() {
        if (i / 8) % 4 == 3 {
            *v = Real::from(u8::from(i % 3 == 0));
        }
    }
    Ok(vec![
        net(grad_check("encoder", &mut encoder, &random(&[1, 3, 8], s(3)), s(4), None)?),
        net(grad_check("mlp_decoder", &mut mlp, &random(&[2, c.feature_dim], s(5)), s(6), None)?),
        net(grad_check("morphing_decoder", &mut mbd, &random(&[2, c.feature_dim], s(7)), s(8), None)?),
        net(grad_check("refiner", &mut refiner, &labeled, s(9), None)?),
    ])
}

/// Scalar loss of the pipeline with frozen matchings, as a sum of matched
/// distances so gradients are of order one.
fn frozen_loss(
    model: &mut CompletionModel,
    partials: &[&PointCloud],
    seed: u64,
    selection: &[Vec<usize>],
    targets: &[(PointCloud, PointCloud)],
    matchings: &[(Matching, Matching)],
) -> Result<f64> {
    let out = model.forward_with_selection(partials, seed, selection)?;
    let mut loss = 0.0;
    for (b, ((ta, tb), (ma, mb))) in targets.iter().zip(matchings).enumerate() {
        let a = Matching::from_assignment(&out.missing[b], ta, ma.assignment.clone())?;
        let r = Matching::from_assignment(&out.refined[b], tb, mb.assignment.clone())?;
        loss += a.cost * a.len() as f64 + r.cost * r.len() as f64;
    }
    Ok(loss)
}

/// Gradient of the full pipeline (encoder, decoder, merge with frozen
/// selection, refiner, both distance terms with frozen matchings) on a
/// batch of two clouds against central differences. At most `limit`
/// entries per parameter tensor are probed.
pub fn end_to_end_check(decoder: DecoderKind, seed: u64, limit: Option<usize>) -> Result<GradCheckReport> {
    let config = ModelConfig::tiny(decoder);
    let mut model = CompletionModel::new(config.clone(), seed)?;
    let clouds: Vec<PointCloud> = (0..2).map(|b| toy_cloud(16, seed::derive_seed(seed, &[1, b]))).collect();
    let partials: Vec<&PointCloud> = clouds.iter().collect();
    let targets: Vec<(PointCloud, PointCloud)> = (0..2)
        .map(|b| {
            (
                toy_cloud(config.missing_points, seed::derive_seed(seed, &[2, b])),
                toy_cloud(config.output_points, seed::derive_seed(seed, &[3, b])),
            )
        })
        .collect();
    let fwd_seed = seed::derive_seed(seed, &[4]);
    let first = model.forward(&partials, SamplingMethod::Ifps, fwd_seed)?;
    let selection: Vec<Vec<usize>> = first.merged.iter().map(|m| m.indices.clone()).collect();
    let matchings = targets
        .iter()
        .enumerate()
        .map(|(b, (ta, tb))| Ok((emd_exact(&first.missing[b], ta)?, emd_exact(&first.refined[b], tb)?)))
        .collect::<Result<Vec<_>>>()?;

    model.zero_grad();
    let (out, base) = activation_pattern(|| model.forward_with_selection(&partials, fwd_seed, &selection));
    let out = out?;
    let scale = |g: Vec<[f64; 3]>, n: usize| g.into_iter().map(|p| p.map(|v| v * n as f64)).collect::<Vec<_>>();
    let (mut g_missing, mut g_refined) = (Vec::new(), Vec::new());
    for (b, ((ta, tb), (ma, mb))) in targets.iter().zip(&matchings).enumerate() {
        g_missing.push(scale(emd_gradient(&out.missing[b], ta, ma), config.missing_points));
        g_refined.push(scale(emd_gradient(&out.refined[b], tb, mb), config.output_points));
    }
    model.backward(&g_missing, &g_refined)?;

    let analytic: Vec<Vec<Real>> = model.parameters().iter().map(|p| p.grad.data().to_vec()).collect();
    let names: Vec<String> = {
        let mut state = Vec::new();
        model.collect_state(&mut state);
        state.into_iter().filter(|(_, s)| matches!(s, StateMut::Param(_))).map(|(n, _)| n).collect()
    };
    let mut rng = seed::rng(seed::derive_seed(seed, &[5]));
    let mut report = GradCheckReport::new(format!("end_to_end_{decoder}"));
    for (pi, grads) in analytic.iter().enumerate() {
        for i in probe_indices(grads.len(), limit, &mut rng) {
            let orig = model.parameters()[pi].value.data()[i];
            let numeric = central_difference(base, |d| {
                model.parameters()[pi].value.data_mut()[i] = orig + d;
                let v = frozen_loss(&mut model, &partials, fwd_seed, &selection, &targets, &matchings);
                model.parameters()[pi].value.data_mut()[i] = orig;
                v
            })?;
            report.record_probe(grads[i] as f64, numeric, || format!("{}[{i}]", names[pi]));
        }
    }
    Ok(report)
}

/// Every check: layers, networks and both end-to-end pipelines.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = layer_checks(seed)?;
    out.extend(network_checks(seed)?);
    for kind in [DecoderKind::Mlp, DecoderKind::Mbd] {
        out.push(CheckResult { report: end_to_end_check(kind, seed, None)?, tolerance: NETWORK_TOLERANCE });
    }
    Ok(out)
}

