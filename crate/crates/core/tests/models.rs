use mpc_core::geometry::{PointCloud, SamplingMethod};
use mpc_core::metrics::{emd_exact, AuctionParams};
use mpc_core::models::checks::{end_to_end_check, gradcheck_suite, NETWORK_TOLERANCE};
use mpc_core::models::{
    clouds_to_tensor, joint_loss, labeled_to_tensor, CompletionModel, DecoderKind, EmdMode, Encoder, MlpDecoder,
    ModelConfig, MorphingDecoder, PointRefiner,
};
use mpc_core::nn::checkpoint::Checkpoint;
use mpc_core::nn::{Module, Tensor};
use mpc_core::seed;
use rand::seq::SliceRandom;
use rand::Rng;

fn cloud(n: usize, s: u64) -> PointCloud {
    let mut rng = seed::rng(s);
    PointCloud::new((0..n).map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0))).collect())
}

fn feature(b: usize, d: usize, s: u64) -> Tensor {
    let mut rng = seed::rng(s);
    Tensor::from_vec(&[b, d], (0..b * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn gradcheck_suite_passes() {
    for r in gradcheck_suite(7).unwrap() {
        assert!(r.passed(), "{}: {:e} >= {:e} at {}", r.report.name, r.report.max_rel_error, r.tolerance, r.report.worst);
    }
}

#[test]
fn end_to_end_gradcheck_other_seed() {
    for kind in [DecoderKind::Mlp, DecoderKind::Mbd] {
        let r = end_to_end_check(kind, 99, None).unwrap();
        assert!(r.passed(NETWORK_TOLERANCE), "{kind}: {:e} at {}", r.max_rel_error, r.worst);
    }
}

#[test]
fn encoder_shape_for_any_point_count() {
    let mut rng = seed::rng(1);
    let mut enc = Encoder::new(&[8, 8, 16], 12, &mut rng);
    for n in [1, 5, 64] {
        let x = clouds_to_tensor(&[&cloud(n, 2), &cloud(n, 3)]).unwrap();
        assert_eq!(enc.forward(&x).unwrap().shape(), &[2, 12]);
    }
    assert!(enc.forward(&Tensor::zeros(&[1, 4, 5])).is_err());
}

#[test]
fn encoder_is_permutation_invariant() {
    let mut rng = seed::rng(4);
    let mut enc = Encoder::new(&[16, 32, 64], 32, &mut rng);
    let c = cloud(100, 5);
    let mut shuffled = c.clone();
    shuffled.points.shuffle(&mut rng);
    let train_a = enc.forward(&clouds_to_tensor(&[&c]).unwrap()).unwrap();
    let train_b = enc.forward(&clouds_to_tensor(&[&shuffled]).unwrap()).unwrap();
    // batch statistics are sums, so reordering only perturbs rounding
    for (a, b) in train_a.data().iter().zip(train_b.data()) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
    enc.set_training(false);
    let a = enc.forward(&clouds_to_tensor(&[&c]).unwrap()).unwrap();
    let b = enc.forward(&clouds_to_tensor(&[&shuffled]).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mlp_decoder_shape_and_zero_map() {
    let mut rng = seed::rng(6);
    let mut dec = MlpDecoder::new(10, &[12, 12], 4, &mut rng);
    assert_eq!(dec.forward(&feature(3, 10, 7)).unwrap().shape(), &[3, 3, 4]);
    let mut state = Vec::new();
    dec.collect_state("", &mut state);
    for (_, s) in state {
        if let mpc_core::nn::StateMut::Param(p) = s {
            p.value.fill(0.0);
        }
    }
    let out = dec.forward(&Tensor::zeros(&[2, 10])).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn morphing_decoder_contract() {
    let mut rng = seed::rng(8);
    assert!(MorphingDecoder::new(10, &[8], 10, 3, &mut rng).is_err());
    let mut dec = MorphingDecoder::new(10, &[8, 6], 16, 4, &mut rng).unwrap();
    assert_eq!(dec.points_per_network(), 4);
    let f = feature(2, 10, 9);
    let a = dec.forward(&f, 11).unwrap();
    assert_eq!(a.shape(), &[2, 3, 16]);
    assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(dec.forward(&f, 11).unwrap(), a);
    assert_ne!(dec.forward(&f, 12).unwrap(), a);
    let grids = dec.unit_square_samples(2, 11);
    assert_eq!(grids.len(), 4);
    assert!(grids.iter().all(|g| g.shape() == [2, 2, 4] && g.data().iter().all(|v| (0.0..1.0).contains(v))));
}

#[test]
fn full_size_morphing_output_shape() {
    let c = ModelConfig::default();
    let mut rng = seed::rng(10);
    let mut dec = MorphingDecoder::new(c.feature_dim, &c.morph_hidden, c.missing_points, c.morph_networks, &mut rng)
        .unwrap();
    assert_eq!(dec.points_per_network(), 64);
    let out = dec.forward(&feature(1, c.feature_dim, 1), 3).unwrap();
    assert_eq!(out.shape(), &[1, 3, 1024]);
    assert!(out.data().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn refiner_contract() {
    let c = ModelConfig::default();
    let mut rng = seed::rng(12);
    let mut prn = PointRefiner::new(&c.refiner_widths, &c.refiner_head, &mut rng).unwrap();
    assert_eq!(prn.concat_width(), 1088);
    let merged = mpc_core::LabeledCloud::new(cloud(64, 13), (0..64).map(|i| (i % 2) as u8).collect()).unwrap();
    let x = labeled_to_tensor(&[&merged]).unwrap();
    let d = prn.forward(&x).unwrap();
    assert_eq!(d.shape(), &[1, 3, 64]);
    assert!(d.data().iter().all(|v| v.abs() <= 1.0));
    assert!(prn.forward(&Tensor::zeros(&[1, 3, 64])).is_err());
    prn.zero_output_layer();
    assert!(prn.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn refiner_displacements_follow_their_points() {
    let mut rng = seed::rng(21);
    let mut prn = PointRefiner::new(&[8, 12, 16], &[10, 6], &mut rng).unwrap();
    prn.set_training(false);
    let pts = cloud(40, 22);
    let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 3 == 0)).collect();
    let mut order: Vec<usize> = (0..40).collect();
    order.shuffle(&mut rng);
    let a = mpc_core::LabeledCloud::new(pts.clone(), labels.clone()).unwrap();
    let b = mpc_core::LabeledCloud::new(pts.select(&order), order.iter().map(|&i| labels[i]).collect()).unwrap();
    let da = prn.forward(&labeled_to_tensor(&[&a]).unwrap()).unwrap();
    let db = prn.forward(&labeled_to_tensor(&[&b]).unwrap()).unwrap();
    for (j, &i) in order.iter().enumerate() {
        for k in 0..3 {
            let (x, y) = (da.data()[k * 40 + i], db.data()[k * 40 + j]);
            assert!((x - y).abs() <= 1e-12, "point {i} channel {k}: {x} vs {y}");
        }
    }
}

#[test]
fn pipeline_contract_at_full_sizes() {
    let mut model = CompletionModel::new(ModelConfig::default(), 1).unwrap();
    let partial = cloud(2048, 14);
    let out = model.forward(&[&partial], SamplingMethod::Ifps, 2).unwrap();
    assert_eq!(out.missing[0].len(), 1024);
    assert_eq!(out.merged[0].cloud.len(), 2048);
    assert_eq!(out.refined[0].len(), 2048);
    for (r, m) in out.refined[0].iter().zip(out.merged[0].cloud.points.iter()) {
        assert!((0..3).all(|k| (r[k] - m[k]).abs() <= 1.0 + 1e-12));
    }
}

#[test]
fn mu_zero_keeps_merged_points_and_partial_input() {
    let mut config = ModelConfig::tiny(DecoderKind::Mbd);
    config.mu = 0.0;
    let mut model = CompletionModel::new(config, 3).unwrap();
    let partial = cloud(16, 15);
    let out = model.forward(&[&partial], SamplingMethod::Ifps, 4).unwrap();
    let merged = &out.merged[0];
    assert_eq!(out.refined[0], merged.cloud.points);
    for (p, (&l, &idx)) in merged.cloud.points.iter().zip(merged.cloud.labels.iter().zip(&merged.indices)) {
        if l == 0 {
            assert_eq!(*p, partial.points[idx]);
        } else {
            assert_eq!(*p, out.missing[0].points[idx - merged.partial_len]);
        }
    }
}

#[test]
fn displacement_bounded_by_mu() {
    for mu in [0.05, 0.5, 2.0] {
        let mut config = ModelConfig::tiny(DecoderKind::Mlp);
        config.mu = mu;
        let mut model = CompletionModel::new(config, 5).unwrap();
        let out = model.forward(&[&cloud(16, 16), &cloud(16, 17)], SamplingMethod::Ifps, 6).unwrap();
        for (r, m) in out.refined.iter().zip(&out.merged) {
            for (a, b) in r.iter().zip(m.cloud.points.iter()) {
                assert!((0..3).all(|k| (a[k] - b[k]).abs() <= mu + 1e-12));
            }
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut model = CompletionModel::new(ModelConfig::tiny(DecoderKind::Mbd), 8).unwrap();
        model.forward(&[&cloud(16, 18)], SamplingMethod::Mds { sigma: 0.05 }, 9).unwrap().refined
    };
    assert_eq!(run(), run());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = ModelConfig::default();
    c.morph_networks = 10;
    assert!(CompletionModel::new(c, 0).is_err());
    let mut c = ModelConfig::default();
    c.mu = -1.0;
    assert!(CompletionModel::new(c, 0).is_err());
    let mut c = ModelConfig::tiny(DecoderKind::Mlp);
    c.refiner_widths = vec![4, 4];
    assert!(CompletionModel::new(c, 0).is_err());
    assert!("mbd".parse::<DecoderKind>().is_ok());
    assert!("cnn".parse::<DecoderKind>().is_err());
}

#[test]
fn joint_loss_properties() {
    let a = cloud(32, 20);
    let b = cloud(64, 21);
    let perfect = joint_loss(&a, &a, &b, &b, &EmdMode::default()).unwrap();
    assert!(perfect.total <= 1e-6);
    let (x, y) = (cloud(6, 22), cloud(6, 23));
    let (u, v) = (cloud(6, 24), cloud(6, 25));
    let approx = joint_loss(&x, &y, &u, &v, &EmdMode::Approx(AuctionParams::default())).unwrap();
    assert_eq!(approx.total, approx.missing + approx.refined);
    let exact = emd_exact(&x, &y).unwrap().cost + emd_exact(&u, &v).unwrap().cost;
    assert!((approx.total - exact).abs() <= 0.01 * exact);
    assert!(joint_loss(&x, &cloud(5, 1), &u, &v, &EmdMode::Exact).is_err());
}

#[test]
fn checkpoint_round_trip_restores_model() {
    let mut a = CompletionModel::new(ModelConfig::tiny(DecoderKind::Mbd), 30).unwrap();
    let partial = cloud(16, 31);
    a.forward(&[&partial, &cloud(16, 32)], SamplingMethod::Ifps, 1).unwrap();
    let mut ckpt = Checkpoint::new();
    a.export(&mut ckpt).unwrap();
    let mut bytes = Vec::new();
    ckpt.write_to(&mut bytes).unwrap();
    let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
    let mut b = CompletionModel::from_checkpoint(&back).unwrap();
    assert_eq!(b.config(), a.config());
    let pa: Vec<_> = a.parameters().into_iter().map(|p| p.clone()).collect();
    let pb: Vec<_> = b.parameters().into_iter().map(|p| p.clone()).collect();
    assert_eq!(pa, pb);
    a.set_training(false);
    b.set_training(false);
    let ra = a.forward(&[&partial], SamplingMethod::Ifps, 2).unwrap().refined;
    let rb = b.forward(&[&partial], SamplingMethod::Ifps, 2).unwrap().refined;
    assert_eq!(ra, rb);
}
