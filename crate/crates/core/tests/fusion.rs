use mmgcn::fusion::{
    bottleneck_refine, load_precomputed, pool_motion_to_visual, register_bottlenecks, temporal_pyramid_pool,
    RefineStream, RefinementConfig, StubEncoderConfig, StubVisualEncoder, VisualSource,
};
use mmgcn::fsio;
use mmgcn::params::{Bindings, ParamStore};
use mmgcn::tensor::{grad_check, Tape, Tensor, Var};
use mmgcn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn project(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a7a);
    let w = t.constant(random(&mut rng, t.shape(y)));
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

/// Grad-check `f` over the data inputs plus every parameter in `params`.
fn check_with_params(
    data: Vec<Tensor>,
    params: &ParamStore,
    seed: u64,
    f: impl Fn(&mut Tape, &Bindings, &[Var]) -> Result<Var>,
) -> f64 {
    let names: Vec<String> = params.iter().map(|(k, _)| k.clone()).collect();
    let n_data = data.len();
    let mut inputs = data;
    inputs.extend(params.iter().map(|(_, t)| t.clone()));
    grad_check(
        |t, v| {
            let b = Bindings::from_vars(names.iter().cloned().zip(v[n_data..].iter().copied()));
            let y = f(t, &b, &v[..n_data])?;
            project(t, y, seed)
        },
        &inputs,
        1e-5,
    )
    .unwrap()
}

fn eval(params: &ParamStore, inputs: &[Tensor], f: impl Fn(&mut Tape, &Bindings, &[Var]) -> Result<Var>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let y = f(&mut tape, &b, &vars)?;
    Ok(tape.value(y).clone())
}

#[test]
fn pool_motion_examples() {
    let x = Tensor::new([4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = eval(&ParamStore::new(), &[x], |t, _, v| pool_motion_to_visual(t, v[0], 2)).unwrap();
    assert_eq!(y.data(), &[1.5, 3.5]);
    let x = Tensor::full([6, 3, 2], 0.4);
    let y = eval(&ParamStore::new(), std::slice::from_ref(&x), |t, _, v| pool_motion_to_visual(t, v[0], 3)).unwrap();
    assert!(y.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    assert!(eval(&ParamStore::new(), &[x], |t, _, v| pool_motion_to_visual(t, v[0], 4)).is_err());
}

#[test]
fn pool_motion_matches_compositional_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (t_m, v, e, t_v) = (12, 5, 3, 4);
    let x = random(&mut rng, &[t_m, v, e]);
    let y = eval(&ParamStore::new(), std::slice::from_ref(&x), |t, _, vs| pool_motion_to_visual(t, vs[0], t_v)).unwrap();
    let r = t_m / t_v;
    for b in 0..t_v {
        for c in 0..e {
            let mut s = 0.0;
            for f in b * r..(b + 1) * r {
                for n in 0..v {
                    s += x.get(&[f, n, c]);
                }
            }
            assert!((y.get(&[b, c]) - s / (r * v) as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn bottleneck_zero_weights_is_identity_and_shape_preserving() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[4, 6]);
    for count in [1, 3] {
        let mut p = ParamStore::new();
        register_bottlenecks(&mut p, &mut rng, "r", 6, count);
        let y = eval(&p, std::slice::from_ref(&x), |t, b, v| bottleneck_refine(t, b, "r", v[0], count)).unwrap();
        assert_eq!(y.shape(), &[4, 6]);
        p.zero_prefix("r.");
        let y = eval(&p, std::slice::from_ref(&x), |t, b, v| bottleneck_refine(t, b, "r", v[0], count)).unwrap();
        assert_eq!(y, x);
    }
    let mut p = ParamStore::new();
    register_bottlenecks(&mut p, &mut rng, "r", 5, 1);
    assert!(eval(&p, &[random(&mut rng, &[4, 5])], |t, b, v| bottleneck_refine(t, b, "r", v[0], 1)).is_err());
}

#[test]
fn bottleneck_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = ParamStore::new();
    register_bottlenecks(&mut p, &mut rng, "r", 4, 2);
    let err = check_with_params(vec![random(&mut rng, &[3, 4])], &p, 4, |t, b, v| bottleneck_refine(t, b, "r", v[0], 2));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn pyramid_constant_input_doubles() {
    let x = Tensor::full([8, 3], 1.25);
    let y = eval(&ParamStore::new(), &[x], |t, _, v| temporal_pyramid_pool(t, v[0], 24, &[1, 2, 4, 8])).unwrap();
    assert_eq!(y.shape(), &[24, 3]);
    assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
}

#[test]
fn pyramid_rejects_bad_bins_and_lengths() {
    let x = Tensor::zeros([4, 2]);
    assert!(eval(&ParamStore::new(), std::slice::from_ref(&x), |t, _, v| temporal_pyramid_pool(t, v[0], 8, &[1, 2, 4, 8])).is_err());
    assert!(eval(&ParamStore::new(), &[x], |t, _, v| temporal_pyramid_pool(t, v[0], 3, &[1, 1, 2, 4])).is_err());
}

#[test]
fn pyramid_matches_branch_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, &[6, 2]);
    let bins = [1, 2, 3, 6];
    let y = eval(&ParamStore::new(), std::slice::from_ref(&x), |t, _, v| temporal_pyramid_pool(t, v[0], 18, &bins)).unwrap();
    let want = eval(&ParamStore::new(), &[x], |t, _, v| {
        let mut parts = Vec::new();
        for b in bins {
            let p = t.avg_pool_time(v[0], b)?;
            parts.push(t.interpolate_time(p, 18)?);
        }
        let mut s = parts[0];
        for &p in &parts[1..] {
            s = t.add(s, p)?;
        }
        let s = t.scale(s, 0.25);
        let r = t.interpolate_time(v[0], 18)?;
        t.add(s, r)
    })
    .unwrap();
    assert!(y.max_abs_diff(&want).unwrap() < 1e-12);
}

#[test]
fn pyramid_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let err = check_with_params(vec![random(&mut rng, &[4, 3])], &ParamStore::new(), 7, |t, _, v| {
        temporal_pyramid_pool(t, v[0], 12, &[1, 2, 4, 4])
    });
    assert!(err < 1e-4, "{err}");
}

fn tiny_refine() -> (RefineStream, ParamStore) {
    let cfg = RefinementConfig {
        fused_width: 4,
        bottleneck_count: 2,
        ..Default::default()
    };
    let s = RefineStream::new("refine", cfg, 3, 2).unwrap();
    let mut p = ParamStore::new();
    s.register(&mut p, &mut ChaCha8Rng::seed_from_u64(10));
    (s, p)
}

#[test]
fn refine_paper_shape() {
    let s = RefineStream::new("refine", RefinementConfig::default(), 48, 16).unwrap();
    let mut p = ParamStore::new();
    s.register(&mut p, &mut ChaCha8Rng::seed_from_u64(0));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = [random(&mut rng, &[120, 12, 48]), random(&mut rng, &[4, 16])];
    let y = eval(&p, &inputs, |t, b, v| s.forward(t, b, v[0], v[1])).unwrap();
    assert_eq!(y.shape(), &[120, 32]);
    let bad = [random(&mut rng, &[120, 12, 48]), random(&mut rng, &[4, 15])];
    assert!(eval(&p, &bad, |t, b, v| s.forward(t, b, v[0], v[1])).is_err());
}

#[test]
fn refine_output_length_follows_motion() {
    let (s, p) = tiny_refine();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (t_m, t_v) in [(8, 1), (8, 2), (8, 8), (30, 3)] {
        let inputs = [random(&mut rng, &[t_m, 2, 3]), random(&mut rng, &[t_v, 2])];
        let y = eval(&p, &inputs, |t, b, v| s.forward(t, b, v[0], v[1])).unwrap();
        assert_eq!(y.shape(), &[t_m, 4]);
    }
}

#[test]
fn refine_preserves_time_constancy() {
    let (s, p) = tiny_refine();
    let m = Tensor::new([8, 2, 3], [0.1, -0.2, 0.3, 0.7, 0.0, -0.4].iter().cycle().take(48).cloned().collect()).unwrap();
    let v = Tensor::new([4, 2], [0.5, -1.0].iter().cycle().take(8).cloned().collect()).unwrap();
    let y = eval(&p, &[m, v], |t, b, vs| s.forward(t, b, vs[0], vs[1])).unwrap();
    for f in 1..8 {
        for c in 0..4 {
            assert!((y.get(&[f, c]) - y.get(&[0, c])).abs() < 1e-9);
        }
    }
}

#[test]
fn refine_with_zero_blocks_is_linear() {
    let (s, mut p) = tiny_refine();
    p.zero_prefix("refine.bottleneck");
    p.zero_prefix("refine.fuse_b");
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (a, b) = ([random(&mut rng, &[8, 2, 3]), random(&mut rng, &[2, 2])], [random(&mut rng, &[8, 2, 3]), random(&mut rng, &[2, 2])]);
    let f = |x: &[Tensor]| eval(&p, x, |t, bb, v| s.forward(t, bb, v[0], v[1])).unwrap();
    let sum = |x: &Tensor, y: &Tensor| Tensor::new(x.shape().to_vec(), x.data().iter().zip(y.data()).map(|(p, q)| p + 2.0 * q).collect()).unwrap();
    let lhs = f(&[sum(&a[0], &b[0]), sum(&a[1], &b[1])]);
    let rhs = sum(&f(&a), &f(&b));
    assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
}

#[test]
fn refine_passes_grad_check() {
    let (s, p) = tiny_refine();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let data = vec![random(&mut rng, &[8, 2, 3]), random(&mut rng, &[2, 2])];
    let err = check_with_params(data, &p, 14, |t, b, v| s.forward(t, b, v[0], v[1]));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn disabled_refinement_interpolates_fused_features() {
    let cfg = RefinementConfig {
        enabled: false,
        fused_width: 4,
        ..Default::default()
    };
    let s = RefineStream::new("refine", cfg, 3, 2).unwrap();
    let mut p = ParamStore::new();
    s.register(&mut p, &mut ChaCha8Rng::seed_from_u64(1));
    assert!(!p.iter().any(|(k, _)| k.contains("bottleneck")));
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let inputs = [random(&mut rng, &[8, 2, 3]), random(&mut rng, &[2, 2])];
    let y = eval(&p, &inputs, |t, b, v| s.forward(t, b, v[0], v[1])).unwrap();
    assert_eq!(y.shape(), &[8, 4]);
}

#[test]
fn stub_encoder_is_framewise() {
    let enc = StubVisualEncoder::new("vis", StubEncoderConfig::default(), 5).unwrap();
    let mut p = ParamStore::new();
    enc.register(&mut p, &mut ChaCha8Rng::seed_from_u64(2));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frame = random(&mut rng, &[1, 4, 5, 3]);
    let other = random(&mut rng, &[1, 4, 5, 3]);
    let stacked: Vec<f64> = [frame.data(), other.data(), frame.data()].concat();
    let frames = Tensor::new([3, 4, 5, 3], stacked).unwrap();
    let out = enc.encode(&p, &frames).unwrap();
    assert_eq!(out.feats.shape(), &[3, 5]);
    assert_eq!(out.source, VisualSource::StubEncoder);
    assert_eq!(out.feats.row(0), out.feats.row(2));
    let alone = enc.encode(&p, &other).unwrap();
    assert_eq!(alone.feats.row(0), out.feats.row(1));
    assert!(enc.encode(&p, &Tensor::zeros([0, 4, 5, 3])).is_err());
}

#[test]
fn stub_encoder_passes_grad_check() {
    let cfg = StubEncoderConfig {
        hidden_channels: 2,
        ..Default::default()
    };
    let enc = StubVisualEncoder::new("vis", cfg, 3).unwrap();
    let mut p = ParamStore::new();
    enc.register(&mut p, &mut ChaCha8Rng::seed_from_u64(4));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let err = check_with_params(vec![random(&mut rng, &[2, 3, 3, 3])], &p, 5, |t, b, v| enc.forward(t, b, v[0]));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn stub_encoder_cost_is_linear_in_frames() {
    let enc = StubVisualEncoder::new("vis", StubEncoderConfig::default(), 16).unwrap();
    assert_eq!(enc.macs(8), 2 * enc.macs(4));
}

#[test]
fn precomputed_features_round_trip_and_reject_bad_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vis.f64");
    let vals: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
    fsio::write_atomic(&path, &fsio::f64_to_le_bytes(&vals)).unwrap();
    let v = load_precomputed(&path, 4, 3).unwrap();
    assert_eq!(v.feats.data(), vals.as_slice());
    assert_eq!(v.source, VisualSource::Precomputed);
    let err = load_precomputed(&path, 4, 4).unwrap_err();
    assert!(err.to_string().contains("vis.f64"), "{err}");
}
