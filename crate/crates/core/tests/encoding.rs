use mmgcn::data::MotionSequence;
use mmgcn::encoding::{encode_coordinate, encode_joint, encode_sequence, JointPosition, SinusoidalParams};
use mmgcn::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(d: usize) -> SinusoidalParams {
    SinusoidalParams {
        dims_per_coord: d,
        ..Default::default()
    }
}

#[test]
fn coordinate_matches_scalar_reference() {
    let p = SinusoidalParams {
        alpha: 10000.0,
        beta: 100.0,
        dims_per_coord: 4,
    };
    let (s, c) = encode_coordinate(0.37, &p).unwrap();
    for k in 0..4 {
        let arg = 100.0 * 0.37 / 10000f64.powf(k as f64 / 4.0);
        assert!((s[k] - arg.sin()).abs() < 1e-12);
        assert!((c[k] - arg.cos()).abs() < 1e-12);
    }
}

#[test]
fn non_finite_inputs_are_rejected() {
    assert!(encode_coordinate(f64::NAN, &params(4)).is_err());
    assert!(encode_joint(JointPosition::new(0.0, f64::INFINITY, 0.0), &params(4)).is_err());
    let bad = SinusoidalParams { alpha: 1.0, ..Default::default() };
    assert!(encode_coordinate(0.1, &bad).is_err());
}

#[test]
fn joint_is_concatenation_of_coordinates() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in [1, 4, 16] {
        let p = params(d);
        for _ in 0..50 {
            let xyz = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let e = encode_joint(JointPosition::new(xyz[0], xyz[1], xyz[2]), &p).unwrap();
            assert_eq!(e.values.len(), 6 * d);
            let mut want = Vec::new();
            let parts: Vec<_> = xyz.iter().map(|&c| encode_coordinate(c, &p).unwrap()).collect();
            for (s, _) in &parts {
                want.extend_from_slice(s);
            }
            for (_, c) in &parts {
                want.extend_from_slice(c);
            }
            assert_eq!(e.values, want);
        }
    }
}

#[test]
fn sequence_matches_per_node_encoding_and_masks_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (t, v) = (5, 4);
    let pos = Tensor::new([t, v, 3], (0..t * v * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut valid = vec![true; t * v];
    valid[v..2 * v].iter_mut().for_each(|b| *b = false);
    valid[3 * v + 2] = false;
    let m = MotionSequence::new(pos, valid.clone()).unwrap();
    let p = params(4);
    let enc = encode_sequence(&m, &p).unwrap();
    assert_eq!(enc.shape(), &[t, v, 24]);
    for f in 0..t {
        for n in 0..v {
            let row = &enc.data()[(f * v + n) * 24..(f * v + n + 1) * 24];
            if valid[f * v + n] {
                let [x, y, z] = m.position(f, n);
                assert_eq!(row, encode_joint(JointPosition::new(x, y, z), &p).unwrap().values.as_slice());
            } else {
                assert!(row.iter().all(|&x| x == 0.0));
            }
        }
    }
}

#[test]
fn constant_motion_gives_constant_encoding() {
    let frame: Vec<f64> = vec![0.1, 0.2, 0.3, -0.5, 0.0, 1.2];
    let pos = Tensor::new([6, 2, 3], frame.iter().cycle().take(36).cloned().collect()).unwrap();
    let enc = encode_sequence(&MotionSequence::from_positions(pos).unwrap(), &params(3)).unwrap();
    let row = enc.inner_len();
    let first = &enc.data()[..row];
    for f in 1..6 {
        assert_eq!(&enc.data()[f * row..(f + 1) * row], first);
    }
}

#[test]
fn pythagorean_and_rotation_identities_over_many_samples() {
    let p = SinusoidalParams::default();
    let d = p.dims_per_coord;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_pyth, mut worst_rot) = (0f64, 0f64);
    for _ in 0..10_000 {
        let c = rng.random_range(-3.0..3.0);
        let delta = rng.random_range(-1.0..1.0);
        let (s, co) = encode_coordinate(c, &p).unwrap();
        let (s2, _) = encode_coordinate(c + delta, &p).unwrap();
        let (sd, cd) = encode_coordinate(delta, &p).unwrap();
        for k in 0..d {
            worst_pyth = worst_pyth.max((s[k] * s[k] + co[k] * co[k] - 1.0).abs());
            worst_rot = worst_rot.max((s2[k] - (s[k] * cd[k] + co[k] * sd[k])).abs());
        }
    }
    assert!(worst_pyth <= 1e-12, "{worst_pyth}");
    assert!(worst_rot <= 1e-9, "{worst_rot}");
}

proptest! {
    #[test]
    fn frequencies_strictly_decrease(alpha in 1.01f64..1e5, beta in 0.01f64..1e3, d in 1usize..32) {
        let p = SinusoidalParams { alpha, beta, dims_per_coord: d };
        for k in 1..d {
            prop_assert!(p.frequency(k) < p.frequency(k - 1));
        }
    }

    #[test]
    fn entries_bounded(x in -50.0f64..50.0, y in -50.0f64..50.0, z in -50.0f64..50.0, d in 1usize..16) {
        let e = encode_joint(JointPosition::new(x, y, z), &params(d)).unwrap();
        prop_assert!(e.values.iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(e.sin_block().len(), 3 * d);
        prop_assert_eq!(e.cos_block().len(), 3 * d);
    }
}
