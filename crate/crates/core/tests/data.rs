use std::fs;

use mmgcn::data::{
    generate_synthetic, inject_node_dropout, load_dataset, perturb_dataset, save_dataset, GeneratorConfig, MotionSequence,
    NoiseConfig,
};
use mmgcn::metrics::extract_segments;
use mmgcn::tensor::Tensor;
use mmgcn::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(sequences: usize) -> GeneratorConfig {
    GeneratorConfig {
        sequences,
        ..Default::default()
    }
}

fn random_motion(seed: u64, t: usize, v: usize) -> MotionSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = Tensor::new([t, v, 3], (0..t * v * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    MotionSequence::from_positions(pos).unwrap()
}

#[test]
fn generation_is_deterministic_per_seed() {
    let a = generate_synthetic(&small(4), 7).unwrap();
    let b = generate_synthetic(&small(4), 7).unwrap();
    let c = generate_synthetic(&small(4), 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    save_dataset(&a, dir_a.path()).unwrap();
    save_dataset(&b, dir_b.path()).unwrap();
    for name in ["meta.json", "motion_0.f64", "valid_3.bits", "visual_2.f64", "labels_1.csv"] {
        assert_eq!(fs::read(dir_a.path().join(name)).unwrap(), fs::read(dir_b.path().join(name)).unwrap());
    }
}

#[test]
fn generated_shapes_follow_meta() {
    let ds = generate_synthetic(&small(3), 1).unwrap();
    assert!(ds.meta.validate().is_ok());
    assert_eq!(ds.meta.num_nodes(), 12);
    assert_eq!(ds.meta.ratio(), 30);
    for s in &ds.sequences {
        assert_eq!(s.motion.positions().shape(), &[120, 12, 3]);
        assert_eq!(s.visual.shape(), &[4, 16]);
        assert_eq!(s.labels.len(), 120);
        assert!(s.labels.iter().all(|&c| c < 5));
    }
}

#[test]
fn ground_truth_segments_respect_minimum_length() {
    let cfg = small(50);
    let ds = generate_synthetic(&cfg, 3).unwrap();
    for s in &ds.sequences {
        for seg in extract_segments(&s.labels).unwrap() {
            assert!(seg.len() >= cfg.min_segment, "segment {seg:?}");
        }
    }
}

#[test]
fn class_frequencies_are_uniform() {
    let cfg = small(100);
    let ds = generate_synthetic(&cfg, 11).unwrap();
    let mut counts = vec![0usize; cfg.num_classes];
    for s in &ds.sequences {
        s.labels.iter().for_each(|&c| counts[c] += 1);
    }
    let total: usize = counts.iter().sum();
    assert!(total >= 10_000);
    for (c, &n) in counts.iter().enumerate() {
        let f = n as f64 / total as f64;
        assert!((f - 1.0 / cfg.num_classes as f64).abs() <= 0.05, "class {c}: {f}");
    }
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    let mut ds = generate_synthetic(&small(3), 5).unwrap();
    ds = perturb_dataset(&ds, 0.2, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
    for (a, b) in back.sequences.iter().zip(&ds.sequences) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.motion.positions()), bits(b.motion.positions()));
    }
    let labels = fs::read_to_string(dir.path().join("labels_0.csv")).unwrap();
    assert!(labels.starts_with("frame,class_id\n0,"));
}

#[test]
fn truncated_motion_file_names_the_file() {
    let ds = generate_synthetic(&small(2), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join("motion_1.f64");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::Validation { path: p, msg }) => {
            assert_eq!(p, path);
            assert!(msg.contains("shape mismatch"), "{msg}");
        }
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn indivisible_meta_and_missing_files_are_rejected() {
    let ds = generate_synthetic(&small(1), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let meta_path = dir.path().join("meta.json");
    let text = fs::read_to_string(&meta_path).unwrap().replace("\"t_v\": 4", "\"t_v\": 7");
    fs::write(&meta_path, text).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Validation { .. })));

    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    fs::remove_file(dir.path().join("visual_0.f64")).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));

    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    fs::write(dir.path().join("meta.json"), "{ not json").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Json { .. })));
}

#[test]
fn dropout_extremes() {
    let m = random_motion(1, 10, 4);
    let same = inject_node_dropout(&m, &NoiseConfig { node_drop_rate: 0.0, seed: 3 }).unwrap();
    assert_eq!(same, m);
    let gone = inject_node_dropout(&m, &NoiseConfig { node_drop_rate: 1.0, seed: 3 }).unwrap();
    assert!(gone.valid().iter().all(|v| !v));
    assert!(gone.positions().data().iter().all(|&x| x == 0.0));
    assert!(inject_node_dropout(&m, &NoiseConfig { node_drop_rate: 1.5, seed: 3 }).is_err());
    assert!(inject_node_dropout(&m, &NoiseConfig { node_drop_rate: -0.1, seed: 3 }).is_err());
}

#[test]
fn dropout_fraction_matches_rate() {
    let m = random_motion(2, 10_000, 10);
    let out = inject_node_dropout(&m, &NoiseConfig { node_drop_rate: 0.25, seed: 4 }).unwrap();
    let dropped = out.valid().iter().filter(|v| !**v).count() as f64 / 100_000.0;
    assert!((dropped - 0.25).abs() <= 0.01, "{dropped}");
}

proptest! {
    #[test]
    fn dropout_never_resurrects_and_keeps_mask_consistent(seed in any::<u64>(), r1 in 0.0f64..=1.0, r2 in 0.0f64..=1.0) {
        let m = random_motion(seed, 12, 5);
        let once = inject_node_dropout(&m, &NoiseConfig { node_drop_rate: r1, seed }).unwrap();
        let twice = inject_node_dropout(&once, &NoiseConfig { node_drop_rate: r2, seed: seed.wrapping_add(1) }).unwrap();
        for f in 0..12 {
            for n in 0..5 {
                if !once.is_valid(f, n) {
                    prop_assert!(!twice.is_valid(f, n));
                }
                for s in [&once, &twice] {
                    if !s.is_valid(f, n) {
                        prop_assert_eq!(s.position(f, n), [0.0; 3]);
                    } else {
                        prop_assert_eq!(s.position(f, n), m.position(f, n));
                    }
                }
            }
        }
    }
}
