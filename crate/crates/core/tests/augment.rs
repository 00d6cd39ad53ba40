use mmgcn::augment::{
    apply_smoothlabelmix, mix_batch_with, mix_pair, sample_mix_weight, smooth_labels, LabelSequence, MixConfig, Sample,
    SmoothingConfig,
};
use mmgcn::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_ids(rng: &mut ChaCha8Rng, t: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(t);
    while out.len() < t {
        let c = rng.random_range(0..k);
        let n = rng.random_range(1..=t);
        out.extend(std::iter::repeat_n(c, n.min(t - out.len())));
    }
    out
}

fn random_smoothing(rng: &mut ChaCha8Rng) -> SmoothingConfig {
    match rng.random_range(0..3) {
        0 => SmoothingConfig::original(),
        1 => SmoothingConfig::linear(2 * rng.random_range(0..6) + 1),
        _ => SmoothingConfig::gaussian(rng.random_range(0.3..4.0), rng.random_range(0..8)),
    }
}

fn batch(rng: &mut ChaCha8Rng, b: usize, t: usize, k: usize) -> Vec<Sample> {
    (0..b)
        .map(|_| Sample {
            motion: random(rng, &[t, 3, 2]),
            visual: random(rng, &[2, 4]),
            labels: LabelSequence::one_hot(&random_ids(rng, t, k), k).unwrap(),
        })
        .collect()
}

fn assert_simplex(l: &LabelSequence) {
    for row in l.probs().data().chunks(l.classes()) {
        assert!(row.iter().all(|&p| p >= 0.0), "{row:?}");
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9, "{row:?}");
    }
}

/// `∫₀ˣ w^(a−1)(1−w)^(a−1) dw` via `w = u^(1/a)`, which removes the
/// endpoint singularity: the integrand becomes `(1/a)(1 − u^(1/a))^(a−1)`.
fn beta_partial(a: f64, x: f64) -> f64 {
    let upper = x.powf(a);
    let f = |u: f64| (1.0 / a) * (1.0 - u.powf(1.0 / a)).powf(a - 1.0);
    let n = 20_000;
    let h = upper / n as f64;
    let mut s = f(0.0) + f(upper);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn simplex_preserved_over_random_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let b = rng.random_range(2..6);
        let t = rng.random_range(1..30);
        let k = rng.random_range(2..6);
        let input = batch(&mut rng, b, t, k);
        let smoothing = random_smoothing(&mut rng);
        for s in &input {
            assert_simplex(&smooth_labels(&s.labels, &smoothing).unwrap());
        }
        let out = apply_smoothlabelmix(&input, &smoothing, &MixConfig::default(), &mut rng).unwrap();
        assert_eq!(out.len(), b);
        out.iter().for_each(|s| assert_simplex(&s.labels));
    }
}

#[test]
fn endpoint_weights_recover_inputs_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = batch(&mut rng, 4, 10, 3);
    let smoothing = SmoothingConfig::gaussian(1.5, 4);
    let smoothed = apply_smoothlabelmix(&input, &smoothing, &MixConfig { enabled: false, ..Default::default() }, &mut rng).unwrap();
    let partners = [1, 2, 3, 0];
    let same = mix_batch_with(&smoothed, &partners, &[1.0; 4]).unwrap();
    assert_eq!(same, smoothed);
    let swapped = mix_batch_with(&smoothed, &partners, &[0.0; 4]).unwrap();
    for (i, s) in swapped.iter().enumerate() {
        assert_eq!(s, &smoothed[partners[i]]);
    }
}

#[test]
fn identity_configuration_returns_batch_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = batch(&mut rng, 3, 8, 4);
    let off = MixConfig { enabled: false, ..Default::default() };
    assert_eq!(apply_smoothlabelmix(&input, &SmoothingConfig::original(), &off, &mut rng).unwrap(), input);
}

#[test]
fn mixing_is_deterministic_per_seed_and_pairs_distinct_elements() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = batch(&mut rng, 5, 12, 3);
    let run = |seed| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        apply_smoothlabelmix(&input, &SmoothingConfig::default(), &MixConfig::default(), &mut r).unwrap()
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
    for (i, s) in run(9).iter().enumerate() {
        assert_ne!(s.motion, input[i].motion, "element {i} was left unmixed");
    }
}

#[test]
fn unequal_lengths_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut input = batch(&mut rng, 2, 6, 2);
    input.extend(batch(&mut rng, 1, 7, 2));
    assert!(apply_smoothlabelmix(&input, &SmoothingConfig::default(), &MixConfig::default(), &mut rng).is_err());
}

#[test]
fn beta_weights_mean_and_tail_mass() {
    let cfg = MixConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 100_000;
    let (mut sum, mut tail) = (0.0, 0usize);
    for _ in 0..n {
        let w = sample_mix_weight(&mut rng, &cfg).unwrap();
        assert!(w > 0.0 && w < 1.0);
        sum += w;
        tail += usize::from(!(0.1..=0.9).contains(&w));
    }
    let mean = sum / n as f64;
    let a = cfg.beta_alpha;
    let want_tail = beta_partial(a, 0.1) / beta_partial(a, 0.5);
    let got_tail = tail as f64 / n as f64;
    assert!((mean - 0.5).abs() <= 0.01, "mean {mean}");
    assert!((got_tail - want_tail).abs() <= 0.03, "tail {got_tail} vs {want_tail}");
}

#[test]
fn beta_oracle_agrees_with_uniform_case() {
    // Beta(1, 1) is uniform, so the partial integral is just x.
    assert!((beta_partial(1.0, 0.3) - 0.3).abs() < 1e-12);
}

#[test]
fn same_seed_same_weight() {
    let cfg = MixConfig::default();
    let a = sample_mix_weight(&mut ChaCha8Rng::seed_from_u64(7), &cfg).unwrap();
    let b = sample_mix_weight(&mut ChaCha8Rng::seed_from_u64(7), &cfg).unwrap();
    assert_eq!(a, b);
    assert!(sample_mix_weight(&mut ChaCha8Rng::seed_from_u64(7), &MixConfig { beta_alpha: 0.0, enabled: true }).is_err());
}

#[test]
fn smoothing_mass_preserved_with_constant_ends() {
    let cfg = SmoothingConfig::gaussian(2.0, 5);
    let ids: Vec<usize> = [vec![0; 8], vec![1; 5], vec![2; 3], vec![1; 9]].concat();
    let l = LabelSequence::one_hot(&ids, 3).unwrap();
    let s = smooth_labels(&l, &cfg).unwrap();
    for c in 0..3 {
        let before: f64 = (0..ids.len()).map(|f| l.probs().get(&[f, c])).sum();
        let after: f64 = (0..ids.len()).map(|f| s.probs().get(&[f, c])).sum();
        assert!((before - after).abs() < 1e-9, "class {c}: {before} vs {after}");
    }
}

proptest! {
    #[test]
    fn smoothing_never_invents_an_argmax(seed in any::<u64>(), t in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids = random_ids(&mut rng, t, 4);
        let cfg = random_smoothing(&mut rng);
        let r = cfg.kernel().unwrap().len() / 2;
        let s = smooth_labels(&LabelSequence::one_hot(&ids, 4).unwrap(), &cfg).unwrap();
        for (f, c) in s.argmax().into_iter().enumerate() {
            let lo = f.saturating_sub(r);
            let hi = (f + r).min(t - 1);
            prop_assert!(ids[lo..=hi].contains(&c));
        }
    }

    #[test]
    fn mixing_is_elementwise_convex(seed in any::<u64>(), w in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x1, x2) = (random(&mut rng, &[5, 3]), random(&mut rng, &[5, 3]));
        let y1 = LabelSequence::one_hot(&random_ids(&mut rng, 5, 3), 3).unwrap();
        let y2 = LabelSequence::one_hot(&random_ids(&mut rng, 5, 3), 3).unwrap();
        let (x, y) = mix_pair(&x1, &y1, &x2, &y2, w).unwrap();
        for ((m, a), b) in x.data().iter().zip(x1.data()).zip(x2.data()) {
            prop_assert!(a.min(*b) - 1e-15 <= *m && *m <= a.max(*b) + 1e-15);
        }
        let (same_x, same_y) = mix_pair(&x1, &y1, &x1, &y1, w).unwrap();
        prop_assert!(same_x.max_abs_diff(&x1).unwrap() < 1e-15);
        prop_assert!(same_y.probs().max_abs_diff(y1.probs()).unwrap() < 1e-15);
        for row in y.probs().data().chunks(3) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
