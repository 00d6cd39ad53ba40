//! SmoothLabelMix: temporal label smoothing followed by Beta-weighted
//! intra-batch mixing of inputs and labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SIMPLEX_TOL: f64 = 1e-9;

/// Per-frame class distributions, [T, K].
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSequence {
    probs: Tensor,
}

impl LabelSequence {
    pub fn new(probs: Tensor) -> Result<Self> {
        if probs.rank() != 2 || probs.shape()[1] == 0 {
            return Err(Error::shape(format!("labels must be [T, K], got {:?}", probs.shape())));
        }
        for (t, row) in probs.data().chunks(probs.shape()[1]).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::arg(format!("label row {t} is not on the simplex: {row:?}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn one_hot(ids: &[usize], num_classes: usize) -> Result<Self> {
        let mut probs = Tensor::zeros([ids.len(), num_classes]);
        for (t, &c) in ids.iter().enumerate() {
            if c >= num_classes {
                return Err(Error::arg(format!("class id {c} at frame {t} >= {num_classes}")));
            }
            probs.set(&[t, c], 1.0);
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn frames(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.probs.shape()[1]
    }

    /// Most probable class per frame, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        crate::model::argmax_rows(&self.probs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingKind {
    Original,
    Linear,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingConfig {
    pub kind: SmoothingKind,
    /// Odd window length of the linear filter.
    pub window: usize,
    pub sigma: f64,
    /// Gaussian kernel is truncated at ±radius frames.
    pub radius: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            kind: SmoothingKind::Gaussian,
            window: 7,
            sigma: 2.0,
            radius: 5,
        }
    }
}

impl SmoothingConfig {
    pub fn original() -> Self {
        Self {
            kind: SmoothingKind::Original,
            ..Default::default()
        }
    }

    pub fn linear(window: usize) -> Self {
        Self {
            kind: SmoothingKind::Linear,
            window,
            ..Default::default()
        }
    }

    pub fn gaussian(sigma: f64, radius: usize) -> Self {
        Self {
            kind: SmoothingKind::Gaussian,
            sigma,
            radius,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SmoothingKind::Original => Ok(()),
            SmoothingKind::Linear if self.window.is_multiple_of(2) => Err(Error::config(format!(
                "linear smoothing window must be odd, got {}",
                self.window
            ))),
            SmoothingKind::Linear => Ok(()),
            SmoothingKind::Gaussian if !(self.sigma > 0.0 && self.sigma.is_finite()) => Err(
                Error::config(format!("gaussian sigma must be positive, got {}", self.sigma)),
            ),
            SmoothingKind::Gaussian => Ok(()),
        }
    }

    /// Normalized symmetric kernel of length `2r + 1`.
    pub fn kernel(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let k = match self.kind {
            SmoothingKind::Original => vec![1.0],
            SmoothingKind::Linear => vec![1.0 / self.window as f64; self.window],
            SmoothingKind::Gaussian => {
                let r = self.radius as isize;
                let raw: Vec<f64> = (-r..=r)
                    .map(|j| (-((j * j) as f64) / (2.0 * self.sigma * self.sigma)).exp())
                    .collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / sum).collect()
            }
        };
        Ok(k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    /// Both shape parameters of the symmetric Beta distribution.
    pub beta_alpha: f64,
    pub enabled: bool,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            beta_alpha: 0.2,
            enabled: true,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_alpha > 0.0 && self.beta_alpha.is_finite()) {
            return Err(Error::config(format!(
                "mixing beta_alpha must be positive, got {}",
                self.beta_alpha
            )));
        }
        Ok(())
    }
}

/// Convolve each class channel along time with the normalized kernel,
/// replicating the first and last frames as padding.
pub fn smooth_labels(labels: &LabelSequence, cfg: &SmoothingConfig) -> Result<LabelSequence> {
    let kernel = cfg.kernel()?;
    if cfg.kind == SmoothingKind::Original {
        return Ok(labels.clone());
    }
    let (t, k) = (labels.frames(), labels.classes());
    let r = (kernel.len() / 2) as isize;
    let src = labels.probs.data();
    let mut out = vec![0.0; t * k];
    for f in 0..t {
        let o = &mut out[f * k..(f + 1) * k];
        for (j, &w) in kernel.iter().enumerate() {
            let s = (f as isize + j as isize - r).clamp(0, t as isize - 1) as usize;
            for (ov, sv) in o.iter_mut().zip(&src[s * k..(s + 1) * k]) {
                *ov += w * sv;
            }
        }
    }
    Ok(LabelSequence {
        probs: Tensor::new([t, k], out)?,
    })
}

/// One draw of `w ~ Beta(a, a)`, strictly inside (0, 1).
pub fn sample_mix_weight<R: Rng + ?Sized>(rng: &mut R, cfg: &MixConfig) -> Result<f64> {
    cfg.validate()?;
    let dist = Beta::new(cfg.beta_alpha, cfg.beta_alpha)
        .map_err(|e| Error::config(format!("beta distribution: {e}")))?;
    loop {
        let w = dist.sample(rng);
        if w > 0.0 && w < 1.0 {
            return Ok(w);
        }
    }
}

fn lerp(a: &Tensor, b: &Tensor, w: f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| w * x + (1.0 - w) * y)
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// `w·x1 + (1−w)·x2` for both inputs and labels.
pub fn mix_pair(
    x1: &Tensor,
    y1: &LabelSequence,
    x2: &Tensor,
    y2: &LabelSequence,
    w: f64,
) -> Result<(Tensor, LabelSequence)> {
    if x1.shape() != x2.shape() || y1.probs.shape() != y2.probs.shape() {
        return Err(Error::shape(format!(
            "cannot mix inputs {:?}/{:?} with labels {:?}/{:?}",
            x1.shape(),
            x2.shape(),
            y1.probs.shape(),
            y2.probs.shape()
        )));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::arg(format!("mix weight must be in [0, 1], got {w}")));
    }
    let labels = LabelSequence {
        probs: lerp(&y1.probs, &y2.probs, w),
    };
    Ok((lerp(x1, x2, w), labels))
}

/// One training example: encoded motion [T_m, V, C], visual features
/// [T_v, C_i], and per-frame labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub motion: Tensor,
    pub visual: Tensor,
    pub labels: LabelSequence,
}

/// Random permutation with no fixed points (n ≥ 2).
pub fn sample_derangement<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return p;
        }
    }
}

/// Mix element `i` with element `partners[i]` using `weights[i]` for the
/// motion, visual and label tensors alike.
pub fn mix_batch_with(batch: &[Sample], partners: &[usize], weights: &[f64]) -> Result<Vec<Sample>> {
    if partners.len() != batch.len() || weights.len() != batch.len() {
        return Err(Error::arg("one partner and one weight per batch element"));
    }
    batch
        .iter()
        .zip(partners.iter().zip(weights))
        .map(|(a, (&j, &w))| {
            let b = batch
                .get(j)
                .ok_or_else(|| Error::arg(format!("partner index {j} out of range")))?;
            let (motion, labels) = mix_pair(&a.motion, &a.labels, &b.motion, &b.labels, w)?;
            if a.visual.shape() != b.visual.shape() {
                return Err(Error::shape("visual features differ in shape within the batch"));
            }
            Ok(Sample {
                motion,
                visual: lerp(&a.visual, &b.visual, w),
                labels,
            })
        })
        .collect()
}

/// Smooth every label sequence, then (if enabled) mix each element with a
/// distinct partner drawn as a random derangement of the batch. Per-element
/// weights come from independent streams split off one batch seed.
pub fn apply_smoothlabelmix<R: Rng + ?Sized>(
    batch: &[Sample],
    smoothing: &SmoothingConfig,
    mixing: &MixConfig,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    smoothing.validate()?;
    mixing.validate()?;
    if let Some(first) = batch.first() {
        let t = first.labels.frames();
        if batch.iter().any(|s| s.labels.frames() != t || s.motion.shape() != first.motion.shape()) {
            return Err(Error::shape("all sequences in a batch must have equal length"));
        }
    }
    let smoothed: Vec<Sample> = batch
        .iter()
        .map(|s| {
            Ok(Sample {
                labels: smooth_labels(&s.labels, smoothing)?,
                ..s.clone()
            })
        })
        .collect::<Result<_>>()?;
    if !mixing.enabled {
        return Ok(smoothed);
    }
    if batch.len() < 2 {
        return Err(Error::arg(format!(
            "mixing needs a batch of at least 2, got {}",
            batch.len()
        )));
    }
    let batch_seed: u64 = rng.random();
    let mut pair_rng = ChaCha8Rng::seed_from_u64(batch_seed);
    let partners = sample_derangement(&mut pair_rng, batch.len());
    let weights = (0..batch.len())
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(batch_seed);
            r.set_stream(i as u64 + 1);
            sample_mix_weight(&mut r, mixing)
        })
        .collect::<Result<Vec<_>>>()?;
    mix_batch_with(&smoothed, &partners, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(t: usize, tau: usize) -> LabelSequence {
        let ids: Vec<usize> = (0..t).map(|f| usize::from(f >= tau)).collect();
        LabelSequence::one_hot(&ids, 2).unwrap()
    }

    #[test]
    fn linear_step_matches_direct_convolution() {
        let out = smooth_labels(&step(4, 2), &SmoothingConfig::linear(3)).unwrap();
        let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for f in 0..4 {
            assert!((out.probs().get(&[f, 1]) - want[f]).abs() < 1e-15);
            assert!((out.probs().get(&[f, 0]) - (1.0 - want[f])).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_sequence_is_fixed_point() {
        let labels = LabelSequence::one_hot(&[2; 9], 3).unwrap();
        for cfg in [SmoothingConfig::linear(5), SmoothingConfig::gaussian(1.5, 4)] {
            let out = smooth_labels(&labels, &cfg).unwrap();
            assert!(out.probs().max_abs_diff(labels.probs()).unwrap() < 1e-15);
        }
    }

    #[test]
    fn symmetric_kernel_step_pairs_sum_to_one() {
        let tau = 10;
        for cfg in [SmoothingConfig::linear(7), SmoothingConfig::gaussian(2.0, 5)] {
            let out = smooth_labels(&step(20, tau), &cfg).unwrap();
            let s = out.probs().get(&[tau - 1, 1]) + out.probs().get(&[tau, 1]);
            assert!((s - 1.0).abs() < 1e-12, "{cfg:?}: {s}");
        }
    }

    #[test]
    fn invalid_smoothing_configs() {
        assert!(SmoothingConfig::linear(4).validate().is_err());
        assert!(SmoothingConfig::gaussian(0.0, 3).validate().is_err());
        assert!(smooth_labels(&step(4, 2), &SmoothingConfig::gaussian(-1.0, 3)).is_err());
    }

    #[test]
    fn gaussian_kernel_is_normalized_and_truncated() {
        let k = SmoothingConfig::gaussian(2.0, 5).kernel().unwrap();
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[10]);
    }

    #[test]
    fn mix_pair_examples() {
        let x1 = Tensor::scalar(2.0);
        let x2 = Tensor::scalar(6.0);
        let y1 = LabelSequence::one_hot(&[0], 2).unwrap();
        let y2 = LabelSequence::one_hot(&[1], 2).unwrap();
        let (x, y) = mix_pair(&x1, &y1, &x2, &y2, 0.25).unwrap();
        assert_eq!(x.item(), 5.0);
        assert_eq!(y.probs().data(), &[0.25, 0.75]);
        let (x, y) = mix_pair(&x1, &y1, &x2, &y2, 1.0).unwrap();
        assert_eq!((x, y), (x1.clone(), y1.clone()));
        let (x, y) = mix_pair(&x1, &y1, &x2, &y2, 0.0).unwrap();
        assert_eq!((x, y), (x2.clone(), y2.clone()));
        assert!(mix_pair(&x1, &y1, &Tensor::zeros([2]), &y2, 0.5).is_err());
    }

    #[test]
    fn derangement_has_no_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 2..20 {
            let p = sample_derangement(&mut rng, n);
            let mut sorted = p.clone();
            sorted.sort();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            assert!(p.iter().enumerate().all(|(i, &j)| i != j));
        }
    }

    #[test]
    fn mixing_needs_two_elements() {
        let s = Sample {
            motion: Tensor::zeros([4, 1, 1]),
            visual: Tensor::zeros([1, 1]),
            labels: step(4, 2),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let res = apply_smoothlabelmix(std::slice::from_ref(&s), &SmoothingConfig::original(), &MixConfig::default(), &mut rng);
        assert!(res.is_err());
        let off = MixConfig { enabled: false, ..Default::default() };
        let res = apply_smoothlabelmix(std::slice::from_ref(&s), &SmoothingConfig::original(), &off, &mut rng).unwrap();
        assert_eq!(res, vec![s]);
    }
}
