//! Motion sequences, the on-disk dataset format, a synthetic generator and
//! misdetection noise.
//!
//! Dataset directory layout:
//!
//! ```text
//! meta.json            DatasetMeta
//! motion_<i>.f64       [T_m, V, 3] little-endian f64, row-major
//! valid_<i>.bits       [T_m, V] validity bits, LSB first, padded to a byte
//! visual_<i>.f64       [T_v, C_i] little-endian f64, row-major
//! labels_<i>.csv       "frame,class_id" header, one row per frame
//! ```

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::graph::SkeletonDef;
use crate::tensor::Tensor;

/// Per-frame 3D node positions with a validity mask. Invalid nodes always
/// sit at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    positions: Tensor,
    valid: Vec<bool>,
}

impl MotionSequence {
    pub fn new(positions: Tensor, valid: Vec<bool>) -> Result<Self> {
        let s = positions.shape();
        if s.len() != 3 || s[2] != 3 {
            return Err(Error::shape(format!("motion positions must be [T, V, 3], got {s:?}")));
        }
        if valid.len() != s[0] * s[1] {
            return Err(Error::shape(format!(
                "validity mask has {} entries for {} frames x {} nodes",
                valid.len(),
                s[0],
                s[1]
            )));
        }
        if !positions.all_finite() {
            return Err(Error::NonFinite("motion positions".into()));
        }
        let mut m = Self { positions, valid };
        m.zero_invalid();
        Ok(m)
    }

    /// All nodes valid.
    pub fn from_positions(positions: Tensor) -> Result<Self> {
        let n = positions.shape().iter().take(2).product();
        Self::new(positions, vec![true; n])
    }

    fn zero_invalid(&mut self) {
        for (i, &ok) in self.valid.iter().enumerate() {
            if !ok {
                self.positions.data_mut()[i * 3..i * 3 + 3].fill(0.0);
            }
        }
    }

    pub fn frames(&self) -> usize {
        self.positions.shape()[0]
    }

    pub fn nodes(&self) -> usize {
        self.positions.shape()[1]
    }

    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, frame: usize, node: usize) -> bool {
        self.valid[frame * self.nodes() + node]
    }

    pub fn position(&self, frame: usize, node: usize) -> [f64; 3] {
        let off = (frame * self.nodes() + node) * 3;
        let d = self.positions.data();
        [d[off], d[off + 1], d[off + 2]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub sequence_count: usize,
    pub t_m: usize,
    pub t_v: usize,
    pub num_joints: usize,
    pub max_objects: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub visual_width: usize,
    pub skeleton: SkeletonDef,
}

impl DatasetMeta {
    pub fn num_nodes(&self) -> usize {
        self.num_joints + self.max_objects
    }

    /// Motion frames per visual frame.
    pub fn ratio(&self) -> usize {
        self.t_m / self.t_v
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.t_m == 0 || self.t_v == 0 {
            return Err("t_m and t_v must be positive".into());
        }
        if !self.t_m.is_multiple_of(self.t_v) {
            return Err(format!("t_m = {} is not divisible by t_v = {}", self.t_m, self.t_v));
        }
        if self.num_classes < 2 {
            return Err("at least two classes are required".into());
        }
        if self.class_names.len() != self.num_classes {
            return Err(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            ));
        }
        if self.skeleton.joint_count != self.num_joints {
            return Err("skeleton joint count disagrees with num_joints".into());
        }
        self.skeleton.validate().map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub motion: MotionSequence,
    /// [T_v, C_i]
    pub visual: Tensor,
    /// Class id per motion frame.
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Split into `(first n, rest)`, both sharing this meta.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let part = |seqs: &[Sequence]| Dataset {
            meta: DatasetMeta {
                sequence_count: seqs.len(),
                ..self.meta.clone()
            },
            sequences: seqs.to_vec(),
        };
        (part(&self.sequences[..n]), part(&self.sequences[n..]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub sequences: usize,
    pub t_m: usize,
    pub t_v: usize,
    pub num_classes: usize,
    pub max_objects: usize,
    pub visual_width: usize,
    /// Shortest labeled segment, in frames.
    pub min_segment: usize,
    pub max_segment: usize,
    /// Frames over which consecutive actions are blended.
    pub transition: usize,
    /// Std-dev of positional jitter, meters.
    pub motion_noise: f64,
    /// Std-dev of noise added to visual class prototypes.
    pub visual_noise: f64,
    pub fps: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            sequences: 64,
            t_m: 120,
            t_v: 4,
            num_classes: 5,
            max_objects: 2,
            visual_width: 16,
            min_segment: 20,
            max_segment: 50,
            transition: 10,
            motion_noise: 0.005,
            visual_noise: 0.5,
            fps: 30.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.num_classes < 2 {
            return bad("generator needs at least two classes".into());
        }
        if self.t_v == 0 || !self.t_m.is_multiple_of(self.t_v) {
            return bad(format!("t_m = {} must be divisible by t_v = {}", self.t_m, self.t_v));
        }
        if self.min_segment < self.transition || self.min_segment == 0 {
            return bad(format!(
                "min_segment ({}) must be positive and at least the transition length ({})",
                self.min_segment, self.transition
            ));
        }
        if self.max_segment < self.min_segment || self.t_m < self.min_segment {
            return bad("need min_segment <= max_segment and min_segment <= t_m".into());
        }
        if !(self.motion_noise >= 0.0 && self.visual_noise >= 0.0 && self.fps > 0.0) {
            return bad("noise levels must be non-negative and fps positive".into());
        }
        Ok(())
    }
}

const REST_POSE: [[f64; 3]; 10] = [
    [0.0, -0.30, 2.0],
    [0.0, 0.00, 2.0],
    [0.0, 0.30, 2.0],
    [0.0, 0.45, 2.0],
    [-0.18, 0.28, 2.0],
    [-0.25, 0.05, 1.95],
    [-0.20, -0.10, 1.80],
    [0.18, 0.28, 2.0],
    [0.25, 0.05, 1.95],
    [0.20, -0.10, 1.80],
];
const ARM_JOINTS: [usize; 4] = [5, 6, 8, 9];

/// Per-class motion pattern.
struct ClassPattern {
    omega: f64,
    amplitude: Vec<[f64; 3]>,
    phase: Vec<[f64; 3]>,
    hand_offset: [[f64; 3]; 2],
    holds: Vec<bool>,
    prototype: Vec<f64>,
}

fn random_vec3(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

impl ClassPattern {
    fn sample(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig, joints: usize) -> Self {
        let hz = rng.random_range(0.5..2.0);
        let amplitude = (0..joints)
            .map(|j| {
                let hi = if ARM_JOINTS.contains(&j) { 0.12 } else { 0.02 };
                random_vec3(rng, 0.0, hi)
            })
            .collect();
        let phase = (0..joints).map(|_| random_vec3(rng, 0.0, TAU)).collect();
        let hand_offset = [random_vec3(rng, -0.1, 0.1), random_vec3(rng, -0.1, 0.1)];
        let holds = (0..cfg.max_objects).map(|_| rng.random_bool(0.5)).collect();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let prototype = (0..cfg.visual_width).map(|_| normal.sample(rng)).collect();
        Self {
            omega: TAU * hz / cfg.fps,
            amplitude,
            phase,
            hand_offset,
            holds,
            prototype,
        }
    }

    /// Noise-free node positions at frame `t`, joints then objects.
    fn positions(&self, t: usize, joints: usize, objects: usize) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(joints + objects);
        for j in 0..joints {
            let mut p = REST_POSE[j % REST_POSE.len()];
            let side = match j {
                5 | 6 => Some((0, if j == 6 { 1.0 } else { 0.5 })),
                8 | 9 => Some((1, if j == 9 { 1.0 } else { 0.5 })),
                _ => None,
            };
            for a in 0..3 {
                if let Some((s, w)) = side {
                    p[a] += w * self.hand_offset[s][a];
                }
                p[a] += self.amplitude[j][a] * (self.omega * t as f64 + self.phase[j][a]).sin();
            }
            out.push(p);
        }
        for o in 0..objects {
            let hand = if o % 2 == 0 { 6 } else { 9 };
            let p = if self.holds[o] {
                let h = out[hand];
                [h[0], h[1] - 0.03, h[2] - 0.03]
            } else {
                let x = if o % 2 == 0 { -0.3 } else { 0.3 };
                [x - 0.05 * (o / 2) as f64, -0.2, 1.6]
            };
            out.push(p);
        }
        out
    }
}

/// Segment class sequence and lengths covering exactly `t` frames.
fn sample_segments(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig) -> Vec<(usize, usize)> {
    let mut segs: Vec<(usize, usize)> = Vec::new();
    let mut covered = 0;
    let mut class = rng.random_range(0..cfg.num_classes);
    while covered < cfg.t_m {
        let len = rng.random_range(cfg.min_segment..=cfg.max_segment);
        segs.push((class, len));
        covered += len;
        let others: Vec<usize> = (0..cfg.num_classes).filter(|&c| c != class).collect();
        class = *others.choose(rng).unwrap();
    }
    let excess = covered - cfg.t_m;
    let last = segs.len() - 1;
    segs[last].1 -= excess;
    if segs[last].1 < cfg.min_segment && segs.len() > 1 {
        let extra = segs.pop().unwrap().1;
        segs.last_mut().unwrap().1 += extra;
    }
    segs
}

/// Synthetic stand-in for a bimanual manipulation corpus: each sequence is
/// a random walk over action classes with class-specific joint motion,
/// linear blending across boundaries, and noisy class-prototype visual
/// features sampled at `t_v` frames.
pub fn generate_synthetic(cfg: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let skeleton = SkeletonDef::upper_body();
    let joints = skeleton.joint_count;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patterns: Vec<ClassPattern> = (0..cfg.num_classes)
        .map(|_| ClassPattern::sample(&mut rng, cfg, joints))
        .collect();
    let v = joints + cfg.max_objects;
    let motion_noise = Normal::new(0.0, cfg.motion_noise).unwrap();
    let visual_noise = Normal::new(0.0, cfg.visual_noise).unwrap();
    let ratio = cfg.t_m / cfg.t_v;
    let half = cfg.transition / 2;

    let mut sequences = Vec::with_capacity(cfg.sequences);
    for _ in 0..cfg.sequences {
        let segs = sample_segments(&mut rng, cfg);
        let mut labels = Vec::with_capacity(cfg.t_m);
        let mut boundaries = Vec::new();
        for (i, &(c, len)) in segs.iter().enumerate() {
            if i > 0 {
                boundaries.push(labels.len());
            }
            labels.extend(std::iter::repeat_n(c, len));
        }
        let mut data = Vec::with_capacity(cfg.t_m * v * 3);
        for t in 0..cfg.t_m {
            let mut pos = patterns[labels[t]].positions(t, joints, cfg.max_objects);
            if let Some(&b) = boundaries
                .iter()
                .find(|&&b| cfg.transition > 0 && t + half >= b && t < b + cfg.transition - half)
            {
                let start = b - half;
                let lambda = (t - start) as f64 / cfg.transition as f64 + 0.5 / cfg.transition as f64;
                let from = patterns[labels[b - 1]].positions(t, joints, cfg.max_objects);
                let to = patterns[labels[b]].positions(t, joints, cfg.max_objects);
                for ((p, f), q) in pos.iter_mut().zip(&from).zip(&to) {
                    for a in 0..3 {
                        p[a] = (1.0 - lambda) * f[a] + lambda * q[a];
                    }
                }
            }
            for p in pos {
                for c in p {
                    data.push(c + motion_noise.sample(&mut rng));
                }
            }
        }
        let positions = Tensor::new([cfg.t_m, v, 3], data)?;
        let motion = MotionSequence::from_positions(positions)?;
        let mut visual = Vec::with_capacity(cfg.t_v * cfg.visual_width);
        for j in 0..cfg.t_v {
            let class = labels[j * ratio + ratio / 2];
            for &p in &patterns[class].prototype {
                visual.push(p + visual_noise.sample(&mut rng));
            }
        }
        sequences.push(Sequence {
            motion,
            visual: Tensor::new([cfg.t_v, cfg.visual_width], visual)?,
            labels,
        });
    }
    let meta = DatasetMeta {
        sequence_count: cfg.sequences,
        t_m: cfg.t_m,
        t_v: cfg.t_v,
        num_joints: joints,
        max_objects: cfg.max_objects,
        num_classes: cfg.num_classes,
        class_names: (0..cfg.num_classes).map(|c| format!("action_{c}")).collect(),
        visual_width: cfg.visual_width,
        skeleton,
    };
    Ok(Dataset { meta, sequences })
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let meta = serde_json::to_vec_pretty(&dataset.meta).map_err(|e| Error::Json {
        path: dir.join("meta.json"),
        source: e,
    })?;
    for (i, s) in dataset.sequences.iter().enumerate() {
        fsio::write_atomic(&dir.join(format!("motion_{i}.f64")), &fsio::f64_to_le_bytes(s.motion.positions().data()))?;
        fsio::write_atomic(&dir.join(format!("valid_{i}.bits")), &fsio::pack_bits(s.motion.valid()))?;
        fsio::write_atomic(&dir.join(format!("visual_{i}.f64")), &fsio::f64_to_le_bytes(s.visual.data()))?;
        let mut csv = String::from("frame,class_id\n");
        for (f, c) in s.labels.iter().enumerate() {
            writeln!(csv, "{f},{c}").unwrap();
        }
        fsio::write_atomic(&dir.join(format!("labels_{i}.csv")), csv.as_bytes())?;
    }
    fsio::write_atomic(&dir.join("meta.json"), &meta)
}

fn read_f64_file(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fsio::read(path)?;
    match fsio::f64_from_le_bytes(&bytes) {
        Some(v) if v.len() == expected => Ok(v),
        _ => Err(Error::validation(
            path,
            format!(
                "shape mismatch: expected {expected} f64 values ({} bytes), found {} bytes",
                expected * 8,
                bytes.len()
            ),
        )),
    }
}

fn read_labels(path: &Path, meta: &DatasetMeta) -> Result<Vec<usize>> {
    let text = String::from_utf8(fsio::read(path)?)
        .map_err(|_| Error::validation(path, "labels file is not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("frame,class_id") {
        return Err(Error::validation(path, "missing `frame,class_id` header"));
    }
    let mut labels = Vec::with_capacity(meta.t_m);
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(f, c)| Some((f.trim().parse::<usize>().ok()?, c.trim().parse::<usize>().ok()?)));
        match parsed {
            Some((f, c)) if f == row && c < meta.num_classes => labels.push(c),
            _ => return Err(Error::validation(path, format!("bad label row {}: {line:?}", row + 1))),
        }
    }
    if labels.len() != meta.t_m {
        return Err(Error::validation(
            path,
            format!("shape mismatch: {} label rows for t_m = {}", labels.len(), meta.t_m),
        ));
    }
    Ok(labels)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta = serde_json::from_slice(&fsio::read(&meta_path)?).map_err(|e| Error::Json {
        path: meta_path.clone(),
        source: e,
    })?;
    meta.validate().map_err(|m| Error::validation(&meta_path, m))?;
    let v = meta.num_nodes();
    let mut sequences = Vec::with_capacity(meta.sequence_count);
    for i in 0..meta.sequence_count {
        let mpath = dir.join(format!("motion_{i}.f64"));
        let positions = read_f64_file(&mpath, meta.t_m * v * 3)?;
        let vpath = dir.join(format!("valid_{i}.bits"));
        let valid = fsio::unpack_bits(&fsio::read(&vpath)?, meta.t_m * v)
            .ok_or_else(|| Error::validation(&vpath, "shape mismatch: wrong validity bitset length"))?;
        let motion = MotionSequence::new(Tensor::new([meta.t_m, v, 3], positions)?, valid)
            .map_err(|e| Error::validation(&mpath, e.to_string()))?;
        let ipath = dir.join(format!("visual_{i}.f64"));
        let visual = read_f64_file(&ipath, meta.t_v * meta.visual_width)?;
        let labels = read_labels(&dir.join(format!("labels_{i}.csv")), &meta)?;
        sequences.push(Sequence {
            motion,
            visual: Tensor::new([meta.t_v, meta.visual_width], visual)?,
            labels,
        });
    }
    Ok(Dataset { meta, sequences })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub node_drop_rate: f64,
    pub seed: u64,
}

/// Independently per (frame, node), with probability `node_drop_rate`,
/// zero the position and clear its validity flag.
pub fn inject_node_dropout(m: &MotionSequence, cfg: &NoiseConfig) -> Result<MotionSequence> {
    if !(0.0..=1.0).contains(&cfg.node_drop_rate) {
        return Err(Error::arg(format!(
            "node drop rate must be in [0, 1], got {}",
            cfg.node_drop_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = m.clone();
    for flag in out.valid.iter_mut() {
        let u: f64 = rng.random();
        if u < cfg.node_drop_rate {
            *flag = false;
        }
    }
    out.zero_invalid();
    Ok(out)
}

/// Dropout over a whole dataset with one stream per sequence.
pub fn perturb_dataset(dataset: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    let mut out = dataset.clone();
    for (i, s) in out.sequences.iter_mut().enumerate() {
        let cfg = NoiseConfig {
            node_drop_rate: rate,
            seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64),
        };
        s.motion = inject_node_dropout(&s.motion, &cfg)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            sequences: 3,
            ..Default::default()
        }
    }

    #[test]
    fn segments_cover_sequence_and_respect_minimum() {
        let cfg = GeneratorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let segs = sample_segments(&mut rng, &cfg);
            assert_eq!(segs.iter().map(|s| s.1).sum::<usize>(), cfg.t_m);
            assert!(segs.iter().all(|s| s.1 >= cfg.min_segment));
            assert!(segs.windows(2).all(|w| w[0].0 != w[1].0));
        }
    }

    #[test]
    fn generator_rejects_inconsistent_config() {
        let mut cfg = small();
        cfg.transition = 30;
        assert!(generate_synthetic(&cfg, 0).is_err());
        let mut cfg = small();
        cfg.t_v = 7;
        assert!(generate_synthetic(&cfg, 0).is_err());
        let mut cfg = small();
        cfg.num_classes = 1;
        assert!(generate_synthetic(&cfg, 0).is_err());
    }

    #[test]
    fn dropout_extremes_and_range() {
        let ds = generate_synthetic(&small(), 3).unwrap();
        let m = &ds.sequences[0].motion;
        let same = inject_node_dropout(m, &NoiseConfig { node_drop_rate: 0.0, seed: 1 }).unwrap();
        assert_eq!(&same, m);
        let all = inject_node_dropout(m, &NoiseConfig { node_drop_rate: 1.0, seed: 1 }).unwrap();
        assert!(all.valid().iter().all(|v| !v));
        assert!(all.positions().data().iter().all(|&v| v == 0.0));
        assert!(inject_node_dropout(m, &NoiseConfig { node_drop_rate: 1.5, seed: 1 }).is_err());
        assert!(inject_node_dropout(m, &NoiseConfig { node_drop_rate: -0.1, seed: 1 }).is_err());
    }

    #[test]
    fn meta_validation_catches_ratio() {
        let ds = generate_synthetic(&small(), 3).unwrap();
        let mut meta = ds.meta.clone();
        assert!(meta.validate().is_ok());
        meta.t_v = 7;
        assert!(meta.validate().unwrap_err().contains("divisible"));
    }
}
