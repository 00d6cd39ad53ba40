//! The full network: a graph stream over encoded motion, a refinement
//! stream over visual features, a configurable fusion point, and a
//! temporal convolutional classifier.

mod cost;
mod train;
mod weights;

pub use cost::{estimate_flops, CostBreakdown, REFERENCE_GFLOPS};
pub use train::{
    threads_from_env, train, train_with, EpochStats, TrainConfig, TrainOutcome, HISTORY_CSV_HEADER,
};
pub use weights::{config_digest, decode_weights, encode_weights, load_weights, save_weights, WEIGHTS_MAGIC};

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetMeta, MotionSequence};
use crate::encoding::{encode_sequence, raw_sequence, SinusoidalParams};
use crate::error::{Error, Result};
use crate::fusion::{RefineStream, RefinementConfig, StubEncoderConfig};
use crate::graph::{build_graph, GcnStream, GcnStreamConfig, SkeletonDef};
use crate::params::{he_uniform, Bindings, ParamStore};
use crate::tensor::{Padding, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    /// Upsampled visual features join the motion channels at the graph input.
    Early,
    /// Refinement output is concatenated with the graph output.
    Mid,
    /// Separate classifiers on each stream, logits averaged.
    Late,
    /// Mid concatenation plus a second classifier on the refinement stream.
    MidLate,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 4] = [Self::Early, Self::Mid, Self::Late, Self::MidLate];

    pub fn name(self) -> &'static str {
        match self {
            Self::Early => "early",
            Self::Mid => "mid",
            Self::Late => "late",
            Self::MidLate => "mid_late",
        }
    }

    fn uses_refine(self) -> bool {
        self != Self::Early
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoding: SinusoidalParams,
    /// Raw xyz coordinates are fed to the graph when off.
    pub sinusoidal: bool,
    pub gcn: GcnStreamConfig,
    pub refinement: RefinementConfig,
    pub fusion: FusionStrategy,
    pub num_classes: usize,
    pub classifier_kernel: usize,
    pub visual_width: usize,
    pub skeleton: SkeletonDef,
    pub max_objects: usize,
    pub visual_encoder: StubEncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoding: SinusoidalParams::default(),
            sinusoidal: true,
            gcn: GcnStreamConfig::default(),
            refinement: RefinementConfig::default(),
            fusion: FusionStrategy::MidLate,
            num_classes: 5,
            classifier_kernel: 3,
            visual_width: 16,
            skeleton: SkeletonDef::upper_body(),
            max_objects: 2,
            visual_encoder: StubEncoderConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Copy the data-dependent fields from a dataset's meta.
    pub fn adapt_to(&mut self, meta: &DatasetMeta) {
        self.num_classes = meta.num_classes;
        self.visual_width = meta.visual_width;
        self.skeleton = meta.skeleton.clone();
        self.max_objects = meta.max_objects;
    }

    pub fn num_nodes(&self) -> usize {
        self.skeleton.joint_count + self.max_objects
    }

    /// Channels per node fed to the graph stream before any visual concat.
    pub fn motion_width(&self) -> usize {
        if self.sinusoidal {
            self.encoding.embedding_len()
        } else {
            3
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoding.validate()?;
        self.gcn.validate()?;
        self.refinement.validate()?;
        self.skeleton.validate()?;
        if self.num_classes < 2 {
            return Err(Error::config("at least two classes are required"));
        }
        if self.classifier_kernel.is_multiple_of(2) {
            return Err(Error::config(format!(
                "classifier kernel must be odd, got {}",
                self.classifier_kernel
            )));
        }
        if self.visual_width == 0 {
            return Err(Error::config("visual width must be positive"));
        }
        for w in self.classifier_widths() {
            if w % 2 != 0 {
                return Err(Error::config(format!("classifier input width {w} must be even")));
            }
        }
        Ok(())
    }

    fn classifier_widths(&self) -> Vec<usize> {
        let g = self.gcn.output_width();
        let f = self.refinement.fused_width;
        match self.fusion {
            FusionStrategy::Early => vec![g],
            FusionStrategy::Mid => vec![g + f],
            FusionStrategy::Late => vec![g, f],
            FusionStrategy::MidLate => vec![g + f, f],
        }
    }
}

/// Per-row argmax, lowest index on ties.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let k = t.shape().last().copied().unwrap_or(1).max(1);
    t.data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Framewise class ids from `[T, K]` logits.
pub fn predict_segments(logits: &Tensor) -> Result<Vec<usize>> {
    if logits.rank() != 2 {
        return Err(Error::shape(format!("logits must be [T, K], got {:?}", logits.shape())));
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("logits contain NaN or infinity".into()));
    }
    Ok(argmax_rows(logits))
}

pub fn register_classifier(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    c: usize,
    classes: usize,
    kernel: usize,
) {
    let h = c / 2;
    store.insert(format!("{prefix}.conv1_w"), he_uniform(rng, &[kernel, c, h], kernel * c));
    store.insert(format!("{prefix}.conv1_b"), Tensor::zeros([h]));
    store.insert(format!("{prefix}.conv2_w"), he_uniform(rng, &[1, h, classes], h));
    store.insert(format!("{prefix}.conv2_b"), Tensor::zeros([classes]));
}

/// Temporal conv (C -> C/2, replicate padding), relu, 1-wide conv to K.
pub fn classifier(tape: &mut Tape, p: &Bindings, prefix: &str, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 2 || !s[1].is_multiple_of(2) {
        return Err(Error::shape(format!("classifier input must be [T, even C], got {s:?}")));
    }
    let w1 = p.get(&format!("{prefix}.conv1_w"))?;
    let k = tape.shape(w1)[0];
    let h = tape.conv_time(x, w1, 1, Padding::Replicate(k / 2))?;
    let h = tape.add_bias(h, p.get(&format!("{prefix}.conv1_b"))?)?;
    let h = tape.relu(h);
    let y = tape.conv_time(h, p.get(&format!("{prefix}.conv2_w"))?, 1, Padding::None)?;
    tape.add_bias(y, p.get(&format!("{prefix}.conv2_b"))?)
}

/// An instantiated network: the config plus the fixed graph operator.
#[derive(Clone, Debug)]
pub struct Mmgcn {
    cfg: ModelConfig,
    normalized: Tensor,
    gcn: GcnStream,
    refine: Option<RefineStream>,
}

impl Mmgcn {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let graph = build_graph(&cfg.skeleton, cfg.max_objects)?;
        let gcn_in = match cfg.fusion {
            FusionStrategy::Early => cfg.motion_width() + cfg.visual_width,
            _ => cfg.motion_width(),
        };
        let gcn = GcnStream::new("gcn", cfg.gcn.clone(), gcn_in, graph.node_count)?;
        let refine = if cfg.fusion.uses_refine() {
            Some(RefineStream::new(
                "refine",
                cfg.refinement.clone(),
                cfg.motion_width(),
                cfg.visual_width,
            )?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            normalized: graph.normalized,
            gcn,
            refine,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.gcn.register(&mut store, &mut rng);
        if let Some(r) = &self.refine {
            r.register(&mut store, &mut rng);
        }
        let widths = self.cfg.classifier_widths();
        let (k, kc) = (self.cfg.num_classes, self.cfg.classifier_kernel);
        register_classifier(&mut store, &mut rng, "cls", widths[0], k, kc);
        if let Some(&w) = widths.get(1) {
            register_classifier(&mut store, &mut rng, "cls_refine", w, k, kc);
        }
        store
    }

    /// Per-node input features for the graph stream, [T, V, motion_width].
    pub fn encode_motion(&self, m: &MotionSequence) -> Result<Tensor> {
        if m.nodes() != self.cfg.num_nodes() {
            return Err(Error::shape(format!(
                "motion has {} nodes, model expects {}",
                m.nodes(),
                self.cfg.num_nodes()
            )));
        }
        if self.cfg.sinusoidal {
            encode_sequence(m, &self.cfg.encoding)
        } else {
            raw_sequence(m)
        }
    }

    /// motion [T_m, V, motion_width], visual [T_v, C_i] -> logits [T_m, K]
    pub fn forward(&self, tape: &mut Tape, p: &Bindings, motion: Var, visual: Var) -> Result<Var> {
        let ms = tape.shape(motion).to_vec();
        let vs = tape.shape(visual).to_vec();
        if ms.len() != 3 || ms[2] != self.cfg.motion_width() || ms[1] != self.cfg.num_nodes() {
            return Err(Error::shape(format!(
                "motion must be [T, {}, {}], got {ms:?}",
                self.cfg.num_nodes(),
                self.cfg.motion_width()
            )));
        }
        if vs.len() != 2 || vs[1] != self.cfg.visual_width || vs[0] == 0 {
            return Err(Error::shape(format!(
                "visual features must be [T_v, {}], got {vs:?}",
                self.cfg.visual_width
            )));
        }
        let (t_m, t_v) = (ms[0], vs[0]);
        if t_m % t_v != 0 {
            return Err(Error::shape(format!("motion length {t_m} not divisible by visual length {t_v}")));
        }
        let adj = tape.constant(self.normalized.clone());
        match self.cfg.fusion {
            FusionStrategy::Early => {
                let up = tape.interpolate_time(visual, t_m)?;
                let up = tape.repeat_axis(up, 1, ms[1])?;
                let x = tape.concat(&[motion, up], 2)?;
                let g = self.gcn.forward(tape, p, x, adj)?;
                classifier(tape, p, "cls", g)
            }
            strategy => {
                let g = self.gcn.forward(tape, p, motion, adj)?;
                let r = self.refine.as_ref().expect("refine stream").forward(tape, p, motion, visual)?;
                let main_in = if strategy == FusionStrategy::Late {
                    g
                } else {
                    tape.concat(&[g, r], 1)?
                };
                let main = classifier(tape, p, "cls", main_in)?;
                if strategy == FusionStrategy::Mid {
                    return Ok(main);
                }
                let side = classifier(tape, p, "cls_refine", r)?;
                let sum = tape.add(main, side)?;
                Ok(tape.scale(sum, 0.5))
            }
        }
    }

    /// Logits for concrete inputs.
    pub fn logits(&self, params: &ParamStore, motion: &Tensor, visual: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let m = tape.constant(motion.clone());
        let v = tape.constant(visual.clone());
        let y = self.forward(&mut tape, &p, m, v)?;
        Ok(tape.value(y).clone())
    }

    /// Framewise class ids for one sequence.
    pub fn predict(&self, params: &ParamStore, motion: &MotionSequence, visual: &Tensor) -> Result<Vec<usize>> {
        let enc = self.encode_motion(motion)?;
        predict_segments(&self.logits(params, &enc, visual)?)
    }

    /// Check that `params` holds exactly the expected names and shapes.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let want = self.init_params(0);
        if want.len() != params.len() {
            return Err(Error::arg(format!(
                "expected {} parameter tensors, found {}",
                want.len(),
                params.len()
            )));
        }
        for (name, t) in want.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::shape(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::arg(format!("missing parameter {name}"))),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_pick_lowest() {
        let t = Tensor::new([3, 3], vec![1.0, 1.0, 1.0, 0.0, 2.0, 2.0, -1.0, -3.0, -1.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![0, 1, 0]);
    }

    #[test]
    fn predict_rejects_nan() {
        let t = Tensor::new([1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(predict_segments(&t).is_err());
    }

    #[test]
    fn config_rejects_odd_classifier_width() {
        let mut cfg = ModelConfig::default();
        cfg.gcn.channels = vec![15, 32];
        cfg.fusion = FusionStrategy::Early;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fusion_names_round_trip() {
        for f in FusionStrategy::ALL {
            let s = serde_json::to_string(&f).unwrap();
            assert_eq!(s, format!("\"{}\"", f.name()));
            assert_eq!(serde_json::from_str::<FusionStrategy>(&s).unwrap(), f);
        }
    }

    #[test]
    fn param_sets_differ_by_strategy() {
        let names = |f| {
            let m = Mmgcn::new(ModelConfig { fusion: f, ..Default::default() }).unwrap();
            m.init_params(1).iter().map(|(k, _)| k.clone()).collect::<Vec<_>>()
        };
        assert!(!names(FusionStrategy::Early).iter().any(|n| n.starts_with("refine")));
        assert!(!names(FusionStrategy::Mid).iter().any(|n| n.starts_with("cls_refine")));
        assert!(names(FusionStrategy::MidLate).iter().any(|n| n.starts_with("cls_refine")));
    }
}
