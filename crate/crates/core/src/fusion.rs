//! Temporal feature refinement: merge sparse visual features with pooled
//! encoded motion, refine through bottleneck blocks, and bring the result
//! back to the motion frame rate with temporal pyramid pooling.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::params::{he_uniform, Bindings, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualSource {
    StubEncoder,
    Precomputed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisualFeatures {
    /// [T_v, C_i]
    pub feats: Tensor,
    pub source: VisualSource,
}

impl VisualFeatures {
    pub fn precomputed(feats: Tensor) -> Result<Self> {
        if feats.rank() != 2 || feats.shape()[0] == 0 {
            return Err(Error::shape(format!(
                "visual features must be [T_v >= 1, C_i], got {:?}",
                feats.shape()
            )));
        }
        Ok(Self {
            feats,
            source: VisualSource::Precomputed,
        })
    }

    pub fn frames(&self) -> usize {
        self.feats.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.feats.shape()[1]
    }
}

/// Read a flat little-endian f64 file holding `[t_v, c_i]` features.
pub fn load_precomputed(path: &Path, t_v: usize, c_i: usize) -> Result<VisualFeatures> {
    let bytes = fsio::read(path)?;
    let values = fsio::f64_from_le_bytes(&bytes)
        .filter(|v| v.len() == t_v * c_i)
        .ok_or_else(|| {
            Error::validation(
                path,
                format!("shape mismatch: expected [{t_v}, {c_i}] f64 values, found {} bytes", bytes.len()),
            )
        })?;
    VisualFeatures::precomputed(Tensor::new([t_v, c_i], values)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StubEncoderConfig {
    pub hidden_channels: usize,
    pub kernel: usize,
    /// Frame size assumed by the cost model.
    pub frame_height: usize,
    pub frame_width: usize,
}

impl Default for StubEncoderConfig {
    fn default() -> Self {
        Self {
            hidden_channels: 8,
            kernel: 3,
            frame_height: 480,
            frame_width: 640,
        }
    }
}

/// Two same-padded spatial convolutions with relu, then a global spatial
/// mean per frame. Frames never mix in time.
#[derive(Clone, Debug)]
pub struct StubVisualEncoder {
    pub prefix: String,
    pub cfg: StubEncoderConfig,
    pub out_channels: usize,
}

impl StubVisualEncoder {
    pub fn new(prefix: &str, cfg: StubEncoderConfig, out_channels: usize) -> Result<Self> {
        if cfg.kernel.is_multiple_of(2) || cfg.hidden_channels == 0 || out_channels == 0 {
            return Err(Error::config("stub encoder needs an odd kernel and positive widths"));
        }
        Ok(Self {
            prefix: prefix.to_string(),
            cfg,
            out_channels,
        })
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let k2 = self.cfg.kernel * self.cfg.kernel;
        let h = self.cfg.hidden_channels;
        store.insert(self.name("conv1_w"), he_uniform(rng, &[k2 * 3, h], k2 * 3));
        store.insert(self.name("conv1_b"), Tensor::zeros([h]));
        store.insert(self.name("conv2_w"), he_uniform(rng, &[k2 * h, self.out_channels], k2 * h));
        store.insert(self.name("conv2_b"), Tensor::zeros([self.out_channels]));
    }

    /// frames [T_v, H, W, 3] -> [T_v, out_channels]
    pub fn forward(&self, tape: &mut Tape, p: &Bindings, frames: Var) -> Result<Var> {
        let s = tape.shape(frames).to_vec();
        if s.len() != 4 || s[3] != 3 || s[0] == 0 {
            return Err(Error::shape(format!("frames must be [T_v >= 1, H, W, 3], got {s:?}")));
        }
        let k = self.cfg.kernel;
        let x = tape.unfold2d(frames, k)?;
        let x = tape.dense(x, p.get(&self.name("conv1_w"))?)?;
        let x = tape.add_bias(x, p.get(&self.name("conv1_b"))?)?;
        let x = tape.relu(x);
        let x = tape.unfold2d(x, k)?;
        let x = tape.dense(x, p.get(&self.name("conv2_w"))?)?;
        let x = tape.add_bias(x, p.get(&self.name("conv2_b"))?)?;
        let x = tape.reshape(x, [s[0], s[1] * s[2], self.out_channels])?;
        tape.mean_axis(x, 1)
    }

    /// Run on concrete frames outside of training.
    pub fn encode(&self, params: &ParamStore, frames: &Tensor) -> Result<VisualFeatures> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let f = tape.constant(frames.clone());
        let y = self.forward(&mut tape, &p, f)?;
        Ok(VisualFeatures {
            feats: tape.value(y).clone(),
            source: VisualSource::StubEncoder,
        })
    }

    pub fn macs(&self, t_v: usize) -> u64 {
        let px = (self.cfg.frame_height * self.cfg.frame_width) as u64;
        let k2 = (self.cfg.kernel * self.cfg.kernel) as u64;
        let h = self.cfg.hidden_channels as u64;
        t_v as u64 * px * (k2 * 3 * h + k2 * h * self.out_channels as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementConfig {
    /// When off, the fused features go straight to interpolation.
    pub enabled: bool,
    pub bottleneck_count: usize,
    pub pyramid_bins: [usize; 4],
    pub fused_width: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            bottleneck_count: 3,
            pyramid_bins: [1, 2, 4, 8],
            fused_width: 32,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fused_width == 0 || !self.fused_width.is_multiple_of(2) {
            return Err(Error::config(format!(
                "fused width must be positive and even, got {}",
                self.fused_width
            )));
        }
        if self.pyramid_bins.contains(&0) {
            return Err(Error::config("pyramid bin counts must be positive"));
        }
        Ok(())
    }

    /// Bin counts capped at the number of visual frames.
    pub fn effective_bins(&self, t_v: usize) -> [usize; 4] {
        self.pyramid_bins.map(|b| b.min(t_v))
    }
}

/// Mean over nodes, then average-pool time down to `t_v` bins:
/// [T_m, V, E] -> [t_v, E].
pub fn pool_motion_to_visual(tape: &mut Tape, encoded: Var, t_v: usize) -> Result<Var> {
    let s = tape.shape(encoded).to_vec();
    if s.len() != 3 {
        return Err(Error::shape(format!("encoded motion must be [T_m, V, E], got {s:?}")));
    }
    if t_v == 0 || !s[0].is_multiple_of(t_v) {
        return Err(Error::shape(format!(
            "motion length {} is not divisible by visual length {t_v}",
            s[0]
        )));
    }
    let m = tape.mean_axis(encoded, 1)?;
    tape.avg_pool_time(m, t_v)
}

/// `count` residual blocks of (C -> C/2, relu, C/2 -> C) on x [T, C].
pub fn bottleneck_refine(tape: &mut Tape, p: &Bindings, prefix: &str, x: Var, count: usize) -> Result<Var> {
    let c = *tape.shape(x).last().ok_or_else(|| Error::shape("bottleneck on a scalar"))?;
    if c % 2 != 0 {
        return Err(Error::shape(format!("bottleneck width must be even, got {c}")));
    }
    let mut h = x;
    for i in 0..count {
        let down = tape.dense(h, p.get(&format!("{prefix}.bottleneck{i}.down_w"))?)?;
        let down = tape.add_bias(down, p.get(&format!("{prefix}.bottleneck{i}.down_b"))?)?;
        let down = tape.relu(down);
        let up = tape.dense(down, p.get(&format!("{prefix}.bottleneck{i}.up_w"))?)?;
        let up = tape.add_bias(up, p.get(&format!("{prefix}.bottleneck{i}.up_b"))?)?;
        h = tape.add(h, up)?;
    }
    Ok(h)
}

pub fn register_bottlenecks(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, c: usize, count: usize) {
    for i in 0..count {
        store.insert(format!("{prefix}.bottleneck{i}.down_w"), he_uniform(rng, &[c, c / 2], c));
        store.insert(format!("{prefix}.bottleneck{i}.down_b"), Tensor::zeros([c / 2]));
        // small residual branch at init
        let up = he_uniform(rng, &[c / 2, c], c / 2).map(|v| 0.1 * v);
        store.insert(format!("{prefix}.bottleneck{i}.up_w"), up);
        store.insert(format!("{prefix}.bottleneck{i}.up_b"), Tensor::zeros([c]));
    }
}

/// Four parallel branches of avg-pool to `b` bins then interpolation to
/// `t_out`, averaged, plus the interpolated input as a residual.
pub fn temporal_pyramid_pool(tape: &mut Tape, x: Var, t_out: usize, bins: &[usize; 4]) -> Result<Var> {
    let t = *tape.shape(x).first().ok_or_else(|| Error::shape("pyramid pool on a scalar"))?;
    if let Some(b) = bins.iter().find(|&&b| b == 0 || b > t) {
        return Err(Error::arg(format!("pyramid bin count {b} invalid for {t} frames")));
    }
    if t_out < t {
        return Err(Error::arg(format!("pyramid output length {t_out} shorter than input {t}")));
    }
    let mut sum: Option<Var> = None;
    for &b in bins {
        let pooled = tape.avg_pool_time(x, b)?;
        let up = tape.interpolate_time(pooled, t_out)?;
        sum = Some(match sum {
            None => up,
            Some(s) => tape.add(s, up)?,
        });
    }
    let mean = tape.scale(sum.unwrap(), 0.25);
    let residual = tape.interpolate_time(x, t_out)?;
    tape.add(mean, residual)
}

/// The refinement branch: concat(pooled motion, visual) -> affine to the
/// fused width -> bottlenecks -> pyramid pooling up to the motion length.
#[derive(Clone, Debug)]
pub struct RefineStream {
    pub prefix: String,
    pub cfg: RefinementConfig,
    pub motion_width: usize,
    pub visual_width: usize,
}

impl RefineStream {
    pub fn new(prefix: &str, cfg: RefinementConfig, motion_width: usize, visual_width: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            prefix: prefix.to_string(),
            cfg,
            motion_width,
            visual_width,
        })
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let c_in = self.motion_width + self.visual_width;
        let c = self.cfg.fused_width;
        store.insert(self.name("fuse_w"), he_uniform(rng, &[c_in, c], c_in));
        store.insert(self.name("fuse_b"), Tensor::zeros([c]));
        if self.cfg.enabled {
            register_bottlenecks(store, rng, &self.prefix, c, self.cfg.bottleneck_count);
        }
    }

    /// encoded [T_m, V, E], visual [T_v, C_i] -> [T_m, fused_width]
    pub fn forward(&self, tape: &mut Tape, p: &Bindings, encoded: Var, visual: Var) -> Result<Var> {
        let es = tape.shape(encoded).to_vec();
        let vs = tape.shape(visual).to_vec();
        if es.len() != 3 || vs.len() != 2 || es[2] != self.motion_width || vs[1] != self.visual_width {
            return Err(Error::shape(format!(
                "refine expects motion [T_m, V, {}] and visual [T_v, {}], got {es:?} and {vs:?}",
                self.motion_width, self.visual_width
            )));
        }
        let (t_m, t_v) = (es[0], vs[0]);
        let pooled = pool_motion_to_visual(tape, encoded, t_v)?;
        let fused = tape.concat(&[pooled, visual], 1)?;
        let fused = tape.dense(fused, p.get(&self.name("fuse_w"))?)?;
        let fused = tape.add_bias(fused, p.get(&self.name("fuse_b"))?)?;
        if !self.cfg.enabled {
            return tape.interpolate_time(fused, t_m);
        }
        let refined = bottleneck_refine(tape, p, &self.prefix, fused, self.cfg.bottleneck_count)?;
        temporal_pyramid_pool(tape, refined, t_m, &self.cfg.effective_bins(t_v))
    }

    pub fn macs(&self, t_v: usize) -> u64 {
        let c = self.cfg.fused_width as u64;
        let fuse = t_v as u64 * (self.motion_width + self.visual_width) as u64 * c;
        let blocks = if self.cfg.enabled {
            self.cfg.bottleneck_count as u64 * t_v as u64 * c * c
        } else {
            0
        };
        fuse + blocks
    }
}
