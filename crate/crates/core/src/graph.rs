//! Skeleton/object graph and the graph encoder-decoder motion stream.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{he_uniform, Bindings, ParamStore};
use crate::tensor::{Padding, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonDef {
    pub joint_count: usize,
    /// Undirected bones, each stored once.
    pub edges: Vec<(usize, usize)>,
    /// Joints that objects attach to.
    pub hand_joint_indices: Vec<usize>,
}

impl SkeletonDef {
    /// Ten-joint upper body: pelvis, spine, neck, head, then shoulder, elbow
    /// and hand for the left and right arm.
    pub fn upper_body() -> Self {
        Self {
            joint_count: 10,
            edges: vec![(0, 1), (1, 2), (2, 3), (2, 4), (4, 5), (5, 6), (2, 7), (7, 8), (8, 9)],
            hand_joint_indices: vec![6, 9],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for &(a, b) in &self.edges {
            if a >= self.joint_count || b >= self.joint_count {
                return Err(Error::arg(format!(
                    "edge ({a}, {b}) references a joint outside 0..{}",
                    self.joint_count
                )));
            }
        }
        if let Some(h) = self.hand_joint_indices.iter().find(|&&h| h >= self.joint_count) {
            return Err(Error::arg(format!(
                "hand joint index {h} out of range for {} joints",
                self.joint_count
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub node_count: usize,
    /// Symmetric 0/1 adjacency without self loops, [V, V].
    pub adjacency: Tensor,
    /// `D^-1/2 (A + I) D^-1/2`, [V, V].
    pub normalized: Tensor,
}

/// Skeleton bones plus one node per object, each object linked to every
/// hand joint.
pub fn build_graph(skel: &SkeletonDef, max_objects: usize) -> Result<Graph> {
    skel.validate()?;
    let v = skel.joint_count + max_objects;
    let mut a = Tensor::zeros([v, v]);
    let mut link = |i: usize, j: usize| {
        if i != j {
            a.set(&[i, j], 1.0);
            a.set(&[j, i], 1.0);
        }
    };
    for &(i, j) in &skel.edges {
        link(i, j);
    }
    for o in 0..max_objects {
        for &h in &skel.hand_joint_indices {
            link(skel.joint_count + o, h);
        }
    }
    let normalized = normalize_adjacency(&a)?;
    Ok(Graph {
        node_count: v,
        adjacency: a,
        normalized,
    })
}

pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    let s = a.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::shape(format!("adjacency must be square, got {s:?}")));
    }
    let v = s[0];
    let deg: Vec<f64> = (0..v)
        .map(|i| 1.0 + (0..v).map(|j| a.get(&[i, j])).sum::<f64>())
        .collect();
    let mut out = Tensor::zeros([v, v]);
    for i in 0..v {
        for j in 0..v {
            let aij = a.get(&[i, j]) + if i == j { 1.0 } else { 0.0 };
            if aij != 0.0 {
                out.set(&[i, j], aij / (deg[i] * deg[j]).sqrt());
            }
        }
    }
    Ok(out)
}

/// Per frame `Y = (normalized ⊙ mask) · X · W` for x [T, V, C_in].
pub fn spatial_graph_conv(
    tape: &mut Tape,
    x: Var,
    normalized: Var,
    mask: Var,
    weights: Var,
) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(weights).to_vec();
    if xs.len() != 3 || ws.len() != 2 || ws[0] != xs[2] || tape.shape(normalized) != [xs[1], xs[1]] {
        return Err(Error::shape(format!(
            "graph conv of features {xs:?} with weights {ws:?} over adjacency {:?}",
            tape.shape(normalized)
        )));
    }
    let adj = tape.mul(normalized, mask)?;
    let mixed = tape.propagate(adj, x)?;
    tape.dense(mixed, weights)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcnStreamConfig {
    /// Output width of each encoder stage; decoder stages mirror them, so
    /// the stream's output width is `channels[0]`.
    pub channels: Vec<usize>,
    /// Odd temporal kernel length of the stride-2 encoder convolutions.
    pub temporal_kernel: usize,
    pub skip_connections: bool,
}

impl Default for GcnStreamConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32],
            temporal_kernel: 3,
            skip_connections: true,
        }
    }
}

impl GcnStreamConfig {
    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    pub fn output_width(&self) -> usize {
        self.channels[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config("gcn channels must be a non-empty list of positive widths"));
        }
        if self.temporal_kernel.is_multiple_of(2) {
            return Err(Error::config(format!(
                "gcn temporal kernel must be odd, got {}",
                self.temporal_kernel
            )));
        }
        Ok(())
    }

    /// Frames must halve cleanly at every encoder stage.
    pub fn check_length(&self, t: usize) -> Result<()> {
        let div = 1usize << self.stages();
        if t == 0 || !t.is_multiple_of(div) {
            return Err(Error::shape(format!(
                "sequence length {t} is not divisible by 2^{} = {div}",
                self.stages()
            )));
        }
        Ok(())
    }
}

/// Graph encoder-decoder. Encoder stages run graph conv, relu and a
/// stride-2 temporal conv; decoder stages upsample ×2, run graph conv and
/// relu, then add the matching encoder activation. A final mean over nodes
/// yields `[T, channels[0]]`.
#[derive(Clone, Debug)]
pub struct GcnStream {
    pub prefix: String,
    pub cfg: GcnStreamConfig,
    pub in_channels: usize,
    pub num_nodes: usize,
}

impl GcnStream {
    pub fn new(prefix: &str, cfg: GcnStreamConfig, in_channels: usize, num_nodes: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            prefix: prefix.to_string(),
            cfg,
            in_channels,
            num_nodes,
        })
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    fn decoder_widths(&self, s: usize) -> (usize, usize) {
        let n = self.cfg.stages();
        let level = n - 1 - s;
        let c_in = if s == 0 { self.cfg.channels[n - 1] } else { self.cfg.channels[level + 1] };
        (c_in, self.cfg.channels[level])
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let v = self.num_nodes;
        let k = self.cfg.temporal_kernel;
        let mut c_in = self.in_channels;
        for (s, &c) in self.cfg.channels.iter().enumerate() {
            store.insert(self.name(&format!("enc{s}.gcn_w")), he_uniform(rng, &[c_in, c], c_in));
            store.insert(self.name(&format!("enc{s}.mask")), Tensor::ones([v, v]));
            store.insert(self.name(&format!("enc{s}.tconv_w")), he_uniform(rng, &[k, c, c], k * c));
            store.insert(self.name(&format!("enc{s}.tconv_b")), Tensor::zeros([c]));
            c_in = c;
        }
        for s in 0..self.cfg.stages() {
            let (ci, co) = self.decoder_widths(s);
            store.insert(self.name(&format!("dec{s}.gcn_w")), he_uniform(rng, &[ci, co], ci));
            store.insert(self.name(&format!("dec{s}.mask")), Tensor::ones([v, v]));
        }
    }

    /// x [T, V, in_channels] with `normalized` the [V, V] graph operator.
    pub fn forward(&self, tape: &mut Tape, p: &Bindings, x: Var, normalized: Var) -> Result<Var> {
        let xs = tape.shape(x).to_vec();
        if xs.len() != 3 || xs[1] != self.num_nodes || xs[2] != self.in_channels {
            return Err(Error::shape(format!(
                "gcn stream expects [T, {}, {}], got {xs:?}",
                self.num_nodes, self.in_channels
            )));
        }
        self.cfg.check_length(xs[0])?;
        let pad = Padding::Replicate(self.cfg.temporal_kernel / 2);
        let mut h = x;
        let mut skips = Vec::with_capacity(self.cfg.stages());
        for s in 0..self.cfg.stages() {
            let w = p.get(&self.name(&format!("enc{s}.gcn_w")))?;
            let m = p.get(&self.name(&format!("enc{s}.mask")))?;
            let g = spatial_graph_conv(tape, h, normalized, m, w)?;
            let g = tape.relu(g);
            skips.push(g);
            let kw = p.get(&self.name(&format!("enc{s}.tconv_w")))?;
            let kb = p.get(&self.name(&format!("enc{s}.tconv_b")))?;
            let c = tape.conv_time(g, kw, 2, pad)?;
            h = tape.add_bias(c, kb)?;
        }
        for s in 0..self.cfg.stages() {
            let skip = skips[self.cfg.stages() - 1 - s];
            let t_up = tape.shape(skip)[0];
            let up = tape.interpolate_time(h, t_up)?;
            let w = p.get(&self.name(&format!("dec{s}.gcn_w")))?;
            let m = p.get(&self.name(&format!("dec{s}.mask")))?;
            let g = spatial_graph_conv(tape, up, normalized, m, w)?;
            h = tape.relu(g);
            if self.cfg.skip_connections {
                h = tape.add(h, skip)?;
            }
        }
        tape.mean_axis(h, 1)
    }

    /// Multiply-accumulate count for a `t`-frame input.
    pub fn macs(&self, t: usize) -> u64 {
        let v = self.num_nodes as u64;
        let k = self.cfg.temporal_kernel as u64;
        let mut total = 0u64;
        let mut t_cur = t as u64;
        let mut c_in = self.in_channels as u64;
        for &c in &self.cfg.channels {
            let c = c as u64;
            total += t_cur * (v * v * c_in + v * c_in * c);
            t_cur /= 2;
            total += t_cur * v * k * c * c;
            c_in = c;
        }
        for s in 0..self.cfg.stages() {
            let (ci, co) = self.decoder_widths(s);
            t_cur *= 2;
            total += t_cur * (v * v * ci as u64 + v * ci as u64 * co as u64);
        }
        total
    }
}
