use serde::Serialize;

use super::{FusionStrategy, Mmgcn, ModelConfig};
use crate::error::Result;
use crate::fusion::StubVisualEncoder;

/// `(T_v for a 120-frame clip, GFLOPs)` of the reference architecture at
/// ratios 30:1, 30:2 and 30:30. Documentation only; the counter here models
/// a far smaller network.
pub const REFERENCE_GFLOPS: [(usize, f64); 3] = [(4, 131.0), (8, 220.0), (120, 2687.3)];

/// Multiply-accumulate counts per branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CostBreakdown {
    pub t_m: usize,
    pub t_v: usize,
    pub visual_encoder: u64,
    pub gcn: u64,
    pub refine: u64,
    pub classifier: u64,
    pub total: u64,
}

fn classifier_macs(t: usize, c: usize, k: usize, kernel: usize) -> u64 {
    let (t, c, k, kernel) = (t as u64, c as u64, k as u64, kernel as u64);
    t * (kernel * c * (c / 2) + (c / 2) * k)
}

/// Analytic count over every affine, convolution and graph-convolution
/// layer. The visual encoder runs once per visual frame at the configured
/// frame size.
pub fn estimate_flops(cfg: &ModelConfig, t_m: usize, t_v: usize) -> Result<CostBreakdown> {
    let model = Mmgcn::new(cfg.clone())?;
    cfg.gcn.check_length(t_m)?;
    let visual = StubVisualEncoder::new("visual", cfg.visual_encoder, cfg.visual_width)?.macs(t_v);
    let gcn = model.gcn.macs(t_m);
    let refine = model.refine.as_ref().map_or(0, |r| r.macs(t_v));
    let g = cfg.gcn.output_width();
    let f = cfg.refinement.fused_width;
    let (k, kc) = (cfg.num_classes, cfg.classifier_kernel);
    let classifier = match cfg.fusion {
        FusionStrategy::Early => classifier_macs(t_m, g, k, kc),
        FusionStrategy::Mid => classifier_macs(t_m, g + f, k, kc),
        FusionStrategy::Late => classifier_macs(t_m, g, k, kc) + classifier_macs(t_m, f, k, kc),
        FusionStrategy::MidLate => classifier_macs(t_m, g + f, k, kc) + classifier_macs(t_m, f, k, kc),
    };
    Ok(CostBreakdown {
        t_m,
        t_v,
        visual_encoder: visual,
        gcn,
        refine,
        classifier,
        total: visual + gcn + refine + classifier,
    })
}
