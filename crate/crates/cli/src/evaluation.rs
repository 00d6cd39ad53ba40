//! Prediction and scoring over whole datasets.

use mmgcn::data::{Dataset, DatasetMeta};
use mmgcn::metrics::{evaluate_many, EvalOptions, EvalReport};
use mmgcn::model::{Mmgcn, ModelConfig};
use mmgcn::params::ParamStore;

use crate::error::CliError;
use crate::report::{FullReport, SequenceReport};

/// Reject weights whose configuration cannot run on `meta`.
pub fn check_compatible(cfg: &ModelConfig, meta: &DatasetMeta) -> Result<(), CliError> {
    let mut problems = Vec::new();
    if cfg.num_nodes() != meta.num_nodes() {
        problems.push(format!("model has {} nodes, data has {}", cfg.num_nodes(), meta.num_nodes()));
    }
    if cfg.skeleton != meta.skeleton {
        problems.push("skeleton definitions differ".to_string());
    }
    if cfg.num_classes != meta.num_classes {
        problems.push(format!("model has {} classes, data has {}", cfg.num_classes, meta.num_classes));
    }
    if cfg.visual_width != meta.visual_width {
        problems.push(format!(
            "model expects visual width {}, data has {}",
            cfg.visual_width, meta.visual_width
        ));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!("weights do not fit the dataset: {}", problems.join("; "))))
    }
}

pub fn predict_dataset(model: &Mmgcn, params: &ParamStore, ds: &Dataset) -> mmgcn::Result<Vec<Vec<usize>>> {
    ds.sequences
        .iter()
        .map(|s| model.predict(params, &s.motion, &s.visual))
        .collect()
}

/// Overall report (frames pooled, segment counts summed) plus one report
/// per sequence.
pub fn score(ds: &Dataset, preds: &[Vec<usize>], opts: &EvalOptions) -> mmgcn::Result<FullReport> {
    let k = ds.meta.num_classes;
    let pairs: Vec<(&[usize], &[usize])> = ds
        .sequences
        .iter()
        .zip(preds)
        .map(|(s, p)| (s.labels.as_slice(), p.as_slice()))
        .collect();
    let overall = evaluate_many(&pairs, k, opts)?;
    let sequences = pairs
        .iter()
        .enumerate()
        .map(|(index, pair)| {
            Ok(SequenceReport {
                index,
                report: evaluate_many(std::slice::from_ref(pair), k, opts)?,
            })
        })
        .collect::<mmgcn::Result<_>>()?;
    Ok(FullReport { overall, sequences })
}

pub fn evaluate_model(model: &Mmgcn, params: &ParamStore, ds: &Dataset, opts: &EvalOptions) -> mmgcn::Result<EvalReport> {
    let preds = predict_dataset(model, params, ds)?;
    let k = ds.meta.num_classes;
    let pairs: Vec<(&[usize], &[usize])> = ds
        .sequences
        .iter()
        .zip(&preds)
        .map(|(s, p)| (s.labels.as_slice(), p.as_slice()))
        .collect();
    evaluate_many(&pairs, k, opts)
}
