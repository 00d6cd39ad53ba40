use std::collections::BTreeMap;
use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax_rows, Mmgcn, ModelConfig};
use crate::augment::{apply_smoothlabelmix, LabelSequence, MixConfig, Sample, SmoothingConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epoch indices at which the learning rate is multiplied by `decay_factor`.
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub smoothing: SmoothingConfig,
    pub mixing: MixConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.9,
            milestones: vec![30, 45],
            decay_factor: 0.1,
            batch_size: 32,
            epochs: 60,
            smoothing: SmoothingConfig::default(),
            mixing: MixConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // zero is accepted as a null step
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "milestones must be strictly increasing, got {:?}",
                self.milestones
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return Err(Error::config(format!("decay factor must be positive, got {}", self.decay_factor)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        self.smoothing.validate()?;
        self.mixing.validate()
    }

    /// `lr₀ · factor^(number of milestones ≤ epoch)`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.learning_rate * self.decay_factor.powi(passed as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean batch loss.
    pub loss: f64,
    /// Framewise accuracy against the argmax of the augmented targets.
    pub train_accuracy: f64,
}

pub const HISTORY_CSV_HEADER: &str = "epoch,learning_rate,loss,train_accuracy";

impl EpochStats {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.learning_rate, self.loss, self.train_accuracy)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub history: Vec<EpochStats>,
}

/// Worker count from `MMGCN_THREADS`; 0 lets the pool pick.
pub fn threads_from_env() -> usize {
    std::env::var("MMGCN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

pub fn train(dataset: &Dataset, mcfg: &ModelConfig, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, mcfg, tcfg, threads_from_env(), |_, _, _| ControlFlow::Continue(()))
}

struct SampleResult {
    loss: f64,
    correct: usize,
    grads: BTreeMap<String, Tensor>,
}

fn sample_step(model: &Mmgcn, params: &ParamStore, s: &Sample) -> Result<SampleResult> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let m = tape.constant(s.motion.clone());
    let v = tape.constant(s.visual.clone());
    let logits = model.forward(&mut tape, &p, m, v)?;
    let loss = tape.cross_entropy(logits, s.labels.probs())?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite training loss {value}")));
    }
    let pred = argmax_rows(tape.value(logits));
    let correct = pred.iter().zip(s.labels.argmax()).filter(|(a, b)| **a == *b).count();
    tape.backward(loss)?;
    Ok(SampleResult {
        loss: value,
        correct,
        grads: p.gradients(&tape),
    })
}

/// Minibatch SGD with momentum and multi-step decay. Each sequence in a
/// batch runs on its own tape, possibly on a worker thread; gradients are
/// summed in batch order, so results do not depend on the thread count.
/// `on_epoch` may stop training early.
pub fn train_with<F>(
    dataset: &Dataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    threads: usize,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochStats, &Mmgcn, &ParamStore) -> ControlFlow<()>,
{
    tcfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::arg("cannot train on an empty dataset"));
    }
    let model = Mmgcn::new(mcfg.clone())?;
    let k = mcfg.num_classes;
    let samples: Vec<Sample> = dataset
        .sequences
        .iter()
        .map(|s| {
            Ok(Sample {
                motion: model.encode_motion(&s.motion)?,
                visual: s.visual.clone(),
                labels: LabelSequence::one_hot(&s.labels, k)?,
            })
        })
        .collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;

    let mut params = model.init_params(tcfg.seed);
    let mut velocity: BTreeMap<String, Tensor> =
        params.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec()))).collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    order_rng.set_stream(1);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    aug_rng.set_stream(2);
    let no_mix = MixConfig {
        enabled: false,
        ..tcfg.mixing
    };

    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..tcfg.epochs {
        let lr = tcfg.learning_rate_at(epoch);
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut batches, mut correct, mut frames) = (0.0, 0usize, 0usize, 0usize);
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            // a trailing single-element batch has no partner to mix with
            let mixing = if batch.len() < 2 { &no_mix } else { &tcfg.mixing };
            let batch = apply_smoothlabelmix(&batch, &tcfg.smoothing, mixing, &mut aug_rng)?;
            let results: Vec<Result<SampleResult>> =
                pool.install(|| batch.par_iter().map(|s| sample_step(&model, &params, s)).collect());
            let scale = 1.0 / batch.len() as f64;
            let mut grad_sum: Option<BTreeMap<String, Tensor>> = None;
            let mut batch_loss = 0.0;
            for (r, s) in results.into_iter().zip(&batch) {
                let r = r?;
                batch_loss += r.loss;
                correct += r.correct;
                frames += s.labels.frames();
                match grad_sum.as_mut() {
                    None => grad_sum = Some(r.grads),
                    Some(acc) => {
                        for (name, g) in r.grads {
                            let a = acc.get_mut(&name).expect("same parameter set");
                            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let grads = grad_sum.expect("non-empty batch");
            for (name, p) in params.iter_mut() {
                let g = &grads[name];
                let v = velocity.get_mut(name).expect("velocity per parameter");
                for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vv = tcfg.momentum * *vv + scale * gv;
                    *pv -= lr * *vv;
                }
            }
            loss_sum += batch_loss * scale;
            batches += 1;
        }
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            loss: loss_sum / batches as f64,
            train_accuracy: correct as f64 / frames as f64,
        };
        let flow = on_epoch(&stats, &model, &params);
        history.push(stats);
        if flow.is_break() {
            break;
        }
    }
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multistep_schedule() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            milestones: vec![2, 4],
            decay_factor: 0.5,
            ..Default::default()
        };
        let lrs: Vec<f64> = (0..6).map(|e| cfg.learning_rate_at(e)).collect();
        assert_eq!(lrs, vec![1.0, 1.0, 0.5, 0.5, 0.25, 0.25]);
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { milestones: vec![5, 5], ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(TrainConfig::default().validate().is_ok());
    }
}
