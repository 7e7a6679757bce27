//! SGD with momentum and weight decay, and a generic minibatch loop.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::metrics::mean_class_accuracy;
use crate::error::{shape_err, Error, Result};
use crate::model::{param_layer, Model};
use crate::tensor::{accumulate, Gradients, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Layer (or full parameter) names excluded from updates.
    pub freeze_mask: BTreeSet<String>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 8,
            epochs: 10,
            seed: 0,
            freeze_mask: BTreeSet::new(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight decay {} is negative",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn is_frozen(&self, param: &str) -> bool {
        self.freeze_mask.contains(param) || self.freeze_mask.contains(param_layer(param))
    }
}

/// Per-parameter momentum buffers.
pub type Velocity = Gradients;

/// One update: `v ← μv − lr·(g + λw)`, `w ← w + v`, then `w` is rounded to
/// `f32`. Frozen parameters are skipped. Every gradient is checked for
/// finiteness before anything is modified.
pub fn sgd_step<M: Model + ?Sized>(
    model: &mut M,
    grads: &Gradients,
    velocity: &mut Velocity,
    cfg: &TrainingConfig,
) -> Result<()> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of `{name}`")));
        }
    }
    let mut params = model.named_params_mut();
    for (name, g) in grads {
        if cfg.is_frozen(name) {
            continue;
        }
        let w = params
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, w)| w)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("gradient for unknown parameter `{name}`"))
            })?;
        if w.shape() != g.shape() {
            return Err(shape_err(
                "sgd_step",
                format!("`{name}`: {:?} vs {:?}", w.shape(), g.shape()),
            ));
        }
        let v = velocity
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        for ((wi, vi), gi) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = cfg.momentum * *vi - cfg.learning_rate * (gi + cfg.weight_decay * *wi);
            *wi = (*wi + *vi) as f32 as f64;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Mean class accuracy of the predictions made during the epoch.
    pub mean_class_accuracy: f64,
}

pub(crate) fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (epoch as u64)
            .wrapping_add(1)
            .wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Minibatch SGD over `examples`. `step` returns the loss, the parameter
/// gradients and a score vector whose argmax is the prediction. Batch
/// gradients are summed in order and averaged. Examples are reshuffled each
/// epoch from `(cfg.seed, epoch)`.
pub fn fit<M, X, F>(
    model: &mut M,
    examples: &[X],
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainingConfig,
    mut step: F,
) -> Result<Vec<EpochLog>>
where
    M: Model,
    F: FnMut(&M, &X, usize) -> Result<(f64, Gradients, Tensor)>,
{
    cfg.validate()?;
    if examples.len() != labels.len() {
        return Err(shape_err(
            "fit",
            format!("{} examples, {} labels", examples.len(), labels.len()),
        ));
    }
    if examples.is_empty() && cfg.epochs > 0 {
        return Err(Error::Empty("training set"));
    }
    let mut velocity = Velocity::new();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut preds = Vec::with_capacity(examples.len());
        let mut seen = Vec::with_capacity(examples.len());
        for batch in order.chunks(cfg.batch_size) {
            let mut sum: Option<Gradients> = None;
            for &i in batch {
                let (loss, g, scores) = step(model, &examples[i], labels[i])?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
                }
                total += loss;
                preds.push(scores.argmax());
                seen.push(labels[i]);
                match &mut sum {
                    None => sum = Some(g),
                    Some(s) => accumulate(s, g)?,
                }
            }
            let mut g = sum.unwrap();
            let inv = 1.0 / batch.len() as f64;
            for t in g.values_mut() {
                t.scale(inv);
            }
            sgd_step(model, &g, &mut velocity, cfg).map_err(|e| match e {
                Error::NonFinite(what) => {
                    Error::NonFinite(format!("{what} at epoch {epoch}; epoch aborted"))
                }
                other => other,
            })?;
        }
        let log = EpochLog {
            epoch,
            loss: total / examples.len() as f64,
            mean_class_accuracy: mean_class_accuracy(&preds, &seen, num_classes)?,
        };
        log::info!(
            "epoch {}\tloss {:.5}\tmca {:.4}",
            log.epoch,
            log.loss,
            log.mean_class_accuracy
        );
        logs.push(log);
    }
    Ok(logs)
}
