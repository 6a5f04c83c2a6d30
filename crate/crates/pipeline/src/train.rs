//! Mini-batch training with Huber loss and Adam.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uvnet_core::{adam_step, ops, AdamConfig, HuberConfig, Real, Tape, Tensor, UVNet, UVNetConfig};

use crate::augment::AugmentConfig;
use crate::dataset::Sample;
use crate::error::{PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub huber: HuberConfig,
    pub augmentation: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 4,
            adam: AdamConfig::default(),
            huber: HuberConfig::default(),
            augmentation: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(PipelineError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(PipelineError::Config("batch_size must be >= 1".into()));
        }
        self.adam.validate()?;
        self.huber.validate()?;
        self.augmentation.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Weights from the epoch with the lowest validation loss (training loss
    /// when there is no validation set).
    pub best: UVNet<T>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub history: Vec<EpochRecord>,
}

/// CSV with header `epoch,train_loss,val_loss`; a missing validation loss is empty.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        let val = r.val_loss.map(|v| format!("{v:.17e}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:.17e},{}", r.epoch, r.train_loss, val);
    }
    s
}

/// Mean Huber loss over a set, one sample at a time.
pub fn evaluate_loss<T: Real>(net: &UVNet<T>, samples: &[Sample<T>], delta: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let y = net.predict(&s.image)?;
        total += ops::huber_loss(&y, &s.target, T::lit(delta))?.to_f64_lossy();
    }
    Ok(total / samples.len().max(1) as f64)
}

pub fn train<T: Real>(
    train_set: &[Sample<T>],
    val_set: &[Sample<T>],
    model: UVNetConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(PipelineError::EmptyDataset("training"));
    }
    let s = train_set[0].image.shape();
    model.check_spatial(s.height, s.width)?;
    let mut net = UVNet::<T>::build(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let delta = T::lit(cfg.huber.delta);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(UVNet<T>, usize, f64)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut images = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let t = cfg.augmentation.sample(&mut rng);
                images.push(t.apply_image(&train_set[i].image));
                targets.push(t.apply_target(&train_set[i].target));
            }
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::stack(&images)?);
            let y = net.forward(&mut tape, x)?;
            let t = tape.constant(Tensor::stack(&targets)?);
            let loss = tape.huber_loss(y, t, delta)?;
            let value = tape.value(loss).data()[0].to_f64_lossy();
            if !value.is_finite() {
                return Err(PipelineError::Divergence {
                    epoch,
                    step: step + 1,
                });
            }
            tape.backward(loss, net.params_mut())?;
            adam_step(net.params_mut(), &cfg.adam);
            epoch_loss += value * batch.len() as f64;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_loss(&net, val_set, cfg.huber.delta)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        on_epoch(&record);
        history.push(record);
        let score = val_loss.unwrap_or(train_loss);
        if !score.is_finite() {
            return Err(PipelineError::Divergence { epoch, step: 0 });
        }
        if best.as_ref().map_or(true, |b| score < b.2) {
            best = Some((net.clone(), epoch, score));
        }
    }
    let (best, best_epoch, best_loss) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_loss,
        history,
    })
}
