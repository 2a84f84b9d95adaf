use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Model;
use crate::autonet::{Adam, StepLr};
use crate::dataset::LabeledExample;
use crate::error::{Error, Result};
use crate::metrics::{metrics_report, MetricsReport};
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Stream id of the minibatch shuffle.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: StepLr,
    pub seed: u64,
    pub theta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            schedule: StepLr::new(3e-4, 20, 0.5),
            seed: 0,
            theta: super::DEFAULT_THETA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.schedule.base_lr.is_finite() && self.schedule.base_lr >= 0.0) {
            return Err(Error::Config("schedule.base_lr must be finite and non-negative".into()));
        }
        if self.schedule.step_size == 0 {
            return Err(Error::Config("schedule.step_size must be positive".into()));
        }
        if !(self.schedule.gamma > 0.0 && self.schedule.gamma <= 1.0) {
            return Err(Error::Config("schedule.gamma must lie in (0, 1]".into()));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Metrics of the final model on the full training set.
    pub final_train: MetricsReport,
}

/// Minibatch Adam with a step schedule. Batches are drawn from a seeded
/// shuffle, so a given seed always yields the same loss sequence.
pub fn train<S: Scalar>(
    model: &mut Model<S>,
    data: &[LabeledExample],
    val: Option<&[LabeledExample]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    model.check_examples(data)?;
    if let Some(v) = val {
        model.check_examples(v)?;
    }

    let mut adam = Adam::<S>::new(cfg.schedule.base_lr);
    let mut shuffle = RngStream::new(cfg.seed, SHUFFLE_STREAM).rng();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    model.zero_grad();

    for epoch in 0..cfg.epochs {
        adam.lr = cfg.schedule.lr(epoch);
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledExample> = idx.iter().map(|&i| &data[i]).collect();
            let x = super::batch_input(&batch)?;
            let y = model.targets(&batch)?;
            let loss = model.accumulate_gradients(&x, &y)?;
            total += loss.as_f64() * batch.len() as f64;
            adam.step(&mut model.params_mut())?;
            model.zero_grad();
        }
        let train_loss = total / data.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::invalid(format!("training diverged at epoch {epoch}")));
        }
        let val = match val {
            Some(v) if !v.is_empty() => Some(evaluate(model, v, cfg.theta, cfg.batch_size)?),
            _ => None,
        };
        let rec = EpochRecord {
            epoch,
            lr: adam.lr,
            train_loss,
            val,
        };
        on_epoch(&rec);
        epochs.push(rec);
    }

    let final_train = evaluate(model, data, cfg.theta, cfg.batch_size)?;
    Ok(TrainLog { epochs, final_train })
}

pub(crate) fn evaluate<S: Scalar>(
    model: &Model<S>,
    data: &[LabeledExample],
    theta: f64,
    batch: usize,
) -> Result<MetricsReport> {
    let pred = model.predict_examples(data, theta, batch)?;
    let truth: Vec<_> = data.iter().map(|e| e.label.clone()).collect();
    metrics_report(&pred, &truth)
}
