//! Mini-batch training with decoupled weight decay, evaluation, and resumable
//! training state.

mod adamw;

use serde::{Deserialize, Serialize};

pub use adamw::{adamw_step, AdamWConfig, AdamWState};

use crate::checkpoint::{Checkpoint, TrainProgress};
use crate::diffcore::{Graph, RngStream};
use crate::disentangle::gumbel_noise;
use crate::error::{Error, Result};
use crate::metrics::{EvalPair, MetricsReport};
use crate::model::{build_forward, sample_loss, Model, ModelOutput, PreparedSample, TextLatent};
use crate::scalar::Scalar;

/// Which benchmark a run targets; selects the default matching-loss weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetTag {
    FhmLike,
    MultioffLike,
    #[default]
    Synthetic,
}

impl DatasetTag {
    pub fn default_mu(self) -> f64 {
        match self {
            DatasetTag::FhmLike => 0.05,
            DatasetTag::MultioffLike => 0.03,
            DatasetTag::Synthetic => 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Matching-loss weight; `None` takes the dataset default.
    pub mu: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub dataset: DatasetTag,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            mu: None,
            epochs: 300,
            seed: 0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            dataset: DatasetTag::Synthetic,
        }
    }
}

impl TrainConfig {
    pub fn mu(&self) -> f64 {
        self.mu.unwrap_or_else(|| self.dataset.default_mu())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Contract("batch size must be ≥ 1".into()));
        }
        let mu = self.mu();
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::Contract(format!("mu must be ≥ 0, got {mu}")));
        }
        self.adamw().validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean_pred_loss: f64,
    pub mean_match_loss: f64,
    pub train_accuracy: f64,
}

impl EpochLog {
    pub fn mean_total_loss(&self, mu: f64) -> f64 {
        self.mean_pred_loss + mu * self.mean_match_loss
    }
}

/// A model together with its optimizer state and epoch counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<S> {
    pub model: Model<S>,
    pub config: TrainConfig,
    pub optimizer: AdamWState<S>,
    pub epochs_done: usize,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(mut model: Model<S>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        model.config.mu = config.mu();
        let optimizer = AdamWState::new(&model.params);
        Ok(Self {
            model,
            config,
            optimizer,
            epochs_done: 0,
        })
    }

    /// Continues from a checkpoint that carries training state. `epochs`
    /// replaces the stored target epoch count when given.
    pub fn resume(checkpoint: Checkpoint<S>, epochs: Option<usize>) -> Result<Self> {
        let progress = checkpoint
            .train
            .ok_or_else(|| Error::Contract("checkpoint has no training state to resume".into()))?;
        let mut config = progress.config;
        if let Some(e) = epochs {
            config.epochs = e;
        }
        config.validate()?;
        Ok(Self {
            model: checkpoint.model,
            config,
            optimizer: progress.optimizer,
            epochs_done: progress.epochs_done,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<S> {
        Checkpoint {
            model: self.model.clone(),
            train: Some(TrainProgress {
                config: self.config,
                epochs_done: self.epochs_done,
                optimizer: self.optimizer.clone(),
            }),
        }
    }

    /// One pass over `train` in a seed-and-epoch-determined order. Gradients
    /// of a batch are summed in sample order before each optimizer step.
    pub fn run_epoch(&mut self, train: &[PreparedSample<S>]) -> Result<EpochLog> {
        if train.is_empty() {
            return Err(Error::Contract("training split is empty".into()));
        }
        let epoch = self.epochs_done + 1;
        let epoch_seed = self.config.seed ^ epoch as u64;
        let mut order: Vec<usize> = (0..train.len()).collect();
        RngStream::derive(epoch_seed, "shuffle").shuffle(&mut order);

        let mu = S::of(self.model.config.mu);
        let adamw = self.config.adamw();
        let latent = self.model.config.disentangle.latent;
        let (mut pred_sum, mut match_sum, mut correct) = (0.0, 0.0, 0usize);
        for batch in order.chunks(self.config.batch_size) {
            self.model.params.zero_grads();
            for &i in batch {
                let sample = &train[i];
                let mut rng = RngStream::derive(epoch_seed, &format!("gumbel/{}", sample.id));
                let noise = gumbel_noise(&mut rng, latent);
                let mut g = Graph::new();
                let nodes = build_forward(
                    &mut g,
                    &self.model.params,
                    &self.model.config,
                    &sample.tokens,
                    &sample.features,
                    &noise,
                    &TextLatent::StraightThrough,
                )?;
                let loss = sample_loss(&mut g, &nodes, sample.label, mu)?;
                g.backward(loss.total)?;
                self.model.params.accumulate_grads(&g.param_grads())?;

                pred_sum += g.value(loss.pred).data()[0].to_f64_lossy();
                match_sum += g.value(nodes.l_match).data()[0].to_f64_lossy();
                let y = g.value(nodes.y).data()[0];
                correct += usize::from(self.model.predict(y).as_u8() == sample.label);
            }
            adamw_step(&mut self.model.params, &mut self.optimizer, &adamw)?;
        }
        // gradients are per-batch scratch space, not part of the saved state
        self.model.params.zero_grads();
        self.epochs_done = epoch;
        let n = train.len() as f64;
        Ok(EpochLog {
            epoch,
            mean_pred_loss: pred_sum / n,
            mean_match_loss: match_sum / n,
            train_accuracy: correct as f64 / n,
        })
    }

    /// Runs epochs until `config.epochs` are done, calling `on_epoch` after each.
    pub fn run(
        &mut self,
        train: &[PreparedSample<S>],
        mut on_epoch: impl FnMut(&Self, &EpochLog) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epochs_done < self.config.epochs {
            let log = self.run_epoch(train)?;
            on_epoch(self, &log)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Trains `model` for `config.epochs` epochs on `train`.
pub fn train<S: Scalar>(
    config: TrainConfig,
    model: Model<S>,
    train: &[PreparedSample<S>],
) -> Result<(Model<S>, Vec<EpochLog>)> {
    let mut trainer = Trainer::new(model, config)?;
    let logs = trainer.run(train, |_, _| Ok(()))?;
    Ok((trainer.model, logs))
}

/// Evaluation-mode outputs for every sample, in input order.
pub fn predict_all<S: Scalar>(model: &Model<S>, samples: &[PreparedSample<S>]) -> Result<Vec<ModelOutput<S>>> {
    samples.iter().map(|s| model.forward_eval(s)).collect()
}

/// Metrics of `model` on `samples` at `threshold`.
pub fn evaluate<S: Scalar>(model: &Model<S>, samples: &[PreparedSample<S>], threshold: f64) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Contract("evaluation split is empty".into()));
    }
    let outputs = predict_all(model, samples)?;
    let pairs: Vec<EvalPair> = outputs
        .iter()
        .zip(samples)
        .map(|(o, s)| EvalPair::new(o.y.to_f64_lossy(), s.label))
        .collect();
    MetricsReport::compute(&pairs, threshold)
}
