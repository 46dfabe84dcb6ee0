//! Huber-loss training with AdamW, evaluation, and seed-repeat summaries.

use rand::seq::SliceRandom;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelConfig};
use crate::ops::{Mode, Tape};
use crate::optim::{AdamW, OptimConfig};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub huber_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            epochs: 30,
            batch_size: 4,
            huber_delta: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |rule: &str| Err(Error::InvalidConfig(rule.to_string()));
        if self.learning_rate <= 0.0 && self.learning_rate != 0.0 {
            return fail("learning_rate must be >= 0");
        }
        if self.epochs < 1 {
            return fail("epochs must be >= 1");
        }
        if self.huber_delta <= 0.0 {
            return fail("huber_delta must be positive");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1");
        }
        Ok(())
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Stacks samples into one batch pair along the batch axis.
fn collate(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let [_, ci, h, w] = samples[0].input.shape();
    let [_, ct, _, _] = samples[0].target.shape();
    let b = samples.len();
    let mut input = Vec::with_capacity(b * ci * h * w);
    let mut target = Vec::with_capacity(b * ct * h * w);
    for s in samples {
        if s.input.shape() != samples[0].input.shape() {
            return Err(Error::ShapeMismatch {
                op: "collate",
                detail: format!("{:?} vs {:?}", s.input.shape(), samples[0].input.shape()),
            });
        }
        input.extend_from_slice(s.input.data());
        target.extend_from_slice(s.target.data());
    }
    Ok((
        Tensor::from_vec([b, ci, h, w], input)?,
        Tensor::from_vec([b, ct, h, w], target)?,
    ))
}

/// One optimizer step over a batch; returns the batch loss.
fn train_step(
    model: &mut Model<f32>,
    optimizer: &mut AdamW<f32>,
    batch: &[&Sample],
    cfg: &TrainConfig,
) -> Result<f64> {
    let (input, target) = collate(batch)?;
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, &input, Mode::Train)?;
    let loss = tape.huber_loss(pass.output, &target, cfg.huber_delta as f32)?;
    let loss_value = tape.value(loss).data()[0] as f64;
    if !loss_value.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss on scene {} direction {}",
            batch[0].scene_id, batch[0].direction
        )));
    }
    let mut grads = tape.backward(loss);
    let param_grads: Vec<Option<Tensor<f32>>> =
        pass.param_vars.iter().map(|&v| grads.take(v)).collect();
    optimizer.step(model.registry_mut(), &param_grads, &cfg.optim())?;
    Ok(loss_value)
}

/// Mean Huber loss over a split in eval mode. The per-sample losses are
/// summed in value order so the result is independent of sample order.
pub fn evaluate(model: &mut Model<f32>, split: &[Sample], delta: f64) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::EmptyDataset("evaluate".into()));
    }
    let mut losses = Vec::with_capacity(split.len());
    for s in split {
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &s.input, Mode::Eval)?;
        let loss = tape.huber_loss(pass.output, &s.target, delta as f32)?;
        losses.push(tape.value(loss).data()[0] as f64);
    }
    losses.sort_by(|a, b| a.total_cmp(b));
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Runs the full training loop: seeded shuffles, mini-batches, one AdamW
/// step per batch, and a train/val loss record per epoch. Returns the
/// optimizer with the history so callers can checkpoint both.
pub fn train_with(
    model: &mut Model<f32>,
    optimizer: &mut AdamW<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    start_epoch: usize,
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("train".into()));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyDataset("val".into()));
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in start_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = rng::stream(cfg.seed, "shuffle", epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut weighted = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = train_step(model, optimizer, &batch, cfg)?;
            weighted += loss * batch.len() as f64;
        }
        let train_loss = weighted / train_set.len() as f64;
        let val_loss = evaluate(model, val_set, cfg.huber_delta)?;
        history.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
    }
    Ok(history)
}

/// Trains a freshly built model from scratch.
pub fn train(
    model: &mut Model<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<Vec<EpochLoss>> {
    let mut optimizer = AdamW::new(model.registry());
    model.reseed_dropout(rng::derive_seed(cfg.seed, "dropout", 0));
    train_with(model, &mut optimizer, train_set, val_set, cfg, 0)
}

#[derive(Clone, Debug)]
pub struct RepeatSummary {
    pub per_seed: Vec<(u64, f64)>,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub mean: f64,
}

/// Trains `n_seeds` fresh models with seeds base..base+n and summarizes the
/// final validation losses.
pub fn repeat_train(
    config: &ModelConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    base_seed: u64,
    n_seeds: usize,
) -> Result<RepeatSummary> {
    if n_seeds < 2 {
        return Err(Error::InvalidArgument {
            op: "repeat_train",
            detail: format!("n_seeds {n_seeds} must be >= 2"),
        });
    }
    let mut per_seed = Vec::with_capacity(n_seeds);
    for k in 0..n_seeds as u64 {
        let seed = base_seed + k;
        let mut model = build_model::<f32>(config, seed)?;
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let history = train(&mut model, train_set, val_set, &run_cfg)?;
        per_seed.push((seed, history.last().expect("epochs >= 1").val_loss));
    }
    let mut sorted: Vec<f64> = per_seed.iter().map(|&(_, l)| l).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(RepeatSummary {
        min: sorted[0],
        max: sorted[n - 1],
        median,
        mean: sorted.iter().sum::<f64>() / n as f64,
        per_seed,
    })
}

/// Mean Huber loss of the constant predictor that outputs the elementwise
/// mean target, the reference for training-smoke checks.
pub fn constant_mean_baseline(split: &[Sample], delta: f64) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::EmptyDataset("baseline".into()));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for s in split {
        sum += s.target.data().iter().map(|&v| v as f64).sum::<f64>();
        count += s.target.len();
    }
    let mean = sum / count as f64;
    let mut loss = 0.0f64;
    for s in split {
        for &t in s.target.data() {
            let e = (mean - t as f64).abs();
            loss += if e <= delta {
                0.5 * e * e
            } else {
                delta * (e - 0.5 * delta)
            };
        }
    }
    Ok(loss / count as f64)
}
