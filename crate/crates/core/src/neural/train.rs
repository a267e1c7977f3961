use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::Architecture;
use super::model::{BatchRef, CnnModel, Gradients};
use crate::dataset::PairDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, tag};
use crate::scalar::{cast, Scalar};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Rows per forward/backward pass; gradients of a batch are accumulated
    /// over micro-batches, which bounds memory at large batch sizes.
    pub micro_batch: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_hold_epochs: usize,
    /// Per-epoch multiplier once the hold period is over.
    pub lr_decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Share of pairs held out to pick the best epoch.
    pub validation_fraction: f64,
    /// Independent initializations tried when training plateaus.
    pub max_attempts: usize,
    /// Epochs after which a loss still near `ln 2` counts as a plateau.
    pub plateau_epochs: usize,
    pub plateau_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Small-scale CPU settings.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 512,
            micro_batch: 128,
            epochs: 20,
            lr_initial: 1e-3,
            lr_hold_epochs: 5,
            lr_decay_factor: (-0.1f64).exp(),
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-7,
            seed: 0,
            validation_fraction: 0.1,
            max_attempts: 5,
            plateau_epochs: 3,
            plateau_tolerance: 0.01,
        }
    }

    /// Large-batch Gaussian-process schedule.
    pub fn gp_paper() -> Self {
        TrainConfig {
            batch_size: 30_000,
            micro_batch: 256,
            ..TrainConfig::desk()
        }
    }

    /// Small-batch Brown-Resnick schedule.
    pub fn br_paper() -> Self {
        TrainConfig {
            batch_size: 50,
            micro_batch: 50,
            lr_initial: 2e-3,
            ..TrainConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Configuration(msg));
        if self.batch_size == 0 || self.micro_batch == 0 {
            return bad("batch_size and micro_batch must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return bad(format!("lr_initial must be positive, got {}", self.lr_initial));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!(
                "lr_decay_factor must lie in (0, 1], got {}",
                self.lr_decay_factor
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_epsilon <= 0.0 {
            return bad("Adam needs beta1, beta2 in [0, 1) and a positive epsilon".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1".into());
        }
        Ok(())
    }
}

/// Learning rate of a zero-based epoch: constant for the hold period, then
/// multiplied by the decay factor once per epoch.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    let decays = (epoch + 1).saturating_sub(config.lr_hold_epochs) as i32;
    config.lr_initial * config.lr_decay_factor.powi(decays)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub attempt: usize,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Attempt whose weights were kept.
    pub attempt: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub train_pairs: usize,
    pub validation_pairs: usize,
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    m: Gradients<T>,
    v: Gradients<T>,
    step: i32,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &CnnModel<T>, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            step: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step(&mut self, model: &mut CnnModel<T>, grads: &Gradients<T>, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2): (T, T) = (cast(self.beta1), cast(self.beta2));
        let (one, eps) = (T::one(), cast::<T>(self.epsilon));
        let rate: T = cast(lr / c1);
        let c2_sqrt: T = cast(c2.sqrt());
        let params = model.weights.iter_mut().chain(model.biases.iter_mut());
        let grads = grads.weights.iter().chain(&grads.biases);
        let m = self.m.weights.iter_mut().chain(self.m.biases.iter_mut());
        let v = self.v.weights.iter_mut().chain(self.v.biases.iter_mut());
        for (((p, g), m), v) in params.zip(grads).zip(m).zip(v) {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= rate * *m / ((*v).sqrt() / c2_sqrt + eps);
            }
        }
    }
}

/// Dataset flattened into network-ready buffers.
struct Prepared<T> {
    fields: Vec<T>,
    per_field: usize,
    thetas: Vec<T>,
    field_index: Vec<usize>,
    labels: Vec<bool>,
    k: usize,
}

impl<T: Scalar> Prepared<T> {
    fn new(model: &CnnModel<T>, dataset: &PairDataset) -> Result<Self> {
        let per_field = dataset.grid.len();
        let mut fields = Vec::with_capacity(dataset.raw_fields().len());
        for (f, chunk) in dataset.raw_fields().chunks(per_field).enumerate() {
            let p = model
                .prepare_field(chunk)
                .map_err(|e| Error::invalid(format!("field {f} cannot enter the network: {e}")))?;
            fields.extend(p);
        }
        let k = dataset.space.dim();
        let mut thetas = Vec::with_capacity(dataset.len() * k);
        let mut field_index = Vec::with_capacity(dataset.len());
        let mut labels = Vec::with_capacity(dataset.len());
        for p in dataset.pairs() {
            thetas.extend(p.theta.values.iter().map(|&v| cast::<T>(v)));
            field_index.push(p.field_index);
            labels.push(p.label.is_dependent());
        }
        Ok(Prepared {
            fields,
            per_field,
            thetas,
            field_index,
            labels,
            k,
        })
    }

    fn gather(&self, rows: &[usize]) -> (Vec<T>, Vec<T>, Vec<bool>) {
        let mut f = Vec::with_capacity(rows.len() * self.per_field);
        let mut t = Vec::with_capacity(rows.len() * self.k);
        let mut l = Vec::with_capacity(rows.len());
        for &r in rows {
            let fi = self.field_index[r];
            f.extend_from_slice(&self.fields[fi * self.per_field..(fi + 1) * self.per_field]);
            t.extend_from_slice(&self.thetas[r * self.k..(r + 1) * self.k]);
            l.push(self.labels[r]);
        }
        (f, t, l)
    }

    fn mean_loss(&self, model: &CnnModel<T>, rows: &[usize], chunk: usize) -> f64 {
        let total: f64 = rows
            .par_chunks(chunk)
            .map(|c| {
                let (f, t, l) = self.gather(c);
                model.loss(BatchRef { fields: &f, thetas: &t, labels: &l, len: c.len() }) * c.len() as f64
            })
            .collect::<Vec<_>>()
            .into_iter()
            .sum();
        total / rows.len() as f64
    }
}

/// Train the standard architecture for the dataset's grid.
pub fn train<T: Scalar>(dataset: &PairDataset, config: &TrainConfig) -> Result<(CnnModel<T>, TrainLog)> {
    let arch = Architecture::standard(dataset.grid.side, dataset.space.dim())?;
    train_model(dataset, arch, config)
}

/// Minimize the two-class cross-entropy with Adam. Returns the weights
/// with the lowest validation loss (training loss without a validation
/// split), restarting from a fresh initialization when the loss is still
/// at chance level after `plateau_epochs`.
pub fn train_model<T: Scalar>(
    dataset: &PairDataset,
    arch: Architecture,
    config: &TrainConfig,
) -> Result<(CnnModel<T>, TrainLog)> {
    config.validate()?;
    if !dataset.has_second_class() {
        return Err(Error::invalid("training needs both classes; build the second class first"));
    }
    if arch.input_side != dataset.grid.side || arch.param_dim != dataset.space.dim() {
        return Err(Error::invalid(format!(
            "architecture expects side {} and {} parameters, dataset has side {} and {}",
            arch.input_side,
            arch.param_dim,
            dataset.grid.side,
            dataset.space.dim()
        )));
    }
    let transform = dataset.process.input_transform();
    let probe = CnnModel::<T>::new(arch.clone(), transform, config.seed)?;
    let data = Prepared::new(&probe, dataset)?;

    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(config.seed, &[tag::SHUFFLE]));
    let n_val = (config.validation_fraction * n as f64).round() as usize;
    let n_val = if n - n_val < 1 { 0 } else { n_val };
    let (val_rows, train_rows) = order.split_at(n_val);
    let mut train_rows = train_rows.to_vec();

    let mut log = TrainLog {
        train_pairs: train_rows.len(),
        validation_pairs: val_rows.len(),
        best_loss: f64::INFINITY,
        ..TrainLog::default()
    };
    let mut best: Option<CnnModel<T>> = None;
    let chance = std::f64::consts::LN_2 - config.plateau_tolerance;

    for attempt in 0..config.max_attempts {
        let init_seed = if attempt == 0 { config.seed } else { derive_seed(config.seed, &[attempt as u64]) };
        let mut model = CnnModel::<T>::new(arch.clone(), transform, init_seed)?;
        let mut adam = Adam::new(&model, config.beta1, config.beta2, config.adam_epsilon);
        let mut grads = Gradients::zeros_like(&model);
        let mut plateaued = false;

        for epoch in 0..config.epochs {
            let started = Instant::now();
            let lr = lr_at_epoch(config, epoch);
            train_rows.shuffle(&mut stream(config.seed, &[tag::SHUFFLE, attempt as u64, epoch as u64]));
            let mut total = 0.0;
            for batch in train_rows.chunks(config.batch_size) {
                let scale = 1.0 / batch.len() as f64;
                let parts: Vec<(f64, Gradients<T>)> = batch
                    .par_chunks(config.micro_batch)
                    .map(|rows| {
                        let (f, t, l) = data.gather(rows);
                        let mut g = Gradients::zeros_like(&model);
                        let b = BatchRef { fields: &f, thetas: &t, labels: &l, len: rows.len() };
                        let loss = model.accumulate_gradients(b, scale, &mut g);
                        (loss, g)
                    })
                    .collect();
                grads.fill_zero();
                let mut batch_loss = 0.0;
                for (loss, g) in &parts {
                    batch_loss += loss;
                    let dst = grads.weights.iter_mut().chain(grads.biases.iter_mut());
                    for (d, s) in dst.zip(g.weights.iter().chain(&g.biases)) {
                        d.iter_mut().zip(s).for_each(|(a, &b)| *a += b);
                    }
                }
                let finite = grads
                    .weights
                    .iter()
                    .chain(&grads.biases)
                    .all(|t| t.iter().all(|v| v.is_finite()));
                if !batch_loss.is_finite() || !finite {
                    return Err(Error::TrainingDiverged { epoch, loss: batch_loss * scale });
                }
                total += batch_loss;
                adam.step(&mut model, &grads, lr);
            }
            let train_loss = total / train_rows.len() as f64;
            let validation_loss = (!val_rows.is_empty())
                .then(|| data.mean_loss(&model, val_rows, config.micro_batch.max(64)));
            if let Some(v) = validation_loss {
                if !v.is_finite() {
                    return Err(Error::TrainingDiverged { epoch, loss: v });
                }
            }
            log.epochs.push(EpochLog {
                attempt,
                epoch,
                lr,
                train_loss,
                validation_loss,
                seconds: started.elapsed().as_secs_f64(),
            });
            let score = validation_loss.unwrap_or(train_loss);
            if score < log.best_loss {
                log.best_loss = score;
                log.best_epoch = epoch;
                log.attempt = attempt;
                best = Some(model.clone());
            }
            let last_attempt = attempt + 1 == config.max_attempts;
            if epoch + 1 == config.plateau_epochs && train_loss > chance && !last_attempt {
                plateaued = true;
                break;
            }
        }
        if !plateaued {
            break;
        }
        // a plateaued attempt must not win over a later one
        if log.attempt == attempt {
            best = None;
            log.best_loss = f64::INFINITY;
        }
    }
    let model = best.ok_or_else(|| Error::Numeric("training produced no usable weights".into()))?;
    Ok((model, log))
}

/// Mean cross-entropy of a model on a whole dataset.
pub fn dataset_loss<T: Scalar>(model: &CnnModel<T>, dataset: &PairDataset) -> Result<f64> {
    let data = Prepared::new(model, dataset)?;
    let rows: Vec<usize> = (0..dataset.len()).collect();
    Ok(data.mean_loss(model, &rows, 256))
}

/// Classifier probability `h` and dependence label for every pair, in the
/// dataset's canonical order.
pub fn predict_dataset<T: Scalar>(model: &CnnModel<T>, dataset: &PairDataset) -> Result<(Vec<f64>, Vec<bool>)> {
    if dataset.grid.side != model.side() || dataset.space.dim() != model.arch.param_dim {
        return Err(Error::invalid("dataset shape does not match the model"));
    }
    let data = Prepared::new(model, dataset)?;
    let rows: Vec<usize> = (0..dataset.len()).collect();
    let probs = rows
        .par_chunks(256)
        .map(|c| {
            let (f, t, _) = data.gather(c);
            model.logit_batch(&f, &t, c.len())
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .map(crate::calibrate::sigmoid)
        .collect();
    Ok((probs, data.labels.clone()))
}
