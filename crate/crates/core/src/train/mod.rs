//! Optimization loop with periodic validation and early stopping.

pub mod data;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{ModelCheckpoint, TrainingState};
use crate::codec::EventSequence;
use crate::error::{Error, Result};
use crate::model::{LossReport, Mmt, ModelConfig, Params};

pub use data::{augment, augment_with, collate, load_dataset, make_example, Dataset, Example};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub data_dir: PathBuf,
    pub split: [f64; 3],
    pub max_len: usize,
    pub max_beat: u16,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub validate_every: u64,
    pub max_steps: u64,
    pub patience: usize,
    pub seed: u64,
    pub augment: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data_dir: PathBuf::from("data"),
            split: [0.8, 0.1, 0.1],
            max_len: 1024,
            max_beat: 256,
            batch_size: 4,
            learning_rate: 1e-3,
            warmup_steps: 100,
            validate_every: 1000,
            max_steps: 200_000,
            patience: 20,
            seed: 0,
            augment: true,
            model: ModelConfig::desk(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.split.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.validate_every == 0 {
            return Err(Error::Config("batch_size and validate_every must be positive".into()));
        }
        if self.max_len > self.model.max_len {
            return Err(Error::Config(format!(
                "max_len {} exceeds the model context {}",
                self.max_len, self.model.max_len
            )));
        }
        self.model.validate()
    }

    /// Applies a `key=value` override, including `model.`-prefixed keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || Error::Config(format!("invalid value {value:?} for {key}"));
        if let Some(k) = key.strip_prefix("model.") {
            return self.model.set(k, value);
        }
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "split" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| p.trim().parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?;
                self.split = parts.try_into().map_err(|_| bad())?;
            }
            "max_len" => self.max_len = value.parse().map_err(|_| bad())?,
            "max_beat" => self.max_beat = value.parse().map_err(|_| bad())?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad())?,
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad())?,
            "warmup_steps" => self.warmup_steps = value.parse().map_err(|_| bad())?,
            "validate_every" => self.validate_every = value.parse().map_err(|_| bad())?,
            "max_steps" => self.max_steps = value.parse().map_err(|_| bad())?,
            "patience" => self.patience = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "augment" => self.augment = value.parse().map_err(|_| bad())?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Adam with a linear learning-rate warmup.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Params<f32>,
    v: Params<f32>,
}

impl Adam {
    pub fn new(config: &ModelConfig, learning_rate: f64, warmup_steps: u64) -> Self {
        Adam {
            learning_rate,
            warmup_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Params::zeros(config),
            v: Params::zeros(config),
        }
    }

    pub fn current_lr(&self) -> f64 {
        if self.warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * ((self.step as f64) / self.warmup_steps as f64).min(1.0)
        }
    }

    pub fn update(&mut self, params: &mut Params<f32>, grads: &Params<f32>) {
        self.step += 1;
        let lr = self.current_lr();
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let step_size = (lr / c1) as f32;
        let c2_sqrt = c2.sqrt() as f32;
        let (b1, b2, eps) = (b1 as f32, b2 as f32, self.eps as f32);
        for (((_, mut p), (_, g)), ((_, mut m), (_, mut v))) in params
            .named_mut()
            .into_iter()
            .zip(grads.named())
            .zip(self.m.named_mut().into_iter().zip(self.v.named_mut()))
        {
            ndarray::Zip::from(&mut p)
                .and(&g)
                .and(&mut m)
                .and(&mut v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step_size * *m / ((*v).sqrt() / c2_sqrt + eps);
                });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    NoImprovement,
    Stop,
}

/// Stops after `patience` consecutive validations without strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn update(&mut self, loss: f64) -> Verdict {
        if self.best.is_none_or(|b| loss < b) {
            self.best = Some(loss);
            self.stale = 0;
            Verdict::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Verdict::Stop
            } else {
                Verdict::NoImprovement
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

pub fn write_log(path: impl AsRef<Path>, rows: &[LogRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut write = || -> csv::Result<()> {
        w.write_record(["step", "train_loss", "valid_loss"])?;
        for r in rows {
            w.write_record([
                r.step.to_string(),
                r.train_loss.to_string(),
                r.valid_loss.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss (the final ones when no
    /// validation set is given).
    pub best: ModelCheckpoint,
    pub last: ModelCheckpoint,
    pub log: Vec<LogRow>,
    pub stopped_early: bool,
}

/// Mean evaluation-mode loss over `seqs`, pooled across batches.
pub fn evaluate_loss(
    model: &Mmt<f32>,
    seqs: &[EventSequence],
    max_len: usize,
    max_beat: u16,
    batch_size: usize,
) -> Result<LossReport> {
    let examples: Vec<Example> = seqs
        .iter()
        .filter_map(|s| make_example(s, max_len, max_beat))
        .collect();
    if examples.is_empty() {
        return Err(Error::Domain("no usable sequences to evaluate".into()));
    }
    let mut sums = [0.0f64; 6];
    let mut counts = [0usize; 6];
    for chunk in examples.chunks(batch_size.max(1)) {
        let r = model.batch_loss(&collate(chunk))?;
        for f in 0..6 {
            sums[f] += r.per_field.0[f] * r.counts[f] as f64;
            counts[f] += r.counts[f];
        }
    }
    Ok(LossReport::from_sums(sums, counts))
}

/// Trains a fresh model on `data.train`, validating on `data.valid`.
/// With `out_dir`, a diagnostic checkpoint is written there if the loss
/// becomes non-finite.
pub fn train(config: &TrainConfig, data: &Dataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let examples: Vec<&EventSequence> = data
        .train
        .iter()
        .filter(|s| make_example(s, config.max_len, config.max_beat).is_some())
        .collect();
    if examples.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Mmt::<f32>::new(config.model.clone(), &mut rng)?;
    let mut opt = Adam::new(&config.model, config.learning_rate, config.warmup_steps);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut log = Vec::new();
    let mut best: Option<ModelCheckpoint> = None;
    let mut order: Vec<usize> = Vec::new();
    let mut stopped_early = false;
    let mut step = 0u64;

    while step < config.max_steps {
        let mut rows = Vec::with_capacity(config.batch_size);
        while rows.len() < config.batch_size {
            if order.is_empty() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut rng);
            }
            let seq = examples[order.pop().expect("refilled")];
            let seq = if config.augment {
                augment(seq, &mut rng)
            } else {
                seq.clone()
            };
            if let Some(ex) = make_example(&seq, config.max_len, config.max_beat) {
                rows.push(ex);
            }
        }
        let batch = collate(&rows);
        let dropout_seed: u64 = rng.random();
        step += 1;
        let (report, grads) = model.loss_and_grad(&batch, Some(dropout_seed))?;
        if !report.total.is_finite() || !grads.all_finite() {
            if let Some(dir) = out_dir {
                let state = TrainingState {
                    step,
                    best_valid_loss: stopper.best,
                };
                ModelCheckpoint::new(&model, state).save(dir.join("diagnostic.ckpt"))?;
            }
            return Err(Error::NonFinite { step });
        }
        opt.update(&mut model.params, &grads);

        let mut row = LogRow {
            step,
            train_loss: report.total,
            valid_loss: None,
        };
        if step.is_multiple_of(config.validate_every) && !data.valid.is_empty() {
            let valid = evaluate_loss(
                &model,
                &data.valid,
                config.max_len,
                config.max_beat,
                config.batch_size,
            )?
            .total;
            row.valid_loss = Some(valid);
            let verdict = stopper.update(valid);
            if verdict == Verdict::Improved {
                best = Some(ModelCheckpoint::new(
                    &model,
                    TrainingState {
                        step,
                        best_valid_loss: Some(valid),
                    },
                ));
            }
            log.push(row);
            if verdict == Verdict::Stop {
                stopped_early = true;
                break;
            }
            continue;
        }
        log.push(row);
    }

    let last = ModelCheckpoint::new(
        &model,
        TrainingState {
            step,
            best_valid_loss: stopper.best,
        },
    );
    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| last.clone()),
        last,
        log,
        stopped_early,
    })
}
