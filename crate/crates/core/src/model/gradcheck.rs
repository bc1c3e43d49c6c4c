//! Analytic-versus-numeric gradient comparison in double precision.

use ndarray::ArrayViewMutD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use super::{Batch, Mmt, ModelConfig, Params};
use crate::codec::{Event, EventType};
use crate::error::{Error, Result};

/// Magnitudes below this count as absolute rather than relative error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Scales the analytic gradient of this array, as a negative control.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ArrayCheck {
    pub name: String,
    pub elements: usize,
    /// `|a - n| / max(|a|, |n|)` over the whole array, in the Euclidean norm.
    pub rel_error: f64,
    /// Worst single element under [`relative_error`]. Elements whose gradient
    /// is close to the floor are dominated by finite-difference round-off.
    pub max_elementwise_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub arrays: Vec<ArrayCheck>,
    /// Largest per-array relative error.
    pub max_rel_error: f64,
    pub max_elementwise_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failing(&self) -> Vec<&str> {
        self.arrays
            .iter()
            .filter(|a| !a.passed)
            .map(|a| a.name.as_str())
            .collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares backprop gradients with central differences for every element
/// of every parameter array, on a random model and a random batch.
pub fn grad_check(config: &ModelConfig, options: &GradCheckOptions) -> Result<GradCheckReport> {
    if config.layers > 2 || config.model_dim > 16 {
        return Err(Error::Config(
            "gradient check expects at most 2 layers and model_dim <= 16".into(),
        ));
    }
    let config = ModelConfig {
        dropout: 0.0,
        ..config.clone()
    };
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let params = random_params(&config, &mut rng);
    let model = Mmt::from_params(config.clone(), params)?;
    let batch = random_batch(&config, &mut rng);

    let (_, mut grads) = model.loss_and_grad(&batch, None)?;
    if let Some(name) = &options.corrupt {
        let mut found = false;
        for (n, mut g) in grads.named_mut() {
            if n == *name {
                g.mapv_inplace(|v| v * 1.5 + 1e-3);
                found = true;
            }
        }
        if !found {
            return Err(Error::Config(format!("no parameter array named {name}")));
        }
    }

    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads
        .named()
        .into_iter()
        .map(|(_, g)| g.iter().copied().collect())
        .collect();

    let arrays: Vec<ArrayCheck> = names
        .par_iter()
        .enumerate()
        .map(|(idx, name)| {
            let mut probe = model.clone();
            let mut worst = 0.0f64;
            let (mut diff_sq, mut analytic_sq, mut numeric_sq) = (0.0f64, 0.0f64, 0.0f64);
            let len = analytic[idx].len();
            for (j, &a) in analytic[idx].iter().enumerate() {
                let orig = with_element(&mut probe.params, idx, j, |x| *x);
                with_element(&mut probe.params, idx, j, |x| *x = orig + options.step);
                let plus = probe.batch_loss(&batch)?.total;
                with_element(&mut probe.params, idx, j, |x| *x = orig - options.step);
                let minus = probe.batch_loss(&batch)?.total;
                with_element(&mut probe.params, idx, j, |x| *x = orig);
                let numeric = (plus - minus) / (2.0 * options.step);
                worst = worst.max(relative_error(a, numeric));
                diff_sq += (a - numeric).powi(2);
                analytic_sq += a * a;
                numeric_sq += numeric * numeric;
            }
            let scale = analytic_sq.max(numeric_sq).sqrt().max(RELATIVE_ERROR_FLOOR);
            let rel_error = diff_sq.sqrt() / scale;
            Ok(ArrayCheck {
                name: name.clone(),
                elements: len,
                rel_error,
                max_elementwise_error: worst,
                passed: rel_error < options.tolerance,
            })
        })
        .collect::<Result<_>>()?;

    let max_rel_error = arrays.iter().map(|a| a.rel_error).fold(0.0, f64::max);
    let max_elementwise_error = arrays.iter().map(|a| a.max_elementwise_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_elementwise_error,
        passed: arrays.iter().all(|a| a.passed),
        arrays,
        max_rel_error,
        tolerance: options.tolerance,
    })
}

fn with_element<T>(params: &mut Params<f64>, array: usize, index: usize, f: impl FnOnce(&mut f64) -> T) -> T {
    let mut named = params.named_mut();
    let view: &mut ArrayViewMutD<f64> = &mut named[array].1;
    let x = view.iter_mut().nth(index).expect("index in range");
    f(x)
}

/// Parameters drawn wide enough that every nonlinearity is exercised.
fn random_params(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Params<f64> {
    let mut p = Params::<f64>::zeros(config);
    let weight = Normal::new(0.0, 0.3).expect("valid std");
    let gain = Normal::new(1.0, 0.1).expect("valid std");
    for (name, mut t) in p.named_mut() {
        let dist = if name.ends_with(".gain") { &gain } else { &weight };
        t.iter_mut().for_each(|x| *x = dist.sample(rng));
    }
    p
}

/// Two grammatical rows with padding on the shorter one.
fn random_batch(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Batch {
    let len = config.max_len.min(8);
    let mut batch = Batch::default();
    for row in 0..2 {
        let real_len = if row == 0 { len } else { len.saturating_sub(2).max(2) };
        let mut events = vec![
            Event::marker(EventType::StartOfSong),
            Event::instrument(rng.random_range(1..65)),
            Event::marker(EventType::StartOfNotes),
        ];
        let mut beat = 1;
        while events.len() < real_len.max(4) + 1 {
            beat += rng.random_range(0..2);
            events.push(Event::note(
                beat,
                rng.random_range(1..13),
                rng.random_range(1..129),
                rng.random_range(1..24),
                rng.random_range(1..65),
            ));
        }
        events[real_len.max(4)] = Event::marker(EventType::EndOfSong);
        let mut inputs: Vec<Event> = events[..real_len].to_vec();
        let mut targets: Vec<Event> = events[1..=real_len].to_vec();
        let mut mask = vec![true; real_len];
        while inputs.len() < len {
            inputs.push(Event::PADDING);
            targets.push(Event::PADDING);
            mask.push(false);
        }
        batch.inputs.push(inputs);
        batch.targets.push(targets);
        batch.mask.push(mask);
    }
    batch
}
