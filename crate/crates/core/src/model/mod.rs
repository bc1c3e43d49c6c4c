//! Decoder-only transformer over six-field events.
//!
//! Each input event is embedded as the sum of six per-field embeddings plus a
//! learned absolute position embedding. A stack of pre-norm causal
//! self-attention blocks follows, and six independent linear heads read the
//! final hidden state to predict the next event's fields.
//!
//! Gradients are derived by hand (see [`forward`]); [`gradcheck`] verifies
//! them against central finite differences.

pub mod forward;
pub mod gradcheck;
pub mod inference;
pub mod loss;

use std::iter::Sum;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, NdFloat};
use num_traits::FromPrimitive;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::{Field, FieldVocab};
use crate::error::{Error, Result};

pub use forward::{Batch, ForwardOutput};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use inference::InferenceSession;
pub use loss::{FieldLosses, LossReport};

/// Floating-point element type of a model (f32 for training, f64 for checks).
pub trait Real: NdFloat + FromPrimitive + Sum + Default {}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn real<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("finite constant")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub feedforward_dim: usize,
    pub max_len: usize,
    pub vocab_sizes: [usize; 6],
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

impl ModelConfig {
    /// Small configuration suitable for CPU training.
    pub fn desk() -> Self {
        ModelConfig {
            layers: 2,
            model_dim: 64,
            heads: 4,
            feedforward_dim: 256,
            max_len: 1024,
            vocab_sizes: FieldVocab::SIZES,
            dropout: 0.1,
        }
    }

    /// The published architecture: 6 blocks, width 512, 8 heads.
    pub fn full_scale() -> Self {
        ModelConfig {
            layers: 6,
            model_dim: 512,
            heads: 8,
            feedforward_dim: 2048,
            max_len: 1024,
            vocab_sizes: FieldVocab::SIZES,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.vocab_sizes.contains(&0) {
            return Err(Error::Config("vocabulary sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    /// Applies a `key=value` override (as used by the CLI).
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || Error::Config(format!("invalid value {value:?} for {key}"));
        match key {
            "layers" => self.layers = value.parse().map_err(|_| bad())?,
            "model_dim" => self.model_dim = value.parse().map_err(|_| bad())?,
            "heads" => self.heads = value.parse().map_err(|_| bad())?,
            "feedforward_dim" => self.feedforward_dim = value.parse().map_err(|_| bad())?,
            "max_len" => self.max_len = value.parse().map_err(|_| bad())?,
            "dropout" => self.dropout = value.parse().map_err(|_| bad())?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub ln1_gain: Array1<F>,
    pub ln1_bias: Array1<F>,
    /// Fused query/key/value projection, `[d, 3d]`.
    pub qkv_weight: Array2<F>,
    pub qkv_bias: Array1<F>,
    pub out_weight: Array2<F>,
    pub out_bias: Array1<F>,
    pub ln2_gain: Array1<F>,
    pub ln2_bias: Array1<F>,
    pub ff_in_weight: Array2<F>,
    pub ff_in_bias: Array1<F>,
    pub ff_out_weight: Array2<F>,
    pub ff_out_bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    /// One `[vocab, d]` table per field.
    pub field_embeddings: Vec<Array2<F>>,
    /// `[max_len, d]`.
    pub positional: Array2<F>,
    pub layers: Vec<LayerParams<F>>,
    pub final_gain: Array1<F>,
    pub final_bias: Array1<F>,
    /// One `[d, vocab]` projection per field.
    pub head_weights: Vec<Array2<F>>,
    pub head_biases: Vec<Array1<F>>,
}

macro_rules! layer_tensors {
    ($layer:expr, $prefix:expr, $push:ident, $view:ident) => {{
        let l = $layer;
        $push(format!("{}.ln1.gain", $prefix), l.ln1_gain.$view().into_dyn());
        $push(format!("{}.ln1.bias", $prefix), l.ln1_bias.$view().into_dyn());
        $push(format!("{}.attn.qkv.weight", $prefix), l.qkv_weight.$view().into_dyn());
        $push(format!("{}.attn.qkv.bias", $prefix), l.qkv_bias.$view().into_dyn());
        $push(format!("{}.attn.out.weight", $prefix), l.out_weight.$view().into_dyn());
        $push(format!("{}.attn.out.bias", $prefix), l.out_bias.$view().into_dyn());
        $push(format!("{}.ln2.gain", $prefix), l.ln2_gain.$view().into_dyn());
        $push(format!("{}.ln2.bias", $prefix), l.ln2_bias.$view().into_dyn());
        $push(format!("{}.ff.in.weight", $prefix), l.ff_in_weight.$view().into_dyn());
        $push(format!("{}.ff.in.bias", $prefix), l.ff_in_bias.$view().into_dyn());
        $push(format!("{}.ff.out.weight", $prefix), l.ff_out_weight.$view().into_dyn());
        $push(format!("{}.ff.out.bias", $prefix), l.ff_out_bias.$view().into_dyn());
    }};
}

macro_rules! all_tensors {
    ($self:expr, $push:ident, $view:ident, $iter:ident) => {{
        for (field, t) in Field::ALL.iter().zip($self.field_embeddings.$iter()) {
            $push(format!("embed.{}", field.name()), t.$view().into_dyn());
        }
        $push("embed.positional".to_string(), $self.positional.$view().into_dyn());
        for (i, layer) in $self.layers.$iter().enumerate() {
            layer_tensors!(layer, format!("layer{i}"), $push, $view);
        }
        $push("final_norm.gain".to_string(), $self.final_gain.$view().into_dyn());
        $push("final_norm.bias".to_string(), $self.final_bias.$view().into_dyn());
        for (field, t) in Field::ALL.iter().zip($self.head_weights.$iter()) {
            $push(format!("head.{}.weight", field.name()), t.$view().into_dyn());
        }
        for (field, t) in Field::ALL.iter().zip($self.head_biases.$iter()) {
            $push(format!("head.{}.bias", field.name()), t.$view().into_dyn());
        }
    }};
}

impl<F: Real> Params<F> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.model_dim;
        let ff = config.feedforward_dim;
        let layer = || LayerParams {
            ln1_gain: Array1::zeros(d),
            ln1_bias: Array1::zeros(d),
            qkv_weight: Array2::zeros((d, 3 * d)),
            qkv_bias: Array1::zeros(3 * d),
            out_weight: Array2::zeros((d, d)),
            out_bias: Array1::zeros(d),
            ln2_gain: Array1::zeros(d),
            ln2_bias: Array1::zeros(d),
            ff_in_weight: Array2::zeros((d, ff)),
            ff_in_bias: Array1::zeros(ff),
            ff_out_weight: Array2::zeros((ff, d)),
            ff_out_bias: Array1::zeros(d),
        };
        Params {
            field_embeddings: config.vocab_sizes.iter().map(|&v| Array2::zeros((v, d))).collect(),
            positional: Array2::zeros((config.max_len, d)),
            layers: (0..config.layers).map(|_| layer()).collect(),
            final_gain: Array1::zeros(d),
            final_bias: Array1::zeros(d),
            head_weights: config.vocab_sizes.iter().map(|&v| Array2::zeros((d, v))).collect(),
            head_biases: config.vocab_sizes.iter().map(|&v| Array1::zeros(v)).collect(),
        }
    }

    /// GPT-style initialization: N(0, 0.02) weights, residual projections
    /// scaled by `1/sqrt(2 * layers)`, unit norm gains, zero biases.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(config);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let residual_std = 0.02 / (2.0 * config.layers.max(1) as f64).sqrt();
        let residual = Normal::new(0.0, residual_std).expect("valid std");
        let mut fill = |a: &mut ArrayViewMutD<F>, dist: &Normal<f64>| {
            a.iter_mut().for_each(|x| *x = real(dist.sample(rng)));
        };
        for (name, mut t) in p.named_mut() {
            if name.ends_with(".gain") {
                t.fill(F::one());
            } else if name.ends_with(".bias") {
                continue;
            } else if name.ends_with("attn.out.weight") || name.ends_with("ff.out.weight") {
                fill(&mut t, &residual);
            } else {
                fill(&mut t, &normal);
            }
        }
        p
    }

    /// Every parameter array in a fixed order, with stable names.
    pub fn named(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out = Vec::new();
        let mut push = |n, v| out.push((n, v));
        all_tensors!(self, push, view, iter);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out = Vec::new();
        let mut push = |n, v| out.push((n, v));
        all_tensors!(self, push, view_mut, iter_mut);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other`, elementwise over every array.
    pub fn add_assign(&mut self, other: &Params<F>) {
        for ((_, mut a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.zip_mut_with(&b, |x, &y| *x += y);
        }
    }

    pub fn scale(&mut self, factor: F) {
        for (_, mut a) in self.named_mut() {
            a.mapv_inplace(|x| x * factor);
        }
    }

    pub fn cast<G: Real>(&self, config: &ModelConfig) -> Params<G> {
        let mut out = Params::<G>::zeros(config);
        for ((_, mut dst), (_, src)) in out.named_mut().into_iter().zip(self.named()) {
            dst.zip_mut_with(&src, |d, &s| {
                *d = G::from_f64(s.to_f64().expect("float")).expect("float")
            });
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// A configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mmt<F> {
    pub config: ModelConfig,
    pub params: Params<F>,
}

impl<F: Real> Mmt<F> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, rng);
        Ok(Mmt { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Params<F>) -> Result<Self> {
        config.validate()?;
        let expected = Params::<F>::zeros(&config);
        for ((name, want), (_, got)) in expected.named().iter().zip(params.named()) {
            if want.shape() != got.shape() {
                return Err(Error::Contract(format!(
                    "parameter {name} has shape {:?}, config implies {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(Mmt { config, params })
    }

    pub fn vocab_size(&self, field: Field) -> usize {
        self.config.vocab_sizes[field.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn named_arrays_cover_config() {
        let config = ModelConfig {
            layers: 2,
            model_dim: 16,
            heads: 4,
            feedforward_dim: 32,
            max_len: 10,
            ..ModelConfig::desk()
        };
        let p = Params::<f32>::zeros(&config);
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 6 + 1 + 2 * 12 + 2 + 12);
        assert_eq!(names[0], "embed.type");
        assert!(names.contains(&"layer1.attn.qkv.weight".to_string()));
        assert_eq!(names.last().unwrap(), "head.instrument.bias");
        let unique: std::collections::BTreeSet<&String> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        let vocab: usize = FieldVocab::SIZES.iter().sum();
        let per_layer = 2 * 16 + 16 * 48 + 48 + 16 * 16 + 16 + 2 * 16 + 16 * 32 + 32 + 32 * 16 + 16;
        let expected = vocab * 16 + 10 * 16 + 2 * per_layer + 2 * 16 + 16 * vocab + vocab;
        assert_eq!(p.num_parameters(), expected);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let config = ModelConfig {
            model_dim: 10,
            heads: 4,
            ..ModelConfig::desk()
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let config = ModelConfig {
            max_len: 8,
            ..ModelConfig::desk()
        };
        let a = Mmt::<f32>::new(config.clone(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = Mmt::<f32>::new(config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.params.layers[0].ln1_gain.iter().all(|&g| g == 1.0));
    }
}
