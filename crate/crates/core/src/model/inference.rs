//! Incremental decoding with cached keys and values.

use ndarray::{s, Array1, Array2, Axis};

use super::forward::{gelu, norm_forward};
use super::{real, Mmt, Real};
use crate::codec::{Event, Field};
use crate::error::{Error, Result};

/// Feeds one event at a time and returns next-event logits, reusing the
/// keys and values of all earlier positions.
pub struct InferenceSession<'a, F> {
    model: &'a Mmt<F>,
    keys: Vec<Array2<F>>,
    values: Vec<Array2<F>>,
    len: usize,
}

impl<'a, F: Real> InferenceSession<'a, F> {
    pub fn new(model: &'a Mmt<F>) -> Self {
        let d = model.config.model_dim;
        let layers = model.config.layers;
        InferenceSession {
            model,
            keys: vec![Array2::zeros((0, d)); layers],
            values: vec![Array2::zeros((0, d)); layers],
            len: 0,
        }
    }

    /// Number of events consumed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Consumes `event` and returns per-field logits for the next event.
    pub fn step(&mut self, event: &Event) -> Result<Vec<Array1<F>>> {
        let m = self.model;
        let cfg = &m.config;
        if self.len >= cfg.max_len {
            return Err(Error::Length {
                len: self.len + 1,
                max: cfg.max_len,
            });
        }
        let codes = event.codes();
        let mut x = m.params.positional.slice(s![self.len..self.len + 1, ..]).to_owned();
        for (field, table) in Field::ALL.iter().zip(&m.params.field_embeddings) {
            let code = codes[field.index()] as usize;
            if code >= table.nrows() {
                return Err(Error::Domain(format!(
                    "{} code {code} outside vocabulary of size {}",
                    field.name(),
                    table.nrows()
                )));
            }
            let mut row = x.row_mut(0);
            row += &table.row(code);
        }

        let d = cfg.model_dim;
        let dh = cfg.head_dim();
        let scale: F = real(1.0 / (dh as f64).sqrt());
        for (li, l) in m.params.layers.iter().enumerate() {
            let (normed, _) = norm_forward(&x, &l.ln1_gain, &l.ln1_bias);
            let qkv = normed.dot(&l.qkv_weight) + &l.qkv_bias;
            let qkv = qkv.row(0);
            self.keys[li]
                .push_row(qkv.slice(s![d..2 * d]))
                .expect("row width matches");
            self.values[li]
                .push_row(qkv.slice(s![2 * d..]))
                .expect("row width matches");
            let keys = &self.keys[li];
            let values = &self.values[li];
            let mut concat = Array2::zeros((1, d));
            for h in 0..cfg.heads {
                let cols = h * dh..(h + 1) * dh;
                let q = qkv.slice(s![cols.clone()]);
                let mut scores = keys.slice(s![.., cols.clone()]).dot(&q) * scale;
                let max = scores.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
                scores.mapv_inplace(|v| (v - max).exp());
                let sum = scores.sum();
                scores.mapv_inplace(|v| v / sum);
                let out = values.slice(s![.., cols.clone()]).t().dot(&scores);
                concat.slice_mut(s![0, cols]).assign(&out);
            }
            x += &(concat.dot(&l.out_weight) + &l.out_bias);
            let (normed, _) = norm_forward(&x, &l.ln2_gain, &l.ln2_bias);
            let act = (normed.dot(&l.ff_in_weight) + &l.ff_in_bias).mapv(gelu);
            x += &(act.dot(&l.ff_out_weight) + &l.ff_out_bias);
        }
        self.len += 1;

        let (hidden, _) = norm_forward(&x, &m.params.final_gain, &m.params.final_bias);
        Ok(m.params
            .head_weights
            .iter()
            .zip(&m.params.head_biases)
            .map(|(w, b)| (hidden.dot(w) + b).index_axis_move(Axis(0), 0))
            .collect())
    }
}
