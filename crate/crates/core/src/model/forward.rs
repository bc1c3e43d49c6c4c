//! Full-sequence forward pass with activation caching, and its hand-derived
//! backward pass.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{self, LossReport};
use super::{real, LayerParams, Mmt, Params, Real};
use crate::codec::{Event, Field};
use crate::error::{Error, Result};

/// Equal-length rows of input events with shifted targets and a padding mask.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub inputs: Vec<Vec<Event>>,
    pub targets: Vec<Vec<Event>>,
    pub mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.seq_len();
        if self.targets.len() != self.inputs.len() || self.mask.len() != self.inputs.len() {
            return Err(Error::Contract(format!(
                "batch has {} inputs, {} targets, {} masks",
                self.inputs.len(),
                self.targets.len(),
                self.mask.len()
            )));
        }
        for (i, ((x, y), m)) in self
            .inputs
            .iter()
            .zip(&self.targets)
            .zip(&self.mask)
            .enumerate()
        {
            if x.len() != n || y.len() != n || m.len() != n {
                return Err(Error::Contract(format!(
                    "batch row {i} lengths ({}, {}, {}) differ from {n}",
                    x.len(),
                    y.len(),
                    m.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<F> {
    /// Per field, logits of shape `[batch, len, vocab]`.
    pub logits: Vec<Array3<F>>,
    /// Per sample, per head, the last layer's `[len, len]` attention weights.
    pub attention: Option<Vec<Vec<Array2<F>>>>,
}

pub(crate) struct NormCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

struct HeadCache<F> {
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Array2<F>,
}

struct LayerCache<F> {
    ln1: NormCache<F>,
    normed_in: Array2<F>,
    heads: Vec<HeadCache<F>>,
    attn_concat: Array2<F>,
    attn_drop: Option<Array2<F>>,
    ln2: NormCache<F>,
    normed_mid: Array2<F>,
    ff_pre: Array2<F>,
    ff_act: Array2<F>,
    ff_drop: Option<Array2<F>>,
}

pub(crate) struct SeqCache<F> {
    codes: Vec<[usize; 6]>,
    embed_drop: Option<Array2<F>>,
    layers: Vec<LayerCache<F>>,
    final_norm: NormCache<F>,
    hidden: Array2<F>,
}

impl<F> SeqCache<F> {
    /// Last layer attention weights, one `[n, n]` matrix per head.
    pub(crate) fn last_layer_attention(self) -> Vec<Array2<F>> {
        self.layers
            .into_iter()
            .last()
            .map(|l| l.heads.into_iter().map(|h| h.probs).collect())
            .unwrap_or_default()
    }
}

pub(crate) fn norm_forward<F: Real>(
    x: &Array2<F>,
    gain: &Array1<F>,
    bias: &Array1<F>,
) -> (Array2<F>, NormCache<F>) {
    let d: F = real(x.ncols() as f64);
    let eps: F = real(1e-5);
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<F>() / d;
        *r = F::one() / (var + eps).sqrt();
        let scale = *r;
        row.mapv_inplace(|v| v * scale);
    }
    let y = &xhat * gain + bias;
    (y, NormCache { xhat, rstd })
}

fn norm_backward<F: Real>(
    dy: &Array2<F>,
    cache: &NormCache<F>,
    gain: &Array1<F>,
    dgain: &mut Array1<F>,
    dbias: &mut Array1<F>,
) -> Array2<F> {
    *dbias += &dy.sum_axis(Axis(0));
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    let d: F = real(dy.ncols() as f64);
    let mut dx = dy * gain;
    for ((mut row, xh), &r) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.rstd.iter())
    {
        let mean_g = row.sum() / d;
        let mean_gx = row.iter().zip(xh.iter()).map(|(&g, &x)| g * x).sum::<F>() / d;
        row.zip_mut_with(&xh, |g, &x| *g = (*g - mean_g - x * mean_gx) * r);
    }
    dx
}

const GELU_COEF: f64 = 0.044715;

pub(crate) fn gelu<F: Real>(u: F) -> F {
    let c: F = real((2.0 / std::f64::consts::PI).sqrt());
    let t = (c * (u + real::<F>(GELU_COEF) * u * u * u)).tanh();
    real::<F>(0.5) * u * (F::one() + t)
}

fn gelu_grad<F: Real>(u: F) -> F {
    let c: F = real((2.0 / std::f64::consts::PI).sqrt());
    let k: F = real(GELU_COEF);
    let t = (c * (u + k * u * u * u)).tanh();
    let half: F = real(0.5);
    half * (F::one() + t) + half * u * (F::one() - t * t) * c * (F::one() + real::<F>(3.0) * k * u * u)
}

/// Row-wise softmax restricted to the lower triangle (keys `t <= s`).
pub(crate) fn causal_softmax<F: Real>(scores: &mut Array2<F>) {
    for (s, mut row) in scores.rows_mut().into_iter().enumerate() {
        let max = row
            .iter()
            .take(s + 1)
            .fold(F::neg_infinity(), |m, &v| m.max(v));
        let mut sum = F::zero();
        for (t, v) in row.iter_mut().enumerate() {
            if t <= s {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = F::zero();
            }
        }
        row.iter_mut().take(s + 1).for_each(|v| *v /= sum);
    }
}

fn dropout_mask<F: Real>(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Array2<F> {
    let keep: F = real(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    })
}

impl<F: Real> Mmt<F> {
    fn check_events(&self, events: &[Event]) -> Result<Vec<[usize; 6]>> {
        if events.len() > self.config.max_len {
            return Err(Error::Length {
                len: events.len(),
                max: self.config.max_len,
            });
        }
        events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let codes = e.codes().map(usize::from);
                for field in Field::ALL {
                    let v = self.vocab_size(field);
                    if codes[field.index()] >= v {
                        return Err(Error::Domain(format!(
                            "event {i}: {} code {} outside vocabulary of size {v}",
                            field.name(),
                            codes[field.index()]
                        )));
                    }
                }
                Ok(codes)
            })
            .collect()
    }

    /// Sum of the six field embeddings plus the position embedding, per event.
    pub fn embed(&self, events: &[Event]) -> Result<Array2<F>> {
        let codes = self.check_events(events)?;
        Ok(self.embed_codes(&codes))
    }

    fn embed_codes(&self, codes: &[[usize; 6]]) -> Array2<F> {
        let d = self.config.model_dim;
        let mut h = Array2::zeros((codes.len(), d));
        for (mut row, c) in h.rows_mut().into_iter().zip(codes) {
            for (table, &code) in self.params.field_embeddings.iter().zip(c) {
                row += &table.row(code);
            }
        }
        h += &self.params.positional.slice(s![..codes.len(), ..]);
        h
    }

    /// Forward pass over one sequence. With `dropout`, masks are drawn from
    /// the generator and kept for the backward pass.
    pub(crate) fn forward_seq(
        &self,
        events: &[Event],
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(SeqCache<F>, Vec<Array2<F>>)> {
        let codes = self.check_events(events)?;
        let n = codes.len();
        let d = self.config.model_dim;
        let p = self.config.dropout;
        let use_dropout = p > 0.0 && dropout.is_some();
        let mut draw = |rows, cols| -> Option<Array2<F>> {
            match dropout.as_deref_mut() {
                Some(rng) if use_dropout => Some(dropout_mask(rows, cols, p, rng)),
                _ => None,
            }
        };

        let mut x = self.embed_codes(&codes);
        let embed_drop = draw(n, d);
        if let Some(m) = &embed_drop {
            x *= m;
        }

        let mut layers = Vec::with_capacity(self.params.layers.len());
        for l in &self.params.layers {
            let (cache, x_out) = self.layer_forward(l, x, &mut draw);
            layers.push(cache);
            x = x_out;
        }

        let (hidden, final_norm) = norm_forward(&x, &self.params.final_gain, &self.params.final_bias);
        let logits = self
            .params
            .head_weights
            .iter()
            .zip(&self.params.head_biases)
            .map(|(w, b)| hidden.dot(w) + b)
            .collect();
        Ok((
            SeqCache {
                codes,
                embed_drop,
                layers,
                final_norm,
                hidden,
            },
            logits,
        ))
    }

    fn layer_forward(
        &self,
        l: &LayerParams<F>,
        mut x: Array2<F>,
        draw: &mut impl FnMut(usize, usize) -> Option<Array2<F>>,
    ) -> (LayerCache<F>, Array2<F>) {
        let n = x.nrows();
        let d = self.config.model_dim;
        let dh = self.config.head_dim();
        let scale: F = real(1.0 / (dh as f64).sqrt());

        let (normed_in, ln1) = norm_forward(&x, &l.ln1_gain, &l.ln1_bias);
        let qkv = normed_in.dot(&l.qkv_weight) + &l.qkv_bias;
        let mut attn_concat = Array2::zeros((n, d));
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let cols = h * dh..(h + 1) * dh;
            let q = qkv.slice(s![.., cols.clone()]).to_owned();
            let k = qkv.slice(s![.., d + cols.start..d + cols.end]).to_owned();
            let v = qkv.slice(s![.., 2 * d + cols.start..2 * d + cols.end]).to_owned();
            let mut probs = q.dot(&k.t()) * scale;
            causal_softmax(&mut probs);
            attn_concat.slice_mut(s![.., cols]).assign(&probs.dot(&v));
            heads.push(HeadCache { q, k, v, probs });
        }
        let mut attn_out = attn_concat.dot(&l.out_weight) + &l.out_bias;
        let attn_drop = draw(n, d);
        if let Some(m) = &attn_drop {
            attn_out *= m;
        }
        x += &attn_out;

        let (normed_mid, ln2) = norm_forward(&x, &l.ln2_gain, &l.ln2_bias);
        let ff_pre = normed_mid.dot(&l.ff_in_weight) + &l.ff_in_bias;
        let ff_act = ff_pre.mapv(gelu);
        let mut ff_out = ff_act.dot(&l.ff_out_weight) + &l.ff_out_bias;
        let ff_drop = draw(n, d);
        if let Some(m) = &ff_drop {
            ff_out *= m;
        }
        x += &ff_out;

        (
            LayerCache {
                ln1,
                normed_in,
                heads,
                attn_concat,
                attn_drop,
                ln2,
                normed_mid,
                ff_pre,
                ff_act,
                ff_drop,
            },
            x,
        )
    }

    /// Accumulates parameter gradients for one sequence into `grads`.
    pub(crate) fn backward_seq(&self, cache: &SeqCache<F>, dlogits: &[Array2<F>], grads: &mut Params<F>) {
        let p = &self.params;
        let mut dhidden = Array2::zeros(cache.hidden.raw_dim());
        for (f, dl) in dlogits.iter().enumerate() {
            grads.head_weights[f] += &cache.hidden.t().dot(dl);
            grads.head_biases[f] += &dl.sum_axis(Axis(0));
            dhidden += &dl.dot(&p.head_weights[f].t());
        }
        let mut dx = norm_backward(
            &dhidden,
            &cache.final_norm,
            &p.final_gain,
            &mut grads.final_gain,
            &mut grads.final_bias,
        );

        for ((l, lc), lg) in p
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            dx = self.layer_backward(l, lc, lg, dx);
        }

        if let Some(m) = &cache.embed_drop {
            dx *= m;
        }
        let n = cache.codes.len();
        let mut dpos = grads.positional.slice_mut(s![..n, ..]);
        dpos += &dx;
        for (row, codes) in dx.rows().into_iter().zip(&cache.codes) {
            for (table, &code) in grads.field_embeddings.iter_mut().zip(codes) {
                let mut r = table.row_mut(code);
                r += &row;
            }
        }
    }

    fn layer_backward(
        &self,
        l: &LayerParams<F>,
        c: &LayerCache<F>,
        g: &mut LayerParams<F>,
        mut dx: Array2<F>,
    ) -> Array2<F> {
        let d = self.config.model_dim;
        let dh = self.config.head_dim();
        let scale: F = real(1.0 / (dh as f64).sqrt());

        // Feed-forward residual branch.
        let mut dff = dx.clone();
        if let Some(m) = &c.ff_drop {
            dff *= m;
        }
        g.ff_out_weight += &c.ff_act.t().dot(&dff);
        g.ff_out_bias += &dff.sum_axis(Axis(0));
        let mut dpre = dff.dot(&l.ff_out_weight.t());
        dpre.zip_mut_with(&c.ff_pre, |g, &u| *g *= gelu_grad(u));
        g.ff_in_weight += &c.normed_mid.t().dot(&dpre);
        g.ff_in_bias += &dpre.sum_axis(Axis(0));
        let dnormed = dpre.dot(&l.ff_in_weight.t());
        dx += &norm_backward(&dnormed, &c.ln2, &l.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);

        // Attention residual branch.
        let mut dattn = dx.clone();
        if let Some(m) = &c.attn_drop {
            dattn *= m;
        }
        g.out_weight += &c.attn_concat.t().dot(&dattn);
        g.out_bias += &dattn.sum_axis(Axis(0));
        let dconcat = dattn.dot(&l.out_weight.t());
        let n = dx.nrows();
        let mut dqkv = Array2::zeros((n, 3 * d));
        for (h, hc) in c.heads.iter().enumerate() {
            let cols = h * dh..(h + 1) * dh;
            let dout = dconcat.slice(s![.., cols.clone()]);
            let dprobs = dout.dot(&hc.v.t());
            let dv = hc.probs.t().dot(&dout);
            let mut dscores = Array2::zeros((n, n));
            for s_ in 0..n {
                let prow = hc.probs.row(s_);
                let grow = dprobs.row(s_);
                let inner = (0..=s_).map(|t| prow[t] * grow[t]).sum::<F>();
                for t in 0..=s_ {
                    dscores[[s_, t]] = prow[t] * (grow[t] - inner) * scale;
                }
            }
            let dq = dscores.dot(&hc.k);
            let dk = dscores.t().dot(&hc.q);
            dqkv.slice_mut(s![.., cols.clone()]).assign(&dq);
            dqkv.slice_mut(s![.., d + cols.start..d + cols.end]).assign(&dk);
            dqkv.slice_mut(s![.., 2 * d + cols.start..2 * d + cols.end]).assign(&dv);
        }
        g.qkv_weight += &c.normed_in.t().dot(&dqkv);
        g.qkv_bias += &dqkv.sum_axis(Axis(0));
        let dnormed = dqkv.dot(&l.qkv_weight.t());
        dx += &norm_backward(&dnormed, &c.ln1, &l.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
        dx
    }

    /// Batched forward pass in evaluation mode (no dropout).
    pub fn forward(&self, inputs: &[Vec<Event>], record_attention: bool) -> Result<ForwardOutput<F>> {
        let b = inputs.len();
        let n = inputs.first().map_or(0, Vec::len);
        if let Some(row) = inputs.iter().position(|r| r.len() != n) {
            return Err(Error::Contract(format!(
                "batch row {row} has length {}, expected {n}",
                inputs[row].len()
            )));
        }
        let per_seq: Vec<(SeqCache<F>, Vec<Array2<F>>)> = inputs
            .par_iter()
            .map(|seq| self.forward_seq(seq, None))
            .collect::<Result<_>>()?;

        let mut logits: Vec<Array3<F>> = self
            .config
            .vocab_sizes
            .iter()
            .map(|&v| Array3::zeros((b, n, v)))
            .collect();
        let mut attention = record_attention.then(Vec::new);
        for (i, (cache, seq_logits)) in per_seq.into_iter().enumerate() {
            for (dst, src) in logits.iter_mut().zip(&seq_logits) {
                dst.index_axis_mut(Axis(0), i).assign(src);
            }
            if let Some(att) = attention.as_mut() {
                att.push(cache.last_layer_attention());
            }
        }
        Ok(ForwardOutput { logits, attention })
    }

    /// Loss and parameter gradients for a batch. `dropout_seed` enables
    /// dropout with per-row generators derived from the seed.
    pub fn loss_and_grad(&self, batch: &Batch, dropout_seed: Option<u64>) -> Result<(LossReport, Params<F>)> {
        batch.validate()?;
        let counts = loss::field_counts(&batch.targets, &batch.mask);
        if counts[Field::Type.index()] == 0 {
            return Err(Error::Domain("loss mask selects no positions".into()));
        }
        let mut seeds = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let row_seeds: Vec<Option<u64>> = (0..batch.len())
            .map(|_| seeds.as_mut().map(|r| r.random()))
            .collect();

        let rows: Vec<([f64; 6], Params<F>)> = (0..batch.len())
            .into_par_iter()
            .map(|i| {
                let mut rng = row_seeds[i].map(ChaCha8Rng::seed_from_u64);
                let (cache, logits) = self.forward_seq(&batch.inputs[i], rng.as_mut())?;
                let (sums, dlogits) =
                    loss::seq_loss_grad(&logits, &batch.targets[i], &batch.mask[i], &counts, true);
                let mut grads = Params::zeros(&self.config);
                self.backward_seq(&cache, &dlogits.expect("gradients requested"), &mut grads);
                Ok((sums, grads))
            })
            .collect::<Result<_>>()?;

        let mut total = Params::zeros(&self.config);
        let mut sums = [0.0f64; 6];
        for (row_sums, grads) in &rows {
            total.add_assign(grads);
            for (s, r) in sums.iter_mut().zip(row_sums) {
                *s += r;
            }
        }
        Ok((LossReport::from_sums(sums, counts), total))
    }

    /// Evaluation-mode loss of a batch, without gradients.
    pub fn batch_loss(&self, batch: &Batch) -> Result<LossReport> {
        batch.validate()?;
        let out = self.forward(&batch.inputs, false)?;
        loss::loss(&out.logits, &batch.targets, &batch.mask)
    }
}
