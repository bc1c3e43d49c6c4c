//! Summed per-field cross entropy.
//!
//! The loss is the sum over the six fields of the mean cross entropy over the
//! positions where that field is a learning target. The type field is a
//! target at every unmasked position; the instrument field at instrument and
//! note targets; the remaining four fields at note targets only, since their
//! zero codes elsewhere mean "undefined".

use ndarray::{Array2, Array3, Axis};

use super::Real;
use crate::codec::{Event, EventType, Field};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldLosses(pub [f64; 6]);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// Sum of the per-field means.
    pub total: f64,
    /// Mean cross entropy per field (0 when the field has no targets).
    pub per_field: FieldLosses,
    /// Number of target positions per field.
    pub counts: [usize; 6],
}

impl LossReport {
    pub(crate) fn from_sums(sums: [f64; 6], counts: [usize; 6]) -> Self {
        let mut per_field = [0.0; 6];
        for ((m, s), &c) in per_field.iter_mut().zip(sums).zip(&counts) {
            if c > 0 {
                *m = s / c as f64;
            }
        }
        LossReport {
            total: per_field.iter().sum(),
            per_field: FieldLosses(per_field),
            counts,
        }
    }

    /// Largest per-field mean among fields that have targets.
    pub fn max_field(&self) -> f64 {
        self.per_field
            .0
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c > 0)
            .map(|(&l, _)| l)
            .fold(0.0, f64::max)
    }
}

/// Whether `field` of `target` contributes to the loss.
pub fn is_target(field: Field, target: &Event) -> bool {
    match field {
        Field::Type => true,
        Field::Instrument => {
            target.kind == EventType::Note.code() || target.kind == EventType::Instrument.code()
        }
        _ => target.kind == EventType::Note.code(),
    }
}

pub fn field_counts(targets: &[Vec<Event>], mask: &[Vec<bool>]) -> [usize; 6] {
    let mut counts = [0usize; 6];
    for (row, m) in targets.iter().zip(mask) {
        for (t, _) in row.iter().zip(m).filter(|(_, &keep)| keep) {
            for field in Field::ALL {
                if is_target(field, t) {
                    counts[field.index()] += 1;
                }
            }
        }
    }
    counts
}

/// Per-field summed cross entropy for one sequence, and optionally the
/// gradient of the batch loss with respect to its logits.
pub(crate) fn seq_loss_grad<F: Real>(
    logits: &[Array2<F>],
    targets: &[Event],
    mask: &[bool],
    counts: &[usize; 6],
    with_grad: bool,
) -> ([f64; 6], Option<Vec<Array2<F>>>) {
    let mut sums = [0.0f64; 6];
    let mut grads: Option<Vec<Array2<F>>> =
        with_grad.then(|| logits.iter().map(|l| Array2::zeros(l.raw_dim())).collect());
    for field in Field::ALL {
        let f = field.index();
        let scale = if counts[f] > 0 {
            F::one() / F::from_usize(counts[f]).expect("count fits")
        } else {
            F::zero()
        };
        for (i, (t, _)) in targets
            .iter()
            .zip(mask)
            .enumerate()
            .filter(|(_, (t, &keep))| keep && is_target(field, t))
        {
            let row = logits[f].row(i);
            let target = t.get(field) as usize;
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let denom: F = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + denom.ln();
            sums[f] += (lse - row[target]).to_f64().expect("float");
            if let Some(g) = grads.as_mut() {
                let mut grow = g[f].row_mut(i);
                for (gv, &v) in grow.iter_mut().zip(row.iter()) {
                    *gv = (v - max).exp() / denom * scale;
                }
                grow[target] -= scale;
            }
        }
    }
    (sums, grads)
}

/// Loss of batched logits `[batch, len, vocab]` per field.
pub fn loss<F: Real>(logits: &[Array3<F>], targets: &[Vec<Event>], mask: &[Vec<bool>]) -> Result<LossReport> {
    if logits.len() != 6 {
        return Err(Error::Contract(format!("expected 6 logit arrays, got {}", logits.len())));
    }
    let b = targets.len();
    if mask.len() != b {
        return Err(Error::Contract(format!("{} masks for {b} target rows", mask.len())));
    }
    for (field, l) in Field::ALL.iter().zip(logits) {
        let shape_ok = l.len_of(Axis(0)) == b
            && targets
                .iter()
                .zip(mask)
                .all(|(t, m)| t.len() == l.len_of(Axis(1)) && m.len() == t.len());
        if !shape_ok {
            return Err(Error::Contract(format!(
                "{} logits shape {:?} does not match the targets",
                field.name(),
                l.shape()
            )));
        }
    }
    let counts = field_counts(targets, mask);
    if counts[Field::Type.index()] == 0 {
        return Err(Error::Domain("loss mask selects no positions".into()));
    }
    let mut sums = [0.0f64; 6];
    for (i, (t, m)) in targets.iter().zip(mask).enumerate() {
        let seq: Vec<Array2<F>> = logits.iter().map(|l| l.index_axis(Axis(0), i).to_owned()).collect();
        let (s, _) = seq_loss_grad(&seq, t, m, &counts, false);
        for (a, b) in sums.iter_mut().zip(s) {
            *a += b;
        }
    }
    Ok(LossReport::from_sums(sums, counts))
}
