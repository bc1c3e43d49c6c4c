//! Relative self-attention analysis.
//!
//! For a field `d` and a head, the mean relative attention `gamma_k` is the
//! share of attention (query `s`, key `t < s`) that falls on pairs whose
//! field values differ by `k = x_t - x_s`. The gain subtracts the share a
//! constant attention matrix would give, i.e. the plain pair frequency.
//! Only note events take part; other events have no field values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use serde_json::json;

use crate::checkpoint::Container;
use crate::codec::{Event, EventSequence, Field};
use crate::error::{Error, Result};
use crate::model::Mmt;

/// Fields analysed by default.
pub const ANALYSED_FIELDS: [Field; 3] = [Field::Beat, Field::Position, Field::Pitch];

/// Last-layer attention of one sample, with the events it attended over.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub events: Vec<Event>,
    /// One `[n, n]` row-stochastic, lower-triangular matrix per head.
    pub heads: Vec<Array2<f64>>,
}

impl AttentionTrace {
    pub fn validate(&self) -> Result<()> {
        let n = self.events.len();
        for (h, a) in self.heads.iter().enumerate() {
            if a.shape() != [n, n] {
                return Err(Error::Contract(format!(
                    "head {h} matrix {:?} does not match {n} events",
                    a.shape()
                )));
            }
            for (s, row) in a.rows().into_iter().enumerate() {
                let sum: f64 = row.iter().take(s + 1).sum();
                let bad_entry = row.iter().any(|&v| !(0.0..=1.0 + 1e-9).contains(&v));
                let leaks = row.iter().skip(s + 1).any(|&v| v != 0.0);
                if (sum - 1.0).abs() > 1e-6 || bad_entry || leaks {
                    return Err(Error::Contract(format!(
                        "head {h} row {s} is not a causal probability row"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Runs `model` over each sequence (truncated to its context) and keeps the
/// last layer's attention.
pub fn collect_traces(model: &Mmt<f32>, seqs: &[EventSequence]) -> Result<Vec<AttentionTrace>> {
    seqs.iter()
        .map(|seq| {
            let events: Vec<Event> = seq.events.iter().take(model.config.max_len).copied().collect();
            let out = model.forward(std::slice::from_ref(&events), true)?;
            let heads = out
                .attention
                .and_then(|mut a| a.pop())
                .unwrap_or_default()
                .into_iter()
                .map(|m| m.mapv(f64::from))
                .collect();
            Ok(AttentionTrace { events, heads })
        })
        .collect()
}

/// Stores traces as named arrays `sample{i}/codes` and `sample{i}/head{h}`.
pub fn save_traces(path: impl AsRef<Path>, traces: &[AttentionTrace]) -> Result<()> {
    let heads = traces.first().map_or(0, |t| t.heads.len());
    let mut c = Container::new("attention", json!({ "samples": traces.len(), "heads": heads }));
    for (i, t) in traces.iter().enumerate() {
        let codes: Vec<f32> = t.events.iter().flat_map(|e| e.codes().map(f32::from)).collect();
        c.push(
            format!("sample{i}/codes"),
            ArrayD::from_shape_vec(IxDyn(&[t.events.len(), 6]), codes).expect("shape matches"),
        );
        for (h, a) in t.heads.iter().enumerate() {
            c.push(format!("sample{i}/head{h}"), a.mapv(|v| v as f32).into_dyn());
        }
    }
    c.save(path)
}

pub fn load_traces(path: impl AsRef<Path>) -> Result<Vec<AttentionTrace>> {
    let path = path.as_ref();
    let c = Container::load(path)?;
    let bad = |m: String| Error::format(path, m);
    if c.kind != "attention" {
        return Err(bad(format!("expected attention traces, found {:?}", c.kind)));
    }
    let samples = c.meta["samples"].as_u64().ok_or_else(|| bad("missing sample count".into()))?;
    let heads = c.meta["heads"].as_u64().ok_or_else(|| bad("missing head count".into()))?;
    (0..samples)
        .map(|i| {
            let codes = c
                .get(&format!("sample{i}/codes"))
                .ok_or_else(|| bad(format!("missing sample{i}/codes")))?;
            let events = codes
                .rows()
                .into_iter()
                .map(|r| {
                    let mut e = [0u16; 6];
                    for (d, &v) in e.iter_mut().zip(r.iter()) {
                        *d = v as u16;
                    }
                    Event::from_codes(e)
                })
                .collect();
            let heads = (0..heads)
                .map(|h| {
                    c.get(&format!("sample{i}/head{h}"))
                        .ok_or_else(|| bad(format!("missing sample{i}/head{h}")))?
                        .mapv(f64::from)
                        .into_dimensionality()
                        .map_err(|e| bad(e.to_string()))
                })
                .collect::<Result<_>>()?;
            Ok(AttentionTrace { events, heads })
        })
        .collect()
}

/// Decoded value of `field` for a note event (`None` for other events).
pub fn field_value(e: &Event, field: Field) -> Option<i64> {
    (e.is_note() && field != Field::Type).then(|| i64::from(e.get(field)) - 1)
}

/// Mergeable sums behind the relative-attention statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelAttnSums {
    /// Per head: attention mass per difference.
    pub weighted: Vec<BTreeMap<i64, f64>>,
    /// Per head: total attention mass over counted pairs.
    pub weight_total: Vec<f64>,
    /// Pair count per difference.
    pub pairs: BTreeMap<i64, u64>,
    pub pair_total: u64,
}

impl RelAttnSums {
    pub fn add(&mut self, trace: &AttentionTrace, field: Field) -> Result<()> {
        if self.weighted.is_empty() {
            self.weighted = vec![BTreeMap::new(); trace.heads.len()];
            self.weight_total = vec![0.0; trace.heads.len()];
        } else if self.weighted.len() != trace.heads.len() {
            return Err(Error::Contract(format!(
                "trace has {} heads, earlier traces had {}",
                trace.heads.len(),
                self.weighted.len()
            )));
        }
        let n = trace.events.len();
        for a in &trace.heads {
            if a.shape() != [n, n] {
                return Err(Error::Contract(format!(
                    "attention matrix {:?} does not match {n} events",
                    a.shape()
                )));
            }
        }
        let values: Vec<Option<i64>> = trace.events.iter().map(|e| field_value(e, field)).collect();
        for s in 0..n {
            let Some(xs) = values[s] else { continue };
            for t in 0..s {
                let Some(xt) = values[t] else { continue };
                let k = xt - xs;
                *self.pairs.entry(k).or_default() += 1;
                self.pair_total += 1;
                for (h, a) in trace.heads.iter().enumerate() {
                    let w = a[[s, t]];
                    *self.weighted[h].entry(k).or_default() += w;
                    self.weight_total[h] += w;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &RelAttnSums) -> Result<()> {
        if self.weighted.is_empty() {
            *self = other.clone();
            return Ok(());
        }
        if other.weighted.is_empty() {
            return Ok(());
        }
        if other.weighted.len() != self.weighted.len() {
            return Err(Error::Contract("cannot merge sums with different head counts".into()));
        }
        for (mine, theirs) in self.weighted.iter_mut().zip(&other.weighted) {
            for (k, w) in theirs {
                *mine.entry(*k).or_default() += w;
            }
        }
        for (a, b) in self.weight_total.iter_mut().zip(&other.weight_total) {
            *a += b;
        }
        for (k, c) in &other.pairs {
            *self.pairs.entry(*k).or_default() += c;
        }
        self.pair_total += other.pair_total;
        Ok(())
    }

    pub fn from_traces(traces: &[AttentionTrace], field: Field) -> Result<Self> {
        let mut sums = RelAttnSums::default();
        for t in traces {
            sums.add(t, field)?;
        }
        Ok(sums)
    }

    /// Per-head `gamma_k`.
    pub fn gamma(&self) -> Result<Vec<BTreeMap<i64, f64>>> {
        if self.pair_total == 0 {
            return Err(Error::UndefinedMetric("no note pairs with key before query".into()));
        }
        self.weighted
            .iter()
            .zip(&self.weight_total)
            .enumerate()
            .map(|(h, (w, &total))| {
                if total <= 0.0 {
                    return Err(Error::UndefinedMetric(format!("head {h} puts no weight on note pairs")));
                }
                Ok(w.iter().map(|(k, v)| (*k, v / total)).collect())
            })
            .collect()
    }

    /// Pair frequency of each difference (what a constant matrix yields).
    pub fn baseline(&self) -> BTreeMap<i64, f64> {
        self.pairs
            .iter()
            .map(|(k, c)| (*k, *c as f64 / self.pair_total as f64))
            .collect()
    }
}

pub fn mean_relative_attention(traces: &[AttentionTrace], field: Field) -> Result<Vec<BTreeMap<i64, f64>>> {
    RelAttnSums::from_traces(traces, field)?.gamma()
}

/// `gamma_k` minus the pair frequency of `k`, per head.
pub fn relative_attention_gain(
    gamma: &[BTreeMap<i64, f64>],
    traces: &[AttentionTrace],
    field: Field,
) -> Result<Vec<BTreeMap<i64, f64>>> {
    let sums = RelAttnSums::from_traces(traces, field)?;
    if sums.weighted.len() != gamma.len() {
        return Err(Error::Contract(format!(
            "gamma has {} heads, traces have {}",
            gamma.len(),
            sums.weighted.len()
        )));
    }
    let base = sums.baseline();
    gamma
        .iter()
        .map(|g| {
            if let Some(k) = g.keys().find(|k| !base.contains_key(k)) {
                return Err(Error::Contract(format!("difference {k} never occurs in the traces")));
            }
            Ok(base
                .iter()
                .map(|(k, b)| (*k, g.get(k).copied().unwrap_or(0.0) - b))
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelAttnProfile {
    pub field: Field,
    pub gamma: Vec<BTreeMap<i64, f64>>,
    pub gain: Vec<BTreeMap<i64, f64>>,
}

impl RelAttnProfile {
    pub fn from_sums(field: Field, sums: &RelAttnSums) -> Result<Self> {
        let gamma = sums.gamma()?;
        let base = sums.baseline();
        let gain = gamma
            .iter()
            .map(|g| base.iter().map(|(k, b)| (*k, g.get(k).copied().unwrap_or(0.0) - b)).collect())
            .collect();
        Ok(RelAttnProfile { field, gamma, gain })
    }

    pub fn compute(traces: &[AttentionTrace], field: Field) -> Result<Self> {
        Self::from_sums(field, &RelAttnSums::from_traces(traces, field)?)
    }
}

pub const PROFILE_CSV_HEADER: &str = "field,head,k,gamma,gain";

pub fn profiles_csv(profiles: &[RelAttnProfile]) -> String {
    let mut out = format!("{PROFILE_CSV_HEADER}\n");
    for p in profiles {
        for (h, (g, gain)) in p.gamma.iter().zip(&p.gain).enumerate() {
            for (k, v) in gain {
                let gamma = g.get(k).copied().unwrap_or(0.0);
                writeln!(out, "{},{h},{k},{gamma},{v}", p.field.name()).expect("string write");
            }
        }
    }
    out
}

/// Heatmap of gains: one row per head, one column per difference, red for
/// positive and blue for negative, saturating at the largest magnitude.
pub fn profile_svg(profile: &RelAttnProfile) -> String {
    const CELL: usize = 12;
    const LEFT: usize = 60;
    const TOP: usize = 30;
    let ks: Vec<i64> = {
        let mut ks: Vec<i64> = profile.gain.iter().flat_map(|g| g.keys().copied()).collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    };
    let scale = profile
        .gain
        .iter()
        .flat_map(|g| g.values())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let width = LEFT + CELL * ks.len() + 10;
    let height = TOP + CELL * profile.gain.len() + 30;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .expect("string write");
    writeln!(
        svg,
        r#"<text x="{LEFT}" y="18" font-family="sans-serif" font-size="12">mean relative attention gain: {}</text>"#,
        profile.field.name()
    )
    .expect("string write");
    for (h, gain) in profile.gain.iter().enumerate() {
        let y = TOP + h * CELL;
        writeln!(
            svg,
            r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">head {h}</text>"#,
            y + CELL - 2
        )
        .expect("string write");
        for (c, k) in ks.iter().enumerate() {
            let v = gain.get(k).copied().unwrap_or(0.0);
            let t = if scale > 0.0 { (v.abs() / scale).min(1.0) } else { 0.0 };
            let fade = (255.0 * (1.0 - t)).round() as u8;
            let (class, fill) = if v > 0.0 {
                ("pos", format!("rgb(255,{fade},{fade})"))
            } else if v < 0.0 {
                ("neg", format!("rgb({fade},{fade},255)"))
            } else {
                ("zero", "rgb(255,255,255)".to_string())
            };
            writeln!(
                svg,
                r#"<rect class="{class}" x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}"><title>head {h}, k={k}: {v}</title></rect>"#,
                LEFT + c * CELL
            )
            .expect("string write");
        }
    }
    if let (Some(first), Some(last)) = (ks.first(), ks.last()) {
        let y = TOP + CELL * profile.gain.len() + 16;
        writeln!(
            svg,
            r#"<text x="{LEFT}" y="{y}" font-family="sans-serif" font-size="10">k = {first}</text>"#
        )
        .expect("string write");
        writeln!(
            svg,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="10" text-anchor="end">k = {last}</text>"#,
            LEFT + CELL * ks.len()
        )
        .expect("string write");
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `attention.csv` and one `{field}.svg` per profile into `dir`.
pub fn export_profile(profiles: &[RelAttnProfile], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let csv_path = dir.join("attention.csv");
    std::fs::write(&csv_path, profiles_csv(profiles)).map_err(|e| Error::io(&csv_path, e))?;
    for p in profiles {
        let path = dir.join(format!("{}.svg", p.field.name()));
        std::fs::write(&path, profile_svg(p)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
