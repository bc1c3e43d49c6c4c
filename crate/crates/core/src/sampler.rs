//! Constrained autoregressive decoding.
//!
//! One full event is sampled per inference step. The type field is drawn
//! first under a grammar mask (type codes never decrease, the header closes
//! with start-of-notes); for notes the five remaining fields are drawn
//! independently from their own heads, each restricted to its top-k codes,
//! with the beat field floored at the running maximum note beat.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Event, EventSequence, EventType, Field, NoteOrder};
use crate::error::{Error, Result};
use crate::model::{InferenceSession, Mmt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenMode {
    Unconditioned,
    Instruments,
    Continuation,
}

impl GenMode {
    pub fn name(self) -> &'static str {
        match self {
            GenMode::Unconditioned => "unconditioned",
            GenMode::Instruments => "instruments",
            GenMode::Continuation => "continuation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub mode: GenMode,
    pub prompt: Vec<Event>,
    pub max_len: usize,
    pub max_beat: u16,
    pub seed: u64,
    pub restrict_to_declared_instruments: bool,
    /// Take the most likely code of every field instead of sampling.
    pub greedy: bool,
}

impl GenSpec {
    pub fn unconditioned(seed: u64) -> Self {
        GenSpec {
            mode: GenMode::Unconditioned,
            prompt: vec![Event::marker(EventType::StartOfSong)],
            max_len: 1024,
            max_beat: 256,
            seed,
            restrict_to_declared_instruments: false,
            greedy: false,
        }
    }

    /// Prompt of start-of-song, one event per instrument code, start-of-notes.
    pub fn instruments(codes: &[u16], seed: u64) -> Self {
        let mut prompt = vec![Event::marker(EventType::StartOfSong)];
        prompt.extend(codes.iter().map(|&c| Event::instrument(c)));
        prompt.push(Event::marker(EventType::StartOfNotes));
        GenSpec {
            mode: GenMode::Instruments,
            prompt,
            ..Self::unconditioned(seed)
        }
    }

    /// Prompt of the header plus every note in the first `beats` beats.
    pub fn continuation(seq: &EventSequence, beats: u16, seed: u64) -> Self {
        GenSpec {
            mode: GenMode::Continuation,
            prompt: continuation_prompt(seq, beats),
            ..Self::unconditioned(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prompt = EventSequence::new(self.prompt.clone());
        let bad = |msg: String| Err(Error::Prompt(format!("{} prompt: {msg}", self.mode.name())));
        if self.max_len < self.prompt.len() {
            return bad(format!(
                "length {} exceeds max_len {}",
                self.prompt.len(),
                self.max_len
            ));
        }
        match self.mode {
            GenMode::Unconditioned => {
                if self.prompt != [Event::marker(EventType::StartOfSong)] {
                    return bad("must be exactly [start-of-song]".into());
                }
            }
            GenMode::Instruments => {
                if let Err(e) = prompt.validate(NoteOrder::BeatMonotone) {
                    return bad(e.to_string());
                }
                if self.prompt.last() != Some(&Event::marker(EventType::StartOfNotes)) {
                    return bad("must end with start-of-notes".into());
                }
            }
            GenMode::Continuation => {
                if let Err(e) = prompt.validate(NoteOrder::BeatMonotone) {
                    return bad(e.to_string());
                }
                if prompt.ends_with_eos() {
                    return bad("must not contain end-of-song".into());
                }
            }
        }
        Ok(())
    }
}

/// Header events plus all notes whose beat code is at most `beats`.
pub fn continuation_prompt(seq: &EventSequence, beats: u16) -> Vec<Event> {
    seq.events
        .iter()
        .filter(|e| {
            e.kind < EventType::Note.code() || (e.is_note() && e.beat <= beats)
        })
        .copied()
        .collect()
}

/// Number of retained codes for a field: 10% of the vocabulary, rounded up.
pub fn top_k(vocab: usize) -> usize {
    vocab.div_ceil(10).max(1)
}

/// Softmax over the `k` largest logits; every other code gets probability 0.
/// Ties at the cutoff keep the lower code.
pub fn topk_mask(logits: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Domain("top-k needs k >= 1".into()));
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    let kept = &order[..k.min(order.len())];
    let max = kept
        .iter()
        .map(|&i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Degenerate("all retained logits are -inf or non-finite".into()));
    }
    let mut probs = vec![0.0; logits.len()];
    let mut sum = 0.0;
    for &i in kept {
        probs[i] = (logits[i] - max).exp();
        sum += probs[i];
    }
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok(probs)
}

/// Zeroes the probability of every code below `floor` and renormalizes.
pub fn apply_monotonic_constraint(probs: &[f64], floor: usize) -> Result<Vec<f64>> {
    let mut out = probs.to_vec();
    out.iter_mut().take(floor).for_each(|p| *p = 0.0);
    let sum: f64 = out.iter().sum();
    if sum <= 0.0 {
        return Err(Error::ConstraintConflict(format!(
            "no probability mass at or above code {floor}"
        )));
    }
    out.iter_mut().for_each(|p| *p /= sum);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub sequence: EventSequence,
    /// Inference steps whose output produced an event (one per generated event).
    pub decode_steps: usize,
}

impl Generation {
    pub fn generated_events(&self, prompt_len: usize) -> usize {
        self.sequence.len() - prompt_len
    }
}

struct Picker {
    rng: ChaCha8Rng,
    greedy: bool,
}

impl Picker {
    /// Restricts `logits` to codes allowed by `allowed`, then samples from
    /// the top-k of what remains.
    fn pick(&mut self, field: Field, logits: &[f32], allowed: impl Fn(usize) -> bool) -> Result<u16> {
        let masked: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(i, &l)| if allowed(i) { f64::from(l) } else { f64::NEG_INFINITY })
            .collect();
        if masked.iter().all(|l| *l == f64::NEG_INFINITY) {
            return Err(Error::ConstraintConflict(format!(
                "every {} code is excluded by the decoding constraints",
                field.name()
            )));
        }
        let k = if self.greedy { 1 } else { top_k(logits.len()) };
        let probs = topk_mask(&masked, k)?;
        let index = if k == 1 {
            probs.iter().position(|&p| p > 0.0).expect("one code retained")
        } else {
            WeightedIndex::new(&probs)
                .map_err(|e| Error::Degenerate(e.to_string()))?
                .sample(&mut self.rng)
        };
        Ok(index as u16)
    }
}

/// Decodes from `spec.prompt` until end-of-song, the length limit (the
/// smaller of `spec.max_len` and the model context), or a beat past
/// `spec.max_beat`.
pub fn generate(model: &Mmt<f32>, spec: &GenSpec) -> Result<Generation> {
    spec.validate()?;
    let max_len = spec.max_len.min(model.config.max_len);
    if spec.prompt.len() > max_len {
        return Err(Error::Prompt(format!(
            "prompt length {} exceeds model context {max_len}",
            spec.prompt.len()
        )));
    }
    let mut picker = Picker {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        greedy: spec.greedy,
    };
    let mut events = spec.prompt.clone();
    let declared: Vec<u16> = EventSequence::new(events.clone()).declared_instruments();
    let restrict = spec.restrict_to_declared_instruments && !declared.is_empty();
    let mut beat_floor = events.iter().filter(|e| e.is_note()).map(|e| e.beat).max().unwrap_or(1);
    let mut session = InferenceSession::new(model);
    let mut logits = Vec::new();
    for e in &events {
        logits = session.step(e)?;
    }
    let mut decode_steps = 0;

    let note = EventType::Note.code() as usize;
    let son = EventType::StartOfNotes.code() as usize;
    let eos = EventType::EndOfSong.code() as usize;
    while events.len() < max_len {
        decode_steps += 1;
        let last = events.last().expect("prompt is nonempty").kind as usize;
        let header_open = last < son;
        let last_slot = events.len() + 1 == max_len;
        let type_ok = |t: usize| {
            if header_open {
                if last_slot {
                    t == son
                } else {
                    t == EventType::Instrument.code() as usize || t == son
                }
            } else {
                t == note || t == eos
            }
        };
        let view = |f: Field| logits[f.index()].as_slice().expect("contiguous logits");
        let kind = picker.pick(Field::Type, view(Field::Type), type_ok)? as usize;
        let event = if kind == note {
            let beat = picker.pick(Field::Beat, view(Field::Beat), |c| c >= beat_floor as usize)?;
            let position = picker.pick(Field::Position, view(Field::Position), |c| c > 0)?;
            let pitch = picker.pick(Field::Pitch, view(Field::Pitch), |c| c > 0)?;
            let duration = picker.pick(Field::Duration, view(Field::Duration), |c| c > 0)?;
            let instrument = picker.pick(Field::Instrument, view(Field::Instrument), |c| {
                c > 0 && (!restrict || declared.contains(&(c as u16)))
            })?;
            if beat > spec.max_beat {
                events.push(Event::marker(EventType::EndOfSong));
                break;
            }
            beat_floor = beat;
            Event::note(beat, position, pitch, duration, instrument)
        } else if kind == EventType::Instrument.code() as usize {
            Event::instrument(picker.pick(Field::Instrument, view(Field::Instrument), |c| c > 0)?)
        } else {
            Event::marker(EventType::from_code(kind as u16).expect("type code in range"))
        };
        events.push(event);
        if kind == eos || events.len() == max_len {
            break;
        }
        logits = session.step(&event)?;
    }
    Ok(Generation {
        sequence: EventSequence::new(events),
        decode_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model(seed: u64) -> Mmt<f32> {
        let config = ModelConfig {
            layers: 1,
            model_dim: 16,
            heads: 2,
            feedforward_dim: 32,
            max_len: 64,
            ..ModelConfig::desk()
        };
        Mmt::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn k_per_field() {
        let ks: Vec<usize> = Field::ALL.iter().map(|f| top_k(f.vocab_size())).collect();
        assert_eq!(ks, vec![1, 26, 2, 13, 3, 7]);
    }

    #[test]
    fn topk_keeps_largest() {
        let p = topk_mask(&[3.0, 2.0, 1.0, 0.0, -1.0], 2).unwrap();
        let e = 1f64.exp();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert_eq!(&p[2..], &[0.0, 0.0, 0.0]);
        assert!(matches!(
            topk_mask(&[f64::NEG_INFINITY; 3], 2),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn monotonic_constraint() {
        let p = [0.2; 5];
        let c = apply_monotonic_constraint(&p, 3).unwrap();
        assert_eq!(&c[..3], &[0.0; 3]);
        assert!((c[3] - 0.5).abs() < 1e-15 && (c[4] - 0.5).abs() < 1e-15);
        assert_eq!(apply_monotonic_constraint(&p, 0).unwrap(), p.to_vec());
        let beat = [0.0, 0.25, 0.25, 0.25, 0.25];
        let c = apply_monotonic_constraint(&beat, 3).unwrap();
        assert_eq!(c, vec![0.0, 0.0, 0.0, 0.5, 0.5]);
        assert!(matches!(
            apply_monotonic_constraint(&[1.0, 0.0], 1),
            Err(Error::ConstraintConflict(_))
        ));
    }

    #[test]
    fn untrained_model_output_is_grammatical() {
        let m = model(2);
        for seed in 0..20 {
            let spec = GenSpec {
                max_len: 40,
                ..GenSpec::unconditioned(seed)
            };
            let g = generate(&m, &spec).unwrap();
            g.sequence.validate(NoteOrder::BeatMonotone).unwrap();
            assert_eq!(g.sequence.events[0], spec.prompt[0]);
            assert!(g.sequence.ends_with_eos() || g.sequence.len() == 40);
            assert_eq!(g.decode_steps, g.generated_events(1));
        }
    }

    #[test]
    fn header_closes_before_length_limit() {
        let mut m = model(3);
        // Bias the type head hard toward instrument events.
        m.params.head_biases[0][1] = 100.0;
        let spec = GenSpec {
            max_len: 5,
            ..GenSpec::unconditioned(0)
        };
        let g = generate(&m, &spec).unwrap();
        assert_eq!(g.sequence.len(), 5);
        assert_eq!(g.sequence.events[4], Event::marker(EventType::StartOfNotes));
        g.sequence.validate(NoteOrder::BeatMonotone).unwrap();
    }

    #[test]
    fn restricted_instruments() {
        let m = model(4);
        let spec = GenSpec {
            restrict_to_declared_instruments: true,
            max_len: 60,
            ..GenSpec::instruments(&[1], 9)
        };
        let g = generate(&m, &spec).unwrap();
        assert_eq!(&g.sequence.events[..3], &spec.prompt[..]);
        assert!(g.sequence.note_count() > 0);
        assert!(g.sequence.notes().all(|n| n.instrument == 1));
    }

    #[test]
    fn seeded_runs_repeat() {
        let m = model(5);
        let spec = GenSpec {
            max_len: 50,
            ..GenSpec::instruments(&[1, 41], 77)
        };
        assert_eq!(generate(&m, &spec).unwrap(), generate(&m, &spec).unwrap());
    }

    #[test]
    fn beat_limit_ends_song() {
        let mut m = model(6);
        m.params.head_biases[0][3] = 50.0;
        m.params.head_biases[1][200] = 100.0;
        let spec = GenSpec {
            max_beat: 100,
            ..GenSpec::instruments(&[1], 0)
        };
        let g = generate(&m, &spec).unwrap();
        assert_eq!(g.sequence.len(), 4);
        assert!(g.sequence.ends_with_eos());
    }

    #[test]
    fn prompt_checks() {
        let m = model(7);
        let mut spec = GenSpec::unconditioned(0);
        spec.prompt.push(Event::instrument(1));
        assert!(matches!(generate(&m, &spec), Err(Error::Prompt(_))));
        let mut spec = GenSpec::instruments(&[1], 0);
        spec.prompt.pop();
        assert!(matches!(generate(&m, &spec), Err(Error::Prompt(_))));
    }

    #[test]
    fn continuation_prompt_takes_first_beats() {
        let seq = EventSequence::new(vec![
            Event::marker(EventType::StartOfSong),
            Event::instrument(1),
            Event::marker(EventType::StartOfNotes),
            Event::note(1, 1, 60, 4, 1),
            Event::note(4, 1, 62, 4, 1),
            Event::note(5, 1, 64, 4, 1),
            Event::marker(EventType::EndOfSong),
        ]);
        let p = continuation_prompt(&seq, 4);
        assert_eq!(p, seq.events[..5].to_vec());
    }
}
