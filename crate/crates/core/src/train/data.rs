//! Datasets on disk, seeded splits, augmentation and batching.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::codec::io::read_event_csv;
use crate::codec::{Event, EventSequence, EventType, NoteOrder};
use crate::error::{Error, Result};
use crate::model::Batch;

pub const MANIFEST: &str = "manifest.txt";

/// Pitch shifts drawn during augmentation, in semitones.
pub const PITCH_SHIFTS: std::ops::RangeInclusive<i32> = -5..=6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<EventSequence>,
    pub valid: Vec<EventSequence>,
    pub test: Vec<EventSequence>,
}

/// Relative paths listed in `dir/manifest.txt`, one per line.
pub fn read_manifest(dir: &Path) -> Result<Vec<PathBuf>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(PathBuf::from)
        .collect())
}

pub fn write_manifest(dir: &Path, entries: &[PathBuf]) -> Result<()> {
    let path = dir.join(MANIFEST);
    let mut text = String::new();
    for e in entries {
        text.push_str(&e.to_string_lossy());
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Every sequence listed in the manifest, in manifest order, grammar-checked.
pub fn load_sequences(dir: &Path) -> Result<Vec<EventSequence>> {
    read_manifest(dir)?
        .iter()
        .map(|rel| {
            let path = dir.join(rel);
            let seq = read_event_csv(&path)?;
            seq.validate(NoteOrder::BeatMonotone)
                .map_err(|e| Error::format(&path, e.to_string()))?;
            Ok(seq)
        })
        .collect()
}

/// Seeded shuffle of `0..n` cut into train/valid/test by `fractions`.
/// The valid and test sizes are rounded; train takes the remainder.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Config(format!("split fractions {fractions:?} must sum to 1")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed));
    let n_valid = (fractions[1] * n as f64).round() as usize;
    let n_test = ((fractions[2] * n as f64).round() as usize).min(n - n_valid);
    let test = order.split_off(n - n_test);
    let valid = order.split_off(n - n_test - n_valid);
    Ok([order, valid, test])
}

pub fn load_dataset(dir: &Path, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    let all = load_sequences(dir)?;
    let [train, valid, test] = split_indices(all.len(), fractions, seed)?;
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| all[i].clone()).collect();
    Ok(Dataset {
        train: pick(train),
        valid: pick(valid),
        test: pick(test),
    })
}

/// Shifts every pitch by `shift` semitones (dropping notes that leave the
/// MIDI range), then re-bases beats so the note at `origin` (an index into
/// the surviving notes) starts at the first beat; earlier notes are dropped.
pub fn augment_with(seq: &EventSequence, shift: i32, origin: usize) -> EventSequence {
    let shifted: Vec<Event> = seq
        .events
        .iter()
        .filter_map(|e| {
            if !e.is_note() {
                return Some(*e);
            }
            let pitch = i32::from(e.pitch) + shift;
            (1..=128).contains(&pitch).then_some(Event {
                pitch: pitch as u16,
                ..*e
            })
        })
        .collect();
    let origin_beat = shifted
        .iter()
        .filter(|e| e.is_note())
        .nth(origin)
        .map_or(1, |e| e.beat);
    let events = shifted
        .into_iter()
        .filter(|e| !e.is_note() || e.beat >= origin_beat)
        .map(|e| {
            if e.is_note() {
                Event {
                    beat: e.beat - origin_beat + 1,
                    ..e
                }
            } else {
                e
            }
        })
        .collect();
    EventSequence::new(events)
}

/// Random pitch shift in [`PITCH_SHIFTS`] and a random note as beat origin.
pub fn augment<R: Rng + ?Sized>(seq: &EventSequence, rng: &mut R) -> EventSequence {
    let shift = rng.random_range(PITCH_SHIFTS);
    let probe = augment_with(seq, shift, 0);
    let notes = probe.note_count();
    let origin = if notes == 0 { 0 } else { rng.random_range(0..notes) };
    augment_with(seq, shift, origin)
}

/// One training row before batching: events of length at most `max_len`
/// with a loss mask over next-event targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub inputs: Vec<Event>,
    pub targets: Vec<Event>,
    pub mask: Vec<bool>,
}

impl Example {
    /// Positions before padding.
    pub fn real_len(&self) -> usize {
        self.inputs.iter().rposition(|e| *e != Event::PADDING).map_or(0, |i| i + 1)
    }
}

/// Trims notes beyond `max_beat` and events beyond `max_len`, pads to
/// `max_len` and shifts targets by one. Returns `None` for sequences with
/// fewer than two events, which carry no target.
pub fn make_example(seq: &EventSequence, max_len: usize, max_beat: u16) -> Option<Example> {
    let mut events: Vec<Event> = seq
        .events
        .iter()
        .filter(|e| !e.is_note() || e.beat <= max_beat)
        .copied()
        .collect();
    let had_eos = events.last().is_some_and(|e| e.kind == EventType::EndOfSong.code());
    events.truncate(max_len);
    let has_eos = events.last().is_some_and(|e| e.kind == EventType::EndOfSong.code());
    if had_eos && !has_eos && events.len() < max_len {
        events.push(Event::marker(EventType::EndOfSong));
    }
    if events.len() < 2 {
        return None;
    }
    let n = events.len();
    events.resize(max_len + 1, Event::PADDING);
    Some(Example {
        inputs: events[..max_len].to_vec(),
        targets: events[1..].to_vec(),
        mask: (0..max_len).map(|i| i + 1 < n).collect(),
    })
}

/// Stacks examples, dropping padding columns every row shares.
pub fn collate(examples: &[Example]) -> Batch {
    let len = examples.iter().map(Example::real_len).max().unwrap_or(0);
    let mut batch = Batch::default();
    for ex in examples {
        batch.inputs.push(ex.inputs[..len].to_vec());
        batch.targets.push(ex.targets[..len].to_vec());
        batch.mask.push(ex.mask[..len].to_vec());
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn song(beats: &[u16]) -> EventSequence {
        let mut events = vec![
            Event::marker(EventType::StartOfSong),
            Event::instrument(1),
            Event::marker(EventType::StartOfNotes),
        ];
        events.extend(beats.iter().map(|&b| Event::note(b, 1, 61, 8, 1)));
        events.push(Event::marker(EventType::EndOfSong));
        EventSequence::new(events)
    }

    #[test]
    fn identity_augmentation() {
        let s = song(&[1, 5, 9]);
        assert_eq!(augment_with(&s, 0, 0), s);
    }

    #[test]
    fn top_pitch_dropped() {
        let mut s = song(&[1]);
        s.events[3].pitch = 128;
        assert_eq!(augment_with(&s, 6, 0).note_count(), 0);
        assert_eq!(augment_with(&s, -5, 0).notes().next().unwrap().pitch, 123);
    }

    #[test]
    fn rebase_to_second_note() {
        let s = augment_with(&song(&[1, 5, 9]), 0, 1);
        let beats: Vec<u16> = s.notes().map(|n| n.beat).collect();
        assert_eq!(beats, vec![1, 5]);
        assert_eq!(s.len(), 6);
    }

    #[test]
    fn random_augmentation_stays_grammatical() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = song(&[1, 2, 2, 7, 30]);
        s.events[4].pitch = 1;
        s.events[5].pitch = 128;
        for _ in 0..200 {
            let a = augment(&s, &mut rng);
            a.validate(NoteOrder::Canonical).unwrap();
            assert!(a.notes().all(|n| (1..=128).contains(&n.pitch)));
        }
    }

    #[test]
    fn example_padding_and_mask() {
        let s = song(&[1]);
        assert_eq!(s.len(), 5);
        let ex = make_example(&s, 8, 256).unwrap();
        assert_eq!(ex.inputs.len(), 8);
        // Padding is the all-zero event, which is also how start-of-song is coded.
        assert_eq!(ex.inputs[1..].iter().filter(|e| **e == Event::PADDING).count(), 3);
        assert_eq!(ex.mask.iter().filter(|m| **m).count(), 4);
        assert_eq!(ex.targets[0], s.events[1]);
        assert_eq!(ex.real_len(), 5);
    }

    #[test]
    fn long_sequences_truncate() {
        let beats: Vec<u16> = (0..1996).map(|i| 1 + i / 8).collect();
        let s = song(&beats);
        assert_eq!(s.len(), 2000);
        let ex = make_example(&s, 1024, 256).unwrap();
        assert_eq!(ex.real_len(), 1024);
        assert_eq!(ex.mask.iter().filter(|m| **m).count(), 1023);
    }

    #[test]
    fn notes_past_max_beat_removed() {
        let s = song(&[1, 300]);
        let ex = make_example(&s, 16, 256).unwrap();
        assert!(ex.inputs.iter().all(|e| e.beat != 300));
        assert_eq!(ex.real_len(), 5);
        assert_eq!(ex.inputs[4], Event::marker(EventType::EndOfSong));
    }

    #[test]
    fn too_short_is_skipped() {
        let s = EventSequence::new(vec![Event::marker(EventType::StartOfSong)]);
        assert!(make_example(&s, 8, 256).is_none());
    }

    #[test]
    fn collate_trims_shared_padding() {
        let a = make_example(&song(&[1]), 16, 256).unwrap();
        let b = make_example(&song(&[1, 2, 3]), 16, 256).unwrap();
        let batch = collate(&[a, b]);
        assert_eq!(batch.seq_len(), 7);
        batch.validate().unwrap();
    }

    #[test]
    fn split_is_seeded_and_complete() {
        let a = split_indices(100, [0.8, 0.1, 0.1], 3).unwrap();
        let b = split_indices(100, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!(a, b);
        assert_eq!([a[0].len(), a[1].len(), a[2].len()], [80, 10, 10]);
        let mut all: Vec<usize> = a.concat();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_ne!(a, split_indices(100, [0.8, 0.1, 0.1], 4).unwrap());
        assert!(split_indices(10, [0.5, 0.1, 0.1], 0).is_err());
    }
}
