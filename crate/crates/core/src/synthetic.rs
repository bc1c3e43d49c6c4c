//! Seeded synthetic scores and sequences for tests, demos and benchmarks.

use rand::Rng;

use crate::codec::{Codec, DurationTable, EventSequence, InstrumentMap};
use crate::score::{MusicScore, Note, RESOLUTION};

/// Semitone offsets of the C-major scale.
pub const C_MAJOR: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];

/// MIDI pitch of the `degree`-th C-major scale step above `base` (a C).
pub fn c_major_pitch(base: u8, degree: usize) -> u8 {
    base + 12 * (degree / 7) as u8 + C_MAJOR[degree % 7]
}

/// `songs` ascending C-major scales, one note per beat, `length` beats
/// long. Piano plays from middle C shifted up by the song index in scale
/// degrees; violin doubles it an octave higher.
pub fn scale_corpus(songs: usize, length: usize) -> Vec<EventSequence> {
    let codec = Codec::default();
    (0..songs)
        .map(|s| {
            let mut notes = Vec::with_capacity(2 * length);
            for beat in 0..length {
                let pitch = c_major_pitch(60, s + beat);
                let onset = beat as u32 * RESOLUTION;
                notes.push(Note::new(onset, pitch, RESOLUTION, 0).expect("valid note"));
                notes.push(Note::new(onset, pitch + 12, RESOLUTION, 40).expect("valid note"));
            }
            codec
                .encode(&MusicScore::new(notes).expect("valid score"))
                .expect("scale encodes")
        })
        .collect()
}

/// The fixed memorization task: 8 songs of 24 beats.
pub fn memorization_corpus() -> Vec<EventSequence> {
    scale_corpus(8, 24)
}

/// A random score whose notes are already in canonical form: durations in
/// the table, onsets below 256 beats, programs equal to their instrument's
/// representative.
pub fn random_canonical_score<R: Rng + ?Sized>(rng: &mut R, max_notes: usize) -> MusicScore {
    let map = InstrumentMap::default();
    let durations = DurationTable::default();
    let n = rng.random_range(0..=max_notes);
    let notes = (0..n)
        .map(|_| {
            let instrument = rng.random_range(0..map.len());
            let program = map.representative(instrument).expect("instrument in map");
            let code = rng.random_range(1..=durations.len() as u16);
            Note {
                onset: rng.random_range(0..256 * RESOLUTION),
                pitch: rng.random_range(0..=127),
                duration: durations.get(code).expect("code in table"),
                program,
            }
        })
        .collect();
    MusicScore { notes }
}

/// `notes` random notes over `beats` beats, spread across `programs`.
pub fn dense_score<R: Rng + ?Sized>(rng: &mut R, notes: usize, programs: &[u8], beats: u32) -> MusicScore {
    let durations = DurationTable::default();
    let notes = (0..notes)
        .map(|i| Note {
            onset: rng.random_range(0..beats * RESOLUTION),
            pitch: rng.random_range(36..=96),
            duration: durations.values()[rng.random_range(0..8)],
            program: programs[i % programs.len()],
        })
        .collect();
    MusicScore { notes }
}

/// The compactness corpus: 1000 notes, 4 instruments, 64 beats.
pub fn compactness_score<R: Rng + ?Sized>(rng: &mut R) -> MusicScore {
    dense_score(rng, 1000, &[0, 24, 40, 73], 64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::NoteOrder;

    #[test]
    fn scales_are_canonical_and_distinct() {
        let corpus = memorization_corpus();
        assert_eq!(corpus.len(), 8);
        for s in &corpus {
            s.validate(NoteOrder::Canonical).unwrap();
            assert_eq!(s.len(), 4 + 48 + 1);
            assert_eq!(s.declared_instruments().len(), 2);
        }
        let firsts: Vec<u16> = corpus.iter().map(|s| s.notes().next().unwrap().pitch).collect();
        let mut unique = firsts.clone();
        unique.dedup();
        assert_eq!(unique.len(), 8);
    }

    #[test]
    fn scale_degrees() {
        assert_eq!(c_major_pitch(60, 0), 60);
        assert_eq!(c_major_pitch(60, 6), 71);
        assert_eq!(c_major_pitch(60, 7), 72);
        assert_eq!(c_major_pitch(60, 9), 76);
    }
}
