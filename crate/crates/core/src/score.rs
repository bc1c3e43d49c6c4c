//! Instrument-tagged note lists in absolute time steps.

use crate::error::{Error, Result};

/// Time steps per quarter note. Every score in this crate uses this grid.
pub const RESOLUTION: u32 = 12;

/// Seconds per beat when a score is rendered or measured (120 BPM).
pub const SECONDS_PER_BEAT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Note {
    pub onset: u32,
    pub pitch: u8,
    pub duration: u32,
    pub program: u8,
}

impl Note {
    pub fn new(onset: u32, pitch: u8, duration: u32, program: u8) -> Result<Self> {
        let note = Note {
            onset,
            pitch,
            duration,
            program,
        };
        note.validate()?;
        Ok(note)
    }

    pub fn end(&self) -> u32 {
        self.onset + self.duration
    }

    pub fn validate(&self) -> Result<()> {
        if self.pitch > 127 {
            return Err(Error::OutOfRange(format!("pitch {} > 127", self.pitch)));
        }
        if self.program > 127 {
            return Err(Error::OutOfRange(format!("program {} > 127", self.program)));
        }
        if self.duration == 0 {
            return Err(Error::OutOfRange("note duration must be at least 1".into()));
        }
        Ok(())
    }
}

/// A drum-free, tempo-free, velocity-free score at [`RESOLUTION`] steps per beat.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MusicScore {
    pub notes: Vec<Note>,
}

impl MusicScore {
    pub fn new(notes: Vec<Note>) -> Result<Self> {
        for note in &notes {
            note.validate()?;
        }
        Ok(MusicScore { notes })
    }

    pub fn resolution(&self) -> u32 {
        RESOLUTION
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    /// Notes ordered by (onset, pitch, duration, program).
    pub fn sorted_notes(&self) -> Vec<Note> {
        let mut notes = self.notes.clone();
        notes.sort();
        notes
    }

    /// Distinct programs in ascending order.
    pub fn programs(&self) -> Vec<u8> {
        let mut programs: Vec<u8> = self.notes.iter().map(|n| n.program).collect();
        programs.sort_unstable();
        programs.dedup();
        programs
    }

    /// Largest note end in steps, 0 for an empty score.
    pub fn end(&self) -> u32 {
        self.notes.iter().map(Note::end).max().unwrap_or(0)
    }

    /// Keeps only notes whose onset lies strictly before `beats` beats.
    pub fn trim_beats(&self, beats: u32) -> MusicScore {
        let limit = beats * RESOLUTION;
        MusicScore {
            notes: self
                .notes
                .iter()
                .copied()
                .filter(|n| n.onset < limit)
                .collect(),
        }
    }

    /// Shifts every pitch by `semitones`, dropping notes that leave 0..=127.
    pub fn transpose(&self, semitones: i32) -> MusicScore {
        MusicScore {
            notes: self
                .notes
                .iter()
                .filter_map(|n| {
                    let pitch = i32::from(n.pitch) + semitones;
                    (0..=127).contains(&pitch).then_some(Note {
                        pitch: pitch as u8,
                        ..*n
                    })
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_duration() {
        assert!(Note::new(0, 60, 0, 0).is_err());
        assert!(Note::new(0, 128, 1, 0).is_err());
        assert!(Note::new(0, 60, 1, 128).is_err());
    }

    #[test]
    fn transpose_drops_out_of_range() {
        let s = MusicScore::new(vec![
            Note::new(0, 127, 12, 0).unwrap(),
            Note::new(0, 60, 12, 0).unwrap(),
        ])
        .unwrap();
        let t = s.transpose(6);
        assert_eq!(t.notes, vec![Note::new(0, 66, 12, 0).unwrap()]);
    }
}
