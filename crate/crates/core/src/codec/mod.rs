//! The six-field event representation.
//!
//! A song is a sequence of events `(type, beat, position, pitch, duration,
//! instrument)`. Code 0 is reserved for "undefined" in every field except
//! type; beat, position, pitch and instrument store `value + 1`, duration
//! stores a 1-based index into the [`DurationTable`].

mod duration;
mod instruments;
pub mod io;

use std::fmt;

use crate::error::{Error, Result};
use crate::score::{MusicScore, Note, RESOLUTION};

pub use duration::DurationTable;
pub use instruments::InstrumentMap;
pub use io::{read_event_csv, write_event_csv, EVENT_CSV_HEADER};

/// Highest beat index an encodable note may start on, plus one.
pub const MAX_BEATS: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventType {
    StartOfSong = 0,
    Instrument = 1,
    StartOfNotes = 2,
    Note = 3,
    EndOfSong = 4,
}

impl EventType {
    pub const ALL: [EventType; 5] = [
        EventType::StartOfSong,
        EventType::Instrument,
        EventType::StartOfNotes,
        EventType::Note,
        EventType::EndOfSong,
    ];

    pub fn code(self) -> u16 {
        self as u16
    }

    pub fn from_code(code: u16) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EventType::StartOfSong => "start-of-song",
            EventType::Instrument => "instrument",
            EventType::StartOfNotes => "start-of-notes",
            EventType::Note => "note",
            EventType::EndOfSong => "end-of-song",
        }
    }
}

/// The fixed type-code assignment, in code order.
pub fn type_codes() -> [(EventType, u16); 5] {
    EventType::ALL.map(|t| (t, t.code()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Type = 0,
    Beat = 1,
    Position = 2,
    Pitch = 3,
    Duration = 4,
    Instrument = 5,
}

impl Field {
    pub const ALL: [Field; 6] = [
        Field::Type,
        Field::Beat,
        Field::Position,
        Field::Pitch,
        Field::Duration,
        Field::Instrument,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn vocab_size(self) -> usize {
        FieldVocab::SIZES[self.index()]
    }

    pub fn name(self) -> &'static str {
        ["type", "beat", "position", "pitch", "duration", "instrument"][self.index()]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Per-field code-space sizes.
pub struct FieldVocab;

impl FieldVocab {
    pub const SIZES: [usize; 6] = [5, 257, 13, 129, 24, 65];

    pub fn sizes() -> [usize; 6] {
        Self::SIZES
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, serde::Serialize, serde::Deserialize)]
pub struct Event {
    pub kind: u16,
    pub beat: u16,
    pub position: u16,
    pub pitch: u16,
    pub duration: u16,
    pub instrument: u16,
}

impl Event {
    pub const PADDING: Event = Event {
        kind: 0,
        beat: 0,
        position: 0,
        pitch: 0,
        duration: 0,
        instrument: 0,
    };

    pub fn marker(kind: EventType) -> Event {
        Event {
            kind: kind.code(),
            ..Event::PADDING
        }
    }

    pub fn instrument(code: u16) -> Event {
        Event {
            kind: EventType::Instrument.code(),
            instrument: code,
            ..Event::PADDING
        }
    }

    pub fn note(beat: u16, position: u16, pitch: u16, duration: u16, instrument: u16) -> Event {
        Event {
            kind: EventType::Note.code(),
            beat,
            position,
            pitch,
            duration,
            instrument,
        }
    }

    pub fn from_codes(codes: [u16; 6]) -> Event {
        Event {
            kind: codes[0],
            beat: codes[1],
            position: codes[2],
            pitch: codes[3],
            duration: codes[4],
            instrument: codes[5],
        }
    }

    pub fn codes(&self) -> [u16; 6] {
        [
            self.kind,
            self.beat,
            self.position,
            self.pitch,
            self.duration,
            self.instrument,
        ]
    }

    pub fn get(&self, field: Field) -> u16 {
        self.codes()[field.index()]
    }

    pub fn event_type(&self) -> Option<EventType> {
        EventType::from_code(self.kind)
    }

    pub fn is_note(&self) -> bool {
        self.kind == EventType::Note.code()
    }

    /// Sort key used for canonical note order.
    fn note_key(&self) -> (u16, u16, u16, u16, u16) {
        (
            self.beat,
            self.position,
            self.pitch,
            self.duration,
            self.instrument,
        )
    }

    fn check_bounds(&self) -> std::result::Result<(), String> {
        for field in Field::ALL {
            let code = self.get(field) as usize;
            if code >= field.vocab_size() {
                return Err(format!(
                    "{} code {code} outside vocabulary of size {}",
                    field.name(),
                    field.vocab_size()
                ));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {}, {}, {})",
            self.kind, self.beat, self.position, self.pitch, self.duration, self.instrument
        )
    }
}

/// How strictly note events must be ordered for a sequence to be accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoteOrder {
    /// Any order (decoding is permutation invariant).
    Any,
    /// Beat codes nondecreasing, as produced by constrained sampling.
    BeatMonotone,
    /// Full lexicographic order on (beat, position, pitch, duration, instrument).
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventSequence {
    pub events: Vec<Event>,
}

impl EventSequence {
    pub fn new(events: Vec<Event>) -> Self {
        EventSequence { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn notes(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.is_note())
    }

    pub fn note_count(&self) -> usize {
        self.notes().count()
    }

    /// Instrument codes declared by the header.
    pub fn declared_instruments(&self) -> Vec<u16> {
        self.events
            .iter()
            .filter(|e| e.kind == EventType::Instrument.code())
            .map(|e| e.instrument)
            .collect()
    }

    pub fn ends_with_eos(&self) -> bool {
        self.events
            .last()
            .is_some_and(|e| e.kind == EventType::EndOfSong.code())
    }

    /// Checks the sequence grammar, reporting the first offending event.
    ///
    /// A sequence is one start-of-song, zero or more instrument events, one
    /// start-of-notes, zero or more notes, and an optional final end-of-song.
    /// Non-note fields of marker events must be zero; every field of a note
    /// must be nonzero.
    pub fn validate(&self, order: NoteOrder) -> Result<()> {
        self.check(order, false)
    }

    /// Like [`validate`](Self::validate) but accepts a sequence that stops
    /// before its start-of-notes event, as a generation prefix may.
    pub fn validate_prefix(&self, order: NoteOrder) -> Result<()> {
        self.check(order, true)
    }

    fn check(&self, order: NoteOrder, allow_open_header: bool) -> Result<()> {
        let fail = |index: usize, reason: String| Error::Grammar { index, reason };
        let mut prev_kind: Option<u16> = None;
        let mut seen_start_of_notes = false;
        let mut prev_note: Option<Event> = None;
        for (i, e) in self.events.iter().enumerate() {
            e.check_bounds().map_err(|r| fail(i, r))?;
            let kind = e
                .event_type()
                .ok_or_else(|| fail(i, format!("unknown type code {}", e.kind)))?;
            if i == 0 && kind != EventType::StartOfSong {
                return Err(fail(i, "sequence must begin with start-of-song".into()));
            }
            if let Some(p) = prev_kind {
                if e.kind < p {
                    return Err(fail(i, format!("type code decreases from {p} to {}", e.kind)));
                }
                if p == EventType::EndOfSong.code() {
                    return Err(fail(i, "event after end-of-song".into()));
                }
            }
            match kind {
                EventType::StartOfSong if i != 0 => {
                    return Err(fail(i, "repeated start-of-song".into()))
                }
                EventType::StartOfNotes if seen_start_of_notes => {
                    return Err(fail(i, "repeated start-of-notes".into()))
                }
                EventType::StartOfNotes => seen_start_of_notes = true,
                EventType::Note | EventType::EndOfSong if !seen_start_of_notes => {
                    return Err(fail(i, "missing start-of-notes".into()))
                }
                _ => {}
            }
            match kind {
                EventType::Note => {
                    if let Some(field) = Field::ALL[1..].iter().find(|f| e.get(**f) == 0) {
                        return Err(fail(
                            i,
                            format!("note event has undefined (zero) {}", field.name()),
                        ));
                    }
                    if let Some(p) = prev_note {
                        let ok = match order {
                            NoteOrder::Any => true,
                            NoteOrder::BeatMonotone => e.beat >= p.beat,
                            NoteOrder::Canonical => e.note_key() >= p.note_key(),
                        };
                        if !ok {
                            return Err(fail(i, "note events out of order".into()));
                        }
                    }
                    prev_note = Some(*e);
                }
                EventType::Instrument => {
                    if e.instrument == 0 {
                        return Err(fail(i, "instrument event has undefined instrument".into()));
                    }
                    if e.beat != 0 || e.position != 0 || e.pitch != 0 || e.duration != 0 {
                        return Err(fail(i, "instrument event has nonzero note fields".into()));
                    }
                }
                _ => {
                    if e.codes()[1..].iter().any(|&c| c != 0) {
                        return Err(fail(i, format!("{} event has nonzero fields", kind.name())));
                    }
                }
            }
            prev_kind = Some(e.kind);
        }
        if self.events.is_empty() {
            return Err(fail(0, "empty sequence".into()));
        }
        if !seen_start_of_notes && !allow_open_header {
            return Err(fail(self.events.len(), "missing start-of-notes".into()));
        }
        Ok(())
    }
}

/// Splits an onset in steps into (beat, position) at `resolution` steps per beat.
pub fn decompose_onset(onset: i64, resolution: u32) -> Result<(u32, u32)> {
    if onset < 0 {
        return Err(Error::Domain(format!("negative onset {onset}")));
    }
    if resolution == 0 {
        return Err(Error::Domain("resolution must be positive".into()));
    }
    let r = i64::from(resolution);
    Ok(((onset / r) as u32, (onset % r) as u32))
}

/// Stable lexicographic sort on (beat, position, pitch, duration, instrument).
pub fn canonical_sort(events: &[Event]) -> Result<Vec<Event>> {
    if let Some(i) = events.iter().position(|e| !e.is_note()) {
        return Err(Error::Domain(format!(
            "canonical_sort expects note events only; event {i} has type {}",
            events[i].kind
        )));
    }
    let mut out = events.to_vec();
    out.sort_by_key(Event::note_key);
    Ok(out)
}

/// Maps a MIDI program through `map`.
pub fn program_to_instrument(program: u32, map: &InstrumentMap) -> Result<u8> {
    map.instrument_of(program)
}

/// Encoder/decoder between [`MusicScore`] and [`EventSequence`].
#[derive(Debug, Clone, Default)]
pub struct Codec {
    pub instruments: InstrumentMap,
    pub durations: DurationTable,
}

impl Codec {
    pub fn new(instruments: InstrumentMap, durations: DurationTable) -> Self {
        Codec {
            instruments,
            durations,
        }
    }

    pub fn encode(&self, score: &MusicScore) -> Result<EventSequence> {
        let mut notes = Vec::with_capacity(score.notes.len());
        let mut used = [false; 64];
        for (i, n) in score.notes.iter().enumerate() {
            n.validate()?;
            if n.onset >= MAX_BEATS * RESOLUTION {
                return Err(Error::OutOfRange(format!(
                    "note {i} onset {} is at or beyond beat {MAX_BEATS}; trim the score first",
                    n.onset
                )));
            }
            let (beat, position) = decompose_onset(i64::from(n.onset), RESOLUTION)?;
            let instrument = self.instruments.instrument_of(u32::from(n.program))?;
            used[instrument as usize] = true;
            notes.push(Event::note(
                beat as u16 + 1,
                position as u16 + 1,
                u16::from(n.pitch) + 1,
                self.durations.quantize(n.duration)?,
                u16::from(instrument) + 1,
            ));
        }
        let notes = canonical_sort(&notes)?;

        let mut events = Vec::with_capacity(notes.len() + 68);
        events.push(Event::marker(EventType::StartOfSong));
        events.extend(
            used.iter()
                .enumerate()
                .filter(|(_, &u)| u)
                .map(|(i, _)| Event::instrument(i as u16 + 1)),
        );
        events.push(Event::marker(EventType::StartOfNotes));
        events.extend(notes);
        events.push(Event::marker(EventType::EndOfSong));
        Ok(EventSequence { events })
    }

    pub fn decode(&self, seq: &EventSequence) -> Result<MusicScore> {
        seq.validate(NoteOrder::Any)?;
        let mut notes = Vec::with_capacity(seq.len());
        for (i, e) in seq.events.iter().enumerate().filter(|(_, e)| e.is_note()) {
            let duration = self
                .durations
                .get(e.duration)
                .ok_or_else(|| Error::Grammar {
                    index: i,
                    reason: format!("duration code {} outside table", e.duration),
                })?;
            let program = self
                .instruments
                .representative(e.instrument as usize - 1)
                .ok_or_else(|| Error::Grammar {
                    index: i,
                    reason: format!("instrument code {} is not in the map", e.instrument),
                })?;
            notes.push(Note {
                onset: RESOLUTION * u32::from(e.beat - 1) + u32::from(e.position - 1),
                pitch: (e.pitch - 1) as u8,
                duration,
                program,
            });
        }
        Ok(MusicScore { notes })
    }

    /// Notes of `score` in the order the encoder emits them, with programs
    /// replaced by their instrument representatives.
    pub fn canonical_notes(&self, score: &MusicScore) -> Result<Vec<Note>> {
        let mut keyed = Vec::with_capacity(score.notes.len());
        for n in &score.notes {
            let instrument = self.instruments.instrument_of(u32::from(n.program))?;
            let program = self
                .instruments
                .representative(instrument as usize)
                .expect("mapped instrument has a representative");
            keyed.push(((n.onset, n.pitch, n.duration, instrument), Note { program, ..*n }));
        }
        keyed.sort_by_key(|(k, _)| *k);
        Ok(keyed.into_iter().map(|(_, n)| n).collect())
    }
}
