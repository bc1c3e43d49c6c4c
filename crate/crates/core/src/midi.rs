//! Standard MIDI File reading and writing.
//!
//! Reading accepts format 0 and 1 files with a ticks-per-quarter division and
//! rescales every note onto the 12-steps-per-beat grid. Drums (channel 10),
//! tempo, velocity and all meta events are discarded. Writing always produces
//! format 1 at 480 ticks per quarter, 120 BPM and velocity 64.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::score::{MusicScore, Note, RESOLUTION};

pub const EXPORT_TPQ: u16 = 480;
pub const EXPORT_VELOCITY: u8 = 64;
/// Microseconds per quarter note at 120 BPM.
pub const EXPORT_TEMPO: u32 = 500_000;
const DRUM_CHANNEL: u8 = 9;

pub fn load_midi(path: impl AsRef<Path>) -> Result<MusicScore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_midi(&bytes)
}

pub fn save_midi(score: &MusicScore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_midi(score)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses SMF bytes into a score; fails with [`Error::EmptyScore`] when no
/// pitched note survives.
pub fn parse_midi(bytes: &[u8]) -> Result<MusicScore> {
    let mut r = Reader { bytes, pos: 0 };
    let id = r.take(4)?;
    if id != b"MThd" {
        return Err(r.err_at(0, "missing MThd header"));
    }
    let len = r.u32()? as usize;
    if len < 6 {
        return Err(r.err_at(4, "header chunk shorter than 6 bytes"));
    }
    let header_start = r.pos;
    let format = r.u16()?;
    let n_tracks = r.u16()?;
    let division = r.u16()?;
    if format > 1 {
        return Err(r.err_at(header_start, format!("unsupported SMF format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(r.err_at(header_start + 4, "SMPTE time division is not supported"));
    }
    if division == 0 {
        return Err(r.err_at(header_start + 4, "ticks per quarter must be nonzero"));
    }
    r.pos = header_start + len;

    let mut raw = Vec::new();
    let mut tracks_seen = 0u16;
    while r.pos < bytes.len() && tracks_seen < n_tracks {
        let chunk_start = r.pos;
        let id = r.take(4)?;
        let len = r.u32()? as usize;
        if r.pos + len > bytes.len() {
            return Err(r.err_at(chunk_start, "chunk length runs past end of file"));
        }
        let body_start = r.pos;
        if id == b"MTrk" {
            parse_track(&bytes[body_start..body_start + len], body_start, &mut raw)?;
            tracks_seen += 1;
        }
        r.pos = body_start + len;
    }
    if tracks_seen < n_tracks {
        return Err(r.err_at(
            r.pos,
            format!("header declares {n_tracks} tracks but found {tracks_seen}"),
        ));
    }

    let tpq = u64::from(division);
    let mut notes: Vec<Note> = raw
        .into_iter()
        .map(|n| Note {
            onset: ticks_to_steps(n.start, tpq),
            pitch: n.pitch,
            duration: ticks_to_steps(n.end - n.start, tpq).max(1),
            program: n.program,
        })
        .collect();
    if notes.is_empty() {
        return Err(Error::EmptyScore);
    }
    notes.sort();
    Ok(MusicScore { notes })
}

/// Round-half-up rescale from file ticks to score steps.
fn ticks_to_steps(ticks: u64, tpq: u64) -> u32 {
    let steps = (ticks * u64::from(RESOLUTION) * 2 + tpq) / (2 * tpq);
    u32::try_from(steps).unwrap_or(u32::MAX)
}

struct RawNote {
    start: u64,
    end: u64,
    pitch: u8,
    program: u8,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err_at(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::MidiParse {
            offset,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err_at(self.pos, "unexpected end of data"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn varlen(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(self.err_at(start, "variable-length quantity longer than 4 bytes"))
    }
}

fn parse_track(body: &[u8], base: usize, out: &mut Vec<RawNote>) -> Result<()> {
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    let rebase = |e: Error| match e {
        Error::MidiParse { offset, message } => Error::MidiParse {
            offset: offset + base,
            message,
        },
        other => other,
    };

    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut programs = [0u8; 16];
    let mut open: HashMap<(u8, u8), VecDeque<(u64, u8)>> = HashMap::new();

    while r.pos < body.len() {
        tick += u64::from(r.varlen().map_err(rebase)?);
        let status_pos = r.pos;
        let first = r.u8().map_err(rebase)?;
        let (status, first_data) = if first & 0x80 != 0 {
            (first, None)
        } else {
            match running {
                Some(s) => (s, Some(first)),
                None => {
                    return Err(rebase(
                        r.err_at(status_pos, "data byte without running status"),
                    ))
                }
            }
        };
        match status {
            0xff => {
                running = None;
                let kind = r.u8().map_err(rebase)?;
                let len = r.varlen().map_err(rebase)? as usize;
                r.take(len).map_err(rebase)?;
                if kind == 0x2f {
                    break;
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.varlen().map_err(rebase)? as usize;
                r.take(len).map_err(rebase)?;
            }
            0x80..=0xef => {
                running = Some(status);
                let kind = status & 0xf0;
                let channel = status & 0x0f;
                let n_data = if kind == 0xc0 || kind == 0xd0 { 1 } else { 2 };
                let mut data = [0u8; 2];
                let mut filled = 0;
                if let Some(b) = first_data {
                    data[0] = b;
                    filled = 1;
                }
                while filled < n_data {
                    data[filled] = r.u8().map_err(rebase)?;
                    filled += 1;
                }
                if data[..n_data].iter().any(|b| b & 0x80 != 0) {
                    return Err(rebase(r.err_at(status_pos, "data byte has high bit set")));
                }
                match kind {
                    0xc0 => programs[channel as usize] = data[0],
                    0x90 if data[1] > 0 => {
                        if channel != DRUM_CHANNEL {
                            open.entry((channel, data[0]))
                                .or_default()
                                .push_back((tick, programs[channel as usize]));
                        }
                    }
                    0x80 | 0x90 => {
                        if let Some((start, program)) =
                            open.get_mut(&(channel, data[0])).and_then(VecDeque::pop_front)
                        {
                            out.push(RawNote {
                                start,
                                end: tick,
                                pitch: data[0],
                                program,
                            });
                        }
                    }
                    _ => {}
                }
            }
            _ => {
                return Err(rebase(
                    r.err_at(status_pos, format!("unexpected status byte {status:#04x}")),
                ))
            }
        }
    }

    // Notes still sounding at end of track are closed there.
    let mut dangling: Vec<_> = open.into_iter().collect();
    dangling.sort_by_key(|(k, _)| *k);
    for ((_, pitch), starts) in dangling {
        for (start, program) in starts {
            out.push(RawNote {
                start,
                end: tick.max(start),
                pitch,
                program,
            });
        }
    }
    Ok(())
}

/// Serializes a score as SMF format 1.
///
/// One track per program, plus a leading tempo track. Notes that would
/// overlap another note of the same program and pitch go to an extra track
/// of that program so that note-on/note-off pairing stays unambiguous.
pub fn write_midi(score: &MusicScore) -> Result<Vec<u8>> {
    for note in &score.notes {
        note.validate()?;
    }
    let mut tracks: Vec<Vec<u8>> = Vec::new();
    if score.notes.is_empty() {
        tracks.push(end_of_track(Vec::new()));
    } else {
        let mut tempo = Vec::new();
        tempo.extend_from_slice(&[0x00, 0xff, 0x51, 0x03]);
        tempo.extend_from_slice(&EXPORT_TEMPO.to_be_bytes()[1..]);
        tracks.push(end_of_track(tempo));

        let mut by_program: BTreeMap<u8, Vec<Note>> = BTreeMap::new();
        for note in score.sorted_notes() {
            by_program.entry(note.program).or_default().push(note);
        }
        for (i, (program, notes)) in by_program.into_iter().enumerate() {
            let channel = export_channel(i);
            for lane in split_lanes(&notes) {
                tracks.push(note_track(program, channel, &lane));
            }
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    let n_tracks = u16::try_from(tracks.len())
        .map_err(|_| Error::Domain("too many tracks for a MIDI file".into()))?;
    out.extend_from_slice(&n_tracks.to_be_bytes());
    out.extend_from_slice(&EXPORT_TPQ.to_be_bytes());
    for track in tracks {
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(track.len() as u32).to_be_bytes());
        out.extend_from_slice(&track);
    }
    Ok(out)
}

/// Cycles through the 15 melodic channels, skipping the drum channel.
fn export_channel(index: usize) -> u8 {
    let c = (index % 15) as u8;
    if c >= DRUM_CHANNEL {
        c + 1
    } else {
        c
    }
}

/// Greedily assigns sorted notes to lanes so that within a lane no two notes
/// of the same pitch overlap.
fn split_lanes(notes: &[Note]) -> Vec<Vec<Note>> {
    let mut lanes: Vec<(Vec<Note>, HashMap<u8, u32>)> = Vec::new();
    for &note in notes {
        let slot = lanes
            .iter()
            .position(|(_, busy)| busy.get(&note.pitch).is_none_or(|&end| end <= note.onset));
        let idx = match slot {
            Some(i) => i,
            None => {
                lanes.push((Vec::new(), HashMap::new()));
                lanes.len() - 1
            }
        };
        lanes[idx].0.push(note);
        lanes[idx].1.insert(note.pitch, note.end());
    }
    lanes.into_iter().map(|(notes, _)| notes).collect()
}

fn note_track(program: u8, channel: u8, notes: &[Note]) -> Vec<u8> {
    const TICKS_PER_STEP: u64 = EXPORT_TPQ as u64 / RESOLUTION as u64;
    // (tick, 0 = off / 1 = on, pitch)
    let mut events: Vec<(u64, u8, u8)> = Vec::with_capacity(notes.len() * 2);
    for n in notes {
        events.push((u64::from(n.onset) * TICKS_PER_STEP, 1, n.pitch));
        events.push((u64::from(n.end()) * TICKS_PER_STEP, 0, n.pitch));
    }
    events.sort_unstable();

    let mut data = Vec::new();
    data.push(0x00);
    data.extend_from_slice(&[0xc0 | channel, program]);
    let mut last = 0u64;
    for (tick, on, pitch) in events {
        write_varlen(&mut data, (tick - last) as u32);
        last = tick;
        if on == 1 {
            data.extend_from_slice(&[0x90 | channel, pitch, EXPORT_VELOCITY]);
        } else {
            data.extend_from_slice(&[0x80 | channel, pitch, 0x40]);
        }
    }
    end_of_track(data)
}

fn end_of_track(mut data: Vec<u8>) -> Vec<u8> {
    data.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
    data
}

fn write_varlen(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 5];
    let mut i = buf.len() - 1;
    buf[i] = (value & 0x7f) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = ((value & 0x7f) as u8) | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}
