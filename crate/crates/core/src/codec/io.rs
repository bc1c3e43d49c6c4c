use std::path::Path;

use crate::codec::{Event, EventSequence};
use crate::error::{Error, Result};

pub const EVENT_CSV_HEADER: [&str; 6] = ["type", "beat", "position", "pitch", "duration", "instrument"];

pub fn write_event_csv(seq: &EventSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_events(seq, file).map_err(|e| Error::format(path, e.to_string()))
}

fn write_events<W: std::io::Write>(seq: &EventSequence, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENT_CSV_HEADER)?;
    for e in &seq.events {
        w.write_record(e.codes().map(|c| c.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an event CSV. Codes are taken verbatim; grammar is not checked here.
pub fn read_event_csv(path: impl AsRef<Path>) -> Result<EventSequence> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != EVENT_CSV_HEADER {
        return Err(Error::format(
            path,
            format!("expected header {}", EVENT_CSV_HEADER.join(",")),
        ));
    }
    let mut events = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        if record.len() != 6 {
            return Err(Error::format(path, format!("row {}: expected 6 columns", row + 1)));
        }
        let mut codes = [0u16; 6];
        for (c, field) in codes.iter_mut().zip(record.iter()) {
            *c = field.trim().parse().map_err(|_| {
                Error::format(path, format!("row {}: {field:?} is not a code", row + 1))
            })?;
        }
        events.push(Event::from_codes(codes));
    }
    Ok(EventSequence { events })
}
