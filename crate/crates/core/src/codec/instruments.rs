use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TABLE: &str = include_str!("../../data/instruments.csv");

/// Largest number of distinct instruments the vocabulary can hold.
pub const MAX_INSTRUMENTS: usize = 64;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Row {
    program: u32,
    instrument_index: u32,
    instrument_name: String,
}

/// Total map from the 128 MIDI programs onto at most 64 named instruments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentMap {
    /// Instrument index per program.
    index: [u8; 128],
    /// Name per instrument index.
    names: Vec<String>,
    /// First program mapping to each instrument index.
    representatives: Vec<u8>,
}

impl InstrumentMap {
    pub fn from_csv_reader<R: std::io::Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::format(origin, e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["program", "instrument_index", "instrument_name"] {
            return Err(Error::format(
                origin,
                "expected header program,instrument_index,instrument_name",
            ));
        }
        let mut rows = Vec::with_capacity(128);
        for row in rdr.deserialize::<Row>() {
            rows.push(row.map_err(|e| Error::format(origin, e.to_string()))?);
        }
        Self::from_rows(rows).map_err(|e| match e {
            Error::Domain(m) => Error::format(origin, m),
            other => other,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        for program in 0..128u32 {
            let idx = self.index[program as usize];
            w.serialize(Row {
                program,
                instrument_index: u32::from(idx),
                instrument_name: self.names[idx as usize].clone(),
            })
            .map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn from_rows(rows: Vec<Row>) -> Result<Self> {
        if rows.len() != 128 {
            return Err(Error::Domain(format!("expected 128 rows, found {}", rows.len())));
        }
        let mut index = [u8::MAX; 128];
        let mut names: Vec<Option<String>> = vec![None; MAX_INSTRUMENTS];
        for row in rows {
            if row.program > 127 {
                return Err(Error::Domain(format!("program {} out of range", row.program)));
            }
            if row.instrument_index as usize >= MAX_INSTRUMENTS {
                return Err(Error::Domain(format!(
                    "instrument index {} exceeds {}",
                    row.instrument_index,
                    MAX_INSTRUMENTS - 1
                )));
            }
            if index[row.program as usize] != u8::MAX {
                return Err(Error::Domain(format!("program {} listed twice", row.program)));
            }
            index[row.program as usize] = row.instrument_index as u8;
            match &names[row.instrument_index as usize] {
                Some(n) if *n != row.instrument_name => {
                    return Err(Error::Domain(format!(
                        "instrument index {} named both {n:?} and {:?}",
                        row.instrument_index, row.instrument_name
                    )))
                }
                _ => names[row.instrument_index as usize] = Some(row.instrument_name),
            }
        }
        let count = names.iter().take_while(|n| n.is_some()).count();
        if names[count..].iter().any(Option::is_some) {
            return Err(Error::Domain("instrument indices are not contiguous from 0".into()));
        }
        let names: Vec<String> = names.into_iter().flatten().collect();
        let mut representatives = vec![u8::MAX; names.len()];
        for (program, &idx) in index.iter().enumerate() {
            if representatives[idx as usize] == u8::MAX {
                representatives[idx as usize] = program as u8;
            }
        }
        Ok(InstrumentMap {
            index,
            names,
            representatives,
        })
    }

    pub fn instrument_of(&self, program: u32) -> Result<u8> {
        self.index
            .get(program as usize)
            .copied()
            .ok_or_else(|| Error::Domain(format!("MIDI program {program} outside 0..=127")))
    }

    /// Lowest program mapped to `index`.
    pub fn representative(&self, index: usize) -> Option<u8> {
        self.representatives.get(index).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of_name(&self, name: &str) -> Option<u8> {
        self.names.iter().position(|n| n == name).map(|i| i as u8)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl Default for InstrumentMap {
    fn default() -> Self {
        Self::from_csv_reader(DEFAULT_TABLE.as_bytes(), Path::new("<builtin>"))
            .expect("built-in instrument table is valid")
    }
}
