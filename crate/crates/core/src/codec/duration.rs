use crate::error::{Error, Result};

/// Allowed note durations in steps (12 per beat), strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DurationTable {
    values: Vec<u32>,
}

impl DurationTable {
    pub const DEFAULT: [u32; 23] = [
        1, 2, 3, 4, 6, 8, 10, 12, 16, 20, 24, 30, 36, 40, 48, 60, 72, 84, 96, 120, 144, 168, 192,
    ];

    pub fn new(values: Vec<u32>) -> Result<Self> {
        if values.is_empty() || values.len() > 23 {
            return Err(Error::Domain(format!(
                "duration table needs 1..=23 entries, got {}",
                values.len()
            )));
        }
        if values[0] == 0 || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain(
                "duration table must be positive and strictly increasing".into(),
            ));
        }
        Ok(DurationTable { values })
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> u32 {
        *self.values.last().expect("table is nonempty")
    }

    /// Duration in steps for a 1-based code.
    pub fn get(&self, code: u16) -> Option<u32> {
        (code as usize)
            .checked_sub(1)
            .and_then(|i| self.values.get(i))
            .copied()
    }

    /// 1-based code of the closest table entry; ties go to the shorter one.
    pub fn quantize(&self, duration: u32) -> Result<u16> {
        if duration < 1 {
            return Err(Error::Domain("duration must be at least 1 step".into()));
        }
        let idx = match self.values.binary_search(&duration) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i == self.values.len() => i - 1,
            Err(i) => {
                let below = duration - self.values[i - 1];
                let above = self.values[i] - duration;
                if below <= above {
                    i - 1
                } else {
                    i
                }
            }
        };
        Ok(idx as u16 + 1)
    }
}

impl Default for DurationTable {
    fn default() -> Self {
        DurationTable {
            values: Self::DEFAULT.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_examples() {
        let d = DurationTable::default();
        assert_eq!(d.quantize(12).unwrap(), 8);
        assert_eq!(d.get(8), Some(12));
        assert_eq!(d.quantize(7).unwrap(), 5);
        assert_eq!(d.quantize(500).unwrap(), 23);
        assert!(d.quantize(0).is_err());
    }

    #[test]
    fn quantize_matches_brute_force() {
        let d = DurationTable::default();
        for dur in 1..400u32 {
            let best = d
                .values()
                .iter()
                .enumerate()
                .min_by_key(|(_, &v)| (v.abs_diff(dur), v))
                .map(|(i, _)| i as u16 + 1)
                .unwrap();
            assert_eq!(d.quantize(dur).unwrap(), best, "duration {dur}");
        }
    }

    #[test]
    fn default_table_shape() {
        let d = DurationTable::default();
        assert_eq!(d.len(), 23);
        assert_eq!(d.max(), 192);
        assert!(DurationTable::new(vec![2, 2]).is_err());
    }
}
