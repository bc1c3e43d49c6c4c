//! Objective metrics, token-count comparisons and generation throughput.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::Serialize;

use crate::codec::{Codec, EventSequence, InstrumentMap};
use crate::error::{Error, Result};
use crate::model::Mmt;
use crate::sampler::{generate, GenSpec};
use crate::score::{MusicScore, RESOLUTION, SECONDS_PER_BEAT};

/// Time steps per 4/4 bar.
pub const BAR_STEPS: u32 = 4 * RESOLUTION;

pub const MAJOR: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
pub const MINOR: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];

fn pitch_class_histogram(score: &MusicScore) -> Result<[usize; 12]> {
    if score.is_empty() {
        return Err(Error::UndefinedMetric("score has no notes".into()));
    }
    let mut hist = [0usize; 12];
    for n in &score.notes {
        hist[(n.pitch % 12) as usize] += 1;
    }
    Ok(hist)
}

/// Shannon entropy (bits) of the pitch-class histogram.
pub fn pitch_class_entropy(score: &MusicScore) -> Result<f64> {
    let hist = pitch_class_histogram(score)?;
    let total = score.len() as f64;
    Ok(hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum())
}

/// Largest fraction of notes inside one of the 24 major and natural minor scales.
pub fn scale_consistency(score: &MusicScore) -> Result<f64> {
    let hist = pitch_class_histogram(score)?;
    let mut best = 0;
    for root in 0..12 {
        for scale in [MAJOR, MINOR] {
            let inside: usize = scale.iter().map(|s| hist[(root + *s as usize) % 12]).sum();
            best = best.max(inside);
        }
    }
    Ok(best as f64 / score.len() as f64)
}

/// One minus the mean Hamming distance between consecutive bars' onset
/// patterns, each normalized by the bar length.
pub fn groove_consistency(score: &MusicScore) -> Result<f64> {
    let bars = score
        .notes
        .iter()
        .map(|n| n.onset / BAR_STEPS)
        .max()
        .map_or(0, |b| b as usize + 1);
    if bars < 2 {
        return Err(Error::UndefinedMetric(format!(
            "groove consistency needs at least 2 bars, score spans {bars}"
        )));
    }
    let mut grooves = vec![[false; BAR_STEPS as usize]; bars];
    for n in &score.notes {
        grooves[(n.onset / BAR_STEPS) as usize][(n.onset % BAR_STEPS) as usize] = true;
    }
    let total: usize = grooves
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).filter(|(a, b)| a != b).count())
        .sum();
    Ok(1.0 - total as f64 / ((bars - 1) as f64 * f64::from(BAR_STEPS)))
}

/// Mean with a normal-approximation 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
}

impl Summary {
    /// `mean ± 1.96 · s / sqrt(n)` with the sample standard deviation `s`.
    pub fn of(values: &[f64]) -> Option<Summary> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ci95 = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, ci95, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub pitch_class_entropy: Option<Summary>,
    pub scale_consistency: Option<Summary>,
    pub groove_consistency: Option<Summary>,
}

impl MetricReport {
    /// Each metric is averaged over the scores where it is defined.
    pub fn compute(scores: &[MusicScore]) -> MetricReport {
        let collect = |f: fn(&MusicScore) -> Result<f64>| {
            Summary::of(&scores.iter().filter_map(|s| f(s).ok()).collect::<Vec<_>>())
        };
        MetricReport {
            pitch_class_entropy: collect(pitch_class_entropy),
            scale_consistency: collect(scale_consistency),
            groove_consistency: collect(groove_consistency),
        }
    }

    /// CSV rows `metric,mean,ci95,n` (empty cells for undefined metrics).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mean,ci95,n\n");
        for (name, s) in [
            ("pitch_class_entropy", self.pitch_class_entropy),
            ("scale_consistency", self.scale_consistency),
            ("groove_consistency", self.groove_consistency),
        ] {
            match s {
                Some(s) => out.push_str(&format!("{name},{},{},{}\n", s.mean, s.ci95, s.n)),
                None => out.push_str(&format!("{name},,,0\n")),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Mmt,
    MmmLike,
    RemiPlusLike,
}

/// Sequence length of `score` under each representation.
///
/// * MMT: one event per note and per instrument, plus start-of-song,
///   start-of-notes and end-of-song.
/// * MMM-like: per instrument track, two delimiters, one instrument token,
///   note-on and note-off per note and one token per beat the track spans;
///   plus two global tokens.
/// * REMI+-like: one token per bar, one position token whenever the onset
///   changes, instrument, pitch and duration per note; plus two global tokens.
pub fn count_tokens(score: &MusicScore, repr: Representation, map: &InstrumentMap) -> Result<usize> {
    match repr {
        Representation::Mmt => {
            let instruments = instruments_of(score, map)?;
            Ok(score.len() + instruments.len() + 3)
        }
        Representation::MmmLike => {
            let mut total = 2;
            for inst in instruments_of(score, map)? {
                let mut notes = 0;
                let mut end = 0;
                for n in &score.notes {
                    if map.instrument_of(u32::from(n.program))? == inst {
                        notes += 1;
                        end = end.max(n.end());
                    }
                }
                total += 3 + 2 * notes + end.div_ceil(RESOLUTION) as usize;
            }
            Ok(total)
        }
        Representation::RemiPlusLike => {
            let onsets: BTreeSet<u32> = score.notes.iter().map(|n| n.onset).collect();
            let bars = onsets.last().map_or(0, |&o| (o / BAR_STEPS) as usize + 1);
            Ok(bars + onsets.len() + 3 * score.len() + 2)
        }
    }
}

fn instruments_of(score: &MusicScore, map: &InstrumentMap) -> Result<BTreeSet<u8>> {
    score
        .notes
        .iter()
        .map(|n| map.instrument_of(u32::from(n.program)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub samples: usize,
    pub total_notes: usize,
    pub avg_sample_length_sec: f64,
    pub notes_per_second: f64,
    pub events_per_note: f64,
    pub hardware: String,
}

/// Length in seconds at 120 BPM, measured to the last note's beat code.
pub fn sample_length_sec(seq: &EventSequence) -> f64 {
    seq.notes().map(|n| n.beat).max().map_or(0.0, |b| f64::from(b) * SECONDS_PER_BEAT)
}

/// Note events per decoded note.
pub fn events_per_note(seq: &EventSequence, codec: &Codec) -> Result<f64> {
    let notes = codec.decode(seq)?.len();
    Ok(if notes == 0 {
        0.0
    } else {
        seq.note_count() as f64 / notes as f64
    })
}

pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{cpu}; {} {}; {threads} threads",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Generates `n_samples` unconditioned sequences (seeds `seed..seed + n`)
/// after one untimed warmup run, and reports length and throughput.
pub fn benchmark_generation(
    model: &Mmt<f32>,
    n_samples: usize,
    max_len: usize,
    seed: u64,
) -> Result<(BenchReport, Vec<EventSequence>)> {
    if n_samples == 0 {
        return Err(Error::Domain("benchmark needs at least one sample".into()));
    }
    let spec = |s: u64| GenSpec {
        max_len,
        ..GenSpec::unconditioned(s)
    };
    generate(model, &spec(seed.wrapping_sub(1)))?;
    let codec = Codec::default();
    let start = Instant::now();
    let samples: Vec<EventSequence> = (0..n_samples as u64)
        .map(|i| generate(model, &spec(seed.wrapping_add(i))).map(|g| g.sequence))
        .collect::<Result<_>>()?;
    let elapsed = start.elapsed().as_secs_f64();

    let mut total_notes = 0;
    let mut note_events = 0;
    for s in &samples {
        total_notes += codec.decode(s)?.len();
        note_events += s.note_count();
    }
    let report = BenchReport {
        samples: n_samples,
        total_notes,
        avg_sample_length_sec: samples.iter().map(sample_length_sec).sum::<f64>() / n_samples as f64,
        notes_per_second: if elapsed > 0.0 { total_notes as f64 / elapsed } else { 0.0 },
        events_per_note: if total_notes == 0 {
            0.0
        } else {
            note_events as f64 / total_notes as f64
        },
        hardware: hardware_descriptor(),
    };
    Ok((report, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Event, EventType};
    use crate::score::Note;

    fn score(pitches: &[u8]) -> MusicScore {
        MusicScore::new(
            pitches
                .iter()
                .enumerate()
                .map(|(i, &p)| Note::new(i as u32 * 12, p, 12, 0).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn onsets(onsets: &[u32]) -> MusicScore {
        MusicScore::new(onsets.iter().map(|&o| Note::new(o, 60, 1, 0).unwrap()).collect()).unwrap()
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(pitch_class_entropy(&score(&[60, 72, 48])).unwrap(), 0.0);
        let chromatic: Vec<u8> = (60..72).collect();
        assert!((pitch_class_entropy(&score(&chromatic)).unwrap() - 12f64.log2()).abs() < 1e-12);
        let h = pitch_class_entropy(&score(&[60, 60, 60, 67])).unwrap();
        let oracle = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert!((h - oracle).abs() < 1e-12);
        assert!((h - 0.8113).abs() < 1e-4);
        assert!(matches!(
            pitch_class_entropy(&MusicScore::default()),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn scale_cases() {
        assert_eq!(scale_consistency(&score(&[60, 62, 64, 65, 67, 69, 71])).unwrap(), 1.0);
        let chromatic: Vec<u8> = (60..72).collect();
        assert!((scale_consistency(&score(&chromatic)).unwrap() - 7.0 / 12.0).abs() < 1e-12);
        // Eight distinct pitch classes: no seven-note scale can hold them all.
        // G major covers everything except F, matching C major's 7/8.
        let with_fsharp = score(&[60, 62, 64, 65, 67, 69, 71, 66]);
        assert_eq!(scale_consistency(&with_fsharp).unwrap(), 7.0 / 8.0);
        let without_f = score(&[60, 62, 64, 67, 69, 71, 66]);
        assert_eq!(scale_consistency(&without_f).unwrap(), 1.0);
        let a_minor_only = score(&[57, 59, 60, 62, 64, 65, 67, 68]);
        assert_eq!(scale_consistency(&a_minor_only).unwrap(), 7.0 / 8.0);
    }

    #[test]
    fn groove_cases() {
        let periodic: Vec<u32> = (0..4).flat_map(|b| [0, 12, 30].map(|o| b * 48 + o)).collect();
        assert_eq!(groove_consistency(&onsets(&periodic)).unwrap(), 1.0);
        let mut full: Vec<u32> = (0..48).collect();
        full.push(96);
        // Bar 1 is empty: distances 48 then 1.
        let g = groove_consistency(&onsets(&full)).unwrap();
        assert!((g - (1.0 - 49.0 / 96.0)).abs() < 1e-12);
        assert!(groove_consistency(&onsets(&[0, 47])).is_err());
    }

    #[test]
    fn token_counts() {
        let map = InstrumentMap::default();
        let empty = MusicScore::default();
        assert_eq!(count_tokens(&empty, Representation::Mmt, &map).unwrap(), 3);
        let one = score(&[60]);
        assert_eq!(count_tokens(&one, Representation::Mmt, &map).unwrap(), 5);
        assert_eq!(count_tokens(&one, Representation::RemiPlusLike, &map).unwrap(), 7);
        assert_eq!(count_tokens(&one, Representation::MmmLike, &map).unwrap(), 2 + 3 + 2 + 1);
    }

    #[test]
    fn ci_uses_sample_std() {
        let s = Summary::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.ci95 - 1.96 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(Summary::of(&[5.0]).unwrap().ci95, 0.0);
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn length_from_last_beat_code() {
        let seq = EventSequence::new(vec![
            Event::marker(EventType::StartOfSong),
            Event::instrument(1),
            Event::marker(EventType::StartOfNotes),
            Event::note(3, 1, 61, 8, 1),
            Event::note(200, 1, 61, 8, 1),
            Event::marker(EventType::EndOfSong),
        ]);
        assert_eq!(sample_length_sec(&seq), 100.0);
        assert_eq!(events_per_note(&seq, &Codec::default()).unwrap(), 1.0);
    }
}
