//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fail.
//!
//! Expected values are computed here independently of the library (closed
//! forms, hand counts, brute-force loops).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mmt_core::attention::{AttentionTrace, RelAttnProfile, RelAttnSums};
use mmt_core::checkpoint::{ModelCheckpoint, TrainingState};
use mmt_core::codec::{write_event_csv, Codec, Event, EventSequence, EventType, Field, NoteOrder};
use mmt_core::metrics::{count_tokens, groove_consistency, pitch_class_entropy, scale_consistency, Representation};
use mmt_core::model::gradcheck::{grad_check, GradCheckOptions};
use mmt_core::model::{Mmt, ModelConfig};
use mmt_core::sampler::{generate, GenSpec};
use mmt_core::score::{MusicScore, Note};
use mmt_core::synthetic::{compactness_score, memorization_corpus, random_canonical_score};
use mmt_core::train::data::write_manifest;
use mmt_core::train::{evaluate_loss, train, Dataset, TrainConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    check(
        elapsed <= Duration::from_secs(limit_secs),
        format!("took {:.1} s, limit {limit_secs} s", elapsed.as_secs_f64()),
    )
}

fn random_corpus() -> Vec<MusicScore> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..1000).map(|_| random_canonical_score(&mut rng, 200)).collect()
}

/// Sorted notes with programs mapped to their instrument representative.
fn oracle_canonical(score: &MusicScore, codec: &Codec) -> Vec<Note> {
    let map = &codec.instruments;
    let mut notes: Vec<(u32, u8, u32, u8, Note)> = score
        .notes
        .iter()
        .map(|n| {
            let inst = map.instrument_of(u32::from(n.program)).unwrap();
            let rep = map.representative(inst as usize).unwrap();
            (n.onset, n.pitch, n.duration, inst, Note { program: rep, ..*n })
        })
        .collect();
    notes.sort_by_key(|k| (k.0 / 12, k.0 % 12, k.1, k.2, k.3));
    notes.into_iter().map(|k| k.4).collect()
}

fn codec_round_trip() -> Outcome {
    let start = Instant::now();
    let codec = Codec::default();
    let corpus = random_corpus();
    for (i, s) in corpus.iter().enumerate() {
        let seq = codec.encode(s).map_err(|e| format!("score {i}: {e}"))?;
        let back = codec.decode(&seq).map_err(|e| format!("score {i}: {e}"))?;
        check(back.notes == oracle_canonical(s, &codec), format!("score {i} differs"))?;
    }
    within(start.elapsed(), 10)?;
    Ok(format!("1000 scores in {:.2} s", start.elapsed().as_secs_f64()))
}

fn one_event_per_note() -> Outcome {
    let codec = Codec::default();
    for (i, s) in random_corpus().iter().enumerate() {
        let seq = codec.encode(s).map_err(|e| e.to_string())?;
        let instruments: BTreeSet<u8> = s
            .notes
            .iter()
            .map(|n| codec.instruments.instrument_of(u32::from(n.program)).unwrap())
            .collect();
        check(
            seq.len() == s.notes.len() + instruments.len() + 3,
            format!("score {i}: {} events for {} notes", seq.len(), s.notes.len()),
        )?;
    }
    let score = compactness_score(&mut ChaCha8Rng::seed_from_u64(7));
    let map = &codec.instruments;
    let count = |r| count_tokens(&score, r, map).map_err(|e| e.to_string());
    let mmt = count(Representation::Mmt)? as f64;
    check(mmt == 1000.0 + 4.0 + 3.0, format!("MMT length {mmt}"))?;
    let remi = count(Representation::RemiPlusLike)? as f64 / mmt;
    let mmm = count(Representation::MmmLike)? as f64 / mmt;
    check(remi >= 2.0 && mmm >= 2.0, format!("ratios REMI+ {remi:.2}, MMM {mmm:.2}"))?;
    Ok(format!("exact counts on 1000 scores; REMI+/MMT {remi:.2}, MMM/MMT {mmm:.2}"))
}

fn memorization_config() -> TrainConfig {
    TrainConfig {
        max_len: 64,
        batch_size: 8,
        learning_rate: 1e-3,
        warmup_steps: 100,
        validate_every: 2000,
        max_steps: 2000,
        patience: 20,
        seed: 0,
        augment: false,
        model: ModelConfig {
            max_len: 64,
            ..ModelConfig::desk()
        },
        ..TrainConfig::default()
    }
}

fn memorization(ckpt_out: &Path) -> Outcome {
    let start = Instant::now();
    let corpus = memorization_corpus();
    let config = memorization_config();
    let data = Dataset {
        train: corpus.clone(),
        valid: corpus.clone(),
        test: Vec::new(),
    };
    let outcome = train(&config, &data, None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    outcome.last.save(ckpt_out).map_err(|e| e.to_string())?;
    let model = outcome.last.model().map_err(|e| e.to_string())?;
    let loss = evaluate_loss(&model, &corpus, 64, 256, 8).map_err(|e| e.to_string())?;
    let ce = loss.per_field.0;
    let worst = ce.iter().cloned().fold(0.0, f64::max);
    check(worst < 0.1, format!("per-field cross entropy {ce:.4?}"))?;

    for (i, song) in corpus.iter().enumerate() {
        let spec = GenSpec {
            greedy: true,
            ..GenSpec::continuation(song, 4, 0)
        };
        let n = spec.prompt.len();
        let g = generate(&model, &spec).map_err(|e| e.to_string())?;
        let want = &song.events[n..n + 8];
        let got = g.sequence.events.get(n..n + 8);
        check(
            want.iter().all(Event::is_note) && got == Some(want),
            format!("song {i}: continuation diverges from the training sequence"),
        )?;
    }
    within(elapsed, 600)?;
    Ok(format!(
        "{} steps in {:.1} s; per-field CE max {worst:.4}; 8/8 continuations exact",
        outcome.log.last().map_or(0, |r| r.step),
        elapsed.as_secs_f64()
    ))
}

/// Grammar check written out here: types in order, zero fields, beats non-decreasing.
fn oracle_grammar(seq: &EventSequence, max_len: usize) -> Result<(), String> {
    let ev = &seq.events;
    check(ev.first() == Some(&Event::marker(EventType::StartOfSong)), "no start-of-song")?;
    let mut last_kind = 0;
    let mut last_beat = 0;
    let mut sons = 0;
    for (i, e) in ev.iter().enumerate() {
        let c = e.codes();
        check(c[0] >= last_kind, format!("type decreases at {i}"))?;
        check(i == 0 || c[0] != 0, format!("second start-of-song at {i}"))?;
        match c[0] {
            0 | 2 | 4 => check(c[1..] == [0; 5], format!("nonzero field on marker {i}"))?,
            1 => check(c[1..5] == [0; 4] && c[5] > 0, format!("bad instrument event {i}"))?,
            3 => {
                check(c[1..].iter().all(|&v| v > 0), format!("undefined note field at {i}"))?;
                check(c[1] >= last_beat, format!("beat decreases at {i}"))?;
                last_beat = c[1];
            }
            t => return Err(format!("type {t} at {i}")),
        }
        sons += usize::from(c[0] == 2);
        last_kind = c[0];
    }
    check(sons <= 1, "several start-of-notes")?;
    check(ev.iter().filter(|e| e.codes()[0] == 4).count() <= 1, "several end-of-song")?;
    let terminal = ev.last().is_some_and(|e| e.codes()[0] == 4);
    check(terminal || ev.len() == max_len, format!("stops at {} without end-of-song", ev.len()))
}

fn grammar(ckpt: &Path) -> Outcome {
    let model = ModelCheckpoint::load(ckpt)
        .and_then(|c| c.model())
        .map_err(|e| e.to_string())?;
    let max_len = model.config.max_len;
    let mut violations = 0;
    let mut eos = 0;
    for seed in 0..500 {
        let g = generate(&model, &GenSpec::unconditioned(seed)).map_err(|e| e.to_string())?;
        let seq = &g.sequence;
        let library = if seq.ends_with_eos() {
            seq.validate(NoteOrder::BeatMonotone)
        } else {
            seq.validate_prefix(NoteOrder::BeatMonotone)
        };
        if library.is_err() || oracle_grammar(seq, max_len).is_err() {
            violations += 1;
        }
        eos += usize::from(seq.ends_with_eos());
    }
    check(violations == 0, format!("{violations} of 500 samples violate the grammar"))?;
    Ok(format!("500 samples, 0 violations, {eos} end with end-of-song"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig {
        layers: 2,
        model_dim: 16,
        heads: 4,
        feedforward_dim: 64,
        max_len: 8,
        ..ModelConfig::desk()
    };
    let options = GradCheckOptions {
        step: 1e-5,
        tolerance: 1e-4,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&config, &options).map_err(|e| e.to_string())?;
    check(
        report.max_rel_error < 1e-4,
        format!("max relative error {:e} in {:?}", report.max_rel_error, report.failing()),
    )?;
    within(start.elapsed(), 300)?;
    Ok(format!(
        "{} arrays, max per-array relative error {:.2e} (worst single element {:.2e}) in {:.1} s",
        report.arrays.len(),
        report.max_rel_error,
        report.max_elementwise_error,
        start.elapsed().as_secs_f64()
    ))
}

fn score(notes: &[(u32, u8)]) -> MusicScore {
    MusicScore::new(notes.iter().map(|&(onset, pitch)| Note::new(onset, pitch, 12, 0).unwrap()).collect()).unwrap()
}

fn metric_oracles() -> Outcome {
    let m = |r: mmt_core::Result<f64>| r.map_err(|e| e.to_string());
    let mono = m(pitch_class_entropy(&score(&[(0, 60), (12, 72), (24, 48)])))?;
    check(mono == 0.0, format!("mono-class entropy {mono}"))?;
    let chromatic: Vec<(u32, u8)> = (0..12).map(|i| (12 * i as u32, 60 + i as u8)).collect();
    let uniform = m(pitch_class_entropy(&score(&chromatic)))?;
    check((uniform - 12f64.log2()).abs() < 1e-9, format!("chromatic entropy {uniform}"))?;
    let three_to_one = m(pitch_class_entropy(&score(&[(0, 60), (12, 60), (24, 72), (36, 67)])))?;
    let expected = -(0.75 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
    check((three_to_one - expected).abs() < 1e-9, format!("3:1 entropy {three_to_one}"))?;
    check((expected - 0.8113).abs() < 5e-5, "hand oracle mismatch")?;

    let c_major: Vec<(u32, u8)> = [60, 62, 64, 65, 67, 69, 71, 72]
        .iter()
        .enumerate()
        .map(|(i, &p)| (12 * i as u32, p))
        .collect();
    let scale = m(scale_consistency(&score(&c_major)))?;
    check(scale == 1.0, format!("C major scale consistency {scale}"))?;

    let periodic: Vec<(u32, u8)> = (0..4).flat_map(|bar| [(48 * bar, 60), (48 * bar + 18, 64)]).collect();
    let groove = m(groove_consistency(&score(&periodic)))?;
    check(groove == 1.0, format!("bar-periodic groove {groove}"))?;
    // Bar 1 onsets {0}, bar 2 {0..=4} (distance 4), bar 3 {0..=12} (distance 8).
    let mut bars = vec![(0, 60)];
    bars.extend((0..=4).map(|p| (48 + p, 60)));
    bars.extend((0..=12).map(|p| (96 + p, 60)));
    let hamming = m(groove_consistency(&score(&bars)))?;
    check((hamming - (1.0 - 6.0 / 48.0)).abs() < 1e-9, format!("hamming-case groove {hamming}"))?;
    Ok(format!("entropy 0 / {uniform:.9} / {three_to_one:.9}; scale {scale}; groove {groove} / {hamming}"))
}

fn random_trace(rng: &mut ChaCha8Rng, n: usize, heads: usize) -> AttentionTrace {
    let mut events = vec![Event::marker(EventType::StartOfSong), Event::instrument(1)];
    events.push(Event::marker(EventType::StartOfNotes));
    let mut beat = 1;
    while events.len() < n {
        beat += rng.random_range(0..3);
        events.push(Event::note(
            beat,
            rng.random_range(1..13),
            rng.random_range(1..129),
            rng.random_range(1..24),
            1,
        ));
    }
    events.truncate(n);
    let heads = (0..heads)
        .map(|_| {
            let mut a = Array2::<f64>::zeros((n, n));
            for s in 0..n {
                let w: Vec<f64> = (0..=s).map(|_| rng.random_range(0.01..1.0)).collect();
                let total: f64 = w.iter().sum();
                for t in 0..=s {
                    a[[s, t]] = w[t] / total;
                }
            }
            a
        })
        .collect();
    AttentionTrace { events, heads }
}

fn value(e: &Event, field: Field) -> Option<i64> {
    (e.codes()[0] == 3).then(|| i64::from(e.codes()[field as usize]) - 1)
}

/// Per-head gamma by a separate pass for every candidate difference.
fn brute_force_gamma(traces: &[AttentionTrace], field: Field) -> Vec<BTreeMap<i64, f64>> {
    let heads = traces[0].heads.len();
    let mut ks = BTreeSet::new();
    for tr in traces {
        for s in 0..tr.events.len() {
            for t in 0..s {
                if let (Some(xs), Some(xt)) = (value(&tr.events[s], field), value(&tr.events[t], field)) {
                    ks.insert(xt - xs);
                }
            }
        }
    }
    (0..heads)
        .map(|h| {
            let mut total = 0.0;
            let mut per_k = BTreeMap::new();
            for &k in &ks {
                let mut mass = 0.0;
                for tr in traces {
                    for s in 0..tr.events.len() {
                        for t in 0..s {
                            let (Some(xs), Some(xt)) = (value(&tr.events[s], field), value(&tr.events[t], field))
                            else {
                                continue;
                            };
                            if xt - xs == k {
                                mass += tr.heads[h][[s, t]];
                            }
                        }
                    }
                }
                total += mass;
                per_k.insert(k, mass);
            }
            per_k.values_mut().for_each(|v| *v /= total);
            per_k
        })
        .collect()
}

fn attention_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let traces: Vec<AttentionTrace> = (0..100)
        .map(|_| {
            let n = rng.random_range(5..=14);
            random_trace(&mut rng, n, 4)
        })
        .collect();
    let fields = [Field::Beat, Field::Position, Field::Pitch];
    let err = |e: mmt_core::Error| e.to_string();

    for &field in &fields {
        let p = RelAttnProfile::compute(&traces, field).map_err(err)?;
        for (h, (g, gain)) in p.gamma.iter().zip(&p.gain).enumerate() {
            let sg: f64 = g.values().sum();
            let sn: f64 = gain.values().sum();
            check((sg - 1.0).abs() < 1e-6, format!("{field:?} head {h}: sum gamma {sg}"))?;
            check(sn.abs() < 1e-9, format!("{field:?} head {h}: sum gain {sn}"))?;
        }

        // Equal weight on every pair: gamma reduces to the pair frequency.
        let constant: Vec<AttentionTrace> = traces
            .iter()
            .map(|t| {
                let n = t.events.len();
                AttentionTrace {
                    events: t.events.clone(),
                    heads: vec![Array2::from_elem((n, n), 0.05); 2],
                }
            })
            .collect();
        let p = RelAttnProfile::compute(&constant, field).map_err(err)?;
        let worst = p.gain.iter().flat_map(|g| g.values()).fold(0.0f64, |m, v| m.max(v.abs()));
        check(worst < 1e-12, format!("{field:?}: constant attention gain {worst:e}"))?;

        let mut small = 0;
        for tr in &traces {
            let n = tr.events.len();
            if n > 5 {
                continue;
            }
            small += 1;
            let one = std::slice::from_ref(tr);
            let Ok(sums) = RelAttnSums::from_traces(one, field) else { continue };
            let Ok(lib) = sums.gamma() else {
                check(brute_force_gamma(one, field)[0].is_empty(), "library rejects a defined trace")?;
                continue;
            };
            let oracle = brute_force_gamma(one, field);
            for (lh, oh) in lib.iter().zip(&oracle) {
                check(lh.keys().eq(oh.keys()), format!("{field:?}: differences disagree"))?;
                for (k, v) in lh {
                    check((v - oh[k]).abs() < 1e-12, format!("{field:?} k={k}: {v} vs {}", oh[k]))?;
                }
            }
        }
        check(small > 0, "no trace with n <= 5")?;
    }
    within(start.elapsed(), 60)?;
    Ok(format!("100 traces x 3 fields in {:.2} s", start.elapsed().as_secs_f64()))
}

struct Cli {
    bin: PathBuf,
}

impl Cli {
    fn run(&self, args: &[&str]) -> Result<(), String> {
        let out = Command::new(&self.bin)
            .args(args)
            .env_remove("MMT_SEED")
            .output()
            .map_err(|e| e.to_string())?;
        check(
            out.status.success(),
            format!("mmt {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)),
        )
    }
}

fn files_with_ext(dir: &Path, exts: &[&str]) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| exts.iter().any(|x| e == *x)) {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn write_corpus(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    let mut manifest = Vec::new();
    for (i, s) in memorization_corpus().iter().enumerate() {
        let rel = PathBuf::from(format!("song{i}.csv"));
        write_event_csv(s, dir.join(&rel)).unwrap();
        manifest.push(rel);
    }
    write_manifest(dir, &manifest).unwrap();
}

fn determinism(cli: &Cli, work: &Path) -> Outcome {
    let data = work.join("data");
    write_corpus(&data);
    let tiny = ["--set", "model.model_dim=16", "--set", "model.feedforward_dim=32"];
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let root = work.join(run);
        let p = |s: &str| root.join(s).display().to_string();
        let ckpt = p("train/last.ckpt");
        let data = data.display().to_string();
        cli.run(&["decode", "--in", &format!("{data}/song0.csv"), "--out", &p("midi/song0.mid")])?;
        cli.run(&["decode", "--in", &format!("{data}/song1.csv"), "--out", &p("midi/song1.mid")])?;
        cli.run(&["encode", "--in", &p("midi/song0.mid"), "--out", &p("encode/song0.csv")])?;
        cli.run(&["convert", "--in", &p("midi"), "--out", &p("convert")])?;
        let train_out = p("train");
        let mut train_args = vec![
            "train", "--data", &data, "--out", &train_out, "--max-steps", "30",
            "--validate-every", "10", "--seed", "3", "--set", "max_len=64",
            "--set", "model.max_len=64", "--set", "augment=true",
        ];
        train_args.extend(tiny);
        cli.run(&train_args)?;
        let prompt = format!("{data}/song2.csv");
        for (mode, extra) in [
            ("unconditioned", vec![]),
            ("instruments", vec!["--instruments", "piano,violin"]),
            ("continuation", vec!["--prompt", prompt.as_str(), "--beats", "4"]),
        ] {
            let out = p(&format!("gen/{mode}"));
            let mut args = vec![
                "generate", "--checkpoint", &ckpt, "--out", &out, "--mode", mode,
                "--samples", "3", "--seed", "11",
            ];
            args.extend(extra);
            cli.run(&args)?;
        }
        cli.run(&["evaluate", "--in", &p("gen/unconditioned"), "--out", &p("evaluate")])?;
        cli.run(&["benchmark", "--checkpoint", &ckpt, "--samples", "3", "--out", &p("benchmark")])?;
        cli.run(&["attention", "--checkpoint", &ckpt, "--data", &data, "--out", &p("attention")])?;
        cli.run(&["gradcheck", "--set", "layers=1", "--set", "model_dim=8", "--out", &p("gradcheck")])?;
        runs.push(files_with_ext(&root, &["csv", "mid", "ckpt", "bin"]));
    }
    let (a, b) = (&runs[0], &runs[1]);
    check(a.keys().eq(b.keys()), "runs wrote different file sets")?;
    let differing: Vec<&String> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    check(differing.is_empty(), format!("differ between runs: {differing:?}"))?;
    for sub in ["midi", "encode", "convert", "train", "gen/unconditioned", "evaluate", "benchmark", "attention", "gradcheck"] {
        check(work.join("a").join(sub).join("run.config").is_file(), format!("{sub} has no run.config"))?;
    }
    let csvs = a.keys().filter(|k| k.ends_with(".csv")).count();
    Ok(format!("9 subcommands, {csvs} CSVs and {} other files byte-identical", a.len() - csvs))
}

fn benchmark(cli: &Cli, ckpt: &Path, work: &Path) -> Outcome {
    let out = work.join("bench");
    let ckpt = ckpt.display().to_string();
    let out_s = out.display().to_string();
    cli.run(&["benchmark", "--checkpoint", &ckpt, "--samples", "20", "--out", &out_s])?;
    let csv = std::fs::read_to_string(out.join("benchmark.csv")).map_err(|e| e.to_string())?;
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let field = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .and_then(|i| row.get(i))
            .ok_or(format!("benchmark.csv lacks {name}"))
            .and_then(|v| v.parse::<f64>().map_err(|e| e.to_string()))
    };
    let epn = field("events_per_note")?;
    let length = field("avg_sample_length_sec")?;
    let notes = field("total_notes")?;
    check(epn == 1.0, format!("events per note {epn}"))?;
    check(notes > 0.0, "no notes generated")?;
    let text = std::fs::read_to_string(out.join("benchmark.txt")).map_err(|e| e.to_string())?;
    let nps = text
        .lines()
        .find_map(|l| l.strip_prefix("notes per second: "))
        .ok_or("benchmark.txt lacks notes per second")?;
    check(nps.parse::<f64>().is_ok_and(|v| v > 0.0), format!("notes per second {nps}"))?;
    Ok(format!("events/note {epn}; avg length {length:.1} s; {nps} notes/s on this machine"))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let ckpt = work.path().join("memorization.ckpt");
    let cli = Cli {
        bin: PathBuf::from(env!("CARGO_BIN_EXE_mmt")),
    };
    // A fresh random checkpoint stands in if training itself fails, so the
    // later criteria still report.
    let fallback = |path: &Path| {
        if !path.exists() {
            let model = Mmt::<f32>::new(memorization_config().model, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            ModelCheckpoint::new(&model, TrainingState::default()).save(path).unwrap();
        }
    };

    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("codec round-trip", codec_round_trip()));
    results.push(("one event per note", one_event_per_note()));
    results.push(("memorization", memorization(&ckpt)));
    fallback(&ckpt);
    results.push(("grammar of generation", grammar(&ckpt)));
    results.push(("gradient check", gradient_check()));
    results.push(("metric oracles", metric_oracles()));
    results.push(("attention oracles", attention_oracles()));
    results.push(("determinism", determinism(&cli, &work.path().join("det"))));
    results.push(("benchmark report", benchmark(&cli, &ckpt, work.path())));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
