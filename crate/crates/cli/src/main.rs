//! `mmt`: convert, train, generate, evaluate and analyse multitrack music.
//!
//! Exit codes: 0 on success, 1 on a runtime or domain error, 2 on a usage
//! error (unknown flag, malformed or unknown setting).

mod settings;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mmt_core::attention::{collect_traces, export_profile, save_traces, RelAttnProfile, ANALYSED_FIELDS};
use mmt_core::checkpoint::ModelCheckpoint;
use mmt_core::codec::{read_event_csv, write_event_csv, Codec, EventSequence, MAX_BEATS, EVENT_CSV_HEADER};
use mmt_core::metrics::{benchmark_generation, MetricReport};
use mmt_core::midi::{load_midi, save_midi};
use mmt_core::model::gradcheck::{grad_check, GradCheckOptions};
use mmt_core::model::ModelConfig;
use mmt_core::sampler::{generate, GenSpec};
use mmt_core::score::MusicScore;
use mmt_core::train::data::{load_sequences, write_manifest};
use mmt_core::train::{load_dataset, train, write_log, TrainConfig};

use settings::{RunConfig, Settings};

#[derive(Parser, Debug)]
#[command(name = "mmt", version, about = "Multitrack music transformer toolkit")]
struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, env = "MMT_SEED", default_value_t = 0)]
    seed: u64,

    /// TOML file of settings; explicit flags and --set take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Overrides one setting, e.g. `--set model.layers=4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encodes a MIDI file or a directory of MIDI files into event CSVs plus a manifest.
    Convert(ConvertArgs),
    /// Encodes one MIDI file as an event CSV.
    Encode(InOut),
    /// Decodes one event CSV to MIDI.
    Decode(InOut),
    /// Trains a model on a converted dataset.
    Train(TrainArgs),
    /// Samples sequences from a checkpoint.
    Generate(GenerateArgs),
    /// Computes objective metrics over a directory of MIDI files or event CSVs.
    Evaluate(EvaluateArgs),
    /// Measures generation length and throughput.
    Benchmark(BenchmarkArgs),
    /// Mean relative attention analysis of the last layer.
    Attention(AttentionArgs),
    /// Compares analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct InOut {
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory with `manifest.txt` and event CSVs.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    validate_every: Option<u64>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Unconditioned,
    Instruments,
    Continuation,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Unconditioned => "unconditioned",
            Mode::Instruments => "instruments",
            Mode::Continuation => "continuation",
        }
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Comma-separated instrument names, for `--mode instruments`.
    #[arg(long, value_name = "NAMES")]
    instruments: Option<String>,
    /// Event CSV to continue, for `--mode continuation`.
    #[arg(long, value_name = "FILE")]
    prompt: Option<PathBuf>,
    /// Beats of the prompt kept for continuation.
    #[arg(long)]
    beats: Option<u16>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    max_beat: Option<u16>,
    /// Only sample instruments declared in the header.
    #[arg(long)]
    restrict_instruments: bool,
    /// Most likely code per field instead of sampling.
    #[arg(long)]
    greedy: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args, Debug)]
struct AttentionArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Directory with `manifest.txt` and event CSVs; the first samples are used.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Optional directory for `gradcheck.csv`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

/// Errors that should exit with the usage code.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Convert(a) => convert(cli, a),
        Command::Encode(a) => encode(cli, a),
        Command::Decode(a) => decode(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Generate(a) => generate_cmd(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Benchmark(a) => benchmark(cli, a),
        Command::Attention(a) => attention(cli, a),
        Command::Gradcheck(a) => gradcheck(cli, a),
    }
}

/// Defaults, then the config file, then `--set`, then explicit flags.
fn resolve(cli: &Cli, mut settings: Settings, flags: &[(&str, Option<String>)]) -> Result<Settings> {
    let layered = (|| {
        if let Some(path) = &cli.config {
            settings.apply_file(path)?;
        }
        settings.apply_overrides(&cli.overrides)?;
        for (k, v) in flags {
            settings.set_opt(k, v.as_ref())?;
        }
        Ok::<_, anyhow::Error>(())
    })();
    match layered {
        Ok(()) => Ok(settings),
        Err(e) if e.downcast_ref::<std::io::Error>().is_some() => Err(e),
        Err(e) => Err(Usage(format!("{e:#}")).into()),
    }
}

fn usage(e: anyhow::Error) -> anyhow::Error {
    Usage(format!("{e:#}")).into()
}

fn no_settings(cli: &Cli) -> Result<Settings> {
    resolve(cli, Settings::default(), &[])
}

fn write_run_config(cli: &Cli, command: &str, dir: &Path, paths: &[(&str, &Path)], settings: &Settings) -> Result<()> {
    RunConfig {
        command,
        seed: cli.seed,
        paths: paths
            .iter()
            .map(|(k, p)| (k.to_string(), p.display().to_string()))
            .collect(),
        settings: settings.values(),
    }
    .write(dir)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn parent_dir(file: &Path) -> Result<PathBuf> {
    let dir = match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    create_dir(&dir)?;
    Ok(dir)
}

fn is_midi(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
}

/// Files under `dir` accepted by `keep`, sorted by path.
fn collect_files(dir: &Path, keep: &dyn Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).with_context(|| format!("reading {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if keep(&path) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Loads a MIDI file and drops notes past the encodable beat range.
fn load_trimmed(path: &Path) -> Result<(MusicScore, usize)> {
    let score = load_midi(path)?;
    let trimmed = score.trim_beats(MAX_BEATS);
    let dropped = score.len() - trimmed.len();
    Ok((trimmed, dropped))
}

fn convert(cli: &Cli, a: &ConvertArgs) -> Result<()> {
    let settings = no_settings(cli)?;
    create_dir(&a.out)?;
    let codec = Codec::default();
    let (root, files) = if a.input.is_dir() {
        (a.input.clone(), collect_files(&a.input, &is_midi)?)
    } else {
        let root = a.input.parent().map(Path::to_path_buf).unwrap_or_default();
        (root, vec![a.input.clone()])
    };
    let mut manifest = Vec::new();
    let mut skipped = 0;
    for file in &files {
        let encoded = load_trimmed(file).and_then(|(s, _)| Ok(codec.encode(&s)?));
        let seq = match encoded {
            Ok(seq) => seq,
            Err(e) if files.len() > 1 => {
                eprintln!("skipping {}: {e:#}", file.display());
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.context(format!("converting {}", file.display()))),
        };
        let rel = file.strip_prefix(&root).unwrap_or(file).with_extension("csv");
        let dest = a.out.join(&rel);
        if let Some(p) = dest.parent() {
            create_dir(p)?;
        }
        write_event_csv(&seq, &dest)?;
        manifest.push(rel);
    }
    if manifest.is_empty() {
        bail!("no MIDI file under {} could be converted", a.input.display());
    }
    write_manifest(&a.out, &manifest)?;
    write_run_config(cli, "convert", &a.out, &[("in", &a.input), ("out", &a.out)], &settings)?;
    println!("converted {} files ({skipped} skipped) into {}", manifest.len(), a.out.display());
    Ok(())
}

fn encode(cli: &Cli, a: &InOut) -> Result<()> {
    let settings = no_settings(cli)?;
    let (score, dropped) = load_trimmed(&a.input)?;
    if dropped > 0 {
        eprintln!("dropped {dropped} notes beyond beat {MAX_BEATS}");
    }
    let seq = Codec::default().encode(&score)?;
    let dir = parent_dir(&a.out)?;
    write_event_csv(&seq, &a.out)?;
    write_run_config(cli, "encode", &dir, &[("in", &a.input), ("out", &a.out)], &settings)?;
    println!("{} events, {} notes", seq.len(), seq.note_count());
    Ok(())
}

fn decode(cli: &Cli, a: &InOut) -> Result<()> {
    let settings = no_settings(cli)?;
    let seq = read_event_csv(&a.input)?;
    let score = Codec::default().decode(&seq)?;
    let dir = parent_dir(&a.out)?;
    save_midi(&score, &a.out)?;
    write_run_config(cli, "decode", &dir, &[("in", &a.input), ("out", &a.out)], &settings)?;
    println!("{} notes", score.len());
    Ok(())
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let defaults = Settings::from_serialize(&TrainConfig::default(), &["seed", "data_dir", "model.vocab_sizes"]);
    let settings = resolve(
        cli,
        defaults,
        &[
            ("max_steps", a.max_steps.map(|v| v.to_string())),
            ("batch_size", a.batch_size.map(|v| v.to_string())),
            ("learning_rate", a.learning_rate.map(|v| v.to_string())),
            ("validate_every", a.validate_every.map(|v| v.to_string())),
            ("patience", a.patience.map(|v| v.to_string())),
        ],
    )?;
    let mut config = TrainConfig {
        data_dir: a.data.clone(),
        seed: cli.seed,
        ..TrainConfig::default()
    };
    for (k, v) in settings.iter() {
        if !config.set(k, v).map_err(|e| Usage(e.to_string()))? {
            return Err(Usage(format!("setting {k} is not supported by train")).into());
        }
    }
    config.validate().map_err(|e| Usage(e.to_string()))?;

    let data = load_dataset(&a.data, config.split, config.seed)?;
    println!(
        "train/valid/test: {}/{}/{} sequences",
        data.train.len(),
        data.valid.len(),
        data.test.len()
    );
    create_dir(&a.out)?;
    write_run_config(cli, "train", &a.out, &[("data", &a.data), ("out", &a.out)], &settings)?;
    let outcome = train(&config, &data, Some(&a.out))?;
    outcome.best.save(a.out.join("best.ckpt"))?;
    outcome.last.save(a.out.join("last.ckpt"))?;
    write_log(a.out.join("log.csv"), &outcome.log)?;
    let last = outcome.log.last().ok_or_else(|| anyhow!("training produced no log"))?;
    println!(
        "stopped at step {}{}; train loss {:.4}; best valid loss {}",
        last.step,
        if outcome.stopped_early { " (early stop)" } else { "" },
        last.train_loss,
        outcome
            .best
            .state
            .best_valid_loss
            .map_or("n/a".to_string(), |v| format!("{v:.4}"))
    );
    Ok(())
}

fn parse_instruments(names: &str, codec: &Codec) -> Result<Vec<u16>> {
    let mut codes: Vec<u16> = names
        .split(',')
        .map(str::trim)
        .filter(|n| !n.is_empty())
        .map(|n| {
            codec
                .instruments
                .index_of_name(n)
                .map(|i| u16::from(i) + 1)
                .ok_or_else(|| anyhow!("unknown instrument {n:?}"))
        })
        .collect::<Result<_>>()?;
    if codes.is_empty() {
        bail!("--instruments names no instrument");
    }
    codes.sort_unstable();
    codes.dedup();
    Ok(codes)
}

fn generate_cmd(cli: &Cli, a: &GenerateArgs) -> Result<()> {
    let defaults = Settings::new([
        ("mode", "unconditioned"),
        ("instruments", ""),
        ("beats", "4"),
        ("samples", "1"),
        ("max_len", "1024"),
        ("max_beat", "256"),
        ("restrict_instruments", "false"),
        ("greedy", "false"),
    ]);
    let settings = resolve(
        cli,
        defaults,
        &[
            ("mode", a.mode.map(|m| m.name().to_string())),
            ("instruments", a.instruments.clone()),
            ("beats", a.beats.map(|v| v.to_string())),
            ("samples", a.samples.map(|v| v.to_string())),
            ("max_len", a.max_len.map(|v| v.to_string())),
            ("max_beat", a.max_beat.map(|v| v.to_string())),
            ("restrict_instruments", a.restrict_instruments.then(|| "true".into())),
            ("greedy", a.greedy.then(|| "true".into())),
        ],
    )?;
    let mode = Mode::from_str(&settings.get::<String>("mode")?, true).map_err(Usage)?;
    let samples: usize = settings.get("samples").map_err(usage)?;
    let max_len: usize = settings.get("max_len").map_err(usage)?;
    let max_beat: u16 = settings.get("max_beat").map_err(usage)?;
    let beats: u16 = settings.get("beats").map_err(usage)?;
    let restrict: bool = settings.get("restrict_instruments").map_err(usage)?;
    let greedy: bool = settings.get("greedy").map_err(usage)?;

    let codec = Codec::default();
    let mut paths: Vec<(&str, &Path)> = vec![("checkpoint", &a.checkpoint), ("out", &a.out)];
    let base = match mode {
        Mode::Unconditioned => GenSpec::unconditioned(cli.seed),
        Mode::Instruments => {
            let names = settings.get::<String>("instruments")?;
            GenSpec::instruments(&parse_instruments(&names, &codec)?, cli.seed)
        }
        Mode::Continuation => {
            let prompt = a
                .prompt
                .as_ref()
                .ok_or_else(|| Usage("--mode continuation needs --prompt".into()))?;
            paths.push(("prompt", prompt));
            GenSpec::continuation(&read_event_csv(prompt)?, beats, cli.seed)
        }
    };
    let spec = GenSpec {
        max_len,
        max_beat,
        restrict_to_declared_instruments: restrict,
        greedy,
        ..base
    };
    spec.validate()?;
    let model = ModelCheckpoint::load(&a.checkpoint)?.model()?;

    create_dir(&a.out)?;
    write_run_config(cli, "generate", &a.out, &paths, &settings)?;
    for i in 0..samples {
        let g = generate(
            &model,
            &GenSpec {
                seed: cli.seed.wrapping_add(i as u64),
                ..spec.clone()
            },
        )?;
        let stem = format!("sample{i:03}");
        write_event_csv(&g.sequence, a.out.join(format!("{stem}.csv")))?;
        let score = codec.decode(&g.sequence)?;
        save_midi(&score, a.out.join(format!("{stem}.mid")))?;
        println!(
            "{stem}: {} events, {} notes, {} decode steps",
            g.sequence.len(),
            score.len(),
            g.decode_steps
        );
    }
    Ok(())
}

fn is_event_csv(path: &Path) -> bool {
    if path.extension().and_then(|e| e.to_str()) != Some("csv") {
        return false;
    }
    std::fs::read_to_string(path)
        .ok()
        .and_then(|t| t.lines().next().map(|l| l.trim() == EVENT_CSV_HEADER.join(",")))
        .unwrap_or(false)
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let settings = no_settings(cli)?;
    let codec = Codec::default();
    // A MIDI file next to an event CSV of the same stem is the same piece.
    let files = collect_files(&a.input, &|p| {
        is_event_csv(p) || (is_midi(p) && !is_event_csv(&p.with_extension("csv")))
    })?;
    let mut scores = Vec::with_capacity(files.len());
    for f in &files {
        let score = if is_midi(f) {
            load_midi(f)?
        } else {
            codec.decode(&read_event_csv(f)?)?
        };
        scores.push(score);
    }
    if scores.is_empty() {
        bail!("no MIDI files or event CSVs under {}", a.input.display());
    }
    let report = MetricReport::compute(&scores);
    create_dir(&a.out)?;
    std::fs::write(a.out.join("metrics.csv"), report.to_csv())?;
    let mut text = format!("{} pieces from {}\n", scores.len(), a.input.display());
    for (name, s) in [
        ("pitch class entropy", report.pitch_class_entropy),
        ("scale consistency", report.scale_consistency),
        ("groove consistency", report.groove_consistency),
    ] {
        match s {
            Some(s) => writeln!(text, "{name}: {:.4} ± {:.4} (n = {})", s.mean, s.ci95, s.n)?,
            None => writeln!(text, "{name}: undefined for every piece")?,
        }
    }
    std::fs::write(a.out.join("metrics.txt"), &text)?;
    write_run_config(cli, "evaluate", &a.out, &[("in", &a.input), ("out", &a.out)], &settings)?;
    print!("{text}");
    Ok(())
}

fn benchmark(cli: &Cli, a: &BenchmarkArgs) -> Result<()> {
    let settings = resolve(
        cli,
        Settings::new([("samples", "10"), ("max_len", "1024")]),
        &[
            ("samples", a.samples.map(|v| v.to_string())),
            ("max_len", a.max_len.map(|v| v.to_string())),
        ],
    )?;
    let samples: usize = settings.get("samples").map_err(usage)?;
    let max_len: usize = settings.get("max_len").map_err(usage)?;
    let model = ModelCheckpoint::load(&a.checkpoint)?.model()?;
    let (report, _) = benchmark_generation(&model, samples, max_len, cli.seed)?;

    create_dir(&a.out)?;
    // Timing varies between runs, so it stays out of the CSV.
    let csv = format!(
        "samples,total_notes,avg_sample_length_sec,events_per_note\n{},{},{},{}\n",
        report.samples, report.total_notes, report.avg_sample_length_sec, report.events_per_note
    );
    std::fs::write(a.out.join("benchmark.csv"), csv)?;
    let text = format!(
        "samples: {}\ntotal notes: {}\naverage sample length: {:.2} s (120 BPM)\n\
         events per note: {}\nnotes per second: {:.2}\nhardware: {}\n",
        report.samples,
        report.total_notes,
        report.avg_sample_length_sec,
        report.events_per_note,
        report.notes_per_second,
        report.hardware
    );
    std::fs::write(a.out.join("benchmark.txt"), &text)?;
    write_run_config(cli, "benchmark", &a.out, &[("checkpoint", &a.checkpoint), ("out", &a.out)], &settings)?;
    print!("{text}");
    Ok(())
}

fn attention(cli: &Cli, a: &AttentionArgs) -> Result<()> {
    let settings = resolve(
        cli,
        Settings::new([("samples", "100")]),
        &[("samples", a.samples.map(|v| v.to_string()))],
    )?;
    let samples: usize = settings.get("samples").map_err(usage)?;
    let model = ModelCheckpoint::load(&a.checkpoint)?.model()?;
    let seqs: Vec<EventSequence> = load_sequences(&a.data)?.into_iter().take(samples).collect();
    if seqs.is_empty() {
        bail!("{} lists no sequences", a.data.display());
    }
    let traces = collect_traces(&model, &seqs)?;
    let profiles: Vec<RelAttnProfile> = ANALYSED_FIELDS
        .iter()
        .map(|&f| RelAttnProfile::compute(&traces, f))
        .collect::<mmt_core::Result<_>>()?;

    create_dir(&a.out)?;
    save_traces(a.out.join("traces.bin"), &traces)?;
    export_profile(&profiles, &a.out)?;
    write_run_config(
        cli,
        "attention",
        &a.out,
        &[("checkpoint", &a.checkpoint), ("data", &a.data), ("out", &a.out)],
        &settings,
    )?;
    println!("analysed {} sequences into {}", traces.len(), a.out.display());
    Ok(())
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<()> {
    let model = ModelConfig {
        layers: 2,
        model_dim: 16,
        heads: 4,
        feedforward_dim: 64,
        max_len: 8,
        dropout: 0.0,
        ..ModelConfig::desk()
    };
    let options = GradCheckOptions::default();
    let mut defaults = Settings::from_serialize(&model, &["vocab_sizes", "dropout"]);
    defaults.insert("step", options.step);
    defaults.insert("tolerance", options.tolerance);
    let settings = resolve(cli, defaults, &[])?;

    let mut config = model;
    let mut options = GradCheckOptions {
        seed: cli.seed,
        ..options
    };
    for (k, v) in settings.iter() {
        match k.as_str() {
            "step" => options.step = settings.get(k).map_err(usage)?,
            "tolerance" => options.tolerance = settings.get(k).map_err(usage)?,
            _ => {
                config.set(k, v).map_err(|e| Usage(e.to_string()))?;
            }
        }
    }
    let report = grad_check(&config, &options)?;

    let mut csv = String::from("array,elements,rel_error,max_elementwise_error,passed\n");
    for c in &report.arrays {
        writeln!(
            csv,
            "{},{},{:e},{:e},{}",
            c.name, c.elements, c.rel_error, c.max_elementwise_error, c.passed
        )?;
    }
    if let Some(out) = &a.out {
        create_dir(out)?;
        std::fs::write(out.join("gradcheck.csv"), &csv)?;
        write_run_config(cli, "gradcheck", out, &[("out", out)], &settings)?;
    }
    println!(
        "{} arrays, max relative error {:e} (tolerance {:e}), worst element {:e}",
        report.arrays.len(),
        report.max_rel_error,
        report.tolerance,
        report.max_elementwise_error
    );
    if !report.passed {
        bail!("gradient check failed for: {}", report.failing().join(", "));
    }
    Ok(())
}
