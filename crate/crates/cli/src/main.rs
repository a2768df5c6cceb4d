use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};
use quintuple_core::chord::{analyze, detect_key};
use quintuple_core::config::Config;
use quintuple_core::dataset::{crop_tokens, split_corpus, ManifestEntry};
use quintuple_core::gan::{generate, synthetic_corpus, train, GanState, TrainLog};
use quintuple_core::metrics::{evaluate, MetricReport, PieceMetrics};
use quintuple_core::midi::{load_midi, save_midi};
use quintuple_core::nn::checkpoint::{load_checkpoint, save_checkpoint};
use quintuple_core::nn::Checkpoint;
use quintuple_core::score::Score;
use quintuple_core::token::{read_token_csv, to_codes, write_token_csv, CodeRow, EventType, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PITCH_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

#[derive(Parser)]
#[command(name = "quintuple", version, about = "Chord-aware quintuple tokens, music metrics and a toy relativistic GAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// MIDI files in a directory → token CSVs (one per file).
    Tokenize {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Token CSVs in a directory → MIDI files.
    Detokenize {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Detected key and per-bar chords of a MIDI file or directory.
    Chords {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantized score of a MIDI file or directory as JSON.
    Score {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PCES / SCS / GCS / AL of generated pieces against a reference set.
    Metrics {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Adversarial training; writes the log, the config and a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Samples token sequences from a checkpoint; writes CSVs and MIDI.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus bookkeeping.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Seeded 80/10/10 train/test/valid split of the files in a directory.
    Split {
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Usage errors exit with 2, data errors with 1.
enum CliError {
    Usage(String),
    Data(String),
}

type CliResult<T = ()> = Result<T, CliError>;

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Tokenize { input, out, config } => cmd_tokenize(&input, &out, config.as_deref()),
        Command::Detokenize { input, out, config } => cmd_detokenize(&input, &out, config.as_deref()),
        Command::Chords { input, out } => cmd_chords(&input, &out),
        Command::Score { input, out } => cmd_score(&input, &out),
        Command::Metrics { gen, reference, k, out, config } => cmd_metrics(&gen, &reference, k, &out, config.as_deref()),
        Command::Train { config, steps, out, seed } => cmd_train(config.as_deref(), steps, &out, seed),
        Command::Generate { ckpt, n, seed, out } => cmd_generate(&ckpt, n, seed, &out),
        Command::Dataset { command: DatasetCommand::Split { input, seed, out } } => cmd_split(&input, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

// ---------------------------------------------------------------- helpers

fn load_config(path: Option<&Path>) -> CliResult<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) if !p.is_file() => Err(usage(format!("config file {} not found", p.display()))),
        Some(p) => Config::load(p).map_err(data),
    }
}

fn has_ext(p: &Path, exts: &[&str]) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

fn is_midi(p: &Path) -> bool {
    has_ext(p, &["mid", "midi"])
}

fn is_csv(p: &Path) -> bool {
    has_ext(p, &["csv"])
}

/// Files of `dir` accepted by `keep`, sorted by name.
fn list_files(dir: &Path, keep: fn(&Path) -> bool) -> CliResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(usage(format!("directory {} not found", dir.display())));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(data)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && keep(p))
        .collect();
    files.sort();
    Ok(files)
}

/// A single file, or every matching file of a directory.
fn inputs(path: &Path, keep: fn(&Path) -> bool) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        Ok(vec![path.to_path_buf()])
    } else {
        list_files(path, keep)
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "piece".into(), |s| s.to_string_lossy().into_owned())
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn create_out(out: &Path) -> CliResult {
    fs::create_dir_all(out).map_err(|e| data(format!("cannot create {}: {e}", out.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, contents).map_err(|e| data(format!("cannot write {}: {e}", path.display())))
}

fn read_tokens(path: &Path) -> CliResult<Vec<CodeRow>> {
    let f = fs::File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    read_token_csv(BufReader::new(f)).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn write_tokens(path: &Path, rows: &[CodeRow]) -> CliResult {
    let f = fs::File::create(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    write_token_csv(&mut w, rows).and_then(|_| w.flush()).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Loads a piece from MIDI or from a token CSV.
fn load_piece(path: &Path, vocab: &Vocabulary) -> CliResult<Score> {
    if is_csv(path) {
        let decoded = vocab.decode_codes(&read_tokens(path)?);
        if decoded.warnings > 0 {
            warn!("{}: skipped {} invalid token rows", path.display(), decoded.warnings);
        }
        Ok(decoded.score)
    } else {
        load_midi(path).map_err(|e| data(format!("{}: {e}", path.display())))
    }
}

fn is_piece(p: &Path) -> bool {
    is_midi(p) || is_csv(p)
}

// ---------------------------------------------------------------- commands

fn cmd_tokenize(input: &Path, out: &Path, config: Option<&Path>) -> CliResult {
    let cfg = load_config(config)?;
    let vocab = cfg.vocabulary();
    let files = list_files(input, is_midi)?;
    create_out(out)?;
    let mut written = 0;
    for f in &files {
        let score = match load_midi(f) {
            Ok(s) => s,
            Err(e) => {
                warn!("skipping {}: {e}", f.display());
                continue;
            }
        };
        let chords = if cfg.include_chords { analyze(&score) } else { Vec::new() };
        match vocab.encode(&score, &chords) {
            Ok(events) => {
                let rows: Vec<CodeRow> = events.iter().map(to_codes).collect();
                write_tokens(&out.join(format!("{}.csv", stem(f))), &rows)?;
                written += 1;
            }
            Err(e) => warn!("skipping {}: {e}", f.display()),
        }
    }
    info!("tokenized {written} of {} files into {}", files.len(), out.display());
    Ok(())
}

fn cmd_detokenize(input: &Path, out: &Path, config: Option<&Path>) -> CliResult {
    let vocab = load_config(config)?.vocabulary();
    let files = list_files(input, is_csv)?;
    create_out(out)?;
    for f in &files {
        let score = load_piece(f, &vocab)?;
        save_midi(&score, out.join(format!("{}.mid", stem(f)))).map_err(|e| data(format!("{}: {e}", f.display())))?;
    }
    info!("wrote {} MIDI files to {}", files.len(), out.display());
    Ok(())
}

fn cmd_chords(input: &Path, out: &Path) -> CliResult {
    let files = inputs(input, is_midi)?;
    create_out(out)?;
    for f in &files {
        let score = load_midi(f).map_err(|e| data(format!("{}: {e}", f.display())))?;
        let key = detect_key(&score).map_err(|e| data(format!("{}: {e}", f.display())))?;
        let mut csv = String::from("bar,degree,root,mode,extension\n");
        for (bar, c) in analyze(&score) {
            csv += &format!(
                "{bar},{},{},{},{}\n",
                c.degree,
                PITCH_NAMES[c.root as usize],
                c.mode.name(),
                c.extension.name()
            );
        }
        write_file(&out.join(format!("{}.chords.csv", stem(f))), csv)?;
        info!("{}: key {} {:?}", file_name(f), PITCH_NAMES[key.tonic as usize], key.mode);
    }
    Ok(())
}

fn cmd_score(input: &Path, out: &Path) -> CliResult {
    let files = inputs(input, is_midi)?;
    create_out(out)?;
    for f in &files {
        let score = load_midi(f).map_err(|e| data(format!("{}: {e}", f.display())))?;
        let json = serde_json::to_string_pretty(&score).map_err(data)?;
        write_file(&out.join(format!("{}.json", stem(f))), json)?;
    }
    Ok(())
}

fn load_set(dir: &Path, vocab: &Vocabulary) -> CliResult<Vec<(String, Score)>> {
    let files = list_files(dir, is_piece)?;
    let pieces: Vec<_> = files.iter().map(|f| Ok((file_name(f), load_piece(f, vocab)?))).collect::<CliResult<_>>()?;
    if pieces.is_empty() {
        return Err(data(format!("no MIDI or token CSV files in {}", dir.display())));
    }
    Ok(pieces)
}

fn piece_row(set: &str, p: &PieceMetrics) -> String {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    format!("{set},{},{},{},{},{}\n", p.id, opt(p.pce), opt(p.sc), opt(p.gc), p.seconds)
}

fn cmd_metrics(gen: &Path, reference: &Path, k: Option<f64>, out: &Path, config: Option<&Path>) -> CliResult {
    let cfg = load_config(config)?;
    let k = k.unwrap_or(cfg.metrics.k_seconds);
    if !(k.is_finite() && k > 0.0) {
        return Err(usage("--k must be a positive number of seconds"));
    }
    let vocab = cfg.vocabulary();
    let g = load_set(gen, &vocab)?;
    let r = load_set(reference, &vocab)?;
    let report: MetricReport = evaluate(&g, &r, k, cfg.metrics.scales).map_err(data)?;
    create_out(out)?;
    write_file(&out.join("report.json"), serde_json::to_string_pretty(&report).map_err(data)?)?;
    let mut csv = String::from("set,id,pce,sc,gc,seconds\n");
    for p in &report.generated {
        csv += &piece_row("generated", p);
    }
    for p in &report.reference {
        csv += &piece_row("reference", p);
    }
    write_file(&out.join("pieces.csv"), csv)?;
    info!("PCES {:.4}  SCS {:.4}  GCS {:.4}  AL {:.2} s", report.pces, report.scs, report.gcs, report.al_seconds);
    Ok(())
}

fn training_corpus(cfg: &Config, vocab: &Vocabulary) -> CliResult<Vec<Vec<CodeRow>>> {
    let Some(dir) = &cfg.corpus_dir else {
        return Ok(synthetic_corpus(vocab, cfg.include_chords));
    };
    let max_len = cfg.train.generator.max_len;
    let mut corpus = Vec::new();
    for f in list_files(dir, is_csv)? {
        let mut rows = read_tokens(&f)?;
        if let Some(bad) = rows.iter().find(|r| vocab.from_codes(**r).is_err()) {
            return Err(data(format!("{}: invalid token row {bad:?}", f.display())));
        }
        if !cfg.include_chords {
            rows.retain(|r| r[0] != EventType::Chord.code());
        }
        let rows = crop_tokens(&rows, max_len);
        if rows.len() >= 2 {
            corpus.push(rows);
        }
    }
    if corpus.is_empty() {
        return Err(data(format!("no usable token CSVs in {}", dir.display())));
    }
    Ok(corpus)
}

fn cmd_train(config: Option<&Path>, steps: usize, out: &Path, seed: Option<u64>) -> CliResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let vocab = cfg.vocabulary();
    let corpus = training_corpus(&cfg, &vocab)?;
    create_out(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = GanState::init(&cfg.train.generator, &cfg.train.critic, &mut rng).map_err(data)?;
    let log_path = out.join("train_log.csv");
    let mut log = BufWriter::new(fs::File::create(&log_path).map_err(data)?);
    writeln!(log, "{}", TrainLog::CSV_HEADER).map_err(data)?;
    let mut io_error = None;
    let logs = train(&mut state, &cfg.train, &vocab, &corpus, steps, &mut rng, |row| {
        if let Err(e) = writeln!(log, "{}", row.csv_row()) {
            io_error.get_or_insert(e);
        }
        if row.step % 10 == 0 {
            info!("step {:>5}  L_G {:.4}  L_D {:.4}  CE {:.4}", row.step, row.loss_g, row.loss_d, row.ce);
        }
    })
    .map_err(data)?;
    if let Some(e) = io_error {
        return Err(data(e));
    }
    log.flush().map_err(data)?;
    if logs.iter().any(|l| !l.is_finite()) {
        return Err(data("training produced non-finite values"));
    }

    let text = cfg.to_toml_string();
    write_file(&out.join("config.toml"), &text)?;
    let ckpt = Checkpoint { config: text, step: state.gen.step, matrices: state.to_matrices() };
    save_checkpoint(&out.join("checkpoint.bin"), &ckpt).map_err(data)?;
    info!("{} steps on {} pieces; wrote {}", steps, corpus.len(), out.display());
    Ok(())
}

fn cmd_generate(ckpt: &Path, n: usize, seed: u64, out: &Path) -> CliResult {
    if !ckpt.is_file() {
        return Err(usage(format!("checkpoint {} not found", ckpt.display())));
    }
    let ckpt = load_checkpoint(ckpt).map_err(data)?;
    let cfg = Config::from_toml_str(&ckpt.config).map_err(data)?;
    let state = GanState::from_matrices(&cfg.train.generator, &cfg.train.critic, &ckpt.matrices, ckpt.step)
        .map_err(data)?;
    let vocab = cfg.vocabulary();
    create_out(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gcfg = &cfg.train.generator;
    for i in 0..n {
        let rows = generate(&state.gen.params, gcfg, &vocab, gcfg.max_len, &mut rng, cfg.train.temperature, cfg.train.top_p);
        let decoded = vocab.decode_codes(&rows);
        write_tokens(&out.join(format!("sample_{i:03}.csv")), &rows)?;
        save_midi(&decoded.score, out.join(format!("sample_{i:03}.mid"))).map_err(data)?;
        info!("sample {i}: {} events, {} notes, {} skipped rows", rows.len(), decoded.score.notes.len(), decoded.warnings);
    }
    Ok(())
}

fn cmd_split(input: &Path, seed: u64, out: &Path) -> CliResult {
    let files = list_files(input, is_piece)?;
    let ids: Vec<String> = files.iter().map(|f| file_name(f)).collect();
    let split = split_corpus(&ids, seed).map_err(data)?;
    let manifest: Vec<ManifestEntry> = files
        .iter()
        .zip(&ids)
        .map(|(path, id)| ManifestEntry { id: id.clone(), path: path.clone(), split: split[id] })
        .collect();
    create_out(out)?;
    write_file(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest).map_err(data)?)?;
    info!("split {} pieces into {}", manifest.len(), out.display());
    Ok(())
}
