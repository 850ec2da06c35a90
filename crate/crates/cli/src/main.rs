//! `glossedit`: derive, execute, score, train and apply editing programs.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use glossedit_core::corpus::{
    derive_all, join, load_corpus, make_synthetic_corpus, write_corpus, LoadOptions, ParallelPair, SyntheticConfig,
    Vocabulary,
};
use glossedit_core::dsl::{parse_program_with, tokenize, Program, Token, DEFAULT_MAX_REPEAT};
use glossedit_core::executor::{execute, mask_schedule};
use glossedit_core::metrics::EvalReport;
use glossedit_core::minedit::MinimalProgramOptions;
use glossedit_model::checkpoint::{self, load_embeddings};
use glossedit_model::train::{derive_options, evaluate, train};
use glossedit_model::{Config, Decoding, Glossifier};

#[derive(Parser)]
#[command(name = "glossedit", version, about = "Sentence-to-gloss transcription with editing programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the minimal editing program of every corpus line.
    Derive {
        #[arg(long)]
        corpus: PathBuf,
        /// Write programs here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_REPEAT)]
        max_repeat: usize,
        #[command(flatten)]
        load: LoadArgs,
    },
    /// Run a program on a sentence, or every line of a program file on a corpus.
    Execute {
        #[arg(long, conflicts_with = "corpus", requires = "program")]
        sentence: Option<String>,
        #[arg(long, conflicts_with = "programs")]
        program: Option<String>,
        /// Corpus (or one sentence per line) to run `--programs` on.
        #[arg(long, requires = "programs")]
        corpus: Option<PathBuf>,
        /// One program per line, aligned with `--corpus`.
        #[arg(long)]
        programs: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_REPEAT)]
        max_repeat: usize,
    },
    /// Print the number of glosses visible before each statement.
    Schedule {
        #[arg(long)]
        program: String,
        #[arg(long, default_value_t = DEFAULT_MAX_REPEAT)]
        max_repeat: usize,
    },
    /// Score predicted glosses against references.
    Score {
        /// One gloss sequence per line.
        #[arg(long)]
        pred: PathBuf,
        /// One gloss sequence per line; corpus lines use their gloss column.
        #[arg(long = "ref", value_name = "REF")]
        reference: PathBuf,
        /// Predicted and reference program files, for PER.
        #[arg(long, num_args = 2, value_names = ["PRED", "REF"])]
        programs: Option<Vec<PathBuf>>,
        #[arg(long, default_value_t = DEFAULT_MAX_REPEAT)]
        max_repeat: usize,
        /// Emit a header and one tab-separated row.
        #[arg(long)]
        tsv: bool,
    },
    /// Write a seeded synthetic corpus.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        size: usize,
        #[arg(long, default_value_t = 40)]
        vocab_size: usize,
        #[arg(long, default_value_t = 0.4)]
        deletion_rate: f64,
        #[arg(long, default_value_t = 0.1)]
        insertion_rate: f64,
        #[arg(long, default_value_t = 0.1)]
        reorder_rate: f64,
        #[arg(long, default_value_t = 5)]
        min_len: usize,
        #[arg(long, default_value_t = 15)]
        max_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes model.ckpt and metrics.tsv into `--out`.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Text file of `token v1 ... v_d` lines to initialize embeddings.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[command(flatten)]
        load: LoadArgs,
    },
    /// Decode programs for input sentences.
    Transcribe {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One sentence per line; corpus lines use their sentence column.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Transcribe a corpus and score the result.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long)]
        tsv: bool,
        #[command(flatten)]
        load: LoadArgs,
    },
}

#[derive(Args)]
struct LoadArgs {
    /// Lowercase corpus text while loading.
    #[arg(long)]
    lowercase: bool,
}

impl LoadArgs {
    fn options(&self) -> LoadOptions {
        LoadOptions { lowercase: self.lowercase }
    }
}

#[derive(Args)]
struct DecodeArgs {
    /// Beam width; greedy decoding when absent.
    #[arg(long)]
    beam: Option<usize>,
    /// Accepted for interface uniformity; decoding is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

impl DecodeArgs {
    fn mode(&self) -> Decoding {
        match self.beam {
            Some(w) => Decoding::Beam(w),
            None => Decoding::Greedy,
        }
    }
}

enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
    /// Standard output was closed by the reader.
    Closed,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Closed => 0,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => m,
            CliError::Closed => "",
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn output(e: io::Error) -> CliError {
    if e.kind() == io::ErrorKind::BrokenPipe {
        CliError::Closed
    } else {
        CliError::Runtime(e.to_string())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Non-empty lines with their 1-based line numbers.
fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l))
}

/// One token sequence per line; a line with a TAB contributes column `col`.
fn read_sequences(path: &Path, col: usize) -> Result<Vec<Vec<Token>>> {
    let text = read(path)?;
    Ok(numbered_lines(&text)
        .map(|(_, l)| match l.split_once('\t') {
            Some((a, b)) => tokenize(if col == 0 { a } else { b }),
            None => tokenize(l),
        })
        .collect())
}

fn read_programs(path: &Path, max_repeat: usize) -> Result<Vec<Program>> {
    let text = read(path)?;
    numbered_lines(&text)
        .map(|(n, l)| parse_program_with(l, max_repeat).map_err(|e| CliError::Data(format!("{}:{n}: {e}", path.display()))))
        .collect()
}

fn checkpoint_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("model.ckpt")
    } else {
        path.to_path_buf()
    }
}

fn load_checkpoint(path: &Path) -> Result<(Glossifier, Config, Vocabulary)> {
    checkpoint::load(&checkpoint_file(path)).map_err(data)
}

fn run(cmd: Command) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let emit = |out: &mut dyn Write, s: &str| writeln!(out, "{s}").map_err(output);
    match cmd {
        Command::Derive { corpus, out: dest, max_repeat, load } => {
            if max_repeat == 0 {
                return Err(CliError::Usage("--max-repeat must be at least 1".into()));
            }
            let (mut pairs, _) = load_corpus(&corpus, None, &load.options()).map_err(data)?;
            let report = derive_all(&mut pairs, &MinimalProgramOptions::with_max_repeat(max_repeat));
            let mut text = String::new();
            for p in &pairs {
                text.push_str(&p.program.as_ref().expect("derived").to_string());
                text.push('\n');
            }
            match dest {
                Some(path) => write_file(&path, &text)?,
                None => out.write_all(text.as_bytes()).map_err(output)?,
            }
            eprintln!("{report}");
        }
        Command::Execute { sentence, program, corpus, programs, max_repeat } => match (sentence, program, corpus, programs) {
            (Some(s), Some(p), None, None) => {
                let p = parse_program_with(&p, max_repeat).map_err(|e| CliError::Data(format!("--program: {e}")))?;
                let glosses = execute(&p, &tokenize(&s)).map_err(|e| CliError::Data(format!("--program: {e}")))?;
                emit(&mut out, &join(&glosses))?;
            }
            (None, None, Some(c), Some(p)) => {
                let sentences = read_sequences(&c, 0)?;
                let progs = read_programs(&p, max_repeat)?;
                if sentences.len() != progs.len() {
                    return Err(CliError::Data(format!(
                        "{} has {} lines but {} has {}",
                        c.display(),
                        sentences.len(),
                        p.display(),
                        progs.len()
                    )));
                }
                for (i, (s, prog)) in sentences.iter().zip(&progs).enumerate() {
                    let g = execute(prog, s).map_err(|e| CliError::Data(format!("{}:{}: {e}", p.display(), i + 1)))?;
                    emit(&mut out, &join(&g))?;
                }
            }
            _ => {
                return Err(CliError::Usage(
                    "execute needs either --sentence with --program, or --corpus with --programs".into(),
                ))
            }
        },
        Command::Schedule { program, max_repeat } => {
            let p = parse_program_with(&program, max_repeat).map_err(|e| CliError::Data(format!("--program: {e}")))?;
            let v: Vec<String> = mask_schedule(&p).visible().iter().map(usize::to_string).collect();
            emit(&mut out, &v.join(" "))?;
        }
        Command::Score { pred, reference, programs, max_repeat, tsv } => {
            let preds = read_sequences(&pred, 1)?;
            let refs = read_sequences(&reference, 1)?;
            let program_pairs = match programs {
                Some(paths) => {
                    let p = read_programs(&paths[0], max_repeat)?;
                    let q = read_programs(&paths[1], max_repeat)?;
                    if p.len() != q.len() {
                        return Err(CliError::Data(format!(
                            "{} has {} programs but {} has {}",
                            paths[0].display(),
                            p.len(),
                            paths[1].display(),
                            q.len()
                        )));
                    }
                    Some(p.into_iter().zip(q).collect::<Vec<_>>())
                }
                None => None,
            };
            let report = EvalReport::compute(&preds, &refs, program_pairs.as_deref())
                .map_err(|e| CliError::Data(format!("{} vs {}: {e}", pred.display(), reference.display())))?;
            print_report(&mut out, &report, tsv)?;
        }
        Command::MakeSynthetic {
            out: dest,
            size,
            vocab_size,
            deletion_rate,
            insertion_rate,
            reorder_rate,
            min_len,
            max_len,
            seed,
        } => {
            for (flag, v) in [
                ("--deletion-rate", deletion_rate),
                ("--insertion-rate", insertion_rate),
                ("--reorder-rate", reorder_rate),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CliError::Usage(format!("{flag} must lie in [0, 1], got {v}")));
                }
            }
            if vocab_size == 0 || min_len == 0 || min_len > max_len {
                return Err(CliError::Usage("need --vocab-size >= 1 and 1 <= --min-len <= --max-len".into()));
            }
            let cfg = SyntheticConfig { size, vocab_size, deletion_rate, insertion_rate, reorder_rate, min_len, max_len, seed };
            write_corpus(&dest, &make_synthetic_corpus(&cfg)).map_err(runtime)?;
        }
        Command::Train { corpus, val, config, out: dir, seed, embeddings, load } => {
            let mut cfg = match &config {
                Some(p) => Config::load(p).map_err(data)?,
                None => Config::default(),
            };
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let (train_pairs, vocab) = load_corpus(&corpus, None, &load.options()).map_err(data)?;
            let val_pairs: Vec<ParallelPair> = match &val {
                Some(p) => load_corpus(p, Some(&vocab), &load.options()).map_err(data)?.0,
                None => Vec::new(),
            };
            if cfg.model.vocab_size != 0 && cfg.model.vocab_size != vocab.len() {
                return Err(CliError::Data(format!(
                    "config vocab_size={} but {} yields {} entries",
                    cfg.model.vocab_size,
                    corpus.display(),
                    vocab.len()
                )));
            }
            cfg.model.vocab_size = vocab.len();
            let mut model = Glossifier::new(cfg.model.clone());
            if let Some(e) = &embeddings {
                let n = load_embeddings(&mut model, &vocab, &read(e)?, &e.display().to_string()).map_err(data)?;
                eprintln!("loaded {n} embeddings from {}", e.display());
            }
            fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
            let log_path = dir.join("metrics.tsv");
            let mut log = fs::File::create(&log_path).map_err(|e| CliError::Runtime(format!("{}: {e}", log_path.display())))?;
            let outcome = train(&mut model, &vocab, &train_pairs, &val_pairs, &cfg.train, Some(&mut log)).map_err(runtime)?;
            checkpoint::save(&dir.join("model.ckpt"), &model, &cfg, &vocab).map_err(runtime)?;
            vocab.save(&dir.join("vocab.txt")).map_err(runtime)?;
            write_file(&dir.join("config.txt"), &cfg.to_text())?;
            eprintln!(
                "best epoch {} of {}{}: bleu4={:.6}",
                outcome.best_epoch,
                outcome.epochs.len(),
                if outcome.stopped_early { " (early stop)" } else { "" },
                outcome.best_report.bleu4()
            );
        }
        Command::Transcribe { checkpoint, input, decode } => {
            let (model, _, vocab) = load_checkpoint(&checkpoint)?;
            let sentences = read_sequences(&input, 0)?;
            for (i, s) in sentences.iter().enumerate() {
                if s.is_empty() {
                    return Err(CliError::Data(format!("{}:{}: empty sentence", input.display(), i + 1)));
                }
                let t = model
                    .transcribe(&vocab, s, decode.mode())
                    .map_err(|e| CliError::Data(format!("{}:{}: {e}", input.display(), i + 1)))?;
                if t.forced_skip {
                    eprintln!("{}:{}: step budget exhausted, SKIP appended", input.display(), i + 1);
                }
                emit(&mut out, &format!("{}\t{}", t.program, join(&t.glosses)))?;
            }
        }
        Command::Eval { checkpoint, corpus, decode, tsv, load } => {
            let (model, cfg, vocab) = load_checkpoint(&checkpoint)?;
            let (pairs, _) = load_corpus(&corpus, Some(&vocab), &load.options()).map_err(data)?;
            let opts = derive_options(&cfg.train, model.config().r_max);
            let (report, _) = evaluate(&model, &vocab, &pairs, &opts, decode.mode()).map_err(data)?;
            print_report(&mut out, &report, tsv)?;
        }
    }
    Ok(())
}

fn print_report(out: &mut dyn Write, report: &EvalReport, tsv: bool) -> Result<()> {
    if tsv {
        writeln!(out, "{}\n{}", EvalReport::tsv_header(), report.to_tsv()).map_err(output)
    } else {
        writeln!(out, "{report}").map_err(output)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) | Err(CliError::Closed) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("glossedit: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
