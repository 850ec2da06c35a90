//! Parallel sentence–gloss corpora, the shared vocabulary, and synthetic data.
//!
//! Corpus files are UTF-8, one pair per line, `sentence<TAB>glosses`, tokens
//! separated by single spaces. The gloss side may be empty; the sentence side
//! may not.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dsl::{ActionKind, Program, Token};
use crate::minedit::{minimal_program_with, MinimalProgramOptions};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOP: u32 = 2;
pub const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<bop>"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("{path}: empty corpus")]
    Empty { path: String },
}

/// Token inventory shared by sentences and glosses.
///
/// Ids 0..3 are reserved (`PAD`, `UNK`, `BOP`); regular tokens follow in
/// order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary { tokens: Vec::new(), index: HashMap::new() };
        for r in RESERVED {
            v.tokens.push(r.to_string());
        }
        v
    }

    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::new();
        for t in tokens {
            v.insert(t);
        }
        v
    }

    /// Builds a vocabulary from both sides of every pair.
    pub fn build(pairs: &[ParallelPair]) -> Self {
        let mut v = Self::new();
        for p in pairs {
            for t in p.sentence.iter().chain(&p.glosses) {
                v.insert(t.as_str());
            }
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    /// Id of `token`, or `UNK`.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[Token]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_str())).collect()
    }

    /// Regular (non-reserved) tokens in id order.
    pub fn regular_tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens[RESERVED.len()..].iter().map(String::as_str)
    }

    /// One regular token per line; line `i` (0-based) has id `i + 3`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in self.regular_tokens() {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self, String> {
        let mut v = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.contains(char::is_whitespace) {
                return Err(format!("line {}: invalid vocabulary entry {line:?}", i + 1));
            }
            if v.index.contains_key(line) {
                return Err(format!("line {}: duplicate vocabulary entry {line:?}", i + 1));
            }
            v.insert(line);
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, self.to_file_string()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_file_string(&text).map_err(|reason| CorpusError::Malformed {
            path: path.display().to_string(),
            line: reason
                .strip_prefix("line ")
                .and_then(|r| r.split(':').next())
                .and_then(|n| n.parse().ok())
                .unwrap_or(0),
            reason,
        })
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPair {
    pub sentence: Vec<Token>,
    pub glosses: Vec<Token>,
    /// Cached minimal program, filled in by [`derive_all`].
    pub program: Option<Program>,
}

impl ParallelPair {
    pub fn new(sentence: Vec<Token>, glosses: Vec<Token>) -> Self {
        ParallelPair { sentence, glosses, program: None }
    }

    pub fn to_line(&self) -> String {
        format!("{}\t{}", join(&self.sentence), join(&self.glosses))
    }
}

pub fn join(tokens: &[Token]) -> String {
    tokens.iter().map(Token::as_str).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub lowercase: bool,
}

/// Parses corpus text. `origin` names the source in error messages.
pub fn parse_corpus(text: &str, origin: &str, opts: &LoadOptions) -> Result<Vec<ParallelPair>, CorpusError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let malformed = |reason: &str| CorpusError::Malformed {
            path: origin.to_string(),
            line: line_no,
            reason: reason.to_string(),
        };
        let line = if opts.lowercase { raw.to_lowercase() } else { raw.to_string() };
        let Some((sentence, glosses)) = line.split_once('\t') else {
            return Err(malformed("missing TAB between sentence and glosses"));
        };
        if glosses.contains('\t') {
            return Err(malformed("more than one TAB"));
        }
        let sentence = crate::dsl::tokenize(sentence);
        if sentence.is_empty() {
            return Err(malformed("empty sentence"));
        }
        let glosses = crate::dsl::tokenize(glosses);
        for t in sentence.iter().chain(&glosses) {
            if t.as_str().contains(");") {
                return Err(malformed("token contains `);`"));
            }
        }
        pairs.push(ParallelPair::new(sentence, glosses));
    }
    if pairs.is_empty() {
        return Err(CorpusError::Empty { path: origin.to_string() });
    }
    Ok(pairs)
}

/// Loads a corpus file. Without `vocab`, a vocabulary is built from the file;
/// with one, it is returned unchanged and unknown tokens encode to `UNK`.
pub fn load_corpus(
    path: &Path,
    vocab: Option<&Vocabulary>,
    opts: &LoadOptions,
) -> Result<(Vec<ParallelPair>, Vocabulary), CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let pairs = parse_corpus(&text, &path.display().to_string(), opts)?;
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => Vocabulary::build(&pairs),
    };
    Ok((pairs, vocab))
}

pub fn corpus_to_string(pairs: &[ParallelPair]) -> String {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&p.to_line());
        s.push('\n');
    }
    s
}

pub fn write_corpus(path: &Path, pairs: &[ParallelPair]) -> Result<(), CorpusError> {
    fs::write(path, corpus_to_string(pairs)).map_err(|e| io_err(path, e))
}

/// Summary of a derived corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivationReport {
    pub pairs: usize,
    /// Statement counts per action kind (folded form), indexed by [`ActionKind::index`].
    pub statements: [usize; 4],
    /// Applications per action kind with repetitions unrolled.
    pub applications: [usize; 4],
    pub loops: usize,
    pub mean_program_len: f64,
    pub max_program_len: usize,
    pub mean_sentence_len: f64,
    pub mean_gloss_len: f64,
}

impl fmt::Display for DerivationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pairs={}", self.pairs)?;
        for k in ActionKind::ALL {
            writeln!(
                f,
                "{}: statements={} applications={}",
                k.keyword(),
                self.statements[k.index()],
                self.applications[k.index()]
            )?;
        }
        writeln!(f, "for_statements={}", self.loops)?;
        writeln!(f, "program_len mean={:.3} max={}", self.mean_program_len, self.max_program_len)?;
        write!(f, "sentence_len mean={:.3} gloss_len mean={:.3}", self.mean_sentence_len, self.mean_gloss_len)
    }
}

/// Attaches a minimal program to every pair.
pub fn derive_all(pairs: &mut [ParallelPair], opts: &MinimalProgramOptions) -> DerivationReport {
    pairs
        .par_iter_mut()
        .for_each(|p| p.program = Some(minimal_program_with(&p.sentence, &p.glosses, opts)));
    report(pairs)
}

fn report(pairs: &[ParallelPair]) -> DerivationReport {
    let mut r = DerivationReport {
        pairs: pairs.len(),
        statements: [0; 4],
        applications: [0; 4],
        loops: 0,
        mean_program_len: 0.0,
        max_program_len: 0,
        mean_sentence_len: 0.0,
        mean_gloss_len: 0.0,
    };
    let mut total_len = 0;
    for p in pairs {
        let prog = p.program.as_ref().expect("derived");
        for s in prog.statements() {
            r.statements[s.kind().index()] += 1;
            r.applications[s.kind().index()] += s.repeat;
            r.loops += usize::from(s.repeat > 1);
        }
        total_len += prog.len();
        r.max_program_len = r.max_program_len.max(prog.len());
        r.mean_sentence_len += p.sentence.len() as f64;
        r.mean_gloss_len += p.glosses.len() as f64;
    }
    if !pairs.is_empty() {
        let n = pairs.len() as f64;
        r.mean_program_len = total_len as f64 / n;
        r.mean_sentence_len /= n;
        r.mean_gloss_len /= n;
    }
    r
}

/// Parameters of the synthetic sentence–gloss generator.
///
/// Each vocabulary word gets fixed, seed-derived traits: whether it is
/// dropped from the glosses, whether it triggers an inserted gloss-only token
/// after it, and whether it swaps with the next kept word. Glosses are thus a
/// deterministic function of the sentence, so a model can learn the mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub size: usize,
    pub vocab_size: usize,
    pub deletion_rate: f64,
    pub insertion_rate: f64,
    pub reorder_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            size: 200,
            vocab_size: 40,
            deletion_rate: 0.4,
            insertion_rate: 0.1,
            reorder_rate: 0.1,
            min_len: 5,
            max_len: 15,
            seed: 0,
        }
    }
}

struct WordTraits {
    dropped: bool,
    inserts: Option<usize>,
    swaps: bool,
}

/// Generates a synthetic corpus; identical configs give identical pairs.
pub fn make_synthetic_corpus(cfg: &SyntheticConfig) -> Vec<ParallelPair> {
    assert!((0.0..=1.0).contains(&cfg.deletion_rate), "deletion_rate outside [0, 1]");
    assert!((0.0..=1.0).contains(&cfg.insertion_rate), "insertion_rate outside [0, 1]");
    assert!((0.0..=1.0).contains(&cfg.reorder_rate), "reorder_rate outside [0, 1]");
    assert!(cfg.vocab_size >= 1 && cfg.min_len >= 1 && cfg.min_len <= cfg.max_len);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inserted_kinds = (cfg.vocab_size / 8).max(1);
    let traits: Vec<WordTraits> = (0..cfg.vocab_size)
        .map(|_| {
            let drop_draw: f64 = rng.gen();
            let insert_draw: f64 = rng.gen();
            let swap_draw: f64 = rng.gen();
            let which = rng.gen_range(0..inserted_kinds);
            WordTraits {
                dropped: drop_draw < cfg.deletion_rate,
                inserts: (insert_draw < cfg.insertion_rate).then_some(which),
                swaps: swap_draw < cfg.reorder_rate,
            }
        })
        .collect();
    let word = |i: usize| Token::new(format!("w{i}")).expect("valid");
    let marker = |i: usize| Token::new(format!("G{i}")).expect("valid");
    let ids: Vec<usize> = (0..cfg.vocab_size).collect();

    (0..cfg.size)
        .map(|_| {
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            let sentence: Vec<usize> = (0..len).map(|_| *ids.choose(&mut rng).expect("non-empty")).collect();
            let mut kept: Vec<usize> = sentence.iter().copied().filter(|&w| !traits[w].dropped).collect();
            let mut i = 0;
            while i + 1 < kept.len() {
                if traits[kept[i]].swaps {
                    kept.swap(i, i + 1);
                    i += 2;
                } else {
                    i += 1;
                }
            }
            let mut glosses = Vec::new();
            for &w in &kept {
                glosses.push(word(w));
                if let Some(g) = traits[w].inserts {
                    glosses.push(marker(g));
                }
            }
            ParallelPair::new(sentence.into_iter().map(word).collect(), glosses)
        })
        .collect()
}
