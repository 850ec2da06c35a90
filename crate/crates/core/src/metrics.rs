//! Evaluation metrics: program error rate, corpus BLEU, ROUGE-L.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use thiserror::Error;

use crate::dsl::{Program, Token};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("reference program is empty")]
    EmptyReference,
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("max n-gram order must be in 1..=4, got {0}")]
    BadOrder(usize),
    #[error("ROUGE-L needs non-empty sequences")]
    EmptySequence,
}

/// Unit-cost Levenshtein distance (substitution, insertion, deletion).
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, av) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, bv) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(av != bv);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Program error rate: statement-level edit distance over the reference length.
///
/// Statements are compared in their folded (`FOR`) form.
pub fn per(predicted: &Program, reference: &Program) -> Result<f64, MetricError> {
    per_statements(predicted.statements(), reference.statements())
}

pub fn per_statements<T: PartialEq>(predicted: &[T], reference: &[T]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(levenshtein(predicted, reference) as f64 / reference.len() as f64)
}

/// Corpus-level PER: total edits over total reference statements.
pub fn corpus_per(pairs: &[(Program, Program)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let (edits, total) = pairs.iter().fold((0usize, 0usize), |(e, t), (p, r)| {
        (e + levenshtein(p.statements(), r.statements()), t + r.len())
    });
    Ok(edits as f64 / total as f64)
}

fn ngram_counts<T: Hash + Eq>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for g in seq.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram total for one pair.
fn ngram_stats<T: Hash + Eq>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let matched = cand
        .iter()
        .map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Sufficient statistics for corpus BLEU; sums over pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matched: [usize; 4],
    pub total: [usize; 4],
    pub ref_total: [usize; 4],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn of<T: Hash + Eq>(candidate: &[T], reference: &[T]) -> Self {
        let mut s = BleuStats { cand_len: candidate.len(), ref_len: reference.len(), ..Default::default() };
        for n in 1..=4 {
            let (m, t) = ngram_stats(candidate, reference, n);
            s.matched[n - 1] = m;
            s.total[n - 1] = t;
            s.ref_total[n - 1] = reference.len().saturating_sub(n - 1);
        }
        s
    }

    pub fn merge(mut self, other: &BleuStats) -> Self {
        for k in 0..4 {
            self.matched[k] += other.matched[k];
            self.total[k] += other.total[k];
            self.ref_total[k] += other.ref_total[k];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
        self
    }

    fn brevity_penalty(&self) -> f64 {
        if self.cand_len == 0 && self.ref_len == 0 {
            1.0
        } else if self.cand_len == 0 {
            0.0
        } else if self.cand_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        } else {
            1.0
        }
    }

    /// Unsmoothed BLEU with uniform weights over orders `1..=n`.
    ///
    /// An order with no n-grams on either side has precision 1.
    pub fn score(&self, n: usize) -> f64 {
        let mut log_sum = 0.0;
        for k in 0..n {
            if self.total[k] == 0 && self.ref_total[k] == 0 {
                continue;
            }
            if self.matched[k] == 0 || self.total[k] == 0 {
                return 0.0;
            }
            log_sum += (self.matched[k] as f64 / self.total[k] as f64).ln();
        }
        self.brevity_penalty() * (log_sum / n as f64).exp()
    }
}

/// Corpus BLEU-n for every `n` in `1..=max_n`; entry `n-1` holds BLEU-n.
pub fn bleu<T: Hash + Eq>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
) -> Result<Vec<f64>, MetricError> {
    if !(1..=4).contains(&max_n) {
        return Err(MetricError::BadOrder(max_n));
    }
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch { candidates: candidates.len(), references: references.len() });
    }
    if candidates.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let stats = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| BleuStats::of(c, r))
        .fold(BleuStats::default(), |acc, s| acc.merge(&s));
    Ok((1..=max_n).map(|n| stats.score(n)).collect())
}

/// Sentence BLEU-4 used as a training reward.
///
/// Orders 2..4 use add-one smoothing so short outputs still get a graded
/// signal. Two empty sequences score 1, one empty sequence scores 0.
pub fn smoothed_sentence_bleu<T: Hash + Eq>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return if candidate.is_empty() && reference.is_empty() { 1.0 } else { 0.0 };
    }
    let s = BleuStats::of(candidate, reference);
    if s.matched[0] == 0 {
        return 0.0;
    }
    let mut log_sum = (s.matched[0] as f64 / s.total[0] as f64).ln();
    for k in 1..4 {
        log_sum += ((s.matched[k] + 1) as f64 / (s.total[k] + 1) as f64).ln();
    }
    (s.brevity_penalty() * (log_sum / 4.0).exp()).clamp(0.0, 1.0)
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for av in a {
        for (j, bv) in b.iter().enumerate() {
            cur[j + 1] = if av == bv { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 between two non-empty sequences.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> Result<f64, MetricError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptySequence);
    }
    // 2PR/(P+R) with P = L/|c|, R = L/|r| reduces to 2L/(|c|+|r|)
    let lcs = lcs_len(candidate, reference) as f64;
    Ok(2.0 * lcs / (candidate.len() + reference.len()) as f64)
}

/// ROUGE-L that tolerates empty sides: both empty scores 1, one empty 0.
pub fn rouge_l_lenient<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    match (candidate.is_empty(), reference.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => rouge_l(candidate, reference).unwrap_or(0.0),
    }
}

/// Mean sentence ROUGE-L over a corpus.
pub fn corpus_rouge_l<T: PartialEq>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64, MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch { candidates: candidates.len(), references: references.len() });
    }
    if candidates.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let sum: f64 = candidates.iter().zip(references).map(|(c, r)| rouge_l_lenient(c, r)).sum();
    Ok(sum / candidates.len() as f64)
}

/// Scores for one evaluated corpus. BLEU and ROUGE-L are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per: Option<f64>,
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub num_pairs: usize,
}

impl EvalReport {
    /// Scores gloss predictions, plus PER when program pairs are supplied.
    pub fn compute(
        predicted: &[Vec<Token>],
        references: &[Vec<Token>],
        programs: Option<&[(Program, Program)]>,
    ) -> Result<Self, MetricError> {
        let b = bleu(predicted, references, 4)?;
        let rouge_l = corpus_rouge_l(predicted, references)?;
        let per = programs.map(corpus_per).transpose()?;
        Ok(EvalReport { per, bleu: [b[0], b[1], b[2], b[3]], rouge_l, num_pairs: predicted.len() })
    }

    pub fn bleu4(&self) -> f64 {
        self.bleu[3]
    }

    pub fn tsv_header() -> &'static str {
        "per\tbleu1\tbleu2\tbleu3\tbleu4\trougeL\tpairs"
    }

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.per.map(|p| format!("{p:.6}")).unwrap_or_else(|| "NA".into()),
            self.bleu[0],
            self.bleu[1],
            self.bleu[2],
            self.bleu[3],
            self.rouge_l,
            self.num_pairs
        )
    }
}

impl fmt::Display for EvalReport {
    /// `key=value` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = self.per {
            writeln!(f, "per={p:.6}")?;
        }
        for (i, b) in self.bleu.iter().enumerate() {
            writeln!(f, "bleu{}={b:.6}", i + 1)?;
        }
        writeln!(f, "rougeL={:.6}", self.rouge_l)?;
        write!(f, "pairs={}", self.num_pairs)
    }
}
