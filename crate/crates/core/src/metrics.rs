//! Text-generation metrics: ROUGE-N F1, ROUGE-L F1, cumulative BLEU-1..4 and chrF.
//!
//! All scores live in `[0, 1]`; reports render them ×100 with two decimals.
//!
//! Degenerate inputs follow fixed conventions:
//! * any metric with an empty side scores 0;
//! * ROUGE-N where neither side has an n-gram of order `n` (both shorter than `n`) scores 1 for
//!   identical sequences and 0 otherwise;
//! * BLEU drops orders the candidate is too short to contain from the geometric mean;
//! * chrF skips orders absent from both sides.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// Added to a zero clipped-precision numerator and its denominator.
pub const BLEU_SMOOTHING: f64 = 1e-9;
pub const CHRF_MAX_ORDER: usize = 6;
pub const CHRF_BETA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenMode {
    /// One token per non-whitespace code point.
    #[default]
    Char,
    /// Whitespace-delimited words.
    Whitespace,
}

impl FromStr for TokenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "char" => Ok(TokenMode::Char),
            "whitespace" => Ok(TokenMode::Whitespace),
            other => Err(Error::invalid(format!("unknown tokenization mode {other}"))),
        }
    }
}

impl fmt::Display for TokenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenMode::Char => "char",
            TokenMode::Whitespace => "whitespace",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub mode: TokenMode,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn tokenize(text: &str, mode: TokenMode) -> TokenSequence {
    let tokens = match mode {
        TokenMode::Char => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
        TokenMode::Whitespace => text.split_whitespace().map(String::from).collect(),
    };
    TokenSequence { tokens, mode }
}

/// Multiset of the order-`n` n-grams of a sequence, borrowing from it.
#[derive(Debug, Clone)]
pub struct NGramCounts<'a, T> {
    n: usize,
    counts: HashMap<&'a [T], usize>,
    total: usize,
}

impl<'a, T: Eq + Hash> NGramCounts<'a, T> {
    pub fn new(items: &'a [T], n: usize) -> Self {
        assert!(n >= 1, "n-gram order must be at least 1");
        let mut counts = HashMap::new();
        let mut total = 0;
        for gram in items.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
            total += 1;
        }
        NGramCounts { n, counts, total }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Total number of n-grams, `max(0, len - n + 1)`.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn count(&self, gram: &[T]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Σ over n-gram types of `min(self, other)`: the clipped match count.
    pub fn overlap(&self, other: &NGramCounts<'_, T>) -> usize {
        let (small, large) = if self.counts.len() <= other.counts.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.counts.iter().map(|(gram, &c)| c.min(large.count(gram))).sum()
    }
}

fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

fn assert_same_mode(a: &TokenSequence, b: &TokenSequence) {
    assert_eq!(a.mode, b.mode, "candidate and reference tokenized with different modes");
}

pub fn rouge_n_f(candidate: &TokenSequence, reference: &TokenSequence, n: usize) -> f64 {
    assert_same_mode(candidate, reference);
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let cand = NGramCounts::new(&candidate.tokens, n);
    let refs = NGramCounts::new(&reference.tokens, n);
    if cand.total() == 0 && refs.total() == 0 {
        return if candidate.tokens == reference.tokens { 1.0 } else { 0.0 };
    }
    if cand.total() == 0 || refs.total() == 0 {
        return 0.0;
    }
    let overlap = cand.overlap(&refs);
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand.total() as f64;
    let r = overlap as f64 / refs.total() as f64;
    f_beta(p, r, 1.0)
}

/// Length of the longest common subsequence; O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(curr[j]) };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

pub fn rouge_l_f(candidate: &TokenSequence, reference: &TokenSequence) -> f64 {
    assert_same_mode(candidate, reference);
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(&candidate.tokens, &reference.tokens);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    f_beta(p, r, 1.0)
}

/// `1` when the candidate is at least as long as the reference, else `exp(1 - r/c)`.
pub fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len == 0 {
        0.0
    } else if candidate_len >= reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("BLEU order must be between 1 and 4, got {0}")]
    BleuOrder(usize),
    #[error("cannot evaluate an empty set of pairs")]
    EmptyCorpus,
}

/// Cumulative BLEU-`n`: uniform geometric mean of clipped precisions 1..=n times the brevity
/// penalty.
pub fn bleu_n(candidate: &TokenSequence, reference: &TokenSequence, n: usize) -> Result<f64, MetricError> {
    if !(1..=4).contains(&n) {
        return Err(MetricError::BleuOrder(n));
    }
    assert_same_mode(candidate, reference);
    if candidate.is_empty() || reference.is_empty() {
        return Ok(0.0);
    }
    let orders = n.min(candidate.len());
    let mut log_sum = 0.0;
    for k in 1..=orders {
        let cand = NGramCounts::new(&candidate.tokens, k);
        let refs = NGramCounts::new(&reference.tokens, k);
        let matched = cand.overlap(&refs) as f64;
        let total = cand.total() as f64;
        let p = if matched == 0.0 {
            BLEU_SMOOTHING / (total + BLEU_SMOOTHING)
        } else {
            matched / total
        };
        log_sum += p.ln();
    }
    let geo = (log_sum / orders as f64).exp();
    Ok((brevity_penalty(candidate.len(), reference.len()) * geo).min(1.0))
}

/// Character n-gram F-score (orders 1..=6, β = 2) on whitespace-stripped strings, averaged
/// over the orders present on at least one side.
pub fn chrf(candidate: &str, reference: &str) -> f64 {
    let cand: Vec<char> = candidate.chars().filter(|c| !c.is_whitespace()).collect();
    let refs: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=CHRF_MAX_ORDER {
        let c = NGramCounts::new(&cand, n);
        let r = NGramCounts::new(&refs, n);
        if c.total() == 0 && r.total() == 0 {
            continue;
        }
        orders += 1;
        if c.total() == 0 || r.total() == 0 {
            continue;
        }
        let m = c.overlap(&r) as f64;
        sum += f_beta(m / c.total() as f64, m / r.total() as f64, CHRF_BETA);
    }
    sum / orders as f64
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "ROUGE-1-F",
    "ROUGE-2-F",
    "ROUGE-L-F",
    "BLEU-1",
    "BLEU-2",
    "BLEU-3",
    "BLEU-4",
    "chrF",
];

/// The eight scores for one model on one set of pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub chrf: f64,
    pub sample_count: usize,
}

impl MetricReport {
    pub fn scores(&self) -> [f64; 8] {
        [
            self.rouge1_f,
            self.rouge2_f,
            self.rouge_l_f,
            self.bleu1,
            self.bleu2,
            self.bleu3,
            self.bleu4,
            self.chrf,
        ]
    }

    fn from_scores(s: [f64; 8], sample_count: usize) -> Self {
        MetricReport {
            rouge1_f: s[0],
            rouge2_f: s[1],
            rouge_l_f: s[2],
            bleu1: s[3],
            bleu2: s[4],
            bleu3: s[5],
            bleu4: s[6],
            chrf: s[7],
            sample_count,
        }
    }

    /// Scores ×100 formatted with two decimals, in column order.
    pub fn rendered(&self) -> [String; 8] {
        self.scores().map(|s| format!("{:.2}", s * 100.0))
    }

    /// Arithmetic mean of per-pair reports. Sums run in slice order, so any evaluation
    /// strategy that collects per-pair reports in input order gets identical bits.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport, MetricError> {
        if reports.is_empty() {
            return Err(MetricError::EmptyCorpus);
        }
        let mut sums = [0.0f64; 8];
        for r in reports {
            for (acc, s) in sums.iter_mut().zip(r.scores()) {
                *acc += s;
            }
        }
        let n = reports.len() as f64;
        Ok(MetricReport::from_scores(sums.map(|s| s / n), reports.len()))
    }
}

/// All eight metrics for one candidate/reference pair.
pub fn score_pair(candidate: &str, reference: &str, mode: TokenMode) -> MetricReport {
    let c = tokenize(candidate, mode);
    let r = tokenize(reference, mode);
    let bleu = |n| bleu_n(&c, &r, n).expect("orders 1..=4 are valid");
    MetricReport {
        rouge1_f: rouge_n_f(&c, &r, 1),
        rouge2_f: rouge_n_f(&c, &r, 2),
        rouge_l_f: rouge_l_f(&c, &r),
        bleu1: bleu(1),
        bleu2: bleu(2),
        bleu3: bleu(3),
        bleu4: bleu(4),
        chrf: chrf(candidate, reference),
        sample_count: 1,
    }
}

/// Sentence-level scores averaged over the pairs.
pub fn evaluate_corpus<C, R>(pairs: &[(C, R)], mode: TokenMode) -> Result<MetricReport, MetricError>
where
    C: AsRef<str>,
    R: AsRef<str>,
{
    let reports: Vec<MetricReport> = pairs
        .iter()
        .map(|(c, r)| score_pair(c.as_ref(), r.as_ref(), mode))
        .collect();
    MetricReport::mean(&reports)
}
