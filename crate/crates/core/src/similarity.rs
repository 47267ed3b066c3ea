//! Tokenization and text-similarity metrics.
//!
//! The tokenizer handles mixed CJK/Latin headlines without a dictionary:
//! every CJK codepoint is its own token, maximal runs of other
//! letters/digits become one lowercased token, emoji are single tokens, and
//! whitespace/punctuation are dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

/// An ordered sequence of tokens. Empty-string tokens are never stored.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenSeq(tokens.into_iter().filter(|t| !t.is_empty()).collect())
    }

    pub fn from_text(text: &str) -> Self {
        tokenize(text)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join(" "))
    }
}

/// CJK codepoints that tokenize one-per-character: Han ideographs
/// (including extensions and compatibility forms), kana, and hangul.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF        // CJK Unified Ideographs
        | 0x3400..=0x4DBF      // Extension A
        | 0xF900..=0xFAFF      // Compatibility Ideographs
        | 0x20000..=0x2EBEF    // Extensions B..F
        | 0x3040..=0x30FF      // Hiragana, Katakana
        | 0x31F0..=0x31FF      // Katakana phonetic extensions
        | 0xAC00..=0xD7AF      // Hangul syllables
    )
}

fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF      // emoji, symbols, pictographs
        | 0x2600..=0x27BF      // misc symbols, dingbats
        | 0x2B00..=0x2BFF
    )
}

/// Splits text into tokens: CJK codepoints and emoji stand alone, runs of
/// other letters/digits are lowercased words, everything else is dropped.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for c in text.chars() {
        if is_cjk(c) || is_emoji(c) {
            if !run.is_empty() {
                tokens.push(std::mem::take(&mut run));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            for lc in c.to_lowercase() {
                run.push(lc);
            }
        } else if !run.is_empty() {
            tokens.push(std::mem::take(&mut run));
        }
    }
    if !run.is_empty() {
        tokens.push(run);
    }
    TokenSeq(tokens)
}

/// Which similarity metric to use. `Ngram(1)` coincides with `Jaccard`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityMetric {
    Jaccard,
    Lcs,
    Ngram(usize),
    Cosine,
}

impl SimilarityMetric {
    pub fn score(&self, a: &TokenSeq, b: &TokenSeq) -> f64 {
        match *self {
            SimilarityMetric::Jaccard => jaccard(a, b),
            SimilarityMetric::Lcs => lcs_similarity(a, b),
            SimilarityMetric::Ngram(n) => ngram_similarity(a, b, n),
            SimilarityMetric::Cosine => cosine_similarity(a, b),
        }
    }
}

impl fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimilarityMetric::Jaccard => write!(f, "jaccard"),
            SimilarityMetric::Lcs => write!(f, "lcs"),
            SimilarityMetric::Ngram(n) => write!(f, "ngram:{n}"),
            SimilarityMetric::Cosine => write!(f, "cosine"),
        }
    }
}

impl FromStr for SimilarityMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jaccard" => Ok(SimilarityMetric::Jaccard),
            "lcs" => Ok(SimilarityMetric::Lcs),
            "cosine" => Ok(SimilarityMetric::Cosine),
            "ngram" => Ok(SimilarityMetric::Ngram(2)),
            other => {
                if let Some(n) = other.strip_prefix("ngram:") {
                    let n: usize = n.parse().map_err(|_| format!("bad n-gram size in {other:?}"))?;
                    if n == 0 {
                        return Err("n-gram size must be >= 1".into());
                    }
                    Ok(SimilarityMetric::Ngram(n))
                } else {
                    Err(format!("unknown metric {other:?} (expected jaccard|lcs|ngram[:N]|cosine)"))
                }
            }
        }
    }
}

/// Set overlap over unique tokens: |a ∩ b| / |a ∪ b|. Two empty sequences
/// score 1, matching the reflexivity convention used by every metric here.
pub fn jaccard(a: &TokenSeq, b: &TokenSeq) -> f64 {
    let sa: BTreeSet<&str> = a.tokens().iter().map(String::as_str).collect();
    let sb: BTreeSet<&str> = b.tokens().iter().map(String::as_str).collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64
}

/// Longest common contiguous token run divided by max(|a|, |b|).
pub fn lcs_similarity(a: &TokenSeq, b: &TokenSeq) -> f64 {
    let (a, b) = (a.tokens(), b.tokens());
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    // dp[j] = longest common suffix of a[..i] and b[..j]
    let mut dp = vec![0usize; b.len() + 1];
    let mut best = 0usize;
    for ai in a {
        let mut prev = 0usize;
        for (j, bj) in b.iter().enumerate() {
            let cur = dp[j + 1];
            dp[j + 1] = if ai == bj { prev + 1 } else { 0 };
            best = best.max(dp[j + 1]);
            prev = cur;
        }
    }
    best as f64 / a.len().max(b.len()) as f64
}

fn ngram_set(s: &[String], n: usize) -> BTreeSet<&[String]> {
    if s.len() < n {
        return BTreeSet::new();
    }
    s.windows(n).collect()
}

/// Jaccard over the sets of token n-grams. Sequences shorter than n
/// contribute empty sets; two empty sets score 1.
pub fn ngram_similarity(a: &TokenSeq, b: &TokenSeq, n: usize) -> f64 {
    assert!(n >= 1, "n-gram size must be >= 1");
    let sa = ngram_set(a.tokens(), n);
    let sb = ngram_set(b.tokens(), n);
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64
}

/// Cosine of term-frequency count vectors over the union vocabulary.
pub fn cosine_similarity(a: &TokenSeq, b: &TokenSeq) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let mut counts: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for t in a.tokens() {
        counts.entry(t).or_default().0 += 1;
    }
    for t in b.tokens() {
        counts.entry(t).or_default().1 += 1;
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (ca, cb) in counts.values() {
        let (ca, cb) = (*ca as f64, *cb as f64);
        dot += ca * cb;
        na += ca * ca;
        nb += cb * cb;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // counts are integers, so (na * nb) is exact and identical sequences
    // score exactly 1
    dot / (na * nb).sqrt()
}
