//! ROUGE-1/2/L scoring between candidate and reference token sequences.

use std::collections::HashMap;

use thiserror::Error;

use crate::similarity::TokenSeq;

#[derive(Debug, Error)]
pub enum RougeError {
    #[error("corpus_rouge requires at least one candidate/reference pair")]
    Empty,
}

/// Precision/recall/F1 triple; `f1` is 0 when precision + recall is 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        let precision = if cand_total > 0 { overlap as f64 / cand_total as f64 } else { 0.0 };
        let recall = if ref_total > 0 { overlap as f64 / ref_total as f64 } else { 0.0 };
        RougeScore { precision, recall, f1: f1(precision, recall) }
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Clipped n-gram overlap. Empty sequences (after n-gram extraction) give
/// zero precision/recall rather than an error.
pub fn rouge_n(cand: &TokenSeq, reference: &TokenSeq, n: usize) -> RougeScore {
    assert!(n >= 1, "rouge_n requires n >= 1");
    let cand_grams = grams(cand.tokens(), n);
    let ref_grams = grams(reference.tokens(), n);
    let cand_total: usize = cand_grams.values().sum();
    let ref_total: usize = ref_grams.values().sum();
    let overlap: usize = cand_grams
        .iter()
        .map(|(g, c)| (*c).min(ref_grams.get(g).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(overlap, cand_total, ref_total)
}

fn grams<'a>(tokens: &'a [String], n: usize) -> HashMap<&'a [String], usize> {
    let mut map = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *map.entry(w).or_insert(0) += 1;
        }
    }
    map
}

/// Longest common subsequence (non-contiguous) F1.
pub fn rouge_l(cand: &TokenSeq, reference: &TokenSeq) -> RougeScore {
    let l = lcs_len(cand.tokens(), reference.tokens());
    RougeScore::from_counts(l, cand.len(), reference.len())
}

/// Length of the longest common subsequence of two token slices.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut dp = vec![0usize; b.len() + 1];
    for ai in a {
        let mut prev = 0usize;
        for (j, bj) in b.iter().enumerate() {
            let cur = dp[j + 1];
            dp[j + 1] = if ai == bj { prev + 1 } else { dp[j + 1].max(dp[j]) };
            prev = cur;
        }
    }
    dp[b.len()]
}

/// Macro-averaged ROUGE-1/2/L over candidate/reference pairs.
#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
pub struct CorpusRouge {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
    pub pairs: u64,
}

/// Unweighted mean of per-pair precision, recall, and F1 for each variant.
pub fn corpus_rouge(pairs: &[(TokenSeq, TokenSeq)]) -> Result<CorpusRouge, RougeError> {
    if pairs.is_empty() {
        return Err(RougeError::Empty);
    }
    // Per-pair scores are computed independently, so the parallel map keeps
    // a deterministic order and the final reduction stays serial.
    use rayon::prelude::*;
    let scored: Vec<[RougeScore; 3]> = pairs
        .par_iter()
        .map(|(c, r)| [rouge_n(c, r, 1), rouge_n(c, r, 2), rouge_l(c, r)])
        .collect();
    let n = pairs.len() as f64;
    let mut out = CorpusRouge { pairs: pairs.len() as u64, ..Default::default() };
    for s in &scored {
        for (acc, v) in [(&mut out.rouge1, s[0]), (&mut out.rouge2, s[1]), (&mut out.rouge_l, s[2])] {
            acc.precision += v.precision;
            acc.recall += v.recall;
            acc.f1 += v.f1;
        }
    }
    for acc in [&mut out.rouge1, &mut out.rouge2, &mut out.rouge_l] {
        acc.precision /= n;
        acc.recall /= n;
        acc.f1 /= n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::lcs_similarity;
    use proptest::prelude::*;

    fn seq(tokens: &[&str]) -> TokenSeq {
        TokenSeq::new(tokens.iter().map(|t| t.to_string()).collect())
    }

    #[test]
    fn identical_sequences_score_one() {
        let s = seq(&["a", "b", "c"]);
        assert_eq!(rouge_n(&s, &s, 1).f1, 1.0);
        assert_eq!(rouge_n(&s, &s, 2).f1, 1.0);
        assert_eq!(rouge_l(&s, &s).f1, 1.0);
    }

    #[test]
    fn disjoint_sequences_score_zero() {
        let a = seq(&["a", "b"]);
        let b = seq(&["c", "d"]);
        assert_eq!(rouge_n(&a, &b, 1).f1, 0.0);
        assert_eq!(rouge_l(&a, &b).f1, 0.0);
    }

    #[test]
    fn hand_counted_overlaps() {
        let cand = seq(&["a", "b", "c"]);
        let reference = seq(&["a", "b", "d"]);
        let r1 = rouge_n(&cand, &reference, 1);
        assert!((r1.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r1.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((r1.f1 - 2.0 / 3.0).abs() < 1e-15);
        let r2 = rouge_n(&cand, &reference, 2);
        assert!((r2.f1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rouge_l_skips_gaps() {
        let cand = seq(&["a", "x", "b"]);
        let reference = seq(&["a", "b"]);
        let s = rouge_l(&cand, &reference);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.recall - 1.0).abs() < 1e-15);
        assert!((s.f1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn empty_sequences_are_zero_not_error() {
        assert_eq!(rouge_n(&seq(&[]), &seq(&["a"]), 1).f1, 0.0);
        assert_eq!(rouge_l(&seq(&[]), &seq(&[])).f1, 0.0);
    }

    #[test]
    fn corpus_mean_is_unweighted() {
        let one = (seq(&["a"]), seq(&["a"]));
        let zero = (seq(&["a"]), seq(&["b"]));
        let out = corpus_rouge(&[one, zero]).unwrap();
        assert!((out.rouge1.f1 - 0.5).abs() < 1e-15);
        assert!(corpus_rouge(&[]).is_err());
    }

    proptest! {
        #[test]
        fn f1_invariant_under_swap(a in proptest::collection::vec("[a-d]", 0..8),
                                   b in proptest::collection::vec("[a-d]", 0..8)) {
            let a = TokenSeq::new(a);
            let b = TokenSeq::new(b);
            let ab = rouge_l(&a, &b);
            let ba = rouge_l(&b, &a);
            prop_assert!((ab.f1 - ba.f1).abs() < 1e-12);
            prop_assert!((ab.precision - ba.recall).abs() < 1e-12);
        }

        #[test]
        fn subsequence_dominates_substring(a in proptest::collection::vec("[a-c]", 1..8),
                                           b in proptest::collection::vec("[a-c]", 1..8)) {
            let a = TokenSeq::new(a);
            let b = TokenSeq::new(b);
            let max_len = a.len().max(b.len()) as f64;
            let substring_len = lcs_similarity(&a, &b) * max_len;
            let subsequence_len = lcs_len(a.tokens(), b.tokens()) as f64;
            prop_assert!(subsequence_len + 1e-9 >= substring_len);
        }
    }
}
