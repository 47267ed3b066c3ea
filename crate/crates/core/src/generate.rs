//! Beam-search decoding and end-to-end headline generation.
//!
//! The search is generic over a [`TokenScorer`] so hand-built probability
//! tables can drive it in tests exactly like the real model.

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buzzword::{build_trend_text, BuzzwordList, Vocabulary};
use crate::corpus::Corpus;
use crate::model::{HiddenSeq, ModelError, ModelParams};
use crate::similarity::is_cjk;
use crate::symbols;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown post id {0:?}")]
    UnknownPost(String),
    #[error("post {0:?} has an empty article")]
    EmptyArticle(String),
    #[error("generation config invalid: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub beam_size: usize,
    /// Maximum generated tokens, not counting the closing eos.
    pub max_length: usize,
    /// GNMT length-penalty exponent; 0 disables normalization.
    pub length_alpha: f64,
    /// Coverage-penalty weight; 0 disables the term.
    pub coverage_beta: f64,
    pub bos: u32,
    pub eos: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            beam_size: 4,
            max_length: 20,
            length_alpha: 1.0,
            coverage_beta: 0.0,
            bos: symbols::BOS_ID,
            eos: symbols::EOS_ID,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenerateError> {
        if self.beam_size == 0 || self.max_length == 0 {
            return Err(GenerateError::BadConfig("beam_size and max_length must be >= 1".into()));
        }
        if self.length_alpha < 0.0 || self.coverage_beta < 0.0 {
            return Err(GenerateError::BadConfig("alpha and beta must be >= 0".into()));
        }
        Ok(())
    }
}

/// A finished decode: generated tokens (no bos/eos), the summed log
/// probability, and the normalized score used for ranking.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub raw_log_prob: f64,
    pub score: f64,
}

/// Scores for one decode step: log-probabilities over the vocabulary and,
/// optionally, the step's attention over source positions (for coverage).
pub struct StepScores {
    pub log_probs: Vec<f64>,
    pub attention: Option<Vec<f64>>,
}

/// Next-token model driving the beam search. The prefix always starts
/// with bos.
pub trait TokenScorer {
    fn vocab_size(&self) -> usize;
    fn step(&mut self, prefix: &[u32]) -> StepScores;
}

struct Live {
    tokens: Vec<u32>,
    raw: f64,
    /// Per-source-position attention mass accumulated over decode steps.
    attn_acc: Option<Vec<f64>>,
}

fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

fn coverage_penalty(attn_acc: &Option<Vec<f64>>, beta: f64) -> f64 {
    if beta <= 0.0 {
        return 0.0;
    }
    match attn_acc {
        Some(acc) => beta * acc.iter().map(|&a| a.min(1.0).max(1e-12).ln()).sum::<f64>(),
        None => 0.0,
    }
}

fn finalize(live: Live, cfg: &GenerationConfig) -> Hypothesis {
    let len = live.tokens.len();
    let score = live.raw / length_penalty(len, cfg.length_alpha)
        + coverage_penalty(&live.attn_acc, cfg.coverage_beta);
    Hypothesis { tokens: live.tokens, raw_log_prob: live.raw, score }
}

/// Beam search keeping `beam_size` hypotheses per step, ranked by raw log
/// probability. An eos expansion competes for a beam slot like any other
/// token and finishes its hypothesis when it wins one, so beam 1 follows
/// the greedy argmax path exactly; a saturated beam enumerates every
/// sequence. Finished hypotheses (eos or length cap) are ranked by
/// normalized score. Fully deterministic, ties broken by token sequence.
pub fn beam_search(scorer: &mut dyn TokenScorer, cfg: &GenerationConfig) -> Vec<Hypothesis> {
    cfg.validate().expect("valid generation config");
    let mut live = vec![Live { tokens: Vec::new(), raw: 0.0, attn_acc: None }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_length {
        // (candidate, appended token); eos candidates keep tokens unchanged
        let mut candidates: Vec<(Live, u32)> = Vec::new();
        for hyp in &live {
            let mut prefix = Vec::with_capacity(hyp.tokens.len() + 1);
            prefix.push(cfg.bos);
            prefix.extend_from_slice(&hyp.tokens);
            let scores = scorer.step(&prefix);
            debug_assert_eq!(scores.log_probs.len(), scorer.vocab_size());
            let attn_acc = match (&hyp.attn_acc, &scores.attention) {
                (Some(acc), Some(a)) => Some(acc.iter().zip(a).map(|(x, y)| x + y).collect()),
                (None, Some(a)) => Some(a.clone()),
                (prev, None) => prev.clone(),
            };
            for (tok, &lp) in scores.log_probs.iter().enumerate() {
                let tok = tok as u32;
                candidates.push((
                    Live {
                        tokens: hyp.tokens.clone(),
                        raw: hyp.raw + lp,
                        attn_acc: attn_acc.clone(),
                    },
                    tok,
                ));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.raw
                .total_cmp(&a.0.raw)
                .then_with(|| (&a.0.tokens, a.1).cmp(&(&b.0.tokens, b.1)))
        });
        candidates.truncate(cfg.beam_size);
        let mut next_live = Vec::with_capacity(cfg.beam_size);
        for (mut cand, tok) in candidates {
            if tok == cfg.eos {
                finished.push(finalize(cand, cfg));
            } else {
                cand.tokens.push(tok);
                next_live.push(cand);
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }
    finished.extend(live.into_iter().map(|h| finalize(h, cfg)));
    finished.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
    finished
}

/// Greedy decoding: the argmax token at every step until eos or the
/// length limit. Equivalent to beam 1 with alpha = beta = 0.
pub fn greedy_decode(scorer: &mut dyn TokenScorer, cfg: &GenerationConfig) -> Vec<u32> {
    let mut tokens = Vec::new();
    for _ in 0..cfg.max_length {
        let mut prefix = Vec::with_capacity(tokens.len() + 1);
        prefix.push(cfg.bos);
        prefix.extend_from_slice(&tokens);
        let scores = scorer.step(&prefix);
        let mut best = 0u32;
        for (i, &lp) in scores.log_probs.iter().enumerate() {
            if lp > scores.log_probs[best as usize] {
                best = i as u32;
            }
        }
        if best == cfg.eos {
            break;
        }
        tokens.push(best);
    }
    tokens
}

/// Model-backed scorer over fused encoder states.
pub struct ModelScorer<'a> {
    params: &'a ModelParams,
    fused: &'a HiddenSeq,
}

impl<'a> ModelScorer<'a> {
    pub fn new(params: &'a ModelParams, fused: &'a HiddenSeq) -> Self {
        ModelScorer { params, fused }
    }
}

impl TokenScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.params.cfg.vocab_size
    }

    fn step(&mut self, prefix: &[u32]) -> StepScores {
        let (probs, attn) = self
            .params
            .decode_step_with_attention(self.fused, prefix)
            .expect("prefix within model limits");
        StepScores {
            log_probs: probs.iter().map(|&p| p.max(1e-300).ln()).collect(),
            attention: Some(attn),
        }
    }
}

/// Joins tokens back into a headline: no space between CJK neighbors,
/// single spaces between non-CJK tokens.
pub fn detokenize(tokens: &[String]) -> String {
    let is_cjk_token = |t: &str| t.chars().count() == 1 && t.chars().all(is_cjk);
    let mut out = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        if i > 0 && !is_cjk_token(&tokens[i - 1]) && !is_cjk_token(tok) {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// End-to-end generation for one post: style text from the corpus, trend
/// text from the buzzword list, encode, fuse, beam-search, detokenize.
pub fn generate_headline(
    params: &ModelParams,
    vocab: &Vocabulary,
    corpus: &Corpus,
    buzzwords: &BuzzwordList,
    post_id: &str,
    cfg: &GenerationConfig,
) -> Result<String, GenerateError> {
    let candidates = generate_candidates(params, vocab, corpus, buzzwords, post_id, cfg)?;
    let top = &candidates[0];
    Ok(detokenize(&vocab.decode(&top.tokens)))
}

/// Ranked candidate list for one post (the full beam output).
pub fn generate_candidates(
    params: &ModelParams,
    vocab: &Vocabulary,
    corpus: &Corpus,
    buzzwords: &BuzzwordList,
    post_id: &str,
    cfg: &GenerationConfig,
) -> Result<Vec<Hypothesis>, GenerateError> {
    cfg.validate()?;
    let post = corpus.get(post_id).ok_or_else(|| GenerateError::UnknownPost(post_id.into()))?;
    let max_pos = params.cfg.max_positions;
    let mut article = vocab.encode(&crate::similarity::tokenize(&post.article).into_tokens());
    article.truncate(max_pos);
    if article.is_empty() {
        return Err(GenerateError::EmptyArticle(post_id.into()));
    }
    let style_tokens = corpus.build_style_text(post_id, max_pos).expect("post exists");
    let style = vocab.encode(&style_tokens);
    let trend = vocab.encode(&build_trend_text(buzzwords, max_pos));

    let hidden = params.encode(&article)?;
    let h_se = params.extract_style(&style)?;
    let h_te = params.extract_trend(&trend)?;
    let fused = ModelParams::fuse(&hidden, &h_se, &h_te);
    let mut scorer = ModelScorer::new(params, &fused);
    let mut hyps = beam_search(&mut scorer, cfg);
    if hyps.is_empty() {
        hyps.push(Hypothesis { tokens: vec![], raw_log_prob: 0.0, score: 0.0 });
    }
    Ok(hyps)
}

/// Zero-fusion helper: encodes and decodes with empty style/trend context.
pub fn plain_fused(params: &ModelParams, article: &[u32]) -> Result<HiddenSeq, GenerateError> {
    let hidden = params.encode(article)?;
    let zero = Array1::zeros(params.cfg.d_model);
    Ok(ModelParams::fuse(&hidden, &zero, &zero))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed-table scorer: log-probs depend only on the prefix length.
    struct TableScorer {
        tables: Vec<Vec<f64>>,
    }

    impl TokenScorer for TableScorer {
        fn vocab_size(&self) -> usize {
            self.tables[0].len()
        }

        fn step(&mut self, prefix: &[u32]) -> StepScores {
            let depth = (prefix.len() - 1).min(self.tables.len() - 1);
            StepScores { log_probs: self.tables[depth].clone(), attention: None }
        }
    }

    /// Exhaustive enumeration over all sequences of length <= max_length
    /// (ending at eos or the cap), scored with the same formula.
    fn exhaustive(scorer: &mut dyn TokenScorer, cfg: &GenerationConfig) -> Vec<Hypothesis> {
        let v = scorer.vocab_size() as u32;
        let mut out = Vec::new();
        let mut stack: Vec<(Vec<u32>, f64)> = vec![(vec![], 0.0)];
        while let Some((tokens, raw)) = stack.pop() {
            let mut prefix = vec![cfg.bos];
            prefix.extend_from_slice(&tokens);
            let scores = scorer.step(&prefix);
            for tok in 0..v {
                let lp = scores.log_probs[tok as usize];
                if tok == cfg.eos {
                    let len = tokens.len();
                    out.push(Hypothesis {
                        tokens: tokens.clone(),
                        raw_log_prob: raw + lp,
                        score: (raw + lp) / length_penalty(len, cfg.length_alpha),
                    });
                } else {
                    let mut t = tokens.clone();
                    t.push(tok);
                    if t.len() == cfg.max_length {
                        out.push(Hypothesis {
                            tokens: t,
                            raw_log_prob: raw + lp,
                            score: (raw + lp) / length_penalty(cfg.max_length, cfg.length_alpha),
                        });
                    } else {
                        stack.push((t, raw + lp));
                    }
                }
            }
        }
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
        out
    }

    fn random_tables(seed: u64, depth: usize, vocab: usize) -> TableScorer {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tables = (0..depth)
            .map(|_| {
                let raw: Vec<f64> = (0..vocab).map(|_| rng.gen::<f64>()).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|p| (p / sum).ln()).collect()
            })
            .collect();
        TableScorer { tables }
    }

    #[test]
    fn two_step_hand_table_matches_enumeration() {
        // vocab 3: token 0 = eos
        let tables = vec![
            vec![(0.1f64).ln(), (0.6f64).ln(), (0.3f64).ln()],
            vec![(0.5f64).ln(), (0.2f64).ln(), (0.3f64).ln()],
        ];
        let cfg = GenerationConfig {
            beam_size: 4,
            max_length: 2,
            length_alpha: 1.0,
            coverage_beta: 0.0,
            bos: 9,
            eos: 0,
        };
        let mut beam = TableScorer { tables: tables.clone() };
        let got = beam_search(&mut beam, &cfg);
        let mut brute = TableScorer { tables };
        let want = exhaustive(&mut brute, &cfg);
        assert_eq!(got[0].tokens, want[0].tokens);
        assert!((got[0].score - want[0].score).abs() < 1e-12);
    }

    #[test]
    fn saturated_beam_equals_exhaustive_search() {
        for seed in 0..20 {
            for alpha in [0.0, 1.0] {
                let horizon = 4;
                let vocab = 3;
                let cfg = GenerationConfig {
                    beam_size: (vocab as usize).pow(horizon as u32),
                    max_length: horizon,
                    length_alpha: alpha,
                    coverage_beta: 0.0,
                    bos: 9,
                    eos: 0,
                };
                let mut a = random_tables(seed, horizon, vocab);
                let got = beam_search(&mut a, &cfg);
                let mut b = random_tables(seed, horizon, vocab);
                let want = exhaustive(&mut b, &cfg);
                assert_eq!(got.len(), want.len());
                assert_eq!(got[0].tokens, want[0].tokens, "seed {seed} alpha {alpha}");
                assert!((got[0].score - want[0].score).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn beam_one_equals_greedy() {
        for seed in 100..150 {
            let cfg = GenerationConfig {
                beam_size: 1,
                max_length: 6,
                length_alpha: 0.0,
                coverage_beta: 0.0,
                bos: 9,
                eos: 0,
            };
            let mut a = random_tables(seed, 6, 5);
            let beam = beam_search(&mut a, &cfg);
            let mut b = random_tables(seed, 6, 5);
            let greedy = greedy_decode(&mut b, &cfg);
            assert_eq!(beam[0].tokens, greedy, "seed {seed}");
        }
    }

    #[test]
    fn lengths_never_exceed_the_cap() {
        let mut s = random_tables(7, 8, 4);
        let cfg = GenerationConfig {
            beam_size: 3,
            max_length: 5,
            length_alpha: 1.0,
            coverage_beta: 0.0,
            bos: 9,
            eos: 0,
        };
        for h in beam_search(&mut s, &cfg) {
            assert!(h.tokens.len() <= 5);
        }
    }

    #[test]
    fn ranking_scores_are_monotone() {
        let mut s = random_tables(13, 5, 4);
        let cfg = GenerationConfig {
            beam_size: 4,
            max_length: 5,
            length_alpha: 1.0,
            coverage_beta: 0.0,
            bos: 9,
            eos: 0,
        };
        let hyps = beam_search(&mut s, &cfg);
        for w in hyps.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }

    // Beam search is not monotone in beam size for arbitrary models (a
    // crowded-out prefix can hide the best completion), so this property
    // is checked where it holds: distributions that depend only on depth,
    // where every live hypothesis expands identically.
    #[test]
    fn wider_beams_never_lose_raw_score() {
        for seed in 200..260 {
            let mut best_prev = f64::NEG_INFINITY;
            for beam in 1..=4 {
                let cfg = GenerationConfig {
                    beam_size: beam,
                    max_length: 4,
                    length_alpha: 0.0,
                    coverage_beta: 0.0,
                    bos: 9,
                    eos: 0,
                };
                let mut s = random_tables(seed, 4, 4);
                let hyps = beam_search(&mut s, &cfg);
                let best = hyps.iter().map(|h| h.raw_log_prob).fold(f64::NEG_INFINITY, f64::max);
                assert!(
                    best >= best_prev - 1e-12,
                    "seed {seed}: beam {beam} raw {best} < beam {} raw {best_prev}",
                    beam - 1
                );
                best_prev = best;
            }
        }
    }

    #[test]
    fn coverage_penalty_rewards_spread_attention() {
        let focused = Some(vec![3.0, 0.0, 0.0]);
        let spread = Some(vec![1.0, 1.0, 1.0]);
        let beta = 0.4;
        assert!(coverage_penalty(&spread, beta) > coverage_penalty(&focused, beta));
        assert_eq!(coverage_penalty(&spread, 0.0), 0.0);
    }

    #[test]
    fn detokenize_follows_script_rules() {
        let toks: Vec<String> = ["motd", "秋", "冬", "look", "book"].iter().map(|s| s.to_string()).collect();
        assert_eq!(detokenize(&toks), "motd秋冬look book");
        assert_eq!(detokenize(&[]), "");
    }
}
