//! Headline vocabulary, per-time-step token frequencies, and buzzword lists.
//!
//! Buzzwords for step `t` combine tokens whose frequency is sharply rising
//! relative to earlier windows (three ratio stages over 1-, 3-, and 6-month
//! windows) with the absolutely most frequent tokens of the previous month
//! (fill stage). Only counts at steps strictly before `t` are consulted.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, TimeStep};
use crate::similarity::tokenize;
use crate::symbols;

#[derive(Debug, Error)]
pub enum BuzzwordError {
    #[error("vocabulary thresholds tf_min={tf_min}, tf_max={tf_max} eliminate every token")]
    EmptyVocabulary { tf_min: u64, tf_max: f64 },
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
}

/// Headline vocabulary with reserved symbols at the front. Real tokens are
/// ordered by descending training count, ties lexicographic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    #[serde(skip)]
    token_to_id: HashMap<String, u32>,
    pub tf_min: u64,
    pub tf_max: f64,
}

impl Vocabulary {
    /// Builds the vocabulary over tokenized training headlines, keeping
    /// tokens with count >= `tf_min` and relative frequency <= `tf_max`.
    pub fn build(train: &Corpus, tf_min: u64, tf_max: f64) -> Result<Self, BuzzwordError> {
        if train.is_empty() {
            return Err(BuzzwordError::EmptyCorpus);
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut total: u64 = 0;
        for post in train.posts() {
            for tok in tokenize(&post.headline).into_tokens() {
                *counts.entry(tok).or_insert(0) += 1;
                total += 1;
            }
        }
        let mut kept: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= tf_min && (*c as f64) / (total as f64) <= tf_max)
            .collect();
        if kept.is_empty() {
            return Err(BuzzwordError::EmptyVocabulary { tf_min, tf_max });
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_real_tokens(kept.into_iter().map(|(t, _)| t).collect(), tf_min, tf_max))
    }

    /// Builds directly from a list of real tokens (fixtures and tests).
    pub fn from_real_tokens(tokens: Vec<String>, tf_min: u64, tf_max: f64) -> Self {
        let mut id_to_token: Vec<String> = symbols::RESERVED.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { id_to_token, token_to_id, tf_min, tf_max }
    }

    /// Rebuilds the lookup map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.token_to_id = self
            .id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn n_reserved(&self) -> u32 {
        symbols::RESERVED.len() as u32
    }

    /// Ids of non-reserved tokens, the candidates for buzzword selection.
    pub fn real_ids(&self) -> std::ops::Range<u32> {
        self.n_reserved()..self.len() as u32
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(symbols::UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id_or_unk(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

/// Per-(time step, token) counts over headlines, with per-step totals.
#[derive(Debug, Clone)]
pub struct FrequencyTable {
    /// counts[step][token_id]
    counts: Vec<Vec<u64>>,
    totals: Vec<u64>,
}

impl FrequencyTable {
    /// Counts vocabulary tokens in headlines, bucketed by the post's time
    /// step. Out-of-vocabulary tokens are ignored.
    pub fn count_frequencies(corpus: &Corpus, vocab: &Vocabulary) -> Self {
        let n_steps = corpus.max_step().map(|s| s.0 as usize + 1).unwrap_or(0);
        let mut counts = vec![vec![0u64; vocab.len()]; n_steps];
        for post in corpus.posts() {
            let step = corpus.step_of(post.timestamp).0 as usize;
            for tok in tokenize(&post.headline).into_tokens() {
                if let Some(id) = vocab.id(&tok) {
                    counts[step][id as usize] += 1;
                }
            }
        }
        let totals = counts.iter().map(|row| row.iter().sum()).collect();
        FrequencyTable { counts, totals }
    }

    pub fn n_steps(&self) -> usize {
        self.counts.len()
    }

    /// Count of one token at one step; steps outside the table are zero.
    pub fn tf(&self, token_id: u32, step: i64) -> u64 {
        if step < 0 || step as usize >= self.counts.len() {
            return 0;
        }
        self.counts[step as usize][token_id as usize]
    }

    pub fn step_total(&self, step: i64) -> u64 {
        if step < 0 || step as usize >= self.totals.len() {
            return 0;
        }
        self.totals[step as usize]
    }

    fn window_sum(&self, token_id: u32, from: i64, to: i64) -> u64 {
        (from..=to).map(|s| self.tf(token_id, s)).sum()
    }
}

/// Which stage of the buzzword algorithm selected a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuzzwordStage {
    /// Month-over-month frequency ratio.
    Ratio1,
    /// Ratio of the last three months over the three before.
    Ratio3,
    /// Ratio of the last six months over the six before.
    Ratio6,
    /// Highest absolute frequency in the previous month.
    Fill,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuzzwordEntry {
    pub token: String,
    pub stage: BuzzwordStage,
    pub score: f64,
}

/// Ordered buzzword list for one time step: ratio stages first, then fill,
/// each ordered by score descending with token-id ties ascending.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuzzwordList {
    pub step: TimeStep,
    pub entries: Vec<BuzzwordEntry>,
}

/// Stage quotas and smoothing. Defaults carry the full-scale values; desk
/// corpora typically shrink the quotas so every stage stays exercised.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BuzzwordConfig {
    pub quota_1m: usize,
    pub quota_3m: usize,
    pub quota_6m: usize,
    pub capacity: usize,
    /// Additive smoothing applied to both sides of every frequency ratio,
    /// so a token exploding from zero ranks at the top instead of dividing
    /// by zero.
    pub epsilon: f64,
}

impl Default for BuzzwordConfig {
    fn default() -> Self {
        BuzzwordConfig { quota_1m: 128, quota_3m: 64, quota_6m: 32, capacity: 512, epsilon: 1.0 }
    }
}

/// Generates the buzzword list for `step` from counts at strictly earlier
/// steps. Step 0 has no history and yields an empty list.
pub fn generate_buzzwords(
    table: &FrequencyTable,
    vocab: &Vocabulary,
    step: TimeStep,
    cfg: &BuzzwordConfig,
) -> BuzzwordList {
    let t = step.0 as i64;
    let mut entries: Vec<BuzzwordEntry> = Vec::new();
    if t < 1 {
        return BuzzwordList { step, entries };
    }
    let mut present = vec![false; vocab.len()];
    let candidates: Vec<u32> = vocab.real_ids().collect();

    let add_stage = |entries: &mut Vec<BuzzwordEntry>,
                         present: &mut Vec<bool>,
                         stage: BuzzwordStage,
                         quota: usize,
                         score: &dyn Fn(u32) -> f64| {
        let mut scored: Vec<(u32, f64)> = candidates
            .iter()
            .filter(|&&id| !present[id as usize])
            .map(|&id| (id, score(id)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (id, s) in scored.into_iter().take(quota) {
            present[id as usize] = true;
            entries.push(BuzzwordEntry { token: vocab.token(id).to_string(), stage, score: s });
        }
    };

    let eps = cfg.epsilon;
    if t >= 2 {
        add_stage(&mut entries, &mut present, BuzzwordStage::Ratio1, cfg.quota_1m, &|id| {
            (table.tf(id, t - 1) as f64 + eps) / (table.tf(id, t - 2) as f64 + eps)
        });
    }
    if t >= 6 {
        add_stage(&mut entries, &mut present, BuzzwordStage::Ratio3, cfg.quota_3m, &|id| {
            (table.window_sum(id, t - 3, t - 1) as f64 + eps)
                / (table.window_sum(id, t - 6, t - 4) as f64 + eps)
        });
    }
    if t >= 12 {
        add_stage(&mut entries, &mut present, BuzzwordStage::Ratio6, cfg.quota_6m, &|id| {
            (table.window_sum(id, t - 6, t - 1) as f64 + eps)
                / (table.window_sum(id, t - 12, t - 7) as f64 + eps)
        });
    }
    let room = cfg.capacity.min(candidates.len()).saturating_sub(entries.len());
    add_stage(&mut entries, &mut present, BuzzwordStage::Fill, room, &|id| {
        table.tf(id, t - 1) as f64
    });
    BuzzwordList { step, entries }
}

/// Trend text for a step: the buzzword tokens in list order, truncated.
/// Every post within the step shares the same sequence.
pub fn build_trend_text(bw: &BuzzwordList, max_tokens: usize) -> Vec<String> {
    bw.entries.iter().take(max_tokens).map(|e| e.token.clone()).collect()
}
