//! Seeded synthetic corpora with planted style and trend structure, used
//! as ground truth for the observation and buzzword machinery.
//!
//! Construction:
//! - the timeline is five 90-day seasons followed by a 10-day observation
//!   window, spanning 15+ calendar months;
//! - every user injects a private signature token into each headline at
//!   `style_rate`;
//! - posts inside season k carry the season token `seasonk` at
//!   `season_token_rate`, while observation-window posts carry it with
//!   probability decaying in k, so trend similarity decays by season age;
//! - a ramp token is absent before `ramp_onset_month` and frequent from it
//!   on, so it dominates the month-over-month buzzword ratio;
//! - likes are log-normal with a location bump for in-season trend tokens.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Post};
use crate::observation::SeasonSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_posts: usize,
    /// Start of the timeline, Unix seconds. Defaults to 2021-01-01 UTC.
    pub start_timestamp: i64,
    pub seasons: usize,
    pub season_length_days: i64,
    pub observation_days: i64,
    /// Probability that a headline carries its user's signature token.
    pub style_rate: f64,
    /// Probability that an in-season post carries its season token.
    pub season_token_rate: f64,
    /// Base probability that an observation-window post carries a season
    /// token; decays linearly with season age.
    pub trend_rate: f64,
    /// Tokens drawn from the shared background vocabulary per headline.
    pub headline_tokens: usize,
    pub base_vocab: usize,
    /// First month (corpus-relative) in which the ramp token appears.
    pub ramp_onset_month: u32,
    pub ramp_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_users: 50,
            n_posts: 5_000,
            start_timestamp: 1_609_459_200, // 2021-01-01
            seasons: 5,
            season_length_days: 90,
            observation_days: 10,
            style_rate: 0.95,
            season_token_rate: 0.5,
            trend_rate: 0.9,
            headline_tokens: 6,
            base_vocab: 200,
            ramp_onset_month: 12,
            ramp_rate: 0.7,
        }
    }
}

impl SynthConfig {
    pub fn timeline_days(&self) -> i64 {
        self.seasons as i64 * self.season_length_days + self.observation_days
    }

    pub fn end_timestamp(&self) -> i64 {
        self.start_timestamp + self.timeline_days() * 86_400
    }

    /// Season spec whose windows line up with the planted structure.
    pub fn season_spec(&self, n_observed: usize, per_season_sample: usize, seed: u64) -> SeasonSpec {
        let obs_start = self.end_timestamp() - self.observation_days * 86_400;
        SeasonSpec {
            observation_start: obs_start,
            observation_end: self.end_timestamp(),
            n_observed,
            seasons: self.seasons,
            season_length_days: self.season_length_days,
            per_season_sample,
            seed,
        }
    }

    pub fn ramp_token(&self) -> &'static str {
        "netquake"
    }
}

pub fn synth_corpus(cfg: &SynthConfig) -> Corpus {
    assert!(cfg.n_users >= 2 && cfg.n_posts >= 2 * cfg.n_users, "need several posts per user");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let day = 86_400i64;
    let total_seconds = cfg.timeline_days() * day;
    let obs_start = cfg.end_timestamp() - cfg.observation_days * day;
    let season_len = cfg.season_length_days * day;
    let origin_month = month_of(cfg.start_timestamp);

    let mut posts = Vec::with_capacity(cfg.n_posts);
    for i in 0..cfg.n_posts {
        let user = i % cfg.n_users;
        let ts = cfg.start_timestamp + rng.gen_range(0..total_seconds);
        let mut tokens: Vec<String> = (0..cfg.headline_tokens)
            .map(|_| format!("w{:03}", rng.gen_range(0..cfg.base_vocab)))
            .collect();
        if rng.gen::<f64>() < cfg.style_rate {
            tokens.push(format!("sigu{user:03}"));
        }
        let mut in_season_trend = false;
        if ts >= obs_start {
            for k in 1..=cfg.seasons {
                let p = cfg.trend_rate * (cfg.seasons as f64 - (k as f64 - 1.0)) / cfg.seasons as f64;
                if rng.gen::<f64>() < p {
                    tokens.push(format!("season{k}"));
                }
            }
        } else {
            let k = ((obs_start - 1 - ts) / season_len + 1) as usize;
            let k = k.min(cfg.seasons);
            if rng.gen::<f64>() < cfg.season_token_rate {
                tokens.push(format!("season{k}"));
                in_season_trend = true;
            }
        }
        if (month_of(ts) - origin_month) as u32 >= cfg.ramp_onset_month && rng.gen::<f64>() < cfg.ramp_rate {
            tokens.push(cfg.ramp_token().to_string());
        }
        let mu = 4.0 + if in_season_trend { 0.5 } else { 0.0 };
        let likes = (mu + 1.0 * randn(&mut rng)).exp().round().max(0.0) as u64;
        let headline = tokens.join(" ");
        let article: Vec<String> = tokens
            .iter()
            .cloned()
            .chain((0..8).map(|_| format!("w{:03}", rng.gen_range(0..cfg.base_vocab))))
            .collect();
        posts.push(Post {
            id: format!("p{i:05}"),
            user_id: format!("user{user:03}"),
            timestamp: ts,
            headline,
            article: article.join(" "),
            likes,
        });
    }
    Corpus::from_posts(posts).expect("synthetic posts are valid")
}

fn month_of(ts: i64) -> i64 {
    use chrono::Datelike;
    let dt = chrono::DateTime::from_timestamp(ts, 0).expect("in range");
    (dt.year() as i64 - 1970) * 12 + dt.month0() as i64
}

/// Standard normal draw via Box-Muller; deterministic given the rng state.
pub fn randn<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buzzword::{generate_buzzwords, BuzzwordConfig, FrequencyTable, Vocabulary};
    use crate::corpus::TimeStep;
    use crate::observation::style_pair_study;
    use crate::similarity::SimilarityMetric;

    #[test]
    fn deterministic_given_seed() {
        let cfg = SynthConfig { n_posts: 300, n_users: 10, ..Default::default() };
        let a = synth_corpus(&cfg);
        let b = synth_corpus(&cfg);
        assert_eq!(a.posts(), b.posts());
    }

    #[test]
    fn covers_at_least_fourteen_month_steps() {
        let cfg = SynthConfig { n_posts: 2_000, n_users: 20, ..Default::default() };
        let c = synth_corpus(&cfg);
        assert!(c.max_step().unwrap().0 >= 14, "max step {:?}", c.max_step());
    }

    #[test]
    fn full_style_rate_separates_users() {
        let cfg = SynthConfig { n_posts: 1_000, n_users: 20, style_rate: 1.0, ..Default::default() };
        let c = synth_corpus(&cfg);
        let report = style_pair_study(&c, 5_000, SimilarityMetric::Jaccard, 3).unwrap();
        assert!(report.same_user_mean_sim > report.diff_user_mean_sim);
    }

    #[test]
    fn ramp_token_enters_stage_one_after_onset() {
        let cfg = SynthConfig { n_posts: 4_000, n_users: 20, ..Default::default() };
        let c = synth_corpus(&cfg);
        let vocab = Vocabulary::build(&c, 5, 0.05).unwrap();
        assert!(vocab.id(cfg.ramp_token()).is_some(), "ramp token filtered from vocab");
        let table = FrequencyTable::count_frequencies(&c, &vocab);
        let bw = generate_buzzwords(&table, &vocab, TimeStep(cfg.ramp_onset_month + 1), &BuzzwordConfig::default());
        let hit = bw.entries.iter().any(|e| {
            e.token == cfg.ramp_token() && e.stage == crate::buzzword::BuzzwordStage::Ratio1
        });
        assert!(hit, "ramp token missing from stage 1 at onset+1");
    }
}
